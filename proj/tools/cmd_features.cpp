#include <algorithm>

#include "cli_common.hpp"
#include "succlab/error.hpp"
#include "succlab/ov.hpp"
#include "succlab/probes.hpp"
#include "succlab/sae.hpp"
#include "succlab/steering.hpp"

namespace succlab::cli {
namespace {

using nlohmann::json;

std::string run_name(int i) { return "sae/run_" + std::to_string(i) + ".ntar"; }

/// Representations of every dataset token plus optional extra samples.
Eigen::MatrixXd sae_inputs(Context& ctx, json& info) {
  const auto& ds = ctx.dataset();
  Tokens tokens;
  for (const auto& t : ds.tokens) tokens.push_back(t.token);
  Eigen::MatrixXd reps = mlp0_representations(ctx.model(), tokens);
  info["dataset_tokens"] = tokens.size();
  if (const auto path = ctx.get("sae.samples", ""); !path.empty()) {
    const Eigen::MatrixXd extra = read_archive(path).matrix("samples");
    if (extra.rows() != reps.rows()) throw DomainError("sample dimension differs from the model's d_model");
    Eigen::MatrixXd all(reps.rows(), reps.cols() + extra.cols());
    all << reps, extra;
    reps = std::move(all);
    info["extra_samples"] = extra.cols();
  }
  return reps;
}

void sae_train(Context& ctx) {
  SAEConfig base;
  base.n_features = ctx.get_int("sae.features", 512);
  base.sparsity = ctx.get_double("sae.sparsity", 0.3);
  base.batch = ctx.get_int("sae.batch", 64);
  base.epochs = ctx.get_int("sae.epochs", 100);
  base.lr = ctx.get_double("sae.lr", 1e-3);
  base.train_fraction = ctx.get_double("sae.train_fraction", 0.9);
  const int n_runs = ctx.get_int("sae.runs", 10);
  if (n_runs < 1) throw ConfigError("sae.runs must be at least 1");

  json info = json::object();
  const Eigen::MatrixXd reps = sae_inputs(ctx, info);
  std::vector<SparseAutoencoder> runs;
  json runs_json = json::array();
  for (int i = 0; i < n_runs; ++i) {
    SAEConfig c = base;
    c.seed = ctx.seed_for("sae-run-" + std::to_string(i));
    runs.push_back(train_sae(reps, c));
    ctx.write_binary(run_name(i), encode_archive(sae_to_archive(runs.back())));
    runs_json.push_back({{"path", run_name(i)},
                         {"train_loss", runs.back().train_loss},
                         {"train_recon_error", runs.back().train_recon_error},
                         {"val_recon_error", runs.back().val_recon_error}});
  }
  Table pairs;
  pairs.columns = {"run_a", "run_b", "mmcs"};
  for (int a = 0; a < n_runs; ++a) {
    for (int b = 0; b < n_runs; ++b) {
      if (a != b) pairs.add_row({std::int64_t{a}, std::int64_t{b}, mmcs(runs[a], runs[b])});
    }
  }
  json out = {{"inputs", info}, {"runs", runs_json}, {"mmcs_between_runs", pairs.to_json()}};
  if (const auto path = ctx.get("sae.planted", ""); !path.empty()) {
    const Eigen::MatrixXd planted = read_archive(path).matrix("features");
    json vs = json::array();
    for (const auto& r : runs) vs.push_back(mmcs(planted, r.W_dec));
    out["mmcs_planted_vs_run"] = vs;
  }
  ctx.write_table("mmcs", pairs);
  ctx.write_json("sae.json", out);
}

std::vector<SparseAutoencoder> load_runs(Context& ctx) {
  std::vector<std::filesystem::path> paths;
  if (const auto list = ctx.get("sae.paths", ""); !list.empty()) {
    for (const auto& p : split(list, ',')) paths.emplace_back(p);
  } else {
    const std::filesystem::path dir = ctx.require("sae.dir");
    if (!std::filesystem::is_directory(dir)) throw IoError("SAE directory '" + dir.string() + "' not found");
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      if (e.path().extension() == ".ntar") paths.push_back(e.path());
    }
    std::sort(paths.begin(), paths.end());
  }
  if (paths.empty()) throw DatasetError("no SAE runs given");
  std::vector<SparseAutoencoder> runs;
  for (const auto& p : paths) runs.push_back(sae_from_archive(read_archive(p)));
  return runs;
}

void mod_features(Context& ctx) {
  const auto runs = load_runs(ctx);
  const HeadId head = ctx.head();
  const auto set = extract_mod_features(runs, ctx.dataset(), ctx.model(), head,
                                        ctx.get_bool("features.restrict_to_task", true));
  ctx.write_binary("features.ntar", encode_archive(features_to_archive(set)));
  Table t;
  t.columns = {"class", "modal_share"};
  for (int n = 0; n < 10; ++n) t.add_row({std::int64_t{n}, set.modal_share[static_cast<std::size_t>(n)]});
  ctx.write_table("modal_share", t);
  json idx = json::array();
  for (const auto& run : set.modal_index) idx.push_back(run);
  ctx.write_json("mod_features.json",
                 {{"head", to_string(head)}, {"runs", set.run_count}, {"modal_share", set.modal_share},
                  {"modal_index", idx}});
}

Eigen::MatrixXd load_features(const Context& ctx) {
  return features_from_archive(read_archive(ctx.require("features"))).features;
}

/// Canonical token of each resolved item of `task`, at most `max_items`.
std::pair<Tokens, std::vector<int>> task_item_tokens(const SuccessionDataset& ds, const std::string& task,
                                                     int max_items) {
  const auto idx = ds.task_index(task);
  if (!idx) throw DatasetError("task '" + task + "' is not resolved in this dataset");
  Tokens tokens;
  std::vector<int> ordinals;
  const auto& rt = ds.tasks[static_cast<std::size_t>(*idx)];
  for (int o = 1; o <= rt.task.size() && static_cast<int>(tokens.size()) < max_items; ++o) {
    if (!rt.has_item(o)) continue;
    tokens.push_back(*ds.item_token(*idx, o));
    ordinals.push_back(o);
  }
  return {tokens, ordinals};
}

void feature_logits(Context& ctx) {
  const Eigen::MatrixXd f = load_features(ctx);
  const HeadId head = ctx.head();
  const auto task = ctx.get("task", "numbers");
  const auto [tokens, ordinals] = task_item_tokens(ctx.dataset(), task, ctx.get_int("feature_logits.max_items", 30));
  const Eigen::MatrixXd table = feature_logit_table(f, ctx.model(), head, tokens);
  std::vector<std::string> rows, cols;
  for (Eigen::Index i = 0; i < table.rows(); ++i) rows.push_back("f" + std::to_string(i));
  for (int t : tokens) cols.push_back(surface_of(ctx.vocab(), t));
  Table out;
  out.columns = {"feature"};
  out.columns.insert(out.columns.end(), cols.begin(), cols.end());
  for (Eigen::Index i = 0; i < table.rows(); ++i) {
    std::vector<Cell> row{rows[static_cast<std::size_t>(i)]};
    for (Eigen::Index j = 0; j < table.cols(); ++j) row.emplace_back(table(i, j));
    out.add_row(std::move(row));
  }
  ctx.write_table("feature_logits", out);
  HeatmapOptions opt;
  opt.title = to_string(head) + " logits of mod-10 features";
  opt.x_label = "output token";
  opt.y_label = "feature";
  ctx.write_text("feature_logits.svg", heatmap_svg(table, rows, cols, opt));
  ctx.write_json("feature_logits.json", {{"head", to_string(head)}, {"task", task}, {"rows", out.to_json()}});
}

ProbeConfig probe_config(const Context& ctx) {
  ProbeConfig c;
  c.lr = ctx.get_double("probe.lr", 1e-3);
  c.batch = ctx.get_int("probe.batch", 32);
  c.epochs = ctx.get_int("probe.epochs", 100);
  c.train_fraction = ctx.get_double("probe.train_fraction", 0.9);
  c.seed = ctx.seed_for("probe");
  return c;
}

std::vector<int> residues_of(const std::vector<int>& ordinals, int m) {
  std::vector<int> out;
  for (int o : ordinals) out.push_back(o % m);
  return out;
}

void probe(Context& ctx) {
  const int m = ctx.get_int("probe.modulus", 10);
  const auto data = probe_data(ctx.model(), ctx.dataset());
  const auto p = train_probe(data.numbers.reps, residues_of(data.numbers.ordinals, m), m, probe_config(ctx));
  ctx.write_binary("probe.ntar", encode_archive(probe_to_archive(p)));
  json out = {{"modulus", m}, {"train_accuracy", p.train_accuracy}, {"val_accuracy", p.val_accuracy},
              {"samples", data.numbers.tokens.size()}};
  if (!data.ood.tokens.empty()) out["ood_accuracy"] = p.accuracy(data.ood.reps, residues_of(data.ood.ordinals, m));
  if (ctx.config().has("features")) {
    if (m != 10) throw ConfigError("probe-feature similarity needs probe.modulus = 10");
    const auto sim = probe_feature_similarity(p, load_features(ctx));
    out["feature_cosine"] = sim.cosine;
    out["feature_cosine_mean"] = sim.mean;
  }
  ctx.write_json("probe.json", out);
}

void probe_sweep_cmd(Context& ctx) {
  const auto moduli = parse_int_list(ctx.get("probe.moduli", "2-25"), "probe.moduli");
  const auto data = probe_data(ctx.model(), ctx.dataset());
  const auto rows = probe_sweep(data, moduli, probe_config(ctx));
  Table t;
  t.columns = {"modulus", "val_accuracy", "ood_accuracy"};
  std::vector<double> x;
  LineSeries val{"validation", {}}, ood{"out of distribution", {}};
  for (const auto& r : rows) {
    t.add_row({std::int64_t{r.modulus}, r.val_accuracy, r.ood_accuracy});
    x.push_back(r.modulus);
    val.y.push_back(r.val_accuracy);
    ood.y.push_back(r.ood_accuracy);
  }
  ctx.write_table("sweep", t);
  ctx.write_json("sweep.json", {{"rows", t.to_json()}});
  ctx.write_text("sweep.svg", line_chart_svg(x, {val, ood}, "probe accuracy by modulus", "modulus", "accuracy"));
}

void neurons(Context& ctx) {
  const HeadId head = ctx.head();
  const auto& ds = ctx.dataset();
  const auto imp = neuron_importance(ctx.model(), head, ds, neuron_tokens(ds));
  const int top = std::min<int>(ctx.get_int("neurons.top", 10), static_cast<int>(imp.ranked.size()));
  Table t;
  t.columns = {"rank", "neuron", "mean_probability", "period"};
  json ranked = json::array();
  std::vector<LineSeries> firing;
  for (int i = 0; i < top; ++i) {
    const auto& r = imp.ranked[static_cast<std::size_t>(i)];
    t.add_row({std::int64_t{i + 1}, std::int64_t{r.neuron}, r.mean_probability,
               r.period ? Cell{std::int64_t{*r.period}} : Cell{std::string("none")}});
    ranked.push_back({{"neuron", r.neuron},
                      {"mean_probability", r.mean_probability},
                      {"period", r.period ? json(*r.period) : json(nullptr)},
                      {"firing", r.firing},
                      {"logit_profile", r.logit_profile}});
    if (i < 3) firing.push_back({"n" + std::to_string(r.neuron), r.firing});
  }
  ctx.write_table("neurons", t);
  ctx.write_json("neurons.json", {{"head", to_string(head)},
                                  {"tokens", imp.tokens.size()},
                                  {"baseline_probability", imp.baseline_probability},
                                  {"ranked", ranked}});
  if (!firing.empty() && !imp.tokens.empty()) {
    std::vector<double> x;
    for (std::size_t i = 0; i < imp.tokens.size(); ++i) x.push_back(static_cast<double>(i + 1));
    ctx.write_text("neurons.svg", line_chart_svg(x, firing, "MLP0 activation of the top neurons", "number",
                                                 "activation"));
  }
}

std::string marker(const ArithmeticCell& c) {
  if (!c.applicable) return "n/a";
  if (c.success) return "✓";
  if (c.plus_ten) return "+10";
  return "✗";
}

json cell_json(const ArithmeticTable& table, std::size_t row, const ArithmeticCell& c, const Vocab& vocab) {
  json top = json::array();
  if (c.applicable) {
    const auto dist = cell_logit_distribution(table, row, c.residue);
    for (std::size_t i = 0; i < dist.size() && i < 5; ++i) {
      top.push_back({{"token", surface_of(vocab, dist[i].first)}, {"logit", dist[i].second}});
    }
  }
  return {{"residue", c.residue},          {"steered_ordinal", c.steered_ordinal}, {"applicable", c.applicable},
          {"success", c.success},          {"source_success", c.source_success},  {"plus_ten", c.plus_ten},
          {"weak_source_feature", c.weak_source_feature}, {"k", c.k},
          {"argmax", c.argmax_token >= 0 ? json(surface_of(vocab, c.argmax_token)) : json(nullptr)},
          {"marker", marker(c)},           {"top_logits", top}};
}

json region_json(const ArithmeticTable& t) {
  using R = ArithmeticTable::Region;
  json j = json::object();
  for (auto [name, r] : {std::pair{"all", R::all}, {"above", R::above}, {"diagonal", R::diagonal}, {"below", R::below}}) {
    j[name] = {{"success_rate", t.success_rate(r)}, {"applicable_cells", t.applicable_cells(r)}};
  }
  return j;
}

void steer_cmd(Context& ctx) {
  const Eigen::MatrixXd f = load_features(ctx);
  const HeadId head = ctx.head();
  const auto& ds = ctx.dataset();
  const Vocab& vocab = ctx.vocab();
  const int token = vocab.id(ctx.require("steer.token"));
  const auto* tok = ds.lookup(token);
  if (!tok) throw DatasetError("token '" + vocab.surface(token) + "' is not in the succession dataset");
  const auto& task = ds.tasks[static_cast<std::size_t>(tok->task)].task.name;
  const int target = ctx.get_int("steer.target", 0);
  if (target < 0 || target > 9) throw ConfigError("steer.target must be a residue in [0, 9]");
  const double lambda = ctx.get_double("lambda", default_lambda(task));
  const auto table = arithmetic_table(ctx.model(), head, f, ds, task, lambda, {token}, false);
  const auto& c = table.cells[0][static_cast<std::size_t>(target)];
  ctx.write_json("steer.json", {{"head", to_string(head)},
                                {"token", vocab.surface(token)},
                                {"task", task},
                                {"source_residue", table.source_residue(0)},
                                {"lambda", lambda},
                                {"cell", cell_json(table, 0, c, vocab)}});
}

void arith_table(Context& ctx) {
  const Eigen::MatrixXd f = load_features(ctx);
  const HeadId head = ctx.head();
  const auto& ds = ctx.dataset();
  const Vocab& vocab = ctx.vocab();
  const auto task = ctx.get("task", "numbers");
  const double lambda = ctx.get_double("lambda", default_lambda(task));
  const auto table =
      arithmetic_table(ctx.model(), head, f, ds, task, lambda, {}, ctx.get_bool("arith.canonical_only", true));
  Table grid;
  grid.columns = {"token", "source_residue"};
  for (int r = 0; r < 10; ++r) grid.columns.push_back("to_" + std::to_string(r));
  json rows = json::array();
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    std::vector<Cell> row{surface_of(vocab, table.rows[i]), std::int64_t{table.source_residue(i)}};
    json cells = json::array();
    for (const auto& c : table.cells[i]) {
      row.emplace_back(marker(c));
      cells.push_back(cell_json(table, i, c, vocab));
    }
    grid.add_row(std::move(row));
    rows.push_back({{"token", surface_of(vocab, table.rows[i])}, {"cells", cells}});
  }
  ctx.write_table("arith", grid);
  ctx.write_json("arith.json", {{"head", to_string(head)},
                                {"task", task},
                                {"lambda", lambda},
                                {"regions", region_json(table)},
                                {"rows", rows}});
}

}  // namespace

std::vector<Command> feature_commands() {
  return {
      {"sae-train", "train sparse autoencoders on MLP0 representations",
       [](CLI::App& app, FlagSink& s) {
         flag(app, s, "--runs", "sae.runs", "number of seeds");
         flag(app, s, "--features", "sae.features", "dictionary size");
         flag(app, s, "--samples", "sae.samples", "archive with extra samples (tensor 'samples')");
         flag(app, s, "--planted", "sae.planted", "archive with ground-truth features (tensor 'features')");
       },
       sae_train},
      {"mod-features", "extract mod-10 features from SAE runs",
       [](CLI::App& app, FlagSink& s) {
         flag(app, s, "--sae-dir", "sae.dir", "directory of SAE run archives");
         flag(app, s, "--sae", "sae.paths", "comma-separated SAE run archives");
       },
       mod_features},
      {"feature-logits", "successor-head logits of mod-10 features",
       [](CLI::App& app, FlagSink& s) {
         flag(app, s, "--features", "features", "mod-10 features archive");
         flag(app, s, "--task", "task", "output task");
       },
       feature_logits},
      {"probe", "linear probe for ordinal residues",
       [](CLI::App& app, FlagSink& s) {
         flag(app, s, "--modulus", "probe.modulus", "probe modulus");
         flag(app, s, "--features", "features", "mod-10 features archive for cosine similarity");
       },
       probe},
      {"probe-sweep", "probe accuracy over moduli",
       [](CLI::App& app, FlagSink& s) { flag(app, s, "--moduli", "probe.moduli", "moduli, e.g. 2-25"); },
       probe_sweep_cmd},
      {"neurons", "MLP0 neurons ranked by successor-probability ablation",
       [](CLI::App& app, FlagSink& s) { flag(app, s, "--top", "neurons.top", "neurons reported"); }, neurons},
      {"steer", "steer one token toward a target residue",
       [](CLI::App& app, FlagSink& s) {
         flag(app, s, "--features", "features", "mod-10 features archive");
         flag(app, s, "--token", "steer.token", "token surface form");
         flag(app, s, "--target", "steer.target", "target residue");
         flag(app, s, "--lambda", "lambda", "steering strength");
       },
       steer_cmd},
      {"arith-table", "steering success grid for one task",
       [](CLI::App& app, FlagSink& s) {
         flag(app, s, "--features", "features", "mod-10 features archive");
         flag(app, s, "--task", "task", "task");
         flag(app, s, "--lambda", "lambda", "steering strength");
       },
       arith_table},
  };
}

}  // namespace succlab::cli
