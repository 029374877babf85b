#include <algorithm>
#include <iostream>

#include "cli_common.hpp"
#include "succlab/error.hpp"
#include "succlab/io.hpp"
#include "succlab/ov.hpp"
#include "succlab/train.hpp"

namespace succlab::cli {
namespace {

using nlohmann::json;

// Toy training regularizers that concentrate succession in one head.
constexpr double kToyHeadDropout = 0.0;
constexpr double kToyHeadGroupL1 = 0.012;
constexpr int kToyHeadGroupL1Steps = 15000;

ReprMode repr_mode(const Context& ctx) {
  const auto m = ctx.get("repr", "residual");
  if (m == "residual") return ReprMode::residual;
  if (m == "block_output") return ReprMode::block_output;
  throw ConfigError("repr must be residual or block_output, got '" + m + "'");
}

json task_scores_json(const SuccessorScore& s) {
  json per = json::object();
  for (const auto& [name, t] : s.per_task) {
    per[name] = {{"score", t.score()}, {"successes", t.successes}, {"counted", t.counted}};
  }
  return {{"overall", s.overall}, {"successes", s.successes}, {"counted", s.counted}, {"per_task", per}};
}

json dataset_report_json(const SuccessionDataset& ds) {
  json tasks = json::array();
  for (const auto& rt : ds.tasks) {
    tasks.push_back({{"name", rt.task.name}, {"items", rt.task.size()}, {"resolved_items", rt.resolved_items()},
                     {"held_out", rt.task.held_out}, {"cyclic", rt.task.cyclic}});
  }
  return {{"tasks", tasks},
          {"excluded_tasks", ds.report.excluded_tasks},
          {"missing", ds.report.missing},
          {"collisions", ds.report.collisions}};
}

std::vector<std::string> task_names(const SuccessionDataset& ds) {
  std::vector<std::string> out;
  for (const auto& rt : ds.tasks) out.push_back(rt.task.name);
  return out;
}

// ---------------------------------------------------------------------------
// toy-train

ModelConfig model_config(const Context& ctx, int vocab_size) {
  ModelConfig c;
  c.n_layers = ctx.get_int("model.layers", 2);
  c.n_heads = ctx.get_int("model.heads", 4);
  c.d_model = ctx.get_int("model.d_model", 64);
  c.d_head = ctx.get_int("model.d_head", c.d_model / std::max(c.n_heads, 1));
  c.d_mlp = ctx.get_int("model.d_mlp", 256);
  c.max_context = ctx.get_int("model.max_context", 32);
  c.parallel_attn = ctx.get_bool("model.parallel_attn", true);
  c.use_final_norm = ctx.get_bool("model.final_norm", false);
  c.activation = activation_from_string(ctx.get("model.activation", "gelu_tanh"));
  c.vocab_size = vocab_size;
  c.seed = ctx.seed_for("model-init");
  c.validate();
  return c;
}

TrainConfig train_config(const Context& ctx, const ModelConfig& mc) {
  TrainConfig t;
  t.steps = ctx.get_int("train.steps", 20000);
  t.batch_size = ctx.get_int("train.batch", 8);
  t.context = ctx.get_int("train.context", mc.max_context);
  t.lr = ctx.get_double("train.lr", 1e-3);
  t.warmup_steps = ctx.get_int("train.warmup", 0);
  t.schedule = ctx.get("train.schedule", "constant");
  t.min_lr_ratio = ctx.get_double("train.min_lr_ratio", 0.1);
  t.head_dropout = ctx.get_double("train.head_dropout", kToyHeadDropout);
  t.head_group_l1 = ctx.get_double("train.head_group_l1", kToyHeadGroupL1);
  t.head_group_l1_steps = ctx.get_int("train.head_group_l1_steps", kToyHeadGroupL1Steps);
  t.eval_batch = ctx.get_int("train.eval_batch", 16);
  t.seed = ctx.seed_for("train");
  return t;
}

std::array<double, kGeneratorCount> parse_weights(const std::string& s) {
  const auto parts = split(s, ',');
  if (parts.size() != kGeneratorCount) {
    throw ConfigError("corpus.weights needs " + std::to_string(kGeneratorCount) + " comma-separated values");
  }
  std::array<double, kGeneratorCount> w{};
  for (std::size_t i = 0; i < parts.size(); ++i) {
    try {
      w[i] = std::stod(parts[i]);
    } catch (const std::logic_error&) {
      throw ConfigError("corpus.weights: '" + parts[i] + "' is not a number");
    }
  }
  return w;
}

std::string step_name(int step) {
  std::string s = std::to_string(step);
  return "checkpoints/step_" + std::string(s.size() < 7 ? 7 - s.size() : 0, '0') + s + ".ntar";
}

void toy_train(Context& ctx) {
  const Vocab& vocab = ctx.vocab();
  const auto& ds = ctx.dataset();
  Tokens tokens;
  json corpus_info;
  if (const auto path = ctx.get("corpus.path", ""); !path.empty()) {
    auto ing = ingest_text_corpus(path, vocab);
    corpus_info = {{"source", "text"}, {"tokens", ing.tokens.size()}, {"coverage", ing.coverage},
                   {"unknown", ing.unknown_count}};
    tokens = std::move(ing.tokens);
  } else {
    CorpusSpec spec;
    spec.length = static_cast<std::size_t>(ctx.get_u64("corpus.length", 400000));
    spec.weights = parse_weights(ctx.get("corpus.weights", "0.5,0.3,0.07,0.07,0.06"));
    spec.seed = ctx.seed_for("corpus");
    auto corpus = generate_corpus(spec, ds, vocab);
    corpus_info = {{"source", "synthetic"}, {"tokens", corpus.tokens.size()}, {"weights", spec.weights}};
    tokens = std::move(corpus.tokens);
  }
  const ModelConfig mc = model_config(ctx, vocab.size());
  const TrainConfig tc = train_config(ctx, mc);
  const int every = ctx.get_int("train.checkpoint_every", 1000);
  const bool quiet = ctx.get_bool("quiet", false);
  const auto checkpoints = train_toy(mc, tokens, tc, every, std::nullopt, [&](int step, double loss) {
    if (!quiet && step % 1000 == 0) std::cerr << "step " << step << " loss " << format_sig(loss, 6) << "\n";
  });

  Table curve;
  curve.columns = {"step", "loss", "best_head", "best_score"};
  json points = json::array();
  for (const auto& cp : checkpoints) {
    auto archive = model_to_archive(cp.model);
    archive.set_meta("step", std::to_string(cp.step));
    archive.set_meta("train_loss", format_double(cp.train_loss));
    ctx.write_binary(step_name(cp.step), encode_archive(archive));
    const auto table = score_all_heads(cp.model, ds);
    const auto& best = table.heads[table.best];
    curve.add_row({std::int64_t{cp.step}, cp.train_loss, to_string(best.head), best.score.overall});
    points.push_back({{"step", cp.step}, {"loss", cp.train_loss}, {"best_head", to_string(best.head)},
                      {"best_score", best.score.overall}});
  }
  const auto& final_model = checkpoints.back().model;
  ctx.write_binary("model.ntar", encode_archive(model_to_archive(final_model)));
  ctx.write_text("vocab.txt", vocab.to_text());
  ctx.write_table("training", curve);
  const auto table = score_all_heads(final_model, ds);
  ctx.write_json("train.json", {{"corpus", corpus_info},
                                {"steps", tc.steps},
                                {"final_loss", checkpoints.back().train_loss},
                                {"best_head", to_string(table.heads[table.best].head)},
                                {"best_score", table.heads[table.best].score.overall},
                                {"checkpoints", points}});
}

// ---------------------------------------------------------------------------
// scores

void scores(Context& ctx) {
  const auto& model = ctx.model();
  const auto& ds = ctx.dataset();
  const auto table = score_all_heads(model, ds, repr_mode(ctx));
  const auto names = task_names(ds);

  Table heads;
  heads.columns = {"head", "layer", "index", "score", "successes", "counted", "successor_head", "embedding_fallback"};
  Table per_task;
  per_task.columns = {"head", "task", "score", "successes", "counted"};
  Eigen::MatrixXd grid = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(table.heads.size()),
                                               static_cast<Eigen::Index>(names.size()));
  std::vector<std::string> row_labels;
  json heads_json = json::array();
  for (std::size_t i = 0; i < table.heads.size(); ++i) {
    const auto& h = table.heads[i];
    heads.add_row({to_string(h.head), std::int64_t{h.head.layer}, std::int64_t{h.head.head}, h.score.overall,
                   std::int64_t{h.score.successes}, std::int64_t{h.score.counted},
                   std::int64_t{h.successor_head ? 1 : 0}, std::int64_t{h.embedding_fallback ? 1 : 0}});
    row_labels.push_back(to_string(h.head));
    for (std::size_t t = 0; t < names.size(); ++t) {
      const auto it = h.score.per_task.find(names[t]);
      if (it == h.score.per_task.end()) continue;
      per_task.add_row({to_string(h.head), names[t], it->second.score(), std::int64_t{it->second.successes},
                        std::int64_t{it->second.counted}});
      grid(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) = it->second.score();
    }
    json hj = task_scores_json(h.score);
    hj["head"] = to_string(h.head);
    hj["successor_head"] = h.successor_head;
    hj["embedding_fallback"] = h.embedding_fallback;
    heads_json.push_back(hj);
  }
  std::vector<std::string> flagged;
  for (const auto& h : table.successor_heads()) flagged.push_back(to_string(h));
  ctx.write_table("heads", heads);
  ctx.write_table("per_task", per_task);
  ctx.write_json("heads.json", {{"heads", heads_json},
                                {"best", to_string(table.heads[table.best].head)},
                                {"dominance", table.dominance_infinite ? json("inf") : json(table.dominance)},
                                {"successor_heads", flagged},
                                {"dataset", dataset_report_json(ds)}});
  HeatmapOptions opt;
  opt.title = "successor score per head and task";
  opt.x_label = "task";
  opt.y_label = "head";
  opt.annotate = true;
  ctx.write_text("scores.svg", heatmap_svg(grid, row_labels, names, opt));
}

// ---------------------------------------------------------------------------
// ov-table

void ov_table(Context& ctx) {
  const auto& model = ctx.model();
  const auto& ds = ctx.dataset();
  const Vocab& vocab = ctx.vocab();
  const HeadId head = ctx.head();
  const auto table = effective_ov(model, head, ds, repr_mode(ctx));
  const auto only = ctx.get("task", "");

  Table long_table;
  long_table.columns = {"task", "input", "input_ordinal", "output", "output_ordinal", "logit"};
  json summary = json::object();
  for (std::size_t t = 0; t < ds.tasks.size(); ++t) {
    const auto& rt = ds.tasks[t];
    if (!only.empty() && rt.task.name != only) continue;
    std::vector<std::size_t> cols;
    for (std::size_t c = 0; c < table.inputs.size(); ++c) {
      const auto* tok = ds.lookup(table.inputs[c]);
      if (tok && tok->task == static_cast<int>(t) && tok->variant == 0) cols.push_back(c);
    }
    std::vector<int> items;
    for (int o = 1; o <= rt.task.size(); ++o) {
      if (rt.has_item(o)) items.push_back(o);
    }
    if (cols.empty() || items.empty()) continue;
    Eigen::MatrixXd grid(static_cast<Eigen::Index>(cols.size()), static_cast<Eigen::Index>(items.size()));
    std::vector<std::string> rows, col_labels;
    for (int o : items) col_labels.push_back(rt.task.items[static_cast<std::size_t>(o - 1)]);
    int successes = 0, counted = 0;
    for (std::size_t r = 0; r < cols.size(); ++r) {
      const int in_tok = table.inputs[cols[r]];
      const auto* tok = ds.lookup(in_tok);
      rows.push_back(vocab.surface(in_tok));
      for (std::size_t j = 0; j < items.size(); ++j) {
        double v = -std::numeric_limits<double>::infinity();
        for (int out_tok : rt.item_tokens[static_cast<std::size_t>(items[j] - 1)]) {
          v = std::max(v, table.logits(out_tok, static_cast<Eigen::Index>(cols[r])));
        }
        grid(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = v;
        long_table.add_row({rt.task.name, vocab.surface(in_tok), std::int64_t{tok->ordinal}, col_labels[j],
                            std::int64_t{items[j]}, v});
      }
      if (const auto verdict = successor_verdict(table, cols[r], ds)) {
        ++counted;
        successes += *verdict ? 1 : 0;
      }
    }
    summary[rt.task.name] = {{"successes", successes}, {"counted", counted},
                             {"score", counted ? static_cast<double>(successes) / counted : 0.0}};
    HeatmapOptions opt;
    opt.title = to_string(head) + " effective OV: " + rt.task.name;
    opt.x_label = "output item";
    opt.y_label = "input token";
    ctx.write_text("ov_" + rt.task.name + ".svg", heatmap_svg(grid, rows, col_labels, opt));
  }
  if (!only.empty() && summary.empty()) throw DatasetError("task '" + only + "' is not resolved in this dataset");
  ctx.write_table("ov", long_table);
  ctx.write_json("ov.json", {{"head", to_string(head)},
                             {"embedding_fallback", table.embedding_fallback},
                             {"canonical_variant_only", true},
                             {"tasks", summary}});
}

// ---------------------------------------------------------------------------
// direct-path

void direct_path(Context& ctx) {
  const auto& model = ctx.model();
  const auto& ds = ctx.dataset();
  const auto table = direct_path_table(model, ds, repr_mode(ctx));
  const auto score = successor_score(table, ds);
  Table t;
  t.columns = {"task", "score", "successes", "counted"};
  for (const auto& [name, s] : score.per_task) {
    t.add_row({name, s.score(), std::int64_t{s.successes}, std::int64_t{s.counted}});
  }
  ctx.write_table("direct_path", t);
  ctx.write_json("direct_path.json", task_scores_json(score));
}

// ---------------------------------------------------------------------------
// emergence

void emergence(Context& ctx) {
  const auto dir = std::filesystem::path(ctx.require("emergence.checkpoints"));
  if (!std::filesystem::is_directory(dir)) throw IoError("checkpoint directory '" + dir.string() + "' not found");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() == ".ntar") files.push_back(e.path());
  }
  if (files.empty()) throw DatasetError("no .ntar checkpoints in '" + dir.string() + "'");
  std::vector<Checkpoint> checkpoints;
  for (const auto& f : files) {
    const auto archive = read_archive(f);
    if (!archive.has_meta("step")) throw FormatError("checkpoint '" + f.string() + "' has no step");
    Checkpoint cp{std::stoi(archive.meta("step")), model_from_archive(archive),
                  archive.has_meta("train_loss") ? std::stod(archive.meta("train_loss")) : 0.0};
    checkpoints.push_back(std::move(cp));
  }
  std::sort(checkpoints.begin(), checkpoints.end(), [](const auto& a, const auto& b) { return a.step < b.step; });
  if (checkpoints.front().model.config().vocab_size != ctx.vocab().size()) {
    throw VocabError("checkpoint vocab size differs from the vocab");
  }
  const auto& ds = ctx.dataset();
  const auto curve = emergence_curve(checkpoints, ds);

  const auto heads = checkpoints.front().model.all_heads();
  Table t;
  t.columns = {"step", "loss", "best_head", "best_score"};
  for (const auto& h : heads) t.columns.push_back(to_string(h));
  std::vector<double> steps;
  std::vector<LineSeries> series;
  for (const auto& h : heads) series.push_back({to_string(h), {}});
  json points = json::array();
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    const auto table = score_all_heads(checkpoints[i].model, ds);
    std::vector<Cell> row{std::int64_t{curve[i].step}, curve[i].loss, to_string(curve[i].best_head),
                          curve[i].best_score};
    json per = json::object();
    for (std::size_t h = 0; h < table.heads.size(); ++h) {
      row.emplace_back(table.heads[h].score.overall);
      series[h].y.push_back(table.heads[h].score.overall);
      per[to_string(table.heads[h].head)] = table.heads[h].score.overall;
    }
    t.add_row(std::move(row));
    steps.push_back(curve[i].step);
    points.push_back({{"step", curve[i].step}, {"loss", curve[i].loss}, {"best_head", to_string(curve[i].best_head)},
                      {"best_score", curve[i].best_score}, {"heads", per}});
  }
  ctx.write_table("emergence", t);
  ctx.write_json("emergence.json", {{"checkpoints", points}});
  ctx.write_text("emergence.svg", line_chart_svg(steps, series, "successor score during training", "step",
                                                 "successor score"));
}

// ---------------------------------------------------------------------------
// bias

void bias(Context& ctx) {
  const auto& model = ctx.model();
  const auto& ds = ctx.dataset();
  const HeadId head = ctx.head();
  const bool exclude = ctx.get_bool("bias.exclude_successor", false);
  const auto table = effective_ov(model, head, ds, repr_mode(ctx));
  std::vector<std::string> tasks;
  if (const auto t = ctx.get("task", ""); !t.empty()) {
    tasks.push_back(t);
  } else {
    for (const auto& rt : ds.tasks) {
      if (!rt.task.cyclic && rt.resolved_items() >= 2) tasks.push_back(rt.task.name);
    }
  }
  Table out;
  out.columns = {"task", "above_diag_mean", "below_diag_mean", "bias", "above_cells", "below_cells"};
  json j = json::object();
  for (const auto& name : tasks) {
    const auto b = greater_than_bias(table, ds, name, exclude);
    out.add_row({name, b.above_diag_mean, b.below_diag_mean, b.bias, static_cast<std::int64_t>(b.above_cells),
                 static_cast<std::int64_t>(b.below_cells)});
    j[name] = {{"above_diag_mean", b.above_diag_mean}, {"below_diag_mean", b.below_diag_mean}, {"bias", b.bias},
               {"above_cells", b.above_cells}, {"below_cells", b.below_cells}};
  }
  ctx.write_table("bias", out);
  ctx.write_json("bias.json", {{"head", to_string(head)}, {"exclude_successor", exclude}, {"tasks", j}});
}

}  // namespace

std::vector<Command> model_commands() {
  return {
      {"toy-train", "train the toy transformer on a synthetic or text corpus",
       [](CLI::App& app, FlagSink& s) {
         flag(app, s, "--steps", "train.steps", "optimizer steps");
         flag(app, s, "--corpus", "corpus.path", "text corpus (default: synthetic)");
         flag(app, s, "--checkpoint-every", "train.checkpoint_every", "checkpoint interval");
       },
       toy_train},
      {"scores", "successor score of every head",
       [](CLI::App& app, FlagSink& s) { flag(app, s, "--repr", "repr", "residual or block_output"); }, scores},
      {"ov-table", "effective OV logits of one head per task",
       [](CLI::App& app, FlagSink& s) {
         flag(app, s, "--task", "task", "restrict to one task");
         flag(app, s, "--repr", "repr", "residual or block_output");
       },
       ov_table},
      {"direct-path", "successor score of the direct path W_U MLP0",
       [](CLI::App& app, FlagSink& s) { flag(app, s, "--repr", "repr", "residual or block_output"); }, direct_path},
      {"emergence", "successor score over training checkpoints",
       [](CLI::App& app, FlagSink& s) { flag(app, s, "--checkpoints", "emergence.checkpoints", "checkpoint directory"); },
       emergence},
      {"bias", "greater-than bias of one head",
       [](CLI::App& app, FlagSink& s) {
         flag(app, s, "--task", "task", "restrict to one task");
         flag(app, s, "--exclude-successor", "bias.exclude_successor", "drop the successor cell");
       },
       bias},
  };
}

}  // namespace succlab::cli
