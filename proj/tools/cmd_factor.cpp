#include "cli_common.hpp"
#include "succlab/error.hpp"
#include "succlab/projections.hpp"

namespace succlab::cli {
namespace {

using nlohmann::json;

std::vector<int> flatten(const std::vector<TokenPair>& pairs) {
  std::vector<int> out;
  for (const auto& p : pairs) out.insert(out.end(), {p.source, p.domain, p.target});
  return out;
}

std::vector<TokenPair> unflatten(const std::vector<int>& ids) {
  if (ids.size() % 3 != 0) throw FormatError("pair tensor length is not a multiple of 3");
  std::vector<TokenPair> out;
  for (std::size_t i = 0; i < ids.size(); i += 3) out.push_back({ids[i], ids[i + 1], ids[i + 2]});
  return out;
}

void factor_train(Context& ctx) {
  const auto& model = ctx.model();
  const auto& ds = ctx.dataset();
  const HeadId head = ctx.head();

  OutputProjectionConfig oc;
  oc.epochs = ctx.get_int("factor.output_epochs", 50);
  oc.batch = ctx.get_int("factor.batch", 32);
  oc.lr = ctx.get_double("factor.output_lr", 1e-3);
  oc.max_holdout = ctx.get_int("factor.max_holdout", 1000);
  oc.holdout_fraction = ctx.get_double("factor.holdout_fraction", 0.1);
  oc.seed = ctx.seed_for("output-projection");
  const auto pi_o = train_output_projection(model, oc);

  ProjectionConfig pc;
  pc.epochs = ctx.get_int("factor.epochs", 10);
  pc.batch = ctx.get_int("factor.batch", 32);
  pc.lr = ctx.get_double("factor.lr", 1e-3);
  pc.train_pairs = ctx.get_int("factor.train_pairs", 4000);
  pc.heldout_pairs = ctx.get_int("factor.heldout_pairs", 500);
  pc.seed = ctx.seed_for("projection-pair");
  const auto split = sample_pairs(ds, pc.train_pairs, pc.heldout_pairs, ctx.seed_for("pairs"));
  const auto pair = train_projection_pair(model, pi_o.pi_O, head, split.train, pc);

  Archive pairs;
  pairs.add_ids("train", flatten(split.train));
  pairs.add_ids("heldout", flatten(split.heldout));
  ctx.write_binary("pi_O.ntar", encode_archive(output_projection_to_archive(pi_o)));
  ctx.write_binary("projections.ntar", encode_archive(projection_pair_to_archive(pair)));
  ctx.write_binary("pairs.ntar", encode_archive(pairs));
  ctx.write_json("factor_train.json", {{"head", to_string(head)},
                                       {"output_projection",
                                        {{"train_accuracy", pi_o.train_accuracy},
                                         {"heldout_accuracy", pi_o.heldout_accuracy},
                                         {"heldout_tokens", pi_o.heldout.size()}}},
                                       {"projection", {{"final_loss", pair.final_loss}}},
                                       {"train_pairs", split.train.size()},
                                       {"heldout_pairs", split.heldout.size()}});
}

json outcomes_json(const DecodingResult& r, const Vocab& vocab) {
  json rows = json::array();
  for (const auto& o : r.rows) {
    rows.push_back({{"source", surface_of(vocab, o.pair.source)},
                    {"domain", surface_of(vocab, o.pair.domain)},
                    {"expected", surface_of(vocab, o.expected)},
                    {"predicted", surface_of(vocab, o.predicted)},
                    {"correct", o.correct}});
  }
  return {{"accuracy", r.accuracy}, {"pairs", r.rows.size()}, {"rows", rows}};
}

std::string verdict_marker(CellVerdict v) {
  switch (v) {
    case CellVerdict::exact: return "✓";
    case CellVerdict::index_only: return "~";
    case CellVerdict::wrong: return "✗";
    case CellVerdict::invalid: return "n/a";
  }
  return "?";
}

json grid_out(Context& ctx, const OodGrid& g, const std::string& stem) {
  const Vocab& vocab = ctx.vocab();
  Table t;
  t.columns = {"row"};
  t.columns.insert(t.columns.end(), g.columns.begin(), g.columns.end());
  json cells = json::array();
  for (std::size_t r = 0; r < g.rows.size(); ++r) {
    std::vector<Cell> row{surface_of(vocab, g.rows[r])};
    for (std::size_t c = 0; c < g.cells[r].size(); ++c) {
      const auto& cell = g.cells[r][c];
      row.emplace_back(verdict_marker(cell.verdict));
      cells.push_back({{"row", surface_of(vocab, g.rows[r])},
                       {"column", g.columns[c]},
                       {"expected", cell.expected >= 0 ? json(surface_of(vocab, cell.expected)) : json(nullptr)},
                       {"predicted", cell.predicted >= 0 ? json(surface_of(vocab, cell.predicted)) : json(nullptr)},
                       {"verdict", to_string(cell.verdict)}});
    }
    t.add_row(std::move(row));
  }
  ctx.write_table(stem, t);
  return {{"accuracy", g.accuracy()}, {"cells", cells}};
}

void factor_eval(Context& ctx) {
  const std::filesystem::path dir = ctx.get("factor.dir", "");
  auto path_of = [&](const std::string& key, const std::string& file) {
    const auto v = ctx.get(key, "");
    if (!v.empty()) return std::filesystem::path(v);
    if (dir.empty()) throw UsageError("set factor.dir or " + key);
    return dir / file;
  };
  const auto pi_o = output_projection_from_archive(read_archive(path_of("factor.pi_o", "pi_O.ntar")));
  const auto pair = projection_pair_from_archive(read_archive(path_of("factor.projection", "projections.ntar")));
  const auto pairs = read_archive(path_of("factor.pairs", "pairs.ntar"));
  const auto train = unflatten(pairs.ids("train"));
  const auto heldout = unflatten(pairs.ids("heldout"));
  const auto& model = ctx.model();
  const auto& ds = ctx.dataset();
  const Vocab& vocab = ctx.vocab();
  const HeadId head = ctx.head();

  const auto out_train = eval_output_decoding(pair, pi_o.pi_O, model, train);
  const auto out_held = eval_output_decoding(pair, pi_o.pi_O, model, heldout);
  const auto succ_held = eval_successor_decoding(pair, pi_o.pi_O, model, head, ds, heldout);
  const double partition = (pair.pi_N + pair.pi_D() - Eigen::MatrixXd::Identity(pair.pi_N.rows(), pair.pi_N.cols()))
                               .cwiseAbs()
                               .maxCoeff();
  json out = {{"head", to_string(head)},
              {"partition_error", partition},
              {"output_decoding_train", {{"accuracy", out_train.accuracy}, {"pairs", out_train.rows.size()}}},
              {"output_decoding_heldout", outcomes_json(out_held, vocab)},
              {"successor_decoding_heldout", outcomes_json(succ_held, vocab)}};
  if (ctx.get_bool("factor.roman_grid", true)) {
    out["roman_grid"] = grid_out(ctx, roman_ood_grid(pair, pi_o.pi_O, model, ds, vocab, false, head), "roman_grid");
    out["roman_grid_successor"] =
        grid_out(ctx, roman_ood_grid(pair, pi_o.pi_O, model, ds, vocab, true, head), "roman_grid_successor");
  }
  ctx.write_json("factor_eval.json", out);
}

}  // namespace

std::vector<Command> factor_commands() {
  return {
      {"factor-train", "train output, index and domain projections",
       [](CLI::App& app, FlagSink& s) {
         flag(app, s, "--epochs", "factor.epochs", "projection-pair epochs");
         flag(app, s, "--train-pairs", "factor.train_pairs", "training pairs");
       },
       factor_train},
      {"factor-eval", "decoding accuracy and the Roman-numeral grid",
       [](CLI::App& app, FlagSink& s) { flag(app, s, "--from", "factor.dir", "factor-train output directory"); },
       factor_eval},
  };
}

}  // namespace succlab::cli
