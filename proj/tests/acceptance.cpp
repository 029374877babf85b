// Acceptance suite: one PASS/FAIL line per criterion.
//
// usage: acceptance [--only N[,N...]] <succlab-binary> <work-dir>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "succlab/ablation.hpp"
#include "succlab/io.hpp"
#include "succlab/ov.hpp"
#include "succlab/probes.hpp"
#include "succlab/projections.hpp"
#include "succlab/report.hpp"
#include "succlab/sae.hpp"
#include "succlab/steering.hpp"
#include "succlab/train.hpp"
#include "support/fixtures.hpp"
#include "support/test_util.hpp"

using namespace succlab;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string cli;
fs::path work;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int digits = 6) { return format_sig(v, digits); }

/// Runs the CLI; returns its exit status. Output goes to <out>.log.
int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = "\"" + cli + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json read_json(const fs::path& p) { return json::parse(read_file(p)); }

// ---------------------------------------------------------------------------

Outcome gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(21);
  double worst = 0.0;
  std::string worst_combo;
  bool finite = true;
  int combos = 0;
  for (bool parallel : {true, false}) {
    for (bool norm : {false, true}) {
      for (auto act : {Activation::gelu_tanh, Activation::relu}) {
        const auto cfg = testing::tiny_config(parallel, norm, act);
        const auto model = testing::random_model(cfg, 31 + static_cast<std::uint64_t>(combos));
        const std::vector<Tokens> batch = {testing::random_tokens(rng, cfg.vocab_size, 6),
                                           testing::random_tokens(rng, cfg.vocab_size, 5)};
        const auto r = grad_check(model, batch);
        finite = finite && r.all_finite;
        if (r.max_rel_error > worst) {
          worst = r.max_rel_error;
          worst_combo = std::string(parallel ? "parallel" : "sequential") + "/" + (norm ? "norm" : "no-norm") + "/" +
                        to_string(act) + " " + r.worst_tensor;
        }
        ++combos;
      }
    }
  }
  const double t = seconds_since(t0);
  return {finite && worst < 1e-4 && t < 60.0 && combos == 8,
          "8 combos, max rel error " + fmt(worst) + " (" + worst_combo + "), " + fmt(t, 3) + " s"};
}

Outcome trace_identities() {
  double worst_row = 0.0, worst_resid = 0.0;
  int prompts = 0;
  for (bool parallel : {true, false}) {
    auto cfg = testing::tiny_config(parallel, false);
    cfg.n_layers = 3;
    const auto model = testing::random_model(cfg, 9);
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 100; ++trial, ++prompts) {
      const auto out = forward(model, testing::random_tokens(rng, cfg.vocab_size, 1 + trial % cfg.max_context), true);
      const auto& tr = *out.trace;
      Eigen::MatrixXd sum = tr.post_embed;
      for (std::size_t l = 0; l < tr.head_out.size(); ++l) {
        for (std::size_t h = 0; h < tr.head_out[l].size(); ++h) {
          sum += tr.head_out[l][h];
          const auto& a = tr.attention[l][h];
          for (Eigen::Index i = 0; i < a.rows(); ++i) worst_row = std::max(worst_row, std::abs(a.row(i).sum() - 1.0));
        }
        sum += tr.mlp_out[l];
      }
      worst_resid = std::max(worst_resid,
                             (sum - tr.pre_unembed).cwiseAbs().maxCoeff() / tr.pre_unembed.cwiseAbs().maxCoeff());
    }
  }
  return {worst_row <= 1e-6 && worst_resid < 1e-6,
          std::to_string(prompts) + " prompts, max |row sum - 1| " + fmt(worst_row) + ", residual rel error " +
              fmt(worst_resid)};
}

Outcome toy_emergence() {
  const fs::path dir = work / "emergence";
  fs::remove_all(dir);
  const auto t0 = std::chrono::steady_clock::now();
  const int rc = run_cli("toy-train --out \"" + (dir / "train").string() + "\"", work / "emergence_train.log");
  const double train_time = seconds_since(t0);
  if (rc != 0) return {false, "toy-train exited with " + std::to_string(rc)};
  const auto model = (dir / "train" / "model.ntar").string();
  if (run_cli("scores --model \"" + model + "\" --out \"" + (dir / "scores").string() + "\"",
              work / "emergence_scores.log") != 0) {
    return {false, "scores failed"};
  }
  const auto heads = read_json(dir / "scores" / "heads.json");
  const std::string best = heads["best"];
  double best_score = 0.0;
  for (const auto& h : heads["heads"]) {
    if (h["head"] == best) best_score = h["overall"];
  }
  bool flagged = false;
  for (const auto& h : heads["successor_heads"]) flagged = flagged || h == best;
  if (run_cli("numbered-listing --model \"" + model + "\" --head " + best + " --out \"" +
                  (dir / "listing").string() + "\"",
              work / "emergence_listing.log") != 0) {
    return {false, "numbered-listing failed"};
  }
  const auto listing = read_json(dir / "listing" / "listing.json");
  const double rate = listing["rate"];
  const bool pass = best_score >= 0.8 && flagged && rate >= 0.9 && train_time < 600.0;
  return {pass, "best head " + best + " score " + fmt(best_score, 4) + ", listing wins " +
                    std::to_string(listing["wins"].get<int>()) + "/" + std::to_string(listing["prompts"].get<int>()) +
                    " (" + fmt(rate, 4) + "), wins by head " + listing["wins_by_head"].dump() + ", training " +
                    fmt(train_time, 4) + " s"};
}

SAEConfig planted_sae_config(std::uint64_t seed) {
  SAEConfig c;
  c.n_features = 10;
  c.sparsity = 0.05;
  c.epochs = 100;
  c.seed = seed;
  return c;
}

struct PlantedRuns {
  testing::PlantedMod fixture = testing::planted_mod(1);
  std::vector<SparseAutoencoder> runs;
  ModFeatureSet features;
};

const PlantedRuns& planted_runs() {
  static const PlantedRuns r = [] {
    PlantedRuns p;
    for (std::uint64_t s : {1, 2}) p.runs.push_back(train_sae(p.fixture.samples, planted_sae_config(s)));
    p.features = extract_mod_features(p.runs, p.fixture.dataset, p.fixture.model, p.fixture.head);
    return p;
  }();
  return r;
}

Outcome sae_recovery() {
  const auto& p = planted_runs();
  const double rec_a = mmcs(p.fixture.features, p.runs[0].W_dec);
  const double rec_b = mmcs(p.fixture.features, p.runs[1].W_dec);
  const double between = mmcs(p.runs[0], p.runs[1]);
  const double min_share = *std::min_element(p.features.modal_share.begin(), p.features.modal_share.end());
  return {rec_a > 0.9 && rec_b > 0.9 && between > 0.9 && min_share >= 0.9,
          "MMCS vs planted " + fmt(rec_a) + " / " + fmt(rec_b) + ", between seeds " + fmt(between) +
              ", min modal share " + fmt(min_share)};
}

Outcome probe_suite() {
  const auto& p = planted_runs();
  const auto data = probe_data(p.fixture.model, p.fixture.dataset);
  ProbeConfig cfg;
  cfg.seed = 3;
  std::vector<int> labels;
  for (int o : data.numbers.ordinals) labels.push_back(o % 10);
  const auto probe = train_probe(data.numbers.reps, labels, 10, cfg);
  std::vector<int> moduli;
  for (int m = 2; m <= 25; ++m) moduli.push_back(m);
  const auto rows = probe_sweep(data, moduli, cfg);
  std::map<int, double> val;
  for (const auto& r : rows) val[r.modulus] = r.val_accuracy;
  const bool divisors_above = val[2] > val[7] && val[5] > val[7] && val[10] > val[7];
  const double cos_recovered = probe_feature_similarity(probe, p.features.features).mean;
  const double cos_planted = probe_feature_similarity(probe, p.fixture.features).mean;
  return {probe.val_accuracy == 1.0 && divisors_above && cos_recovered > 0.8 && cos_planted > 0.8,
          "mod-10 val acc " + fmt(probe.val_accuracy) + ", val acc m=2/5/10/7 " + fmt(val[2], 4) + "/" +
              fmt(val[5], 4) + "/" + fmt(val[10], 4) + "/" + fmt(val[7], 4) + ", probe-feature cosine " +
              fmt(cos_recovered, 4) + " (recovered) " + fmt(cos_planted, 4) + " (planted)"};
}

ModelHandle ablation_model(bool final_norm) {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_model = 16;
  cfg.d_head = 8;
  cfg.d_mlp = 24;
  cfg.vocab_size = 30;
  cfg.max_context = 16;
  cfg.use_final_norm = final_norm;
  return testing::random_model(cfg, 5);
}

Outcome ablation_identities() {
  std::mt19937_64 rng(1);
  std::vector<Tokens> batch;
  for (int i = 0; i < 6; ++i) batch.push_back(testing::random_tokens(rng, 30, 3 + i));
  double self_max = 0.0, single_max = 0.0, direct_total = 0.0;
  for (bool norm : {false, true}) {
    const auto model = ablation_model(norm);
    for (const auto& head : model.all_heads()) {
      for (auto effect : {AblationEffect::direct, AblationEffect::indirect, AblationEffect::total}) {
        AblationSpec s;
        s.effect = effect;
        s.method = AblationMethod::resample;
        s.resample_repeats = 3;
        for (const auto& r :
             ablate_effect(model, head, batch, s, [](std::size_t seq, std::size_t, int) { return seq; })) {
          self_max = std::max(self_max, r.delta_logits.cwiseAbs().maxCoeff());
          if (r.delta_loss.size()) self_max = std::max(self_max, r.delta_loss.cwiseAbs().maxCoeff());
        }
        s.method = AblationMethod::mean;
        const auto single = ablate_effect(model, head, {batch[2]}, s);
        single_max = std::max({single_max, single[0].delta_logits.cwiseAbs().maxCoeff(),
                               single[0].delta_loss.cwiseAbs().maxCoeff()});
      }
    }
    for (int h = 0; h < 2; ++h) {
      for (auto method : {AblationMethod::mean, AblationMethod::resample}) {
        AblationSpec s;
        s.method = method;
        s.seed = 11;
        s.effect = AblationEffect::direct;
        const auto direct = ablate_effect(model, {1, h}, batch, s);
        s.effect = AblationEffect::total;
        const auto total = ablate_effect(model, {1, h}, batch, s);
        for (std::size_t i = 0; i < batch.size(); ++i) {
          const double scale = std::max(1.0, total[i].delta_logits.cwiseAbs().maxCoeff());
          direct_total =
              std::max(direct_total, (direct[i].delta_logits - total[i].delta_logits).cwiseAbs().maxCoeff() / scale);
        }
      }
    }
  }

  auto surfaces = make_toy_vocab().surfaces();
  surfaces.insert(surfaces.end(), {"Defense", "OSD"});
  const Vocab v(surfaces);
  const auto ds = build_succession_dataset(v);
  auto rec = [&](const std::vector<std::string>& attended, const std::string& correct) {
    CaseRecord r;
    double w = 0.5;
    for (std::size_t i = 0; i < attended.size(); ++i) {
      r.prefix.push_back(v.id(attended[i]));
      r.top_attended.push_back({static_cast<int>(i), v.id(attended[i]), w});
      w /= 2.0;
    }
    r.correct = v.id(correct);
    return classify_behavior(r, ds, v).primary;
  };
  struct Fixture {
    std::vector<std::string> attended;
    std::string correct;
    Behavior expected;
  };
  const std::vector<Fixture> fixtures = {
      {{"Defense", " stone"}, "OSD", Behavior::acronym},
      {{" apple", " first"}, " third", Behavior::greater_than},
      {{" apple", " river", " second"}, " third", Behavior::successorship},
      {{" table", " apple"}, " table", Behavior::copying},
      {{" second", " third"}, " third", Behavior::successorship},
      {{" Sunday"}, " Monday", Behavior::successorship},
      {{" apple", "1"}, " third", Behavior::other},
      {{" Delta"}, "D", Behavior::other},
  };
  int matched = 0;
  for (const auto& f : fixtures) matched += rec(f.attended, f.correct) == f.expected ? 1 : 0;
  const bool pass = self_max == 0.0 && single_max == 0.0 && direct_total < 1e-6 &&
                    matched == static_cast<int>(fixtures.size());
  return {pass, "self-resample max |delta| " + fmt(self_max) + ", singleton mean max |delta| " + fmt(single_max) +
                    ", final-layer direct vs total " + fmt(direct_total) + ", classifier fixtures " +
                    std::to_string(matched) + "/" + std::to_string(fixtures.size())};
}

Outcome compositionality() {
  const auto p = testing::planted_compositional();
  const auto split = sample_pairs(p.dataset, 3000, 500, 7);
  ProjectionConfig cfg;
  cfg.seed = 1;
  const int d = p.model.config().d_model;
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(d, d);
  const auto pair = train_projection_pair(p.model, I, p.head, split.train, cfg);
  const auto held = eval_output_decoding(pair, I, p.model, split.heldout);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> normal(0.0, 3.0);
  double partition = 0.0;
  const Eigen::MatrixXd pi_D = pair.pi_D();
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd x(d);
    for (int i = 0; i < d; ++i) x(i) = normal(rng);
    partition = std::max(partition, ((pair.pi_N * x + pi_D * x) - x).cwiseAbs().maxCoeff());
  }
  return {held.accuracy == 1.0 && partition < 1e-9,
          "held-out decoding " + fmt(held.accuracy) + " over " + std::to_string(held.rows.size()) +
              " pairs, partition error " + fmt(partition)};
}

Outcome steering() {
  const auto p = testing::planted_steering();
  const auto table = arithmetic_table(p.model, p.head, p.features, p.dataset, "numbers", 1.0);
  const double above = table.success_rate(ArithmeticTable::Region::above);

  const auto ov = effective_ov(p.model, p.head, p.dataset);
  std::map<int, std::size_t> column;
  for (std::size_t c = 0; c < ov.inputs.size(); ++c) column[ov.inputs[c]] = c;
  int diag = 0, diag_match = 0;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& c = table.cells[r][static_cast<std::size_t>(table.row_ordinals[r] % 10)];
    const auto verdict = successor_verdict(ov, column.at(table.rows[r]), p.dataset);
    ++diag;
    if (c.applicable == verdict.has_value() && (!verdict || c.success == *verdict)) ++diag_match;
  }

  double linearity = 0.0;
  for (int n : {7, 23, 47, 88}) {
    const Eigen::VectorXd repr = mlp0_representation(p.model, p.vocab.id(std::to_string(n)));
    for (int i = 0; i < 10; ++i) {
      const auto a = steer(repr, n, p.features, i, 0.3);
      const auto b = steer(repr, n, p.features, i, 1.9);
      const auto ab = steer(repr, n, p.features, i, 2.2);
      linearity = std::max(linearity, ((a.x + b.x - repr) - ab.x).cwiseAbs().maxCoeff());
    }
  }
  return {above == 1.0 && diag_match == diag && linearity < 1e-9,
          "above-diagonal success " + fmt(above) + " over " +
              std::to_string(table.applicable_cells(ArithmeticTable::Region::above)) + " cells, diagonal matches " +
              std::to_string(diag_match) + "/" + std::to_string(diag) + ", lambda linearity " + fmt(linearity)};
}

// ---------------------------------------------------------------------------
// CLI determinism

std::map<std::string, std::string> dir_files(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = read_file(e.path());
  }
  return out;
}

Outcome cli_determinism() {
  const fs::path root = work / "determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string base = (root / "base").string();
  // A short toy model shared by the analysis commands.
  if (run_cli("toy-train --out \"" + base + "\" --steps 300 --set train.checkpoint_every=150 --set corpus.length=30000",
              root / "base.log") != 0) {
    return {false, "toy-train for the shared model failed"};
  }
  const std::string M = "--model \"" + base + "/model.ntar\" ";
  const std::string A = (root / "a").string(), B = (root / "b").string();
  fs::create_directories(A);
  fs::create_directories(B);
  struct Step {
    std::string name, args;
  };
  // "{run}" names the first run's directory, so both runs read identical inputs.
  const std::vector<Step> steps = {
      {"toy-train", "toy-train --steps 200 --set train.checkpoint_every=100 --set corpus.length=20000"},
      {"scores", "scores " + M},
      {"ov-table", "ov-table " + M + "--task months"},
      {"direct-path", "direct-path " + M},
      {"emergence", "emergence --checkpoints \"" + base + "/checkpoints\""},
      {"bias", "bias " + M},
      {"sae-train", "sae-train " + M + "--features 32 --set sae.epochs=10"},
      {"mod-features", "mod-features " + M + "--sae-dir \"{run}/sae-train/sae\""},
      {"feature-logits", "feature-logits " + M + "--features \"{run}/mod-features/features.ntar\""},
      {"probe", "probe " + M + "--features \"{run}/mod-features/features.ntar\" --set probe.epochs=10"},
      {"probe-sweep", "probe-sweep " + M + "--moduli 2-12 --set probe.epochs=5"},
      {"neurons", "neurons " + M},
      {"steer", "steer " + M + "--features \"{run}/mod-features/features.ntar\" --token \" 23\" --target 6"},
      {"arith-table", "arith-table " + M + "--features \"{run}/mod-features/features.ntar\" --task months --lambda 2"},
      {"factor-train", "factor-train " + M +
                           "--epochs 1 --train-pairs 300 --set factor.heldout_pairs=50 --set factor.output_epochs=2"},
      {"factor-eval", "factor-eval " + M + "--from \"{run}/factor-train\""},
      {"ablate", "ablate " + M + "--head all --contexts 8 --method resample --repeats 2"},
      {"mine-wild", "mine-wild " + M + "--contexts 8"},
      {"behaviors", "behaviors --cases \"{run}/mine-wild/winning_cases.jsonl,{run}/mine-wild/loss_reducing_cases.jsonl\""},
      {"numbered-listing", "numbered-listing " + M + "--count 16"},
      {"report", "report --runs \"{run}/scores,{run}/probe,{run}/numbered-listing\""},
  };
  std::vector<std::string> failures;
  int identical = 0;
  for (const auto& s : steps) {
    std::map<std::string, std::string> files[2];
    bool ran = true;
    for (int k = 0; k < 2; ++k) {
      const std::string run = k == 0 ? A : B;
      std::string args = s.args;
      for (auto at = args.find("{run}"); at != std::string::npos; at = args.find("{run}")) args.replace(at, 5, A);
      const fs::path out = fs::path(run) / s.name;
      if (run_cli(args + " --out \"" + out.string() + "\"", fs::path(run) / (s.name + ".log")) != 0) {
        failures.push_back(s.name + " (exit)");
        ran = false;
        break;
      }
      files[k] = dir_files(out);
    }
    if (!ran) continue;
    std::vector<std::string> diffs;
    bool has_json = false;
    for (const auto& [name, bytes] : files[0]) {
      has_json = has_json || name.ends_with(".json");
      const auto it = files[1].find(name);
      if (it == files[1].end() || it->second != bytes) diffs.push_back(name);
    }
    if (files[0].size() != files[1].size()) diffs.push_back("<file set>");
    if (!has_json) diffs.push_back("<no json>");
    if (diffs.empty()) {
      ++identical;
    } else {
      std::string d = s.name + " (";
      for (const auto& f : diffs) d += f + " ";
      failures.push_back(d + ")");
    }
  }
  std::string detail = std::to_string(identical) + "/" + std::to_string(steps.size()) +
                       " commands byte-identical across re-runs";
  for (const auto& f : failures) detail += "; " + f;
  return {identical == static_cast<int>(steps.size()) && steps.size() == 21, detail};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  std::vector<std::string> args(argv + 1, argv + argc);
  if (args.size() >= 2 && args[0] == "--only") {
    std::stringstream ss(args[1]);
    for (std::string item; std::getline(ss, item, ',');) only.insert(std::stoi(item));
    args.erase(args.begin(), args.begin() + 2);
  }
  if (args.size() != 2) {
    std::cerr << "usage: acceptance [--only N[,N...]] <succlab-binary> <work-dir>\n";
    return 2;
  }
  cli = args[0];
  work = args[1];
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient check on 8 architecture combinations", gradient_check},
      {"attention rows and residual additivity", trace_identities},
      {"toy successor-head emergence", toy_emergence},
      {"planted SAE feature recovery", sae_recovery},
      {"probe suite on planted data", probe_suite},
      {"ablation identities and behavior fixtures", ablation_identities},
      {"compositional projections", compositionality},
      {"steering arithmetic on the planted circuit", steering},
      {"CLI determinism", cli_determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(n)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::cout << "criterion " << n << " " << (o.pass ? "PASS" : "FAIL") << " " << criteria[i].first << ": "
              << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
