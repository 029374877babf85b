#include <doctest.h>

#include <random>

#include "succlab/ablation.hpp"
#include "succlab/error.hpp"

using namespace succlab;

namespace {

ModelHandle random_model(bool final_norm = false, std::uint64_t seed = 5) {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_model = 16;
  cfg.d_head = 8;
  cfg.d_mlp = 24;
  cfg.vocab_size = 30;
  cfg.max_context = 16;
  cfg.use_final_norm = final_norm;
  cfg.seed = seed;
  ModelWeights w = init_weights(cfg, seed);
  if (final_norm) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 0.2);
    for (Eigen::Index i = 0; i < w.ln_scale.size(); ++i) {
      w.ln_scale(i) = 1.0 + n(rng);
      w.ln_shift(i) = n(rng);
    }
  }
  return ModelHandle(cfg, std::move(w));
}

std::vector<Tokens> random_batch(int count, int min_len, int max_len, int vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Tokens> out;
  for (int i = 0; i < count; ++i) {
    Tokens t(static_cast<std::size_t>(std::uniform_int_distribution<int>(min_len, max_len)(rng)));
    for (int& x : t) x = std::uniform_int_distribution<int>(0, vocab - 1)(rng);
    out.push_back(t);
  }
  return out;
}

AblationSpec spec_of(AblationEffect e, AblationMethod m) {
  AblationSpec s;
  s.effect = e;
  s.method = m;
  s.resample_repeats = 3;
  s.seed = 11;
  return s;
}

constexpr AblationEffect kEffects[] = {AblationEffect::direct, AblationEffect::indirect, AblationEffect::total};

/// Keeps only one head's output weights.
ModelHandle single_head_model(HeadId keep) {
  const auto base = random_model();
  ModelWeights w = base.weights();
  for (const auto& h : base.all_heads()) {
    if (!(h == keep)) w.layers[static_cast<std::size_t>(h.layer)].W_O[static_cast<std::size_t>(h.head)].setZero();
  }
  return ModelHandle(base.config(), std::move(w));
}

Vocab classifier_vocab() {
  auto s = make_toy_vocab().surfaces();
  s.push_back("Defense");
  s.push_back("OSD");
  s.push_back(" GD");
  return Vocab(s);
}

CaseRecord record(const Vocab& v, const std::vector<std::string>& attended, const std::string& correct,
                  const std::vector<std::string>& extra_prefix = {}) {
  CaseRecord r;
  for (const auto& s : extra_prefix) r.prefix.push_back(v.id(s));
  double w = 0.5;
  for (std::size_t i = 0; i < attended.size(); ++i) {
    r.prefix.push_back(v.id(attended[i]));
    r.top_attended.push_back({static_cast<int>(i), v.id(attended[i]), w});
    w /= 2.0;
  }
  r.correct = v.id(correct);
  return r;
}

}  // namespace

TEST_CASE("ablation no-op identities are exact") {
  for (bool norm : {false, true}) {
    const auto model = random_model(norm);
    const auto batch = random_batch(6, 3, 10, 30, 1);
    for (const auto& head : model.all_heads()) {
      for (auto effect : kEffects) {
        CAPTURE(to_string(head));
        CAPTURE(to_string(effect));
        const auto self = ablate_effect(model, head, batch, spec_of(effect, AblationMethod::resample),
                                        [](std::size_t seq, std::size_t, int) { return seq; });
        for (const auto& s : self) {
          CHECK(s.delta_logits.cwiseAbs().maxCoeff() == 0.0);
          CHECK((s.delta_loss.size() == 0 || s.delta_loss.cwiseAbs().maxCoeff() == 0.0));
        }
        const auto single = ablate_effect(model, head, {batch[2]}, spec_of(effect, AblationMethod::mean));
        CHECK(single[0].delta_logits.cwiseAbs().maxCoeff() == 0.0);
        CHECK(single[0].delta_loss.cwiseAbs().maxCoeff() == 0.0);
      }
    }
  }
}

TEST_CASE("final-layer direct effect equals total effect") {
  for (bool norm : {false, true}) {
    const auto model = random_model(norm);
    const auto batch = random_batch(8, 4, 12, 30, 2);
    for (int h = 0; h < 2; ++h) {
      for (auto method : {AblationMethod::mean, AblationMethod::resample}) {
        const HeadId head{1, h};
        const auto direct = ablate_effect(model, head, batch, spec_of(AblationEffect::direct, method));
        const auto total = ablate_effect(model, head, batch, spec_of(AblationEffect::total, method));
        const auto indirect = ablate_effect(model, head, batch, spec_of(AblationEffect::indirect, method));
        for (std::size_t i = 0; i < batch.size(); ++i) {
          const double scale = std::max(1.0, total[i].delta_logits.cwiseAbs().maxCoeff());
          CHECK((direct[i].delta_logits - total[i].delta_logits).cwiseAbs().maxCoeff() / scale < 1e-6);
          CHECK(indirect[i].delta_logits.cwiseAbs().maxCoeff() < 1e-9);
        }
      }
    }
  }
}

TEST_CASE("direct mean ablation matches the unembedded output difference") {
  const auto model = random_model();
  const auto batch = random_batch(5, 6, 6, 30, 3);
  const HeadId head{0, 1};
  const auto result = ablate_effect(model, head, batch, spec_of(AblationEffect::direct, AblationMethod::mean));
  std::vector<Eigen::MatrixXd> outs;
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(16, 6);
  for (const auto& t : batch) {
    outs.push_back(forward(model, t, true).trace->head_out[0][1]);
    mean += outs.back();
  }
  mean /= 5.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Eigen::MatrixXd expected = model.weights().W_U * (mean - outs[i]);
    CHECK((result[i].delta_logits - expected).cwiseAbs().maxCoeff() < 1e-9);
    const auto logits = forward(model, batch[i], false).logits;
    for (Eigen::Index p = 0; p + 1 < 6; ++p) {
      auto ce = [&](const Eigen::VectorXd& l) {
        const int target = batch[i][static_cast<std::size_t>(p + 1)];
        return std::log((l.array() - l(target)).exp().sum());
      };
      CHECK(result[i].delta_loss(p) == doctest::Approx(ce(logits.col(p) + expected.col(p)) - ce(logits.col(p))).epsilon(1e-9));
    }
  }
}

TEST_CASE("ablation spec validation and determinism") {
  const auto model = random_model();
  const auto batch = random_batch(4, 3, 8, 30, 4);
  auto spec = spec_of(AblationEffect::total, AblationMethod::resample);
  const auto a = ablate_effect(model, {0, 0}, batch, spec);
  const auto b = ablate_effect(model, {0, 0}, batch, spec);
  for (std::size_t i = 0; i < batch.size(); ++i) CHECK(a[i].delta_logits == b[i].delta_logits);
  CHECK_THROWS_AS(ablate_effect(model, {2, 0}, batch, spec), IndexError);
  CHECK_THROWS_AS(ablate_effect(model, {0, 0}, {}, spec), DatasetError);
  CHECK_THROWS_AS(ablate_effect(model, {0, 0}, batch, spec, [](std::size_t, std::size_t, int) { return std::size_t{99}; }),
                  IndexError);
  spec.resample_repeats = 0;
  CHECK_THROWS_AS(ablate_effect(model, {0, 0}, batch, spec), ConfigError);
  CHECK(ablation_effect_from_string("indirect") == AblationEffect::indirect);
  CHECK(ablation_method_from_string("resample") == AblationMethod::resample);
  CHECK_THROWS_AS(ablation_effect_from_string("partial"), ConfigError);
}

TEST_CASE("behavior classifier fixtures") {
  const Vocab v = classifier_vocab();
  const auto ds = build_succession_dataset(v);

  SUBCASE("acronym from the top-1 attended word") {
    const auto l = classify_behavior(record(v, {"Defense", " stone"}, "OSD"), ds, v);
    CHECK(l.primary == Behavior::acronym);
  }
  SUBCASE("successorship") {
    const auto l = classify_behavior(record(v, {" apple", " river", " second"}, " third"), ds, v);
    CHECK(l.primary == Behavior::successorship);
    for (auto b : l.labels) CHECK(b != Behavior::greater_than);
  }
  SUBCASE("greater-than when no predecessor is attended") {
    const auto l = classify_behavior(record(v, {" apple", " first"}, " third"), ds, v);
    CHECK(l.primary == Behavior::greater_than);
    REQUIRE(l.labels.size() == 1);
  }
  SUBCASE("greater-than needs a shared task") {
    const auto l = classify_behavior(record(v, {" apple", "1"}, " third"), ds, v);
    CHECK(l.primary == Behavior::other);
  }
  SUBCASE("copying") {
    const auto l = classify_behavior(record(v, {" table", " apple"}, " table"), ds, v);
    CHECK(l.primary == Behavior::copying);
    const auto unattended = classify_behavior(record(v, {" apple"}, " table", {" table"}), ds, v);
    CHECK(unattended.primary == Behavior::other);
  }
  SUBCASE("priority order and purity") {
    // ' second' before ' third' is successorship and copying at once
    const auto r = record(v, {" second", " third"}, " third");
    const auto l = classify_behavior(r, ds, v);
    REQUIRE(l.labels.size() == 2);
    CHECK(l.labels[0] == Behavior::successorship);
    CHECK(l.labels[1] == Behavior::copying);
    CHECK(classify_behavior(r, ds, v).labels == l.labels);
  }
  SUBCASE("acronym bounds") {
    CHECK(classify_behavior(record(v, {" Delta"}, "D"), ds, v).primary != Behavior::acronym);      // single letter
    CHECK(classify_behavior(record(v, {" Delta"}, " GD"), ds, v).primary == Behavior::acronym);    // leading space
    CHECK(classify_behavior(record(v, {" Golf"}, " GD"), ds, v).primary != Behavior::acronym);     // wrong letter
  }
  SUBCASE("cyclic wrap counts as successorship") {
    CHECK(classify_behavior(record(v, {" Sunday"}, " Monday"), ds, v).primary == Behavior::successorship);
  }
}

TEST_CASE("winning cases with a single contributing head") {
  const HeadId only{1, 0};
  const auto model = single_head_model(only);
  const Vocab v = make_toy_vocab();
  const auto ds = build_succession_dataset(v);
  Tokens corpus(200);
  std::mt19937_64 rng(8);
  for (int& t : corpus) t = std::uniform_int_distribution<int>(0, 29)(rng);
  MiningSpec spec;
  spec.contexts = 6;
  spec.context_length = 10;
  spec.seed = 2;

  const auto result = find_winning_cases(model, only, corpus, spec, ds, v);
  CHECK(result.prefixes == 6 * 9);
  std::vector<Tokens> windows;
  for (auto s : mining_window_starts(corpus.size(), spec)) windows.emplace_back(corpus.begin() + s, corpus.begin() + s + 10);
  const auto oracle = ablate_effect(model, only, windows, spec.ablation);
  std::size_t expected = 0;
  for (std::size_t w = 0; w < windows.size(); ++w) {
    for (int p = 0; p < 9; ++p) expected += oracle[w].delta_logits(windows[w][static_cast<std::size_t>(p + 1)], p) < 0.0;
  }
  CHECK(result.wins.size() == expected);
  CHECK(result.wins.size() > 0);
  for (const auto& r : result.wins) {
    CHECK(r.head_delta_logit.size() == 4);
    CHECK(r.prefix.size() == static_cast<std::size_t>(r.position + 1));
    CHECK(r.top_attended.size() == std::min<std::size_t>(5, r.prefix.size()));
    for (std::size_t k = 1; k < r.top_attended.size(); ++k) CHECK(r.top_attended[k - 1].weight >= r.top_attended[k].weight);
    CHECK(std::isfinite(r.delta_loss));
  }
  // other heads never win: their deltas are exactly zero
  const auto other = find_winning_cases(model, {0, 1}, corpus, spec, ds, v);
  CHECK(other.wins.empty());
}

TEST_CASE("loss-reducing cases") {
  const auto model = single_head_model({1, 1});
  const Vocab v = make_toy_vocab();
  const auto ds = build_succession_dataset(v);
  Tokens corpus(120);
  std::mt19937_64 rng(9);
  for (int& t : corpus) t = std::uniform_int_distribution<int>(0, 29)(rng);
  std::vector<Generator> prov(corpus.size(), Generator::filler);
  MiningSpec spec;
  spec.contexts = 5;
  spec.context_length = 12;

  const auto zero = find_loss_reducing_cases(model, {0, 0}, corpus, spec, ds, v);
  CHECK(zero.cases.empty());
  CHECK(zero.total_delta_loss == 0.0);

  const auto live = find_loss_reducing_cases(model, {1, 1}, corpus, spec, ds, v, &prov);
  REQUIRE_FALSE(live.cases.empty());
  double sum = 0.0;
  for (const auto& r : live.cases) {
    CHECK(r.delta_loss > 0.0);
    CHECK(r.provenance == Generator::filler);
    sum += r.delta_loss;
  }
  CHECK(sum == live.total_delta_loss);
  CHECK(live.prefixes == 5 * 11);
}

TEST_CASE("behavior report") {
  CHECK(behavior_report({}).empty());
  std::vector<CaseRecord> rs(4);
  for (auto& r : rs) {
    r.primary = Behavior::successorship;
    r.delta_loss = 0.5;
  }
  auto s = behavior_report(rs);
  CHECK(s.by_count[0] == 1.0);
  CHECK(s.by_count[1] == 0.0);

  rs[1].primary = Behavior::acronym;
  rs[2].primary = Behavior::copying;
  s = behavior_report(rs);
  for (int k = 0; k < kBehaviorCount; ++k) CHECK(s.by_count[static_cast<std::size_t>(k)] == s.by_delta_loss[static_cast<std::size_t>(k)]);

  rs[0].delta_loss = 3.0;
  rs[3].delta_loss = -1.0;
  s = behavior_report(rs);
  double total = 0.0;
  for (double x : s.by_delta_loss) total += x;
  CHECK(std::abs(total - 1.0) < 1e-9);
  CHECK(s.by_delta_loss[0] == doctest::Approx(3.0 / 4.0));
}

TEST_CASE("numbered-listing study") {
  const HeadId only{1, 0};
  const auto model = single_head_model(only);
  std::vector<ListingPrompt> prompts;
  for (const auto& t : random_batch(12, 3, 9, 30, 6)) prompts.push_back({t, t.front()});
  const auto study = numbered_listing_study(model, only, prompts);
  REQUIRE(study.prompts.size() == 12);
  std::size_t positive = 0;
  for (const auto& o : study.prompts) {
    positive += o.designated_drop > 0.0;
    if (o.designated_drop > 0.0) CHECK(o.winner == only);
    if (o.designated_drop < 0.0) CHECK_FALSE(o.winner.has_value());
  }
  CHECK(study.wins == positive);
  CHECK(study.rate == doctest::Approx(static_cast<double>(positive) / 12.0));
  CHECK(numbered_listing_study(model, only, {}).prompts.empty());
}
