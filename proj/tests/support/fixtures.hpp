#pragma once

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/QR>

#include "succlab/model.hpp"
#include "succlab/succession.hpp"

namespace succlab::testing {

/// Small vocab: days (two variants) and letters (two variants).
inline Vocab days_letters_vocab() {
  std::vector<std::string> s = {"<unk>"};
  for (const auto& d : {"Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday"}) {
    s.emplace_back(d);
    s.push_back(std::string(" ") + d);
  }
  for (char c = 'A'; c <= 'Z'; ++c) {
    s.emplace_back(1, c);
    s.push_back(std::string(" ") + c);
  }
  return Vocab(s);
}

/// Two layers, one head each, d_model = vocab size. Layer 0 is zero, W_E and
/// W_U are identities and L1H0's OV maps every dataset token to its
/// successor's token of the same variant.
inline ModelHandle planted_successor_model(const Vocab& vocab, const SuccessionDataset& ds) {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.n_heads = 1;
  cfg.d_model = vocab.size();
  cfg.d_head = vocab.size();
  cfg.d_mlp = 4;
  cfg.vocab_size = vocab.size();
  cfg.max_context = 16;
  ModelWeights w = ModelWeights::zeros(cfg);
  const Eigen::Index n = vocab.size();
  w.W_E = Eigen::MatrixXd::Identity(n, n);
  w.W_U = Eigen::MatrixXd::Identity(n, n);
  w.layers[1].W_V[0] = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd ov = Eigen::MatrixXd::Zero(n, n);
  for (const auto& t : ds.tokens) {
    const auto& rt = ds.tasks[static_cast<std::size_t>(t.task)];
    const auto succ = successor_of(rt.task, t.ordinal);
    if (!succ || !rt.has_item(*succ)) continue;
    ov(*ds.item_token(t.task, *succ, t.variant), t.token) = 1.0;
  }
  w.layers[1].W_O[0] = ov;
  return ModelHandle(cfg, std::move(w));
}

/// Planted mod-10 structure in d_model = 64.
///   rep(t) = a f_{ord mod 10} + [p=0.3] b f_k + [OOD] 0.5 g_task + noise
/// with orthonormal f_0..f_9 and domain directions g. The model copies the
/// reps into W_E (layer 0 is zero) and L1H0's OV maps f_r to f_{r+1}; W_U
/// reads f_{ord mod 10} for every dataset token.
struct PlantedMod {
  Vocab vocab;
  SuccessionDataset dataset;
  Eigen::MatrixXd features;  // 64 x 10
  ModelHandle model;
  HeadId head{1, 0};
  Eigen::MatrixXd samples;  // extra draws from the same process, one per column
};

inline PlantedMod planted_mod(std::uint64_t seed = 1, int extra_samples = 2000) {
  std::vector<std::string> s = {"<unk>"};
  for (int i = 1; i <= 200; ++i) {
    s.push_back(std::to_string(i));
    s.push_back(" " + std::to_string(i));
  }
  const auto reg = default_registry();
  for (const auto& task : reg) {
    if (task.name == "number_words" || task.name == "days" || task.name == "months" || task.name == "roman_numerals") {
      for (const auto& vars : task.variants) s.insert(s.end(), vars.begin(), vars.end());
    }
  }
  Vocab vocab(s);
  auto ds = build_succession_dataset(vocab, reg);

  const int d = 64;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Eigen::MatrixXd g(d, d);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
  const Eigen::MatrixXd Q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ() * Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd f = Q.leftCols(10);

  auto draw = [&](int residue, int domain) {
    Eigen::VectorXd v = (1.0 + 0.5 * unit(rng)) * f.col(residue);
    if (unit(rng) < 0.3) {
      const int k = static_cast<int>(unit(rng) * 10.0) % 10;
      v += (0.1 + 0.3 * unit(rng)) * f.col(k);
    }
    if (domain >= 0) v += 0.5 * Q.col(10 + domain);
    for (Eigen::Index i = 0; i < d; ++i) v(i) += 0.02 * normal(rng);
    return v;
  };

  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.n_heads = 1;
  cfg.d_model = d;
  cfg.d_head = d;
  cfg.d_mlp = 8;
  cfg.vocab_size = vocab.size();
  cfg.max_context = 16;
  ModelWeights w = ModelWeights::zeros(cfg);
  for (const auto& t : ds.tokens) {
    const int domain = ds.tasks[static_cast<std::size_t>(t.task)].task.name == "numbers" ? -1 : t.task;
    w.W_E.col(t.token) = draw(t.ordinal % 10, domain);
    w.W_U.row(t.token) = 3.0 * f.col(t.ordinal % 10).transpose();
  }
  w.layers[1].W_V[0] = Eigen::MatrixXd::Identity(d, d);
  Eigen::MatrixXd ov = Eigen::MatrixXd::Zero(d, d);
  for (int r = 0; r < 10; ++r) ov += f.col((r + 1) % 10) * f.col(r).transpose();
  w.layers[1].W_O[0] = ov;

  Eigen::MatrixXd samples(d, extra_samples);
  for (int i = 0; i < extra_samples; ++i) samples.col(i) = draw(i % 10, -1);
  return PlantedMod{std::move(vocab), std::move(ds), f, ModelHandle(cfg, std::move(w)), HeadId{1, 0}, samples};
}

/// Planted decade/residue circuit over numbers 1..100 (one variant).
///   rep(m) = v_{m mod 10} + w_{m / 10},  OV: v_r -> v_{r+1}, w_q -> w_q
///   u_j = v_{j mod 10} + w_{(j - 1) / 10}
/// so the successor gets logit 2 and every other number at most 1.
struct PlantedSteering {
  Vocab vocab;
  SuccessionDataset dataset;
  Eigen::MatrixXd features;  // v_0..v_9
  ModelHandle model;
  HeadId head{1, 0};
};

inline PlantedSteering planted_steering() {
  std::vector<std::string> s = {"<unk>"};
  for (int i = 1; i <= 100; ++i) s.push_back(std::to_string(i));
  Vocab vocab(s);
  auto ds = build_succession_dataset(vocab, default_registry());
  const int d = 21;
  auto v = [](int r) { return static_cast<Eigen::Index>(r); };
  auto w = [](int q) { return static_cast<Eigen::Index>(10 + q); };
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.n_heads = 1;
  cfg.d_model = d;
  cfg.d_head = d;
  cfg.d_mlp = 4;
  cfg.vocab_size = vocab.size();
  cfg.max_context = 16;
  ModelWeights wt = ModelWeights::zeros(cfg);
  for (int m = 1; m <= 100; ++m) {
    const int tok = vocab.id(std::to_string(m));
    wt.W_E(v(m % 10), tok) = 1.0;
    wt.W_E(w(m / 10), tok) = 1.0;
    wt.W_U(tok, v(m % 10)) = 1.0;
    wt.W_U(tok, w((m - 1) / 10)) = 1.0;
  }
  wt.layers[1].W_V[0] = Eigen::MatrixXd::Identity(d, d);
  Eigen::MatrixXd ov = Eigen::MatrixXd::Zero(d, d);
  for (int r = 0; r < 10; ++r) ov(v((r + 1) % 10), v(r)) = 1.0;
  for (int q = 0; q <= 10; ++q) ov(w(q), w(q)) = 1.0;
  wt.layers[1].W_O[0] = ov;
  Eigen::MatrixXd f = Eigen::MatrixXd::Identity(d, d).leftCols(10);
  return PlantedSteering{std::move(vocab), std::move(ds), f, ModelHandle(cfg, std::move(wt)), HeadId{1, 0}};
}

/// Exactly compositional reps [i_s] = Q (e_i + e_{26 + domain}) over numbers
/// 1..20, number words, cardinal words, letters and Roman numerals, where a
/// domain is a (task, variant) pair and Q is a random rotation. W_U rows equal
/// the reps, so the true token scores 2 and every other at most 1. L1H0's OV
/// maps index i to i + 1 and keeps the domain.
struct PlantedCompositional {
  Vocab vocab;
  SuccessionDataset dataset;
  ModelHandle model;
  HeadId head{1, 0};
  Eigen::MatrixXd index_basis;  // d x 26, columns Q e_i
};

inline PlantedCompositional planted_compositional(std::uint64_t seed = 3) {
  std::vector<std::string> s = {"<unk>"};
  for (int i = 1; i <= 20; ++i) {
    s.push_back(std::to_string(i));
    s.push_back(" " + std::to_string(i));
  }
  const auto reg = default_registry();
  for (const auto& task : reg) {
    if (task.name == "number_words" || task.name == "cardinal_words" || task.name == "letters" ||
        task.name == "roman_numerals") {
      for (const auto& vars : task.variants) {
        for (const auto& v : vars) {
          if (std::find(s.begin(), s.end(), v) == s.end()) s.push_back(v);
        }
      }
    }
  }
  Vocab vocab(s);
  auto ds = build_succession_dataset(vocab, reg);

  std::vector<std::pair<int, int>> domains;  // (task, variant)
  for (const auto& t : ds.tokens) {
    if (std::find(domains.begin(), domains.end(), std::make_pair(t.task, t.variant)) == domains.end()) {
      domains.emplace_back(t.task, t.variant);
    }
  }
  const int n_index = 26;
  const int d = n_index + static_cast<int>(domains.size()) + 1;  // one spare axis for unrelated tokens
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd g(d, d);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
  const Eigen::MatrixXd Q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ() * Eigen::MatrixXd::Identity(d, d);

  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.n_heads = 1;
  cfg.d_model = d;
  cfg.d_head = d;
  cfg.d_mlp = 4;
  cfg.vocab_size = vocab.size();
  cfg.max_context = 16;
  ModelWeights w = ModelWeights::zeros(cfg);
  w.W_E.col(0) = Q.col(d - 1);
  w.W_U.row(0) = Q.col(d - 1).transpose();
  for (const auto& t : ds.tokens) {
    const auto dom = std::find(domains.begin(), domains.end(), std::make_pair(t.task, t.variant)) - domains.begin();
    const Eigen::VectorXd rep = Q.col(t.ordinal - 1) + Q.col(n_index + dom);
    w.W_E.col(t.token) = rep;
    w.W_U.row(t.token) = rep.transpose();
  }
  Eigen::MatrixXd ov = Eigen::MatrixXd::Zero(d, d);
  for (int i = 0; i + 1 < n_index; ++i) ov(i + 1, i) = 1.0;
  for (int k = n_index; k < d; ++k) ov(k, k) = 1.0;
  w.layers[1].W_V[0] = Eigen::MatrixXd::Identity(d, d);
  w.layers[1].W_O[0] = Q * ov * Q.transpose();
  return PlantedCompositional{std::move(vocab), std::move(ds), ModelHandle(cfg, std::move(w)), HeadId{1, 0},
                              Q.leftCols(n_index)};
}

}  // namespace succlab::testing
