#include "succlab/probes.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <random>
#include <set>

#include "succlab/error.hpp"
#include "succlab/io.hpp"
#include "succlab/optim.hpp"
#include "succlab/train.hpp"

namespace succlab {
namespace {

Eigen::VectorXd softmax(const Eigen::VectorXd& z) {
  const Eigen::ArrayXd e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

OrdinalReps collect(const SuccessionDataset& dataset, const std::vector<std::string>& tasks,
                    const TokenRepFn& rep, const ModelHandle& model) {
  OrdinalReps out;
  for (const auto& name : tasks) {
    const auto idx = dataset.task_index(name);
    if (!idx) continue;
    for (const auto& t : dataset.task_tokens(*idx)) {
      out.tokens.push_back(t.token);
      out.ordinals.push_back(t.ordinal);
    }
  }
  out.reps.resize(model.config().d_model, static_cast<Eigen::Index>(out.tokens.size()));
  for (std::size_t i = 0; i < out.tokens.size(); ++i) {
    out.reps.col(static_cast<Eigen::Index>(i)) = rep ? rep(out.tokens[i]) : mlp0_representation(model, out.tokens[i]);
  }
  return out;
}

std::vector<int> residues(const std::vector<int>& ordinals, int m) {
  std::vector<int> out;
  out.reserve(ordinals.size());
  for (int o : ordinals) out.push_back(((o % m) + m) % m);
  return out;
}

}  // namespace

void ProbeConfig::validate() const {
  if (!(lr > 0.0) || batch < 1 || epochs < 0) throw ConfigError("probe needs lr > 0, batch >= 1, epochs >= 0");
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw ConfigError("probe train_fraction must be in (0, 1]");
}

int LinearProbe::predict(const Eigen::VectorXd& x) const {
  Eigen::Index best = 0;
  (W * x + b).maxCoeff(&best);
  return static_cast<int>(best);
}

double LinearProbe::accuracy(const Eigen::MatrixXd& reps, const std::vector<int>& labels) const {
  if (labels.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    correct += predict(reps.col(static_cast<Eigen::Index>(i))) == labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

LinearProbe train_probe(const Eigen::MatrixXd& reps, const std::vector<int>& labels, int modulus,
                        const ProbeConfig& config) {
  config.validate();
  if (modulus < 2) throw ConfigError("probe modulus must be >= 2");
  if (static_cast<std::size_t>(reps.cols()) != labels.size()) throw IntegrityError("probe labels and reps differ in count");
  if (labels.empty()) throw DatasetError("probe training needs data");
  for (int l : labels) {
    if (l < 0 || l >= modulus) throw DomainError("probe label " + std::to_string(l) + " outside [0, modulus)");
  }
  if (std::set<int>(labels.begin(), labels.end()).size() < 2) throw TrainingError("probe data has a single class");

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::floor(config.train_fraction * static_cast<double>(order.size()))), 1, order.size());
  std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  const std::vector<std::size_t> val(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());

  const Eigen::Index d = reps.rows();
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(modulus, d);
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(modulus, 1);
  Eigen::MatrixXd gW, gb;
  Adam adam(config.lr);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    for (std::size_t start = 0; start < train.size(); start += static_cast<std::size_t>(config.batch)) {
      const std::size_t end = std::min(train.size(), start + static_cast<std::size_t>(config.batch));
      gW = Eigen::MatrixXd::Zero(modulus, d);
      gb = Eigen::MatrixXd::Zero(modulus, 1);
      for (std::size_t k = start; k < end; ++k) {
        const auto x = reps.col(static_cast<Eigen::Index>(train[k]));
        Eigen::VectorXd p = softmax(W * x + b.col(0));
        if (!p.allFinite()) throw TrainingError("probe logits became non-finite");
        p(labels[train[k]]) -= 1.0;
        gW.noalias() += p * x.transpose();
        gb.col(0) += p;
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      gW *= inv;
      gb *= inv;
      adam.step({&W, &b}, {&gW, &gb});
    }
  }
  LinearProbe probe;
  probe.modulus = modulus;
  probe.W = std::move(W);
  probe.b = b.col(0);
  probe.config = config;
  auto subset_acc = [&](const std::vector<std::size_t>& idx) {
    if (idx.empty()) return 0.0;
    std::size_t correct = 0;
    for (auto i : idx) correct += probe.predict(reps.col(static_cast<Eigen::Index>(i))) == labels[i] ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(idx.size());
  };
  probe.train_accuracy = subset_acc(train);
  probe.val_accuracy = val.empty() ? probe.train_accuracy : subset_acc(val);
  return probe;
}

ProbeFeatureSimilarity probe_feature_similarity(const LinearProbe& probe, const Eigen::MatrixXd& features) {
  if (probe.modulus != 10 || features.cols() != 10) throw DomainError("probe-feature similarity needs modulus 10");
  if (features.rows() != probe.W.cols()) throw IntegrityError("feature size differs from the probe input size");
  ProbeFeatureSimilarity s;
  for (Eigen::Index i = 0; i < 10; ++i) {
    const double denom = probe.W.row(i).norm() * features.col(i).norm();
    s.cosine.push_back(denom > 0.0 ? probe.W.row(i).dot(features.col(i).transpose()) / denom : 0.0);
  }
  s.mean = std::accumulate(s.cosine.begin(), s.cosine.end(), 0.0) / 10.0;
  return s;
}

ProbeData probe_data(const ModelHandle& model, const SuccessionDataset& dataset, const TokenRepFn& rep) {
  ProbeData d;
  d.numbers = collect(dataset, {"numbers"}, rep, model);
  if (d.numbers.tokens.empty()) throw DatasetError("probe data needs the numbers task");
  d.ood = collect(dataset, {"number_words", "cardinal_words", "roman_numerals", "months", "days"}, rep, model);
  return d;
}

std::vector<SweepRow> probe_sweep(const ProbeData& data, const std::vector<int>& moduli, const ProbeConfig& config) {
  for (int m : moduli) {
    if (m < 2 || m > 25) throw ConfigError("probe sweep moduli must lie in [2, 25]");
  }
  std::vector<SweepRow> rows(moduli.size());
  parallel_for(moduli.size(), [&](std::size_t i) {
    const int m = moduli[i];
    const LinearProbe p = train_probe(data.numbers.reps, residues(data.numbers.ordinals, m), m, config);
    rows[i] = {m, p.val_accuracy, data.ood.tokens.empty() ? 0.0 : p.accuracy(data.ood.reps, residues(data.ood.ordinals, m))};
  });
  return rows;
}

Tokens neuron_tokens(const SuccessionDataset& dataset) {
  const auto idx = dataset.task_index("numbers");
  if (!idx) throw DatasetError("neuron importance needs the numbers task");
  const auto& rt = dataset.tasks[static_cast<std::size_t>(*idx)];
  Tokens out;
  for (int o = 0; o < 100 && o <= rt.task.size(); ++o) {
    if (o < 1 || !rt.has_item(o)) continue;
    const auto s = successor_of(rt.task, o);
    if (s && rt.has_item(*s)) out.push_back(*dataset.item_token(*idx, o));
  }
  return out;
}

NeuronImportance neuron_importance(const ModelHandle& model, HeadId succ_head, const SuccessionDataset& dataset,
                                   const Tokens& tokens, const NeuronEdit& edit) {
  model.check_head(succ_head);
  if (tokens.empty()) throw DatasetError("neuron importance needs tokens");
  const auto& w = model.weights();
  const auto& layer0 = w.layers.front();
  const Eigen::MatrixXd ov = head_ov(model, succ_head);
  const int d_mlp = model.config().d_mlp;

  struct TokenCtx {
    Eigen::MatrixXd readout;  // block x d_model, rows W_U W_OV
    Eigen::Index target = 0;
    Mlp0Breakdown base;
    Eigen::VectorXd rep;
  };
  std::vector<TokenCtx> ctx(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const DatasetToken* tok = dataset.lookup(tokens[i]);
    if (!tok) throw DomainError("token " + std::to_string(tokens[i]) + " is not a dataset token");
    const auto& rt = dataset.tasks[static_cast<std::size_t>(tok->task)];
    const auto succ = successor_of(rt.task, tok->ordinal);
    if (!succ || !rt.has_item(*succ)) throw DomainError("token " + std::to_string(tokens[i]) + " has no successor");
    const int target = *dataset.item_token(tok->task, *succ, tok->variant);
    const auto block = dataset.task_tokens(tok->task);
    auto& c = ctx[i];
    c.readout.resize(static_cast<Eigen::Index>(block.size()), model.config().d_model);
    for (std::size_t j = 0; j < block.size(); ++j) {
      c.readout.row(static_cast<Eigen::Index>(j)) = w.W_U.row(block[j].token);
      if (block[j].token == target) c.target = static_cast<Eigen::Index>(j);
    }
    c.readout *= ov;
    c.base = mlp0_breakdown(model, tokens[i]);
    c.rep = c.base.representation();
  }

  NeuronImportance out;
  out.tokens = tokens;
  for (const auto& c : ctx) out.baseline_probability += softmax(c.readout * c.rep)(c.target);
  out.baseline_probability /= static_cast<double>(ctx.size());

  std::vector<NeuronReport> reports(static_cast<std::size_t>(d_mlp));
  parallel_for(reports.size(), [&](std::size_t n) {
    NeuronReport r;
    r.neuron = static_cast<int>(n);
    double total = 0.0;
    for (const auto& c : ctx) {
      Eigen::VectorXd hidden = c.base.hidden;
      if (edit) {
        edit(hidden, r.neuron);
      } else {
        hidden(static_cast<Eigen::Index>(n)) = 0.0;
      }
      const Eigen::VectorXd rep = c.rep + layer0.W_out * (hidden - c.base.hidden);
      total += softmax(c.readout * rep)(c.target);
      r.firing.push_back(c.base.hidden(static_cast<Eigen::Index>(n)));
    }
    r.mean_probability = total / static_cast<double>(ctx.size());
    if (r.firing.size() >= 20) r.period = neuron_periodicity(r.firing);
    const Eigen::VectorXd profile = w.W_U * (ov * layer0.W_out.col(static_cast<Eigen::Index>(n)));
    for (int t : tokens) r.logit_profile.push_back(profile(t));
    reports[n] = std::move(r);
  });
  std::stable_sort(reports.begin(), reports.end(), [](const NeuronReport& a, const NeuronReport& b) {
    return a.mean_probability < b.mean_probability;
  });
  out.ranked = std::move(reports);
  return out;
}

std::optional<int> neuron_periodicity(const std::vector<double>& series) {
  const std::size_t N = series.size();
  if (N < 20) throw DomainError("periodicity needs at least 20 samples");
  const double mean = std::accumulate(series.begin(), series.end(), 0.0) / static_cast<double>(N);
  double spread = 0.0;
  for (double x : series) spread = std::max(spread, std::abs(x - mean));
  if (spread <= 1e-12 * std::max(1.0, std::abs(mean))) return std::nullopt;
  std::size_t best_k = 0;
  double best_mag = -1.0;
  const double two_pi = 2.0 * std::acos(-1.0);
  for (std::size_t k = 1; k <= N / 2; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      acc += (series[n] - mean) * std::polar(1.0, -two_pi * static_cast<double>(k * n % N) / static_cast<double>(N));
    }
    if (std::abs(acc) > best_mag + 1e-12) {
      best_mag = std::abs(acc);
      best_k = k;
    }
  }
  return static_cast<int>(std::lround(static_cast<double>(N) / static_cast<double>(best_k)));
}

Archive probe_to_archive(const LinearProbe& probe) {
  Archive a;
  a.set_meta("kind", "probe");
  a.set_meta("modulus", std::to_string(probe.modulus));
  a.set_meta("lr", format_double(probe.config.lr));
  a.set_meta("batch", std::to_string(probe.config.batch));
  a.set_meta("epochs", std::to_string(probe.config.epochs));
  a.set_meta("seed", std::to_string(probe.config.seed));
  a.set_meta("val_accuracy", format_double(probe.val_accuracy));
  a.add_matrix("W", probe.W);
  a.add_vector("b", probe.b);
  return a;
}

LinearProbe probe_from_archive(const Archive& a) {
  if (a.has_meta("kind") && a.meta("kind") != "probe") throw FormatError("archive is not a probe");
  LinearProbe p;
  try {
    p.modulus = std::stoi(a.meta("modulus"));
    p.config.lr = std::stod(a.meta("lr"));
    p.config.batch = std::stoi(a.meta("batch"));
    p.config.epochs = std::stoi(a.meta("epochs"));
    p.config.seed = std::stoull(a.meta("seed"));
    p.val_accuracy = std::stod(a.meta("val_accuracy"));
  } catch (const std::logic_error&) {
    throw FormatError("probe archive has malformed metadata");
  }
  p.W = a.matrix("W");
  p.b = a.vector("b");
  if (p.W.rows() != p.modulus || p.b.size() != p.modulus) throw IntegrityError("probe archive shapes disagree");
  return p;
}

}  // namespace succlab
