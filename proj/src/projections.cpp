#include "succlab/projections.hpp"

#include <algorithm>
#include <cmath>
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

int argmax(const Eigen::VectorXd& z) {
  Eigen::Index best = 0;
  z.maxCoeff(&best);
  return static_cast<int>(best);
}

/// Representations of every vocab token, one per column.
Eigen::MatrixXd all_reps(const ModelHandle& model, const ProjRepFn& rep) {
  const int V = model.config().vocab_size;
  if (!rep) {
    Tokens all(static_cast<std::size_t>(V));
    std::iota(all.begin(), all.end(), 0);
    return mlp0_representations(model, all);
  }
  Eigen::MatrixXd out(model.config().d_model, V);
  for (int t = 0; t < V; ++t) {
    const Eigen::VectorXd r = rep(t);
    if (r.size() != out.rows()) throw IntegrityError("representation size differs from d_model");
    out.col(t) = r;
  }
  return out;
}

void check_pi(const ModelHandle& model, const Eigen::MatrixXd& pi, const char* name) {
  const int d = model.config().d_model;
  if (pi.rows() != d || pi.cols() != d) throw IntegrityError(std::string(name) + " must be d_model x d_model");
}

void check_pair_tokens(const ModelHandle& model, const TokenPair& p) {
  for (int t : {p.source, p.domain, p.target}) model.check_token(t);
}

}  // namespace

void OutputProjectionConfig::validate() const {
  if (epochs < 0 || batch < 1 || !(lr > 0.0)) throw ConfigError("output projection needs epochs >= 0, batch >= 1, lr > 0");
  if (max_holdout < 0 || !(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) {
    throw ConfigError("output projection holdout must be >= 0 with fraction in [0, 1)");
  }
}

void ProjectionConfig::validate() const {
  if (epochs < 0 || batch < 1 || !(lr > 0.0)) throw ConfigError("projection pair needs epochs >= 0, batch >= 1, lr > 0");
  if (train_pairs < 1 || heldout_pairs < 0) throw ConfigError("projection pair needs train_pairs >= 1, heldout_pairs >= 0");
}

int decode_output(const ModelHandle& model, const Eigen::MatrixXd& pi_O, const Eigen::VectorXd& x) {
  return argmax(model.weights().W_U * (pi_O * x));
}

OutputProjection train_output_projection(const ModelHandle& model, const OutputProjectionConfig& config,
                                         const Tokens& tokens_in, const ProjRepFn& rep) {
  config.validate();
  Tokens tokens = tokens_in;
  if (tokens.empty()) {
    tokens.resize(static_cast<std::size_t>(model.config().vocab_size));
    std::iota(tokens.begin(), tokens.end(), 0);
  }
  if (tokens.size() < 2) throw DatasetError("output projection needs at least two tokens");
  for (int t : tokens) model.check_token(t);
  const Eigen::MatrixXd R = all_reps(model, rep);
  const Eigen::MatrixXd& W_U = model.weights().W_U;

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(tokens.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_hold = std::min<std::size_t>(
      static_cast<std::size_t>(config.max_holdout),
      static_cast<std::size_t>(std::floor(config.holdout_fraction * static_cast<double>(tokens.size()))));
  std::vector<int> held, train;
  for (std::size_t i = 0; i < order.size(); ++i) (i < n_hold ? held : train).push_back(tokens[order[i]]);

  const int d = model.config().d_model;
  Eigen::MatrixXd pi = Eigen::MatrixXd::Identity(d, d);
  Eigen::MatrixXd grad;
  Adam adam(config.lr);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    for (std::size_t start = 0; start < train.size(); start += static_cast<std::size_t>(config.batch)) {
      const std::size_t end = std::min(train.size(), start + static_cast<std::size_t>(config.batch));
      grad = Eigen::MatrixXd::Zero(d, d);
      for (std::size_t k = start; k < end; ++k) {
        const auto x = R.col(train[k]);
        Eigen::VectorXd p = softmax(W_U * (pi * x));
        if (!p.allFinite()) throw TrainingError("output projection logits became non-finite");
        p(train[k]) -= 1.0;
        grad.noalias() += (W_U.transpose() * p) * x.transpose();
      }
      grad /= static_cast<double>(end - start);
      adam.step({&pi}, {&grad});
    }
  }
  if (!pi.allFinite()) throw TrainingError("output projection diverged");

  OutputProjection out;
  out.pi_O = std::move(pi);
  out.config = config;
  out.heldout = held;
  auto acc = [&](const std::vector<int>& set) {
    if (set.empty()) return 0.0;
    std::size_t ok = 0;
    for (int t : set) ok += decode_output(model, out.pi_O, R.col(t)) == t ? 1 : 0;
    return static_cast<double>(ok) / static_cast<double>(set.size());
  };
  out.train_accuracy = acc(train);
  out.heldout_accuracy = held.empty() ? out.train_accuracy : acc(held);
  return out;
}

int pair_target(const SuccessionDataset& dataset, int source, int domain) {
  const auto* s = dataset.lookup(source);
  const auto* t = dataset.lookup(domain);
  if (!s || !t) return -1;
  const auto& rt = dataset.tasks[static_cast<std::size_t>(t->task)];
  if (s->ordinal > rt.task.size() || !rt.has_item(s->ordinal)) return -1;
  return *dataset.item_token(t->task, s->ordinal, t->variant);
}

PairSplit sample_pairs(const SuccessionDataset& dataset, int train_pairs, int heldout_pairs, std::uint64_t seed) {
  if (train_pairs < 0 || heldout_pairs < 0) throw ConfigError("pair counts must be nonnegative");
  const auto pool = dataset.scored_tokens();
  // Enumerate every valid pair so sampling is uniform and exhaustion is detectable.
  std::vector<TokenPair> valid;
  for (const auto& s : pool) {
    for (const auto& t : pool) {
      const int target = pair_target(dataset, s.token, t.token);
      if (target >= 0) valid.push_back({s.token, t.token, target});
    }
  }
  if (valid.empty()) throw DatasetError("no valid token pairs");
  std::mt19937_64 rng(seed);
  std::shuffle(valid.begin(), valid.end(), rng);
  PairSplit out;
  const auto n_hold = std::min<std::size_t>(static_cast<std::size_t>(heldout_pairs), valid.size() / 2);
  out.heldout.assign(valid.begin(), valid.begin() + static_cast<std::ptrdiff_t>(n_hold));
  const auto n_train = std::min<std::size_t>(static_cast<std::size_t>(train_pairs), valid.size() - n_hold);
  out.train.assign(valid.begin() + static_cast<std::ptrdiff_t>(n_hold),
                   valid.begin() + static_cast<std::ptrdiff_t>(n_hold + n_train));
  return out;
}

Eigen::MatrixXd ProjectionPair::pi_D() const {
  return Eigen::MatrixXd::Identity(pi_N.rows(), pi_N.cols()) - pi_N;
}

Eigen::VectorXd ProjectionPair::combine(const Eigen::VectorXd& index_rep, const Eigen::VectorXd& domain_rep) const {
  return pi_N * (index_rep - domain_rep) + domain_rep;
}

ProjectionPair train_projection_pair(const ModelHandle& model, const Eigen::MatrixXd& pi_O, HeadId succ_head,
                                     const std::vector<TokenPair>& pairs_in, const ProjectionConfig& config,
                                     const ProjRepFn& rep) {
  config.validate();
  model.check_head(succ_head);
  check_pi(model, pi_O, "pi_O");
  if (pairs_in.empty()) throw DatasetError("projection training needs at least one valid pair");
  for (const auto& p : pairs_in) check_pair_tokens(model, p);

  const Eigen::MatrixXd R = all_reps(model, rep);
  const Eigen::MatrixXd& W_U = model.weights().W_U;
  const Eigen::MatrixXd out_read = W_U * pi_O;                       // vocab x d
  const Eigen::MatrixXd succ_read = W_U * head_ov(model, succ_head);  // vocab x d
  const int d = model.config().d_model;

  std::vector<TokenPair> pairs = pairs_in;
  std::mt19937_64 rng(config.seed);
  Eigen::MatrixXd pi_N = 0.5 * Eigen::MatrixXd::Identity(d, d);
  Eigen::MatrixXd grad;
  Adam adam(config.lr);
  double epoch_loss = 0.0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(pairs.begin(), pairs.end(), rng);
    epoch_loss = 0.0;
    for (std::size_t start = 0; start < pairs.size(); start += static_cast<std::size_t>(config.batch)) {
      const std::size_t end = std::min(pairs.size(), start + static_cast<std::size_t>(config.batch));
      grad = Eigen::MatrixXd::Zero(d, d);
      for (std::size_t k = start; k < end; ++k) {
        const auto& p = pairs[k];
        const Eigen::VectorXd delta = R.col(p.source) - R.col(p.domain);
        const Eigen::VectorXd x = pi_N * delta + R.col(p.domain);
        const auto y = R.col(p.target);
        const Eigen::VectorXd diff = x - y;
        Eigen::VectorXd p_out = softmax(out_read * x);
        const Eigen::VectorXd p_succ = softmax(succ_read * x);
        const Eigen::VectorXd q_succ = softmax(succ_read * y);
        const double ce_out = -std::log(std::max(p_out(p.target), 1e-300));
        const double ce_succ = -(q_succ.array() * p_succ.array().max(1e-300).log()).sum();
        const double loss = diff.squaredNorm() + ce_out + ce_succ;
        if (!std::isfinite(loss)) throw TrainingError("projection loss became non-finite in epoch " + std::to_string(epoch));
        epoch_loss += loss;
        p_out(p.target) -= 1.0;
        const Eigen::VectorXd g = 2.0 * diff + out_read.transpose() * p_out + succ_read.transpose() * (p_succ - q_succ);
        grad.noalias() += g * delta.transpose();
      }
      grad /= static_cast<double>(end - start);
      adam.step({&pi_N}, {&grad});
    }
    epoch_loss /= static_cast<double>(pairs.size());
  }
  ProjectionPair out;
  out.pi_N = std::move(pi_N);
  out.config = config;
  out.final_loss = epoch_loss;
  return out;
}

DecodingResult eval_output_decoding(const ProjectionPair& pair, const Eigen::MatrixXd& pi_O, const ModelHandle& model,
                                    const std::vector<TokenPair>& pairs, const ProjRepFn& rep) {
  check_pi(model, pi_O, "pi_O");
  check_pi(model, pair.pi_N, "pi_N");
  for (const auto& p : pairs) check_pair_tokens(model, p);
  const Eigen::MatrixXd R = all_reps(model, rep);
  DecodingResult out;
  out.rows.resize(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t i) {
    const auto& p = pairs[i];
    auto& row = out.rows[i];
    row.pair = p;
    row.expected = p.target;
    row.predicted = decode_output(model, pi_O, pair.combine(R.col(p.source), R.col(p.domain)));
    row.correct = row.predicted == row.expected;
  });
  std::size_t ok = 0;
  for (const auto& r : out.rows) ok += r.correct ? 1 : 0;
  out.accuracy = out.rows.empty() ? 0.0 : static_cast<double>(ok) / static_cast<double>(out.rows.size());
  return out;
}

DecodingResult eval_successor_decoding(const ProjectionPair& pair, const Eigen::MatrixXd& pi_O,
                                       const ModelHandle& model, HeadId succ_head, const SuccessionDataset& dataset,
                                       const std::vector<TokenPair>& pairs, const ProjRepFn& rep) {
  model.check_head(succ_head);
  check_pi(model, pi_O, "pi_O");
  check_pi(model, pair.pi_N, "pi_N");
  for (const auto& p : pairs) check_pair_tokens(model, p);
  const Eigen::MatrixXd R = all_reps(model, rep);
  const Eigen::MatrixXd ov = head_ov(model, succ_head);
  std::vector<TokenPair> kept;
  std::vector<int> expected;
  for (const auto& p : pairs) {
    const auto* t = dataset.lookup(p.target);
    if (!t) continue;
    const auto& rt = dataset.tasks[static_cast<std::size_t>(t->task)];
    const auto succ = successor_of(rt.task, t->ordinal);
    if (!succ || !rt.has_item(*succ)) continue;
    kept.push_back(p);
    expected.push_back(*dataset.item_token(t->task, *succ, t->variant));
  }
  DecodingResult out;
  out.rows.resize(kept.size());
  parallel_for(kept.size(), [&](std::size_t i) {
    auto& row = out.rows[i];
    row.pair = kept[i];
    row.expected = expected[i];
    row.predicted = decode_output(model, pi_O, ov * pair.combine(R.col(kept[i].source), R.col(kept[i].domain)));
    row.correct = row.predicted == row.expected;
  });
  std::size_t ok = 0;
  for (const auto& r : out.rows) ok += r.correct ? 1 : 0;
  out.accuracy = out.rows.empty() ? 0.0 : static_cast<double>(ok) / static_cast<double>(out.rows.size());
  return out;
}

std::string to_string(CellVerdict v) {
  switch (v) {
    case CellVerdict::exact: return "exact";
    case CellVerdict::index_only: return "index_only";
    case CellVerdict::wrong: return "wrong";
    case CellVerdict::invalid: return "invalid";
  }
  return "invalid";
}

double OodGrid::accuracy() const {
  std::size_t n = 0, ok = 0;
  for (const auto& row : cells) {
    for (const auto& c : row) {
      if (c.verdict == CellVerdict::invalid) continue;
      ++n;
      ok += c.verdict == CellVerdict::exact ? 1 : 0;
    }
  }
  return n == 0 ? 0.0 : static_cast<double>(ok) / static_cast<double>(n);
}

OodGrid roman_ood_grid(const ProjectionPair& pair, const Eigen::MatrixXd& pi_O, const ModelHandle& model,
                       const SuccessionDataset& dataset, const Vocab& vocab, bool successor, HeadId succ_head,
                       const ProjRepFn& rep) {
  check_pi(model, pi_O, "pi_O");
  check_pi(model, pair.pi_N, "pi_N");
  if (successor) model.check_head(succ_head);
  if (vocab.size() != model.config().vocab_size) throw IntegrityError("vocab size differs from the model");

  OrdinalTask roman;
  if (const auto idx = dataset.task_index("roman_numerals")) {
    roman = dataset.tasks[static_cast<std::size_t>(*idx)].task;
  } else {
    for (const auto& t : default_registry()) {
      if (t.name == "roman_numerals") roman = t;
    }
  }
  const Eigen::MatrixXd R = all_reps(model, rep);
  const Eigen::MatrixXd ov = successor ? head_ov(model, succ_head) : Eigen::MatrixXd();

  OodGrid grid;
  grid.successor = successor;
  grid.columns = roman.items;
  // One row per (task, variant) that resolves its first item.
  for (std::size_t ti = 0; ti < dataset.tasks.size(); ++ti) {
    const auto& rt = dataset.tasks[ti];
    if (rt.task.held_out || !rt.has_item(1)) continue;
    for (int tok : rt.item_tokens[0]) grid.rows.push_back(tok);
  }
  grid.cells.assign(grid.rows.size(), std::vector<OodCell>(roman.items.size()));
  for (std::size_t r = 0; r < grid.rows.size(); ++r) {
    const auto* one = dataset.lookup(grid.rows[r]);
    const auto& rt = dataset.tasks[static_cast<std::size_t>(one->task)];
    for (std::size_t c = 0; c < roman.items.size(); ++c) {
      OodCell& cell = grid.cells[r][c];
      for (const auto& surface : roman.variants[c]) {
        if (const auto id = vocab.find(surface)) {
          cell.index_token = *id;
          break;
        }
      }
      int ordinal = static_cast<int>(c) + 1;
      if (ordinal > rt.task.size()) continue;
      if (successor) {
        const auto s = successor_of(rt.task, ordinal);
        if (!s) continue;
        ordinal = *s;
      }
      if (cell.index_token < 0 || ordinal > rt.task.size() || !rt.has_item(ordinal)) continue;
      cell.expected = *dataset.item_token(one->task, ordinal, one->variant);
      Eigen::VectorXd x = pair.combine(R.col(cell.index_token), R.col(grid.rows[r]));
      if (successor) x = ov * x;
      cell.predicted = decode_output(model, pi_O, x);
      const auto* pred = dataset.lookup(cell.predicted);
      if (cell.predicted == cell.expected) {
        cell.verdict = CellVerdict::exact;
      } else if (pred && pred->ordinal == ordinal) {
        cell.verdict = CellVerdict::index_only;
      } else {
        cell.verdict = CellVerdict::wrong;
      }
    }
  }
  return grid;
}

Archive output_projection_to_archive(const OutputProjection& p) {
  Archive a;
  a.set_meta("kind", "output_projection");
  a.set_meta("epochs", std::to_string(p.config.epochs));
  a.set_meta("batch", std::to_string(p.config.batch));
  a.set_meta("lr", format_double(p.config.lr));
  a.set_meta("seed", std::to_string(p.config.seed));
  a.set_meta("train_accuracy", format_double(p.train_accuracy));
  a.set_meta("heldout_accuracy", format_double(p.heldout_accuracy));
  a.add_matrix("pi_O", p.pi_O);
  a.add_ids("heldout", p.heldout);
  return a;
}

OutputProjection output_projection_from_archive(const Archive& a) {
  if (a.has_meta("kind") && a.meta("kind") != "output_projection") throw FormatError("archive is not an output projection");
  OutputProjection p;
  try {
    p.config.epochs = std::stoi(a.meta("epochs"));
    p.config.batch = std::stoi(a.meta("batch"));
    p.config.lr = std::stod(a.meta("lr"));
    p.config.seed = std::stoull(a.meta("seed"));
    p.train_accuracy = std::stod(a.meta("train_accuracy"));
    p.heldout_accuracy = std::stod(a.meta("heldout_accuracy"));
  } catch (const std::logic_error&) {
    throw FormatError("output projection archive has malformed metadata");
  }
  p.pi_O = a.matrix("pi_O");
  p.heldout = a.ids("heldout");
  if (p.pi_O.rows() != p.pi_O.cols()) throw IntegrityError("pi_O must be square");
  return p;
}

Archive projection_pair_to_archive(const ProjectionPair& p) {
  Archive a;
  a.set_meta("kind", "projection_pair");
  a.set_meta("epochs", std::to_string(p.config.epochs));
  a.set_meta("batch", std::to_string(p.config.batch));
  a.set_meta("lr", format_double(p.config.lr));
  a.set_meta("seed", std::to_string(p.config.seed));
  a.set_meta("train_pairs", std::to_string(p.config.train_pairs));
  a.set_meta("heldout_pairs", std::to_string(p.config.heldout_pairs));
  a.set_meta("final_loss", format_double(p.final_loss));
  a.add_matrix("pi_N", p.pi_N);
  return a;
}

ProjectionPair projection_pair_from_archive(const Archive& a) {
  if (a.has_meta("kind") && a.meta("kind") != "projection_pair") throw FormatError("archive is not a projection pair");
  ProjectionPair p;
  try {
    p.config.epochs = std::stoi(a.meta("epochs"));
    p.config.batch = std::stoi(a.meta("batch"));
    p.config.lr = std::stod(a.meta("lr"));
    p.config.seed = std::stoull(a.meta("seed"));
    p.config.train_pairs = std::stoi(a.meta("train_pairs"));
    p.config.heldout_pairs = std::stoi(a.meta("heldout_pairs"));
    p.final_loss = std::stod(a.meta("final_loss"));
  } catch (const std::logic_error&) {
    throw FormatError("projection pair archive has malformed metadata");
  }
  p.pi_N = a.matrix("pi_N");
  if (p.pi_N.rows() != p.pi_N.cols()) throw IntegrityError("pi_N must be square");
  return p;
}

}  // namespace succlab
