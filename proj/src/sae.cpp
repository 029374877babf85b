#include "succlab/sae.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "succlab/error.hpp"
#include "succlab/io.hpp"
#include "succlab/optim.hpp"

namespace succlab {
namespace {

void normalize_columns(Eigen::MatrixXd& m) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    const double n = m.col(c).norm();
    if (n > 0.0) m.col(c) /= n;
  }
}

Eigen::MatrixXd encode_batch(const SparseAutoencoder& sae, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd pre = sae.W_enc * x;
  pre.colwise() += sae.b_enc;
  return pre.cwiseMax(0.0);
}

Eigen::VectorXd softmax(const Eigen::VectorXd& z) {
  const Eigen::ArrayXd e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

}  // namespace

void SAEConfig::validate() const {
  if (n_features < 1) throw ConfigError("SAE needs at least one feature");
  if (!(sparsity >= 0.0)) throw ConfigError("SAE sparsity must be nonnegative");
  if (batch < 1 || epochs < 0) throw ConfigError("SAE batch must be >= 1 and epochs >= 0");
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw ConfigError("SAE train_fraction must be in (0, 1]");
  if (!(lr > 0.0)) throw ConfigError("SAE learning rate must be positive");
}

Eigen::VectorXd SparseAutoencoder::encode(const Eigen::VectorXd& x) const {
  if (x.size() != d_model()) throw IntegrityError("representation size differs from the SAE input size");
  return (W_enc * x + b_enc).cwiseMax(0.0);
}

SparseAutoencoder train_sae(const Eigen::MatrixXd& reps, const SAEConfig& config) {
  config.validate();
  if (reps.cols() == 0 || reps.rows() == 0) throw DatasetError("SAE training needs at least one representation");
  if (!reps.allFinite()) throw NumericError("SAE input contains non-finite values");
  const Eigen::Index d = reps.rows();
  const Eigen::Index D = config.n_features;
  std::mt19937_64 rng(config.seed);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(reps.cols()));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(config.train_fraction * static_cast<double>(order.size()))));
  std::vector<Eigen::Index> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<Eigen::Index> val(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());

  SparseAutoencoder sae;
  sae.config = config;
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd W_dec(d, D);
  for (Eigen::Index i = 0; i < W_dec.size(); ++i) W_dec.data()[i] = normal(rng);
  normalize_columns(W_dec);
  Eigen::MatrixXd W_enc = W_dec.transpose();
  Eigen::MatrixXd b_enc = Eigen::MatrixXd::Zero(D, 1);

  Adam adam(config.lr);
  Eigen::MatrixXd gW_enc, gb_enc, gW_dec;
  double epoch_loss = 0.0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    epoch_loss = 0.0;
    for (std::size_t start = 0; start < train.size(); start += static_cast<std::size_t>(config.batch)) {
      const std::size_t end = std::min(train.size(), start + static_cast<std::size_t>(config.batch));
      const auto B = static_cast<Eigen::Index>(end - start);
      Eigen::MatrixXd x(d, B);
      for (Eigen::Index j = 0; j < B; ++j) x.col(j) = reps.col(train[start + static_cast<std::size_t>(j)]);
      Eigen::MatrixXd pre = W_enc * x;
      pre.colwise() += b_enc.col(0);
      const Eigen::MatrixXd a = pre.cwiseMax(0.0);
      const Eigen::MatrixXd err = W_dec * a - x;
      const double loss = 0.5 * err.squaredNorm() + config.sparsity * a.sum();
      if (!std::isfinite(loss)) throw TrainingError("SAE loss became non-finite in epoch " + std::to_string(epoch));
      epoch_loss += loss;
      const double inv = 1.0 / static_cast<double>(B);
      gW_dec = err * a.transpose() * inv;
      Eigen::MatrixXd dpre = (W_dec.transpose() * err).array() + config.sparsity;
      dpre = dpre.cwiseProduct((pre.array() > 0.0).cast<double>().matrix()) * inv;
      gW_enc = dpre * x.transpose();
      gb_enc = dpre.rowwise().sum();
      adam.step({&W_enc, &b_enc, &W_dec}, {&gW_enc, &gb_enc, &gW_dec});
      normalize_columns(W_dec);
    }
  }
  sae.W_enc = std::move(W_enc);
  sae.b_enc = b_enc.col(0);
  sae.W_dec = std::move(W_dec);
  sae.train_loss = epoch_loss / static_cast<double>(train.size());

  auto subset = [&](const std::vector<Eigen::Index>& idx) {
    Eigen::MatrixXd m(d, static_cast<Eigen::Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) m.col(static_cast<Eigen::Index>(j)) = reps.col(idx[j]);
    return m;
  };
  sae.train_recon_error = reconstruction_error(sae, subset(train));
  sae.val_recon_error = val.empty() ? sae.train_recon_error : reconstruction_error(sae, subset(val));
  if (!std::isfinite(sae.train_recon_error) || !std::isfinite(sae.val_recon_error)) {
    throw TrainingError("SAE reconstruction error is non-finite");
  }
  return sae;
}

Decomposition decompose(const SparseAutoencoder& sae, const Eigen::VectorXd& rep) {
  Decomposition out;
  out.activations = sae.encode(rep);
  out.reconstruction = sae.W_dec * out.activations;
  out.error = (rep - out.reconstruction).norm();
  return out;
}

double reconstruction_error(const SparseAutoencoder& sae, const Eigen::MatrixXd& reps) {
  if (reps.cols() == 0) return 0.0;
  const double denom = reps.norm();
  const double num = (sae.W_dec * encode_batch(sae, reps) - reps).norm();
  return denom > 0.0 ? num / denom : num;
}

std::optional<FeatureImportance> most_important_feature(const SparseAutoencoder& sae, const Eigen::VectorXd& rep,
                                                        int token, const ModelHandle& model, HeadId succ_head,
                                                        const SuccessionDataset& dataset, bool restrict_to_task) {
  model.check_head(succ_head);
  const DatasetToken* tok = dataset.lookup(token);
  if (!tok) throw DomainError("token " + std::to_string(token) + " is not a dataset token");
  const auto& rt = dataset.tasks[static_cast<std::size_t>(tok->task)];
  const auto succ = successor_of(rt.task, tok->ordinal);
  if (!succ || !rt.has_item(*succ)) throw DomainError("token " + std::to_string(token) + " has no successor");
  const int target = *dataset.item_token(tok->task, *succ, tok->variant);

  Tokens block;
  if (restrict_to_task) {
    for (const auto& t : dataset.task_tokens(tok->task)) block.push_back(t.token);
  } else {
    for (int t = 0; t < model.config().vocab_size; ++t) block.push_back(t);
  }
  const auto target_pos = static_cast<Eigen::Index>(std::find(block.begin(), block.end(), target) - block.begin());
  Eigen::MatrixXd readout(static_cast<Eigen::Index>(block.size()), model.config().d_model);
  for (std::size_t i = 0; i < block.size(); ++i) readout.row(static_cast<Eigen::Index>(i)) = model.weights().W_U.row(block[i]);
  readout *= head_ov(model, succ_head);

  const Decomposition dec = decompose(sae, rep);
  const Eigen::VectorXd base_logits = readout * dec.reconstruction;
  const double base = softmax(base_logits)(target_pos);
  std::optional<FeatureImportance> best;
  for (Eigen::Index i = 0; i < dec.activations.size(); ++i) {
    const double a = dec.activations(i);
    if (a <= 0.0) continue;
    const Eigen::VectorXd logits = base_logits - a * (readout * sae.W_dec.col(i));
    const double drop = base - softmax(logits)(target_pos);
    if (!best || drop > best->drop) best = FeatureImportance{static_cast<int>(i), base, drop};
  }
  return best;
}

std::optional<FeatureImportance> most_important_feature(const SparseAutoencoder& sae, int token,
                                                        const ModelHandle& model, HeadId succ_head,
                                                        const SuccessionDataset& dataset, bool restrict_to_task) {
  return most_important_feature(sae, mlp0_representation(model, token), token, model, succ_head, dataset,
                                restrict_to_task);
}

ModFeatureSet extract_mod_features(const std::vector<SparseAutoencoder>& runs, const SuccessionDataset& dataset,
                                   const ModelHandle& model, HeadId succ_head, bool restrict_to_task,
                                   const RepFn& rep_fn) {
  if (runs.empty()) throw UsageError("feature extraction needs at least one SAE run");
  const auto numbers = dataset.task_index("numbers");
  if (!numbers) throw DatasetError("feature extraction needs the numbers task");
  const auto& rt = dataset.tasks[static_cast<std::size_t>(*numbers)];
  std::array<std::vector<int>, 10> classes;
  for (const auto& t : dataset.task_tokens(*numbers)) {
    const auto succ = successor_of(rt.task, t.ordinal);
    if (succ && rt.has_item(*succ)) classes[static_cast<std::size_t>(t.ordinal % 10)].push_back(t.token);
  }
  for (int n = 0; n < 10; ++n) {
    if (classes[static_cast<std::size_t>(n)].empty()) {
      throw DatasetError("residue class " + std::to_string(n) + " has no numbers tokens");
    }
  }
  const int d = runs.front().d_model();
  std::vector<Eigen::VectorXd> reps;
  std::map<int, Eigen::VectorXd> rep_cache;
  auto rep_of = [&](int token) -> const Eigen::VectorXd& {
    auto it = rep_cache.find(token);
    if (it == rep_cache.end()) {
      it = rep_cache.emplace(token, rep_fn ? rep_fn(token) : mlp0_representation(model, token)).first;
    }
    return it->second;
  };

  ModFeatureSet out;
  out.run_count = static_cast<int>(runs.size());
  out.features = Eigen::MatrixXd::Zero(d, 10);
  for (const auto& sae : runs) {
    if (sae.d_model() != d) throw IntegrityError("SAE runs disagree on d_model");
    std::array<int, 10> modal{};
    for (std::size_t n = 0; n < 10; ++n) {
      std::map<int, int> counts;
      for (int token : classes[n]) {
        const auto fi = most_important_feature(sae, rep_of(token), token, model, succ_head, dataset, restrict_to_task);
        if (fi) ++counts[fi->feature];
      }
      int best = -1, best_count = 0;
      for (const auto& [f, c] : counts) {
        if (c > best_count) {
          best = f;
          best_count = c;
        }
      }
      if (best < 0) throw NumericError("no active SAE feature for residue class " + std::to_string(n));
      modal[n] = best;
      out.modal_share[n] += static_cast<double>(best_count) / static_cast<double>(classes[n].size());
      Eigen::VectorXd v = sae.W_dec.col(best);
      if (&sae != &runs.front() && v.dot(runs.front().W_dec.col(out.modal_index.front()[n])) < 0.0) v = -v;
      out.features.col(static_cast<Eigen::Index>(n)) += v;
    }
    out.modal_index.push_back(modal);
  }
  for (auto& s : out.modal_share) s /= static_cast<double>(runs.size());
  normalize_columns(out.features);
  return out;
}

double mmcs(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows()) throw IntegrityError("dictionaries have different dimensions");
  if (a.cols() == 0 || b.cols() == 0) throw DatasetError("mmcs needs nonempty dictionaries");
  Eigen::MatrixXd an = a, bn = b;
  normalize_columns(an);
  normalize_columns(bn);
  const Eigen::MatrixXd cos = an.transpose() * bn;
  double total = 0.0;
  for (Eigen::Index i = 0; i < cos.rows(); ++i) total += cos.row(i).maxCoeff();
  return std::clamp(total / static_cast<double>(cos.rows()), 0.0, 1.0);
}

double mmcs(const SparseAutoencoder& a, const SparseAutoencoder& b) { return mmcs(a.W_dec, b.W_dec); }

Eigen::MatrixXd feature_logit_table(const Eigen::MatrixXd& features, const ModelHandle& model, HeadId succ_head,
                                    const Tokens& output_tokens) {
  model.check_head(succ_head);
  if (features.rows() != model.config().d_model) throw IntegrityError("feature size differs from d_model");
  const Eigen::MatrixXd logits = model.weights().W_U * (head_ov(model, succ_head) * features);
  Eigen::MatrixXd out(features.cols(), static_cast<Eigen::Index>(output_tokens.size()));
  for (std::size_t j = 0; j < output_tokens.size(); ++j) {
    model.check_token(output_tokens[j]);
    out.col(static_cast<Eigen::Index>(j)) = logits.row(output_tokens[j]).transpose();
  }
  return out;
}

Archive sae_to_archive(const SparseAutoencoder& sae) {
  Archive a;
  a.set_meta("kind", "sae");
  a.set_meta("n_features", std::to_string(sae.config.n_features));
  a.set_meta("sparsity", format_double(sae.config.sparsity));
  a.set_meta("batch", std::to_string(sae.config.batch));
  a.set_meta("epochs", std::to_string(sae.config.epochs));
  a.set_meta("seed", std::to_string(sae.config.seed));
  a.set_meta("train_fraction", format_double(sae.config.train_fraction));
  a.set_meta("lr", format_double(sae.config.lr));
  a.add_matrix("encoder.W", sae.W_enc);
  a.add_vector("encoder.b", sae.b_enc);
  a.add_matrix("decoder.W", sae.W_dec);
  return a;
}

SparseAutoencoder sae_from_archive(const Archive& a) {
  if (a.has_meta("kind") && a.meta("kind") != "sae") throw FormatError("archive is not an SAE");
  SparseAutoencoder sae;
  try {
    sae.config.n_features = std::stoi(a.meta("n_features"));
    sae.config.sparsity = std::stod(a.meta("sparsity"));
    sae.config.batch = std::stoi(a.meta("batch"));
    sae.config.epochs = std::stoi(a.meta("epochs"));
    sae.config.seed = std::stoull(a.meta("seed"));
    sae.config.train_fraction = std::stod(a.meta("train_fraction"));
    sae.config.lr = std::stod(a.meta("lr"));
  } catch (const std::logic_error&) {
    throw FormatError("SAE archive has malformed metadata");
  }
  sae.W_enc = a.matrix("encoder.W");
  sae.b_enc = a.vector("encoder.b");
  sae.W_dec = a.matrix("decoder.W");
  if (sae.W_enc.rows() != sae.W_dec.cols() || sae.W_enc.cols() != sae.W_dec.rows() || sae.b_enc.size() != sae.W_enc.rows() ||
      sae.W_dec.cols() != sae.config.n_features) {
    throw IntegrityError("SAE archive tensor shapes disagree");
  }
  // Stored as f32: restore the unit-norm decoder invariant.
  normalize_columns(sae.W_dec);
  return sae;
}

Archive features_to_archive(const ModFeatureSet& set) {
  Archive a;
  a.set_meta("kind", "mod_features");
  a.set_meta("run_count", std::to_string(set.run_count));
  a.add_matrix("features", set.features);
  Eigen::VectorXd share(10);
  for (int i = 0; i < 10; ++i) share(i) = set.modal_share[static_cast<std::size_t>(i)];
  a.add_vector("modal_share", share);
  return a;
}

ModFeatureSet features_from_archive(const Archive& a) {
  if (a.has_meta("kind") && a.meta("kind") != "mod_features") throw FormatError("archive is not a feature set");
  ModFeatureSet set;
  set.features = a.matrix("features");
  if (set.features.cols() != 10) throw IntegrityError("feature set must hold 10 features");
  normalize_columns(set.features);
  const Eigen::VectorXd share = a.vector("modal_share");
  if (share.size() != 10) throw IntegrityError("modal share vector must have 10 entries");
  for (int i = 0; i < 10; ++i) set.modal_share[static_cast<std::size_t>(i)] = share(i);
  set.run_count = a.has_meta("run_count") ? std::stoi(a.meta("run_count")) : 0;
  return set;
}

}  // namespace succlab
