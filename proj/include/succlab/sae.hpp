#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "succlab/archive.hpp"
#include "succlab/model.hpp"
#include "succlab/succession.hpp"

namespace succlab {

struct SAEConfig {
  int n_features = 512;
  double sparsity = 0.3;
  int batch = 64;
  int epochs = 100;
  std::uint64_t seed = 0;
  double train_fraction = 0.9;
  double lr = 1e-3;

  void validate() const;
};

struct SparseAutoencoder {
  SAEConfig config;
  Eigen::MatrixXd W_enc;  // D x d_model
  Eigen::VectorXd b_enc;  // D
  Eigen::MatrixXd W_dec;  // d_model x D, unit-norm columns
  double train_loss = 0.0;       // mean per-sample objective on the training split
  double train_recon_error = 0.0;  // relative Frobenius reconstruction error
  double val_recon_error = 0.0;

  int d_model() const { return static_cast<int>(W_dec.rows()); }
  int n_features() const { return static_cast<int>(W_dec.cols()); }
  Eigen::VectorXd encode(const Eigen::VectorXd& x) const;
};

/// Loss 0.5 * |x - W_dec a|^2 + sparsity * sum(a), a = ReLU(W_enc x + b_enc),
/// Adam on shuffled minibatches, decoder columns renormalized after each step.
/// `reps` holds one sample per column.
SparseAutoencoder train_sae(const Eigen::MatrixXd& reps, const SAEConfig& config);

struct Decomposition {
  Eigen::VectorXd activations;
  Eigen::VectorXd reconstruction;
  double error = 0.0;  // |rep - reconstruction|
};

Decomposition decompose(const SparseAutoencoder& sae, const Eigen::VectorXd& rep);

/// Relative reconstruction error |X - R|_F / |X|_F over columns.
double reconstruction_error(const SparseAutoencoder& sae, const Eigen::MatrixXd& reps);

struct FeatureImportance {
  int feature = -1;
  double base_probability = 0.0;
  double drop = 0.0;  // probability decrease when the feature is ablated
};

/// Successor probability through W_U W_OV, softmax over the token's task block
/// (or the whole vocab when `restrict_to_task` is false). Each active feature is
/// removed from the reconstruction in turn; the largest drop wins (ties go to
/// the lower index). nullopt when no feature is active.
std::optional<FeatureImportance> most_important_feature(const SparseAutoencoder& sae, const Eigen::VectorXd& rep,
                                                        int token, const ModelHandle& model, HeadId succ_head,
                                                        const SuccessionDataset& dataset,
                                                        bool restrict_to_task = true);
std::optional<FeatureImportance> most_important_feature(const SparseAutoencoder& sae, int token,
                                                        const ModelHandle& model, HeadId succ_head,
                                                        const SuccessionDataset& dataset,
                                                        bool restrict_to_task = true);

struct ModFeatureSet {
  Eigen::MatrixXd features;  // d_model x 10, unit columns (f_0 .. f_9)
  int run_count = 0;
  std::array<double, 10> modal_share{};  // mean over runs of the modal feature's share in each class
  std::vector<std::array<int, 10>> modal_index;  // per run, per class
};

/// Representation source for extraction; defaults to the model's MLP0 representation.
using RepFn = std::function<Eigen::VectorXd(int token)>;

/// For each residue class n of the numbers task, finds the modal most-important
/// feature in every run, sign-matches the runs' decoder vectors to the first run
/// by cosine, averages and renormalizes.
ModFeatureSet extract_mod_features(const std::vector<SparseAutoencoder>& runs, const SuccessionDataset& dataset,
                                   const ModelHandle& model, HeadId succ_head, bool restrict_to_task = true,
                                   const RepFn& rep = {});

/// Mean over columns of `a` of the max cosine similarity to any column of `b`.
double mmcs(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);
double mmcs(const SparseAutoencoder& a, const SparseAutoencoder& b);

/// Row i = (W_U W_OV f_i) restricted to `output_tokens`.
Eigen::MatrixXd feature_logit_table(const Eigen::MatrixXd& features, const ModelHandle& model, HeadId succ_head,
                                    const Tokens& output_tokens);

Archive sae_to_archive(const SparseAutoencoder& sae);
SparseAutoencoder sae_from_archive(const Archive& archive);
Archive features_to_archive(const ModFeatureSet& set);
ModFeatureSet features_from_archive(const Archive& archive);

}  // namespace succlab
