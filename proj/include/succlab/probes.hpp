#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "succlab/archive.hpp"
#include "succlab/model.hpp"
#include "succlab/sae.hpp"
#include "succlab/succession.hpp"

namespace succlab {

struct ProbeConfig {
  double lr = 1e-3;
  int batch = 32;
  int epochs = 100;
  std::uint64_t seed = 0;
  double train_fraction = 0.9;

  void validate() const;
};

struct LinearProbe {
  int modulus = 0;
  Eigen::MatrixXd W;  // modulus x d_model
  Eigen::VectorXd b;  // modulus
  ProbeConfig config;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;

  int predict(const Eigen::VectorXd& x) const;
  double accuracy(const Eigen::MatrixXd& reps, const std::vector<int>& labels) const;
};

/// Softmax cross-entropy with Adam from a zero initialization. `reps` holds
/// one sample per column; a seeded split holds out 1 - train_fraction.
LinearProbe train_probe(const Eigen::MatrixXd& reps, const std::vector<int>& labels, int modulus,
                        const ProbeConfig& config);

struct ProbeFeatureSimilarity {
  std::vector<double> cosine;  // per class
  double mean = 0.0;
};

ProbeFeatureSimilarity probe_feature_similarity(const LinearProbe& probe, const Eigen::MatrixXd& features);

/// Representations of a token set with their ordinal indices.
struct OrdinalReps {
  Tokens tokens;
  std::vector<int> ordinals;
  Eigen::MatrixXd reps;  // d_model x tokens.size()
};

/// Numbers-task tokens (in-distribution) and the out-of-distribution tasks
/// number_words, cardinal_words, roman_numerals, months and days.
struct ProbeData {
  OrdinalReps numbers;
  OrdinalReps ood;
};

using TokenRepFn = std::function<Eigen::VectorXd(int token)>;
ProbeData probe_data(const ModelHandle& model, const SuccessionDataset& dataset, const TokenRepFn& rep = {});

struct SweepRow {
  int modulus = 0;
  double val_accuracy = 0.0;
  double ood_accuracy = 0.0;
};

/// One probe per modulus in [2, 25], trained on numbers and scored on the
/// held-out numbers and on the OOD tasks.
std::vector<SweepRow> probe_sweep(const ProbeData& data, const std::vector<int>& moduli, const ProbeConfig& config);

struct NeuronReport {
  int neuron = 0;
  double mean_probability = 0.0;  // successor probability after ablation
  std::vector<double> firing;     // hidden activation per token
  std::optional<int> period;
  std::vector<double> logit_profile;  // W_U W_OV W_out[:, neuron] over the tokens
};

struct NeuronImportance {
  Tokens tokens;
  double baseline_probability = 0.0;
  std::vector<NeuronReport> ranked;  // ascending mean probability, ties by neuron index
};

/// Hidden edit applied to neuron `n` of the MLP0 post-activation vector.
using NeuronEdit = std::function<void(Eigen::VectorXd& hidden, int neuron)>;

/// Numbers tokens with ordinal below 100 that have a successor.
Tokens neuron_tokens(const SuccessionDataset& dataset);

/// Each MLP0 hidden unit is zeroed (or edited by `edit`) before the output
/// projection; successor probability comes from W_U W_OV with a softmax over
/// the token's task block.
NeuronImportance neuron_importance(const ModelHandle& model, HeadId succ_head, const SuccessionDataset& dataset,
                                   const Tokens& tokens, const NeuronEdit& edit = {});

/// Dominant period of the mean-removed series via DFT magnitude; nullopt for a
/// constant series. Throws DomainError when fewer than 20 samples are given.
std::optional<int> neuron_periodicity(const std::vector<double>& series);

Archive probe_to_archive(const LinearProbe& probe);
LinearProbe probe_from_archive(const Archive& archive);

}  // namespace succlab
