#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Core>

#include "succlab/archive.hpp"
#include "succlab/model.hpp"
#include "succlab/succession.hpp"

namespace succlab {

/// Representation source; defaults to the model's MLP0 representation.
using ProjRepFn = std::function<Eigen::VectorXd(int token)>;

struct OutputProjectionConfig {
  int epochs = 50;
  int batch = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  int max_holdout = 1000;
  double holdout_fraction = 0.1;

  void validate() const;
};

struct OutputProjection {
  Eigen::MatrixXd pi_O;  // d_model x d_model
  OutputProjectionConfig config;
  Tokens heldout;
  double train_accuracy = 0.0;
  double heldout_accuracy = 0.0;
};

/// Trains pi_O from the identity so that argmax W_U pi_O rep(t) = t, with a
/// softmax cross-entropy over the whole vocabulary. `tokens` defaults to every
/// vocab id; min(max_holdout, holdout_fraction * n) tokens are held out.
OutputProjection train_output_projection(const ModelHandle& model, const OutputProjectionConfig& config,
                                         const Tokens& tokens = {}, const ProjRepFn& rep = {});

/// argmax over the vocabulary of W_U pi_O x; ties go to the lower id.
int decode_output(const ModelHandle& model, const Eigen::MatrixXd& pi_O, const Eigen::VectorXd& x);

/// (i_s, j_t) -> i_t: `source` supplies the index, `domain` the task and variant.
struct TokenPair {
  int source = 0;
  int domain = 0;
  int target = 0;
};

/// The target of (source, domain): the source's ordinal in the domain's task,
/// preferring the domain's variant. -1 when that item is not resolved.
int pair_target(const SuccessionDataset& dataset, int source, int domain);

struct PairSplit {
  std::vector<TokenPair> train;
  std::vector<TokenPair> heldout;
};

/// Uniformly samples distinct valid pairs over non-held-out dataset tokens.
/// Held-out pairs never appear in the training set.
PairSplit sample_pairs(const SuccessionDataset& dataset, int train_pairs, int heldout_pairs, std::uint64_t seed);

struct ProjectionConfig {
  int epochs = 10;
  int batch = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  int train_pairs = 4000;
  int heldout_pairs = 500;

  void validate() const;
};

/// pi_D is always I - pi_N.
struct ProjectionPair {
  Eigen::MatrixXd pi_N;
  ProjectionConfig config;
  double final_loss = 0.0;

  Eigen::MatrixXd pi_D() const;
  /// pi_N a + pi_D b, evaluated as pi_N (a - b) + b.
  Eigen::VectorXd combine(const Eigen::VectorXd& index_rep, const Eigen::VectorXd& domain_rep) const;
};

/// Minimizes |x - y|^2 + CE(W_U pi_O x, i_t) + CE(softmax(W_U S x), softmax(W_U S y))
/// with x = pi_N [i_s] + pi_D [j_t], y = [i_t] and S the successor head's OV.
/// Adam from pi_N = I / 2.
ProjectionPair train_projection_pair(const ModelHandle& model, const Eigen::MatrixXd& pi_O, HeadId succ_head,
                                     const std::vector<TokenPair>& pairs, const ProjectionConfig& config,
                                     const ProjRepFn& rep = {});

struct PairOutcome {
  TokenPair pair;
  int expected = -1;
  int predicted = -1;
  bool correct = false;
};

struct DecodingResult {
  double accuracy = 0.0;
  std::vector<PairOutcome> rows;
};

/// d(pi_N [i_s] + pi_D [j_t]) == i_t with d = argmax W_U pi_O.
DecodingResult eval_output_decoding(const ProjectionPair& pair, const Eigen::MatrixXd& pi_O, const ModelHandle& model,
                                    const std::vector<TokenPair>& pairs, const ProjRepFn& rep = {});

/// d(W_OV x) == (i+1)_t; pairs whose target has no successor are skipped.
DecodingResult eval_successor_decoding(const ProjectionPair& pair, const Eigen::MatrixXd& pi_O,
                                       const ModelHandle& model, HeadId succ_head, const SuccessionDataset& dataset,
                                       const std::vector<TokenPair>& pairs, const ProjRepFn& rep = {});

enum class CellVerdict { exact, index_only, wrong, invalid };
std::string to_string(CellVerdict v);

struct OodCell {
  int index_token = -1;  // the Roman numeral token, -1 when absent from the vocab
  int expected = -1;     // -1 when the target is not a resolved token
  int predicted = -1;
  CellVerdict verdict = CellVerdict::invalid;
};

/// Rows: the ordinal-1 token of every (task, variant) in the non-held-out
/// tasks. Columns: Roman numerals I..XII. Cell input pi_D([1_s]) + pi_N([i_Rom]);
/// target i_s, or (i+1)_s through W_OV when `successor` is set.
struct OodGrid {
  bool successor = false;
  Tokens rows;
  std::vector<std::string> columns;
  std::vector<std::vector<OodCell>> cells;

  double accuracy() const;  // exact cells over valid cells
};

OodGrid roman_ood_grid(const ProjectionPair& pair, const Eigen::MatrixXd& pi_O, const ModelHandle& model,
                       const SuccessionDataset& dataset, const Vocab& vocab, bool successor, HeadId succ_head,
                       const ProjRepFn& rep = {});

Archive output_projection_to_archive(const OutputProjection& p);
OutputProjection output_projection_from_archive(const Archive& archive);
Archive projection_pair_to_archive(const ProjectionPair& p);
ProjectionPair projection_pair_from_archive(const Archive& archive);

}  // namespace succlab
