#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "succlab/model.hpp"
#include "succlab/succession.hpp"
#include "succlab/train.hpp"

namespace succlab {

/// Output logits (rows: every vocab id) for a set of input tokens (columns).
struct LogitTable {
  Tokens inputs;
  Eigen::MatrixXd logits;  // vocab x inputs.size()
};

struct EffectiveOVTable : LogitTable {
  HeadId head;
  /// Layer-0 heads read the post-embed residual instead of the MLP0 representation.
  bool embedding_fallback = false;
};

/// Columns are W_U W_OV r(t) for every resolved dataset token t, where r is the
/// MLP0 representation (or the post-embed residual for layer-0 heads).
EffectiveOVTable effective_ov(const ModelHandle& model, HeadId head, const SuccessionDataset& dataset,
                              ReprMode mode = ReprMode::residual);

/// W_U applied to the MLP0 representations of every dataset token.
LogitTable direct_path_table(const ModelHandle& model, const SuccessionDataset& dataset,
                             ReprMode mode = ReprMode::residual);

struct TaskScore {
  int successes = 0;
  int counted = 0;
  double score() const { return counted == 0 ? 0.0 : static_cast<double>(successes) / counted; }
};

struct SuccessorScore {
  double overall = 0.0;  // non-held-out tasks only
  int successes = 0;
  int counted = 0;
  std::map<std::string, TaskScore> per_task;  // every resolved task, held-out included
};

/// Verdict for one input token: nullopt when the token has no resolved successor.
std::optional<bool> successor_verdict(const LogitTable& table, std::size_t column, const SuccessionDataset& dataset);

/// Success when the successor item's logit (max over its variants) strictly
/// exceeds that of every other resolved item of the same task.
SuccessorScore successor_score(const LogitTable& table, const SuccessionDataset& dataset);

struct HeadScore {
  HeadId head;
  SuccessorScore score;
  bool embedding_fallback = false;
  bool successor_head = false;  // score > 0.5
};

struct HeadScoreTable {
  std::vector<HeadScore> heads;  // layer-major, head-minor
  std::size_t best = 0;
  /// Best score over second-best; max double with `dominance_infinite` when the runner-up is 0.
  double dominance = 1.0;
  bool dominance_infinite = false;

  std::vector<HeadId> successor_heads() const;
};

HeadScoreTable score_all_heads(const ModelHandle& model, const SuccessionDataset& dataset,
                               ReprMode mode = ReprMode::residual);

double direct_path_score(const ModelHandle& model, const SuccessionDataset& dataset,
                         ReprMode mode = ReprMode::residual);

struct EmergencePoint {
  int step = 0;
  double best_score = 0.0;
  HeadId best_head;
  double loss = 0.0;
};

std::vector<EmergencePoint> emergence_curve(const std::vector<Checkpoint>& checkpoints,
                                            const SuccessionDataset& dataset);

struct GreaterThanBias {
  double below_diag_mean = 0.0;     // output ordinal <= input ordinal
  double above_diag_mean = 0.0;     // output ordinal > input ordinal
  double bias = 0.0;                // above - below
  std::size_t below_cells = 0;
  std::size_t above_cells = 0;
};

/// Task block statistics. Columns are the task's resolved tokens; the output
/// value for an item is the max over its variants. With `exclude_successor`
/// the (input, successor) cell is dropped.
GreaterThanBias greater_than_bias(const LogitTable& table, const SuccessionDataset& dataset,
                                  const std::string& task, bool exclude_successor = false);

}  // namespace succlab
