#include "succlab/ov.hpp"

#include <algorithm>
#include <limits>

#include "succlab/error.hpp"

namespace succlab {
namespace {

Tokens dataset_inputs(const SuccessionDataset& dataset) {
  Tokens out;
  out.reserve(dataset.tokens.size());
  for (const auto& t : dataset.tokens) out.push_back(t.token);
  return out;
}

double item_logit(const LogitTable& table, const ResolvedTask& task, int ordinal, std::size_t column) {
  double best = -std::numeric_limits<double>::infinity();
  for (int tok : task.item_tokens[static_cast<std::size_t>(ordinal - 1)]) {
    best = std::max(best, table.logits(tok, static_cast<Eigen::Index>(column)));
  }
  return best;
}

}  // namespace

EffectiveOVTable effective_ov(const ModelHandle& model, HeadId head, const SuccessionDataset& dataset,
                              ReprMode mode) {
  model.check_head(head);
  EffectiveOVTable t;
  t.head = head;
  t.inputs = dataset_inputs(dataset);
  for (int tok : t.inputs) model.check_token(tok);
  Eigen::MatrixXd reps(model.config().d_model, static_cast<Eigen::Index>(t.inputs.size()));
  if (head.layer == 0) {
    t.embedding_fallback = true;
    for (std::size_t i = 0; i < t.inputs.size(); ++i) {
      reps.col(static_cast<Eigen::Index>(i)) = embed_representation(model, t.inputs[i]);
    }
  } else {
    reps = mlp0_representations(model, t.inputs, mode);
  }
  t.logits = model.weights().W_U * (head_ov(model, head) * reps);
  return t;
}

LogitTable direct_path_table(const ModelHandle& model, const SuccessionDataset& dataset, ReprMode mode) {
  LogitTable t;
  t.inputs = dataset_inputs(dataset);
  for (int tok : t.inputs) model.check_token(tok);
  t.logits = model.weights().W_U * mlp0_representations(model, t.inputs, mode);
  return t;
}

std::optional<bool> successor_verdict(const LogitTable& table, std::size_t column, const SuccessionDataset& dataset) {
  const DatasetToken* tok = dataset.lookup(table.inputs.at(column));
  if (!tok) return std::nullopt;
  const ResolvedTask& rt = dataset.tasks[static_cast<std::size_t>(tok->task)];
  const auto succ = successor_of(rt.task, tok->ordinal);
  if (!succ || !rt.has_item(*succ)) return std::nullopt;
  const double target = item_logit(table, rt, *succ, column);
  for (int j = 1; j <= rt.task.size(); ++j) {
    if (j == *succ || !rt.has_item(j)) continue;
    if (!(target > item_logit(table, rt, j, column))) return false;
  }
  return true;
}

SuccessorScore successor_score(const LogitTable& table, const SuccessionDataset& dataset) {
  if (table.logits.cols() != static_cast<Eigen::Index>(table.inputs.size())) {
    throw IntegrityError("logit table column count differs from its input list");
  }
  SuccessorScore s;
  for (const auto& rt : dataset.tasks) s.per_task[rt.task.name];
  for (std::size_t c = 0; c < table.inputs.size(); ++c) {
    const auto verdict = successor_verdict(table, c, dataset);
    if (!verdict) continue;
    const auto& rt = dataset.tasks[static_cast<std::size_t>(dataset.lookup(table.inputs[c])->task)];
    auto& ts = s.per_task[rt.task.name];
    ++ts.counted;
    ts.successes += *verdict ? 1 : 0;
    if (!rt.task.held_out) {
      ++s.counted;
      s.successes += *verdict ? 1 : 0;
    }
  }
  s.overall = s.counted == 0 ? 0.0 : static_cast<double>(s.successes) / s.counted;
  return s;
}

std::vector<HeadId> HeadScoreTable::successor_heads() const {
  std::vector<HeadId> out;
  for (const auto& h : heads) {
    if (h.successor_head) out.push_back(h.head);
  }
  return out;
}

HeadScoreTable score_all_heads(const ModelHandle& model, const SuccessionDataset& dataset, ReprMode mode) {
  const auto ids = model.all_heads();
  HeadScoreTable table;
  table.heads.resize(ids.size());
  parallel_for(ids.size(), [&](std::size_t i) {
    const auto ov = effective_ov(model, ids[i], dataset, mode);
    table.heads[i] = HeadScore{ids[i], successor_score(ov, dataset), ov.embedding_fallback, false};
  });
  double top = -1.0, second = 0.0;
  for (std::size_t i = 0; i < table.heads.size(); ++i) {
    auto& h = table.heads[i];
    h.successor_head = h.score.overall > 0.5;
    if (h.score.overall > top) {
      second = std::max(second, top);
      top = h.score.overall;
      table.best = i;
    } else {
      second = std::max(second, h.score.overall);
    }
  }
  if (second > 0.0) {
    table.dominance = top / second;
  } else if (top > 0.0) {
    table.dominance = std::numeric_limits<double>::max();
    table.dominance_infinite = true;
  }
  return table;
}

double direct_path_score(const ModelHandle& model, const SuccessionDataset& dataset, ReprMode mode) {
  return successor_score(direct_path_table(model, dataset, mode), dataset).overall;
}

std::vector<EmergencePoint> emergence_curve(const std::vector<Checkpoint>& checkpoints,
                                            const SuccessionDataset& dataset) {
  if (checkpoints.empty()) throw UsageError("emergence curve needs at least one checkpoint");
  std::vector<EmergencePoint> out;
  for (const auto& cp : checkpoints) {
    const auto table = score_all_heads(cp.model, dataset);
    const auto& best = table.heads[table.best];
    out.push_back({cp.step, best.score.overall, best.head, cp.train_loss});
  }
  return out;
}

GreaterThanBias greater_than_bias(const LogitTable& table, const SuccessionDataset& dataset, const std::string& task,
                                  bool exclude_successor) {
  const auto idx = dataset.task_index(task);
  if (!idx) throw DatasetError("task '" + task + "' is not resolved in this dataset");
  const ResolvedTask& rt = dataset.tasks[static_cast<std::size_t>(*idx)];
  GreaterThanBias b;
  double above = 0.0, below = 0.0;
  bool any_column = false;
  for (std::size_t c = 0; c < table.inputs.size(); ++c) {
    const DatasetToken* tok = dataset.lookup(table.inputs[c]);
    if (!tok || tok->task != *idx) continue;
    any_column = true;
    const auto succ = successor_of(rt.task, tok->ordinal);
    for (int j = 1; j <= rt.task.size(); ++j) {
      if (!rt.has_item(j)) continue;
      if (exclude_successor && succ && j == *succ) continue;
      const double v = item_logit(table, rt, j, c);
      if (j > tok->ordinal) {
        above += v;
        ++b.above_cells;
      } else {
        below += v;
        ++b.below_cells;
      }
    }
  }
  if (!any_column) throw DatasetError("task '" + task + "' has no columns in the logit table");
  b.above_diag_mean = b.above_cells ? above / static_cast<double>(b.above_cells) : 0.0;
  b.below_diag_mean = b.below_cells ? below / static_cast<double>(b.below_cells) : 0.0;
  b.bias = b.above_diag_mean - b.below_diag_mean;
  return b;
}

}  // namespace succlab
