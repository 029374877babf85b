#include "succlab/steering.hpp"

#include <algorithm>
#include <limits>

#include "succlab/error.hpp"
#include "succlab/train.hpp"

namespace succlab {
namespace {

int wrap_ordinal(const OrdinalTask& task, int ordinal) {
  if (!task.cyclic) return ordinal;
  const int n = task.size();
  return ((ordinal - 1) % n + n) % n + 1;
}

// Strict item-level rule shared with the successor score.
bool strictly_wins(const ResolvedTask& rt, const Tokens& block, const Eigen::VectorXd& logits, int target_ordinal,
                   const SuccessionDataset& dataset) {
  std::vector<double> item(static_cast<std::size_t>(rt.task.size()), -std::numeric_limits<double>::infinity());
  for (std::size_t j = 0; j < block.size(); ++j) {
    const auto* t = dataset.lookup(block[j]);
    auto& v = item[static_cast<std::size_t>(t->ordinal - 1)];
    v = std::max(v, logits(static_cast<Eigen::Index>(j)));
  }
  const double target = item[static_cast<std::size_t>(target_ordinal - 1)];
  for (int o = 1; o <= rt.task.size(); ++o) {
    if (o == target_ordinal || !rt.has_item(o)) continue;
    if (!(target > item[static_cast<std::size_t>(o - 1)])) return false;
  }
  return true;
}

}  // namespace

SteerResult steer(const Eigen::VectorXd& repr, int source_ordinal, const Eigen::MatrixXd& features, int target_residue,
                  double lambda) {
  if (features.cols() != 10 || features.rows() != repr.size()) {
    throw IntegrityError("steering needs 10 features matching the representation size");
  }
  if (target_residue < 0 || target_residue > 9) throw DomainError("target residue must lie in [0, 10)");
  if (!(lambda >= 0.0)) throw DomainError("steering scale must be nonnegative");
  SteerResult r;
  r.source_residue = ((source_ordinal % 10) + 10) % 10;
  const double proj = repr.dot(features.col(r.source_residue));
  r.weak_source_feature = proj <= 0.0;
  r.k = lambda * proj;
  r.x = repr;
  if (target_residue != r.source_residue) {
    r.x += r.k * (features.col(target_residue) - features.col(r.source_residue));
  }
  return r;
}

SteerResult steer(const ModelHandle& model, const SuccessionDataset& dataset, const Eigen::MatrixXd& features,
                  const SteerSpec& spec) {
  const DatasetToken* tok = dataset.lookup(spec.token);
  if (!tok) throw DomainError("token " + std::to_string(spec.token) + " is not a dataset token");
  return steer(mlp0_representation(model, spec.token), tok->ordinal, features, spec.target_residue, spec.lambda);
}

double default_lambda(const std::string& task) { return task == "months" ? 2.0 : 1.0; }

int ArithmeticTable::source_residue(std::size_t row) const { return row_ordinals.at(row) % 10; }

std::size_t ArithmeticTable::applicable_cells(Region region) const {
  std::size_t n = 0;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (const auto& c : cells[r]) {
      const int src = source_residue(r);
      const bool in = region == Region::all || (region == Region::above && c.residue > src) ||
                      (region == Region::diagonal && c.residue == src) || (region == Region::below && c.residue < src);
      n += (in && c.applicable) ? 1 : 0;
    }
  }
  return n;
}

double ArithmeticTable::success_rate(Region region) const {
  std::size_t n = 0, ok = 0;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (const auto& c : cells[r]) {
      const int src = source_residue(r);
      const bool in = region == Region::all || (region == Region::above && c.residue > src) ||
                      (region == Region::diagonal && c.residue == src) || (region == Region::below && c.residue < src);
      if (!in || !c.applicable) continue;
      ++n;
      ok += c.success ? 1 : 0;
    }
  }
  return n == 0 ? 0.0 : static_cast<double>(ok) / static_cast<double>(n);
}

ArithmeticTable arithmetic_table(const ModelHandle& model, HeadId succ_head, const Eigen::MatrixXd& features,
                                 const SuccessionDataset& dataset, const std::string& task, double lambda,
                                 const Tokens& rows, bool canonical_only) {
  model.check_head(succ_head);
  if (!(lambda > 0.0)) throw DomainError("arithmetic table needs lambda > 0");
  const auto idx = dataset.task_index(task);
  if (!idx) throw DatasetError("task '" + task + "' is not resolved in this dataset");
  const ResolvedTask& rt = dataset.tasks[static_cast<std::size_t>(*idx)];

  ArithmeticTable table;
  table.task = task;
  table.head = succ_head;
  table.lambda = lambda;
  for (const auto& t : dataset.task_tokens(*idx)) table.block.push_back(t.token);
  if (rows.empty()) {
    for (const auto& t : dataset.task_tokens(*idx)) {
      if (!canonical_only || t.variant == 0) table.rows.push_back(t.token);
    }
  } else {
    table.rows = rows;
  }
  for (int t : table.rows) {
    const auto* d = dataset.lookup(t);
    if (!d || d->task != *idx) throw DomainError("row token " + std::to_string(t) + " is not in task '" + task + "'");
    table.row_ordinals.push_back(d->ordinal);
  }

  Eigen::MatrixXd readout(static_cast<Eigen::Index>(table.block.size()), model.config().d_model);
  for (std::size_t j = 0; j < table.block.size(); ++j) readout.row(static_cast<Eigen::Index>(j)) = model.weights().W_U.row(table.block[j]);
  readout *= head_ov(model, succ_head);

  table.cells.resize(table.rows.size());
  parallel_for(table.rows.size(), [&](std::size_t r) {
    const int token = table.rows[r];
    const int n = table.row_ordinals[r];
    const Eigen::VectorXd repr = mlp0_representation(model, token);
    const auto source_succ = successor_of(rt.task, n);
    auto& row = table.cells[r];
    row.resize(10);
    for (int i = 0; i < 10; ++i) {
      ArithmeticCell& c = row[static_cast<std::size_t>(i)];
      c.residue = i;
      const SteerResult s = steer(repr, n, features, i, lambda);
      c.k = s.k;
      c.weak_source_feature = s.weak_source_feature;
      c.logits = readout * s.x;
      Eigen::Index best = 0;
      c.logits.maxCoeff(&best);
      c.argmax_token = table.block[static_cast<std::size_t>(best)];
      c.steered_ordinal = wrap_ordinal(rt.task, n - n % 10 + i);
      if (c.steered_ordinal < 1 || c.steered_ordinal > rt.task.size() || !rt.has_item(c.steered_ordinal)) continue;
      const auto expected = successor_of(rt.task, c.steered_ordinal);
      if (!expected || !rt.has_item(*expected)) continue;
      c.applicable = true;
      c.success = strictly_wins(rt, table.block, c.logits, *expected, dataset);
      if (source_succ && rt.has_item(*source_succ)) {
        c.source_success = strictly_wins(rt, table.block, c.logits, *source_succ, dataset);
      }
      c.plus_ten = dataset.lookup(c.argmax_token)->ordinal == *expected + 10;
    }
  });
  return table;
}

std::vector<std::pair<int, double>> cell_logit_distribution(const ArithmeticTable& table, std::size_t row,
                                                            int residue) {
  if (row >= table.cells.size() || residue < 0 || residue > 9) throw IndexError("arithmetic cell out of range");
  const auto& c = table.cells[row][static_cast<std::size_t>(residue)];
  std::vector<std::pair<int, double>> out;
  for (std::size_t j = 0; j < table.block.size(); ++j) out.emplace_back(table.block[j], c.logits(static_cast<Eigen::Index>(j)));
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  return out;
}

}  // namespace succlab
