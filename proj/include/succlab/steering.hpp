#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "succlab/model.hpp"
#include "succlab/succession.hpp"

namespace succlab {

struct SteerSpec {
  int token = 0;
  int target_residue = 0;
  double lambda = 1.0;
};

struct SteerResult {
  Eigen::VectorXd x;
  double k = 0.0;  // lambda * (repr . f_n)
  int source_residue = 0;
  bool weak_source_feature = false;  // repr . f_n <= 0
};

/// x = repr + k (f_i - f_n) with k = lambda (repr . f_n) and n = ord(t) mod 10.
/// `features` holds f_0..f_9 as columns.
SteerResult steer(const Eigen::VectorXd& repr, int source_ordinal, const Eigen::MatrixXd& features, int target_residue,
                  double lambda);
SteerResult steer(const ModelHandle& model, const SuccessionDataset& dataset, const Eigen::MatrixXd& features,
                  const SteerSpec& spec);

/// Default lambda: 2 for months, 1 elsewhere.
double default_lambda(const std::string& task);

struct ArithmeticCell {
  int residue = 0;
  int steered_ordinal = 0;  // n - (n mod 10) + i, wrapped for cyclic tasks
  bool applicable = false;  // steered item and its successor both resolved
  bool success = false;     // successor of the steered item strictly beats every other item
  bool source_success = false;  // same rule against the successor of the unsteered token
  bool plus_ten = false;    // argmax lands on the expected ordinal + 10
  bool weak_source_feature = false;
  double k = 0.0;
  int argmax_token = -1;
  Eigen::VectorXd logits;  // over the task block tokens
};

struct ArithmeticTable {
  std::string task;
  HeadId head;
  double lambda = 1.0;
  Tokens block;  // task tokens the logits are reported over
  Tokens rows;
  std::vector<std::vector<ArithmeticCell>> cells;  // [row][residue]

  enum class Region { all, above, diagonal, below };
  /// Success rate over applicable cells; `above` means target residue > source residue.
  double success_rate(Region region) const;
  std::size_t applicable_cells(Region region) const;
  int source_residue(std::size_t row) const;
  std::vector<int> row_ordinals;
};

/// Rows default to every resolved token of `task` (canonical variants only when `canonical_only`).
ArithmeticTable arithmetic_table(const ModelHandle& model, HeadId succ_head, const Eigen::MatrixXd& features,
                                 const SuccessionDataset& dataset, const std::string& task, double lambda,
                                 const Tokens& rows = {}, bool canonical_only = true);

/// Task-block (token, logit) pairs sorted by descending logit, ties by token id.
std::vector<std::pair<int, double>> cell_logit_distribution(const ArithmeticTable& table, std::size_t row,
                                                            int residue);

}  // namespace succlab
