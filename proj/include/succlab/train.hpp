#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "succlab/model.hpp"

namespace succlab {

struct TrainConfig {
  int steps = 1000;
  int batch_size = 8;
  int context = 32;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  /// Linear warmup length; "cosine" then decays to min_lr_ratio * lr at the final step.
  int warmup_steps = 0;
  std::string schedule = "constant";
  double min_lr_ratio = 0.1;
  /// Probability of zeroing each attention head's output per training sequence.
  double head_dropout = 0.0;
  /// Group-lasso weight on each head's value and output matrices (Frobenius norm per head).
  double head_group_l1 = 0.0;
  /// Steps over which the group lasso is applied; 0 means every step.
  int head_group_l1_steps = 0;
  /// Parameters whose archive name starts with any of these prefixes are not updated.
  std::vector<std::string> frozen_prefixes;
  /// Number of windows in the fixed batch used to report checkpoint loss.
  int eval_batch = 16;
};

/// Learning rate at a 1-based step.
double scheduled_lr(const TrainConfig& config, int step);

struct Checkpoint {
  int step = 0;
  ModelHandle model;
  double train_loss = 0.0;
};

/// Mean next-token cross-entropy over every position of every sequence.
double batch_loss(const ModelHandle& model, const std::vector<Tokens>& batch);

struct LossGrad {
  double loss = 0.0;
  ModelWeights grad;
};

/// Loss and its exact gradient with respect to every parameter.
LossGrad loss_and_grad(const ModelHandle& model, const std::vector<Tokens>& batch);

/// Cross-entropy training with Adam. Returns checkpoints at step 0, every
/// `checkpoint_every` steps (0 disables), and at the final step.
/// `init` overrides the seeded initialization when given.
/// `on_progress(step, loss)` is invoked every 100 steps when set.
std::vector<Checkpoint> train_toy(const ModelConfig& config, const Tokens& corpus, const TrainConfig& train_cfg,
                                  int checkpoint_every, const std::optional<ModelWeights>& init = std::nullopt,
                                  const std::function<void(int, double)>& on_progress = {});

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  bool all_finite = true;
  std::size_t checked = 0;
};

/// Central finite differences on every parameter entry; relative error is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-6).
GradCheckResult grad_check(const ModelHandle& model, const std::vector<Tokens>& batch, double step = 1e-4);

/// Thread cap from SUCC_LAB_THREADS (defaults to hardware concurrency, min 1).
int thread_budget();

/// Runs fn(i) for i in [0, n) on up to thread_budget() threads.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace succlab
