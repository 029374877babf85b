#include "succlab/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <cstdlib>
#include <random>
#include <thread>

#include "forward_internal.hpp"
#include "succlab/error.hpp"

namespace succlab {
namespace {

using Span = std::pair<double*, Eigen::Index>;

template <typename W>
std::vector<Span> tensor_spans(W& w) {
  std::vector<Span> spans;
  for_each_tensor(w, [&](const std::string&, auto& t) { spans.emplace_back(t.data(), t.size()); });
  return spans;
}

std::vector<std::string> tensor_names(const ModelWeights& w) {
  std::vector<std::string> names;
  for_each_tensor(w, [&](const std::string& n, const auto&) { names.push_back(n); });
  return names;
}

void add_into(ModelWeights& acc, const ModelWeights& g) {
  auto a = tensor_spans(acc);
  auto b = tensor_spans(const_cast<ModelWeights&>(g));
  for (std::size_t i = 0; i < a.size(); ++i) {
    Eigen::Map<Eigen::VectorXd>(a[i].first, a[i].second) += Eigen::Map<Eigen::VectorXd>(b[i].first, b[i].second);
  }
}

void scale(ModelWeights& w, double s) {
  for (auto [ptr, n] : tensor_spans(w)) Eigen::Map<Eigen::VectorXd>(ptr, n) *= s;
}

/// Summed (not averaged) cross-entropy of one sequence, with gradients accumulated into `grad`.
double sequence_loss_grad(const ModelConfig& cfg, const ModelWeights& w, const Tokens& tokens, ModelWeights* grad,
                          const std::vector<double>* head_scale = nullptr) {
  detail::ForwardCache cache;
  detail::run_forward(cfg, w, tokens, nullptr, cache, head_scale);
  const auto T = static_cast<Eigen::Index>(tokens.size());
  const Eigen::Index n_pred = T - 1;

  Eigen::MatrixXd dlogits = Eigen::MatrixXd::Zero(cfg.vocab_size, T);
  double loss = 0.0;
  for (Eigen::Index p = 0; p < n_pred; ++p) {
    const auto col = cache.logits.col(p);
    const double mx = col.maxCoeff();
    const Eigen::VectorXd e = (col.array() - mx).exp();
    const double z = e.sum();
    const int target = tokens[static_cast<std::size_t>(p + 1)];
    loss += std::log(z) + mx - col(target);
    if (grad) {
      dlogits.col(p) = e / z;
      dlogits(target, p) -= 1.0;
    }
  }
  if (!grad) return loss;

  auto& g = *grad;
  g.W_U.noalias() += dlogits * cache.final_resid.transpose();
  Eigen::MatrixXd dx = w.W_U.transpose() * dlogits;

  if (cfg.use_final_norm) {
    const Eigen::MatrixXd& hat = cache.normed_hat;
    g.ln_scale += (dx.array() * hat.array()).rowwise().sum().matrix();
    g.ln_shift += dx.rowwise().sum();
    const Eigen::MatrixXd dhat = dx.array().colwise() * w.ln_scale.array();
    const double n = static_cast<double>(cfg.d_model);
    for (Eigen::Index j = 0; j < T; ++j) {
      const double m1 = dhat.col(j).sum() / n;
      const double m2 = dhat.col(j).dot(hat.col(j)) / n;
      dx.col(j) = cache.inv_sigma(j) * (dhat.col(j).array() - m1 - hat.col(j).array() * m2).matrix();
    }
  }

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const auto& lw = w.layers[static_cast<std::size_t>(l)];
    const auto& lc = cache.layers[static_cast<std::size_t>(l)];
    auto& lg = g.layers[static_cast<std::size_t>(l)];

    // MLP: out = W_out act(W_in mlp_in + b_in) + b_out.
    const Eigen::MatrixXd& dmlp_out = dx;
    lg.W_out.noalias() += dmlp_out * lc.mlp_hidden.transpose();
    lg.b_out += dmlp_out.rowwise().sum();
    Eigen::MatrixXd dpre = (lw.W_out.transpose() * dmlp_out).cwiseProduct(activation_grad(cfg.activation, lc.mlp_pre));
    lg.W_in.noalias() += dpre * lc.mlp_in.transpose();
    lg.b_in += dpre.rowwise().sum();
    const Eigen::MatrixXd dmlp_in = lw.W_in.transpose() * dpre;

    // Residual gradient reaching the attention outputs, and the layer input.
    Eigen::MatrixXd dattn = dx;
    Eigen::MatrixXd dinput = dx;
    if (cfg.parallel_attn) {
      dinput += dmlp_in;
    } else {
      dattn += dmlp_in;
      dinput += dmlp_in;
    }

    const double qk_scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_head));
    for (int h = 0; h < cfg.n_heads; ++h) {
      const auto& hc = lc.heads[static_cast<std::size_t>(h)];
      const double s = head_scale ? (*head_scale)[static_cast<std::size_t>(l * cfg.n_heads + h)] : 1.0;
      if (s == 0.0) continue;
      const Eigen::MatrixXd dout = s * dattn;
      lg.W_O[h].noalias() += dout * hc.z.transpose();
      const Eigen::MatrixXd dz = lw.W_O[h].transpose() * dout;
      const Eigen::MatrixXd dv = dz * hc.attn;
      const Eigen::MatrixXd dA = dz.transpose() * hc.v;
      Eigen::MatrixXd dS = Eigen::MatrixXd::Zero(T, T);
      for (Eigen::Index i = 0; i < T; ++i) {
        const double dot = hc.attn.row(i).head(i + 1).dot(dA.row(i).head(i + 1));
        dS.row(i).head(i + 1) =
            hc.attn.row(i).head(i + 1).cwiseProduct((dA.row(i).head(i + 1).array() - dot).matrix());
      }
      const Eigen::MatrixXd dq = qk_scale * (hc.k * dS.transpose());
      const Eigen::MatrixXd dk = qk_scale * (hc.q * dS);
      lg.W_Q[h].noalias() += dq * lc.input.transpose();
      lg.W_K[h].noalias() += dk * lc.input.transpose();
      lg.W_V[h].noalias() += dv * lc.input.transpose();
      dinput.noalias() += lw.W_Q[h].transpose() * dq;
      dinput.noalias() += lw.W_K[h].transpose() * dk;
      dinput.noalias() += lw.W_V[h].transpose() * dv;
    }
    dx = std::move(dinput);
  }

  for (Eigen::Index p = 0; p < T; ++p) {
    g.W_E.col(tokens[static_cast<std::size_t>(p)]) += dx.col(p);
    g.W_pos.col(p) += dx.col(p);
  }
  return loss;
}

void check_batch(const ModelConfig& cfg, const std::vector<Tokens>& batch) {
  if (batch.empty()) throw ContextError("empty batch");
  for (const auto& seq : batch) {
    detail::validate_tokens(cfg, seq);
    if (seq.size() < 2) throw ContextError("sequences need at least two tokens for next-token loss");
  }
}

std::size_t prediction_count(const std::vector<Tokens>& batch) {
  std::size_t n = 0;
  for (const auto& s : batch) n += s.size() - 1;
  return n;
}

std::vector<Tokens> sample_windows(const Tokens& corpus, int count, int context, std::mt19937_64& rng) {
  const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(context), corpus.size());
  std::uniform_int_distribution<std::size_t> start(0, corpus.size() - len);
  std::vector<Tokens> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const std::size_t s = start(rng);
    out.emplace_back(corpus.begin() + static_cast<std::ptrdiff_t>(s),
                     corpus.begin() + static_cast<std::ptrdiff_t>(s + len));
  }
  return out;
}

}  // namespace

int thread_budget() {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SUCC_LAB_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) n = n > 0 ? std::min(n, cap) : cap;
  }
  return std::max(1, n);
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const auto threads = std::min<std::size_t>(static_cast<std::size_t>(thread_budget()), n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) failure = std::current_exception();
        }
      }
    });
  }
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

double batch_loss(const ModelHandle& model, const std::vector<Tokens>& batch) {
  check_batch(model.config(), batch);
  std::vector<double> losses(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    losses[i] = sequence_loss_grad(model.config(), model.weights(), batch[i], nullptr);
  });
  double total = 0.0;
  for (double l : losses) total += l;
  return total / static_cast<double>(prediction_count(batch));
}

namespace {

LossGrad masked_loss_and_grad(const ModelHandle& model, const std::vector<Tokens>& batch,
                              const std::vector<std::vector<double>>& head_scales) {
  const auto& cfg = model.config();
  check_batch(cfg, batch);
  std::vector<ModelWeights> grads(batch.size(), ModelWeights::zeros(cfg));
  std::vector<double> losses(batch.size());
  for (auto& g : grads) g.ln_scale.setZero();
  parallel_for(batch.size(), [&](std::size_t i) {
    losses[i] = sequence_loss_grad(cfg, model.weights(), batch[i], &grads[i],
                                   head_scales.empty() ? nullptr : &head_scales[i]);
  });
  LossGrad out{0.0, std::move(grads.front())};
  out.loss = losses.front();
  for (std::size_t i = 1; i < batch.size(); ++i) {
    add_into(out.grad, grads[i]);
    out.loss += losses[i];
  }
  const double n = static_cast<double>(prediction_count(batch));
  out.loss /= n;
  scale(out.grad, 1.0 / n);
  return out;
}

/// Per-sequence head masks: each head is dropped with probability p, survivors scaled by 1 / (1 - p).
std::vector<std::vector<double>> draw_head_scales(const ModelConfig& cfg, std::size_t sequences, double p,
                                                  std::mt19937_64& rng) {
  if (p <= 0.0) return {};
  std::bernoulli_distribution drop(p);
  std::vector<std::vector<double>> out(sequences, std::vector<double>(static_cast<std::size_t>(cfg.n_layers * cfg.n_heads)));
  for (auto& seq : out) {
    for (double& s : seq) s = drop(rng) ? 0.0 : 1.0 / (1.0 - p);
  }
  return out;
}

}  // namespace

LossGrad loss_and_grad(const ModelHandle& model, const std::vector<Tokens>& batch) {
  return masked_loss_and_grad(model, batch, {});
}

double scheduled_lr(const TrainConfig& tc, int step) {
  if (tc.warmup_steps > 0 && step <= tc.warmup_steps) return tc.lr * step / tc.warmup_steps;
  if (tc.schedule != "cosine" || tc.steps <= tc.warmup_steps) return tc.lr;
  const double progress = static_cast<double>(step - tc.warmup_steps) / (tc.steps - tc.warmup_steps);
  const double floor = tc.min_lr_ratio * tc.lr;
  return floor + 0.5 * (tc.lr - floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

std::vector<Checkpoint> train_toy(const ModelConfig& config, const Tokens& corpus, const TrainConfig& tc,
                                  int checkpoint_every, const std::optional<ModelWeights>& init,
                                  const std::function<void(int, double)>& on_progress) {
  config.validate();
  if (corpus.size() < 2) throw ContextError("training corpus needs at least two tokens");
  if (tc.steps < 0 || tc.batch_size < 1 || tc.context < 2 || tc.context > config.max_context) {
    throw ConfigError("invalid training config (steps >= 0, batch >= 1, 2 <= context <= max_context)");
  }
  if (tc.schedule != "constant" && tc.schedule != "cosine") throw ConfigError("schedule must be constant or cosine");
  if (!(tc.head_dropout >= 0.0 && tc.head_dropout < 1.0)) throw ConfigError("head_dropout must be in [0, 1)");
  if (!(tc.head_group_l1 >= 0.0) || tc.head_group_l1_steps < 0) {
    throw ConfigError("head_group_l1 and head_group_l1_steps must be >= 0");
  }
  if (tc.warmup_steps < 0 || !(tc.min_lr_ratio >= 0.0 && tc.min_lr_ratio <= 1.0)) {
    throw ConfigError("warmup_steps must be >= 0 and min_lr_ratio in [0, 1]");
  }
  for (int t : corpus) {
    if (t < 0 || t >= config.vocab_size) throw VocabError("corpus token " + std::to_string(t) + " outside vocab");
  }

  ModelWeights weights = init ? *init : init_weights(config, config.seed);
  ModelWeights m = ModelWeights::zeros(config);
  m.ln_scale.setZero();
  ModelWeights v = m;
  const auto names = tensor_names(weights);
  std::vector<bool> frozen(names.size(), false);
  for (std::size_t i = 0; i < names.size(); ++i) {
    for (const auto& prefix : tc.frozen_prefixes) {
      if (names[i].rfind(prefix, 0) == 0) frozen[i] = true;
    }
    if (!config.use_final_norm && names[i].rfind("ln_final.", 0) == 0) frozen[i] = true;
  }

  std::mt19937_64 rng(tc.seed);
  std::mt19937_64 drop_rng(tc.seed ^ 0xd1b54a32d192ed03ULL);
  std::mt19937_64 eval_rng(tc.seed ^ 0x9e3779b97f4a7c15ULL);
  const auto eval_batch = sample_windows(corpus, std::max(1, tc.eval_batch), tc.context, eval_rng);

  std::vector<Checkpoint> checkpoints;
  auto snapshot = [&](int step) {
    ModelHandle handle(config, weights);
    const double loss = batch_loss(handle, eval_batch);
    if (!std::isfinite(loss)) throw TrainingError("loss became non-finite at step " + std::to_string(step));
    checkpoints.push_back({step, std::move(handle), loss});
  };
  snapshot(0);

  for (int step = 1; step <= tc.steps; ++step) {
    const auto batch = sample_windows(corpus, tc.batch_size, tc.context, rng);
    ModelHandle handle(config, weights);
    LossGrad lg = masked_loss_and_grad(handle, batch, draw_head_scales(config, batch.size(), tc.head_dropout, drop_rng));
    if (!std::isfinite(lg.loss)) throw TrainingError("loss became non-finite at step " + std::to_string(step));

    if (tc.head_group_l1 > 0.0 && (tc.head_group_l1_steps <= 0 || step <= tc.head_group_l1_steps)) {
      for (int l = 0; l < config.n_layers; ++l) {
        auto& lw = weights.layers[static_cast<std::size_t>(l)];
        auto& lgr = lg.grad.layers[static_cast<std::size_t>(l)];
        for (int h = 0; h < config.n_heads; ++h) {
          for (auto [w, g] : {std::pair{&lw.W_V[h], &lgr.W_V[h]}, std::pair{&lw.W_O[h], &lgr.W_O[h]}}) {
            const double norm = w->norm();
            if (norm > 0.0) *g += (tc.head_group_l1 / norm) * *w;
          }
        }
      }
    }
    const double lr = scheduled_lr(tc, step);
    const double bc1 = 1.0 - std::pow(tc.beta1, step);
    const double bc2 = 1.0 - std::pow(tc.beta2, step);
    auto ws = tensor_spans(weights);
    auto gs = tensor_spans(lg.grad);
    auto ms = tensor_spans(m);
    auto vs = tensor_spans(v);
    for (std::size_t i = 0; i < ws.size(); ++i) {
      if (frozen[i]) continue;
      Eigen::Map<Eigen::ArrayXd> w(ws[i].first, ws[i].second);
      Eigen::Map<Eigen::ArrayXd> g(gs[i].first, gs[i].second);
      Eigen::Map<Eigen::ArrayXd> mm(ms[i].first, ms[i].second);
      Eigen::Map<Eigen::ArrayXd> vv(vs[i].first, vs[i].second);
      mm = tc.beta1 * mm + (1.0 - tc.beta1) * g;
      vv = tc.beta2 * vv + (1.0 - tc.beta2) * g.square();
      w -= lr * (mm / bc1) / ((vv / bc2).sqrt() + tc.eps);
    }
    if (on_progress && step % 100 == 0) on_progress(step, lg.loss);
    if ((checkpoint_every > 0 && step % checkpoint_every == 0) || step == tc.steps) snapshot(step);
  }
  return checkpoints;
}

GradCheckResult grad_check(const ModelHandle& model, const std::vector<Tokens>& batch, double step) {
  const auto& cfg = model.config();
  const LossGrad analytic = loss_and_grad(model, batch);
  GradCheckResult result;
  ModelWeights probe = model.weights();
  auto ps = tensor_spans(probe);
  auto gs = tensor_spans(const_cast<ModelWeights&>(analytic.grad));
  const auto names = tensor_names(probe);
  for (std::size_t t = 0; t < ps.size(); ++t) {
    if (!cfg.use_final_norm && names[t].rfind("ln_final.", 0) == 0) continue;
    for (Eigen::Index i = 0; i < ps[t].second; ++i) {
      double& x = ps[t].first[i];
      const double saved = x;
      x = saved + step;
      const double up = batch_loss(ModelHandle(cfg, probe), batch);
      x = saved - step;
      const double down = batch_loss(ModelHandle(cfg, probe), batch);
      x = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = gs[t].first[i];
      if (!std::isfinite(a) || !std::isfinite(numeric)) {
        result.all_finite = false;
        continue;
      }
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_tensor = names[t];
      }
      ++result.checked;
    }
  }
  return result;
}

}  // namespace succlab
