#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "succlab/archive.hpp"

namespace succlab {

using Tokens = std::vector<int>;

enum class Activation { gelu_tanh, relu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct ModelConfig {
  int n_layers = 2;
  int n_heads = 4;
  int d_model = 64;
  int d_head = 16;
  int d_mlp = 256;
  int vocab_size = 2;
  int max_context = 64;
  bool parallel_attn = true;
  bool use_final_norm = false;
  Activation activation = Activation::gelu_tanh;
  std::uint64_t seed = 0;

  /// Throws ConfigError on any violated invariant.
  void validate() const;

  void write_to(Archive& archive) const;
  static ModelConfig read_from(const Archive& archive);

  bool operator==(const ModelConfig&) const = default;
};

struct HeadId {
  int layer = 0;
  int head = 0;

  bool operator==(const HeadId&) const = default;
  auto operator<=>(const HeadId&) const = default;
};

std::string to_string(HeadId h);  // "L1H3"
/// Parses "L<layer>H<head>"; ConfigError otherwise.
HeadId head_from_string(const std::string& s);

struct LayerWeights {
  // Per-head projections: W_Q/W_K/W_V are d_head x d_model, W_O is d_model x d_head.
  std::vector<Eigen::MatrixXd> W_Q, W_K, W_V, W_O;
  Eigen::MatrixXd W_in;   // d_mlp x d_model
  Eigen::VectorXd b_in;   // d_mlp
  Eigen::MatrixXd W_out;  // d_model x d_mlp
  Eigen::VectorXd b_out;  // d_model
};

struct ModelWeights {
  Eigen::MatrixXd W_E;    // d_model x vocab
  Eigen::MatrixXd W_pos;  // d_model x max_context
  std::vector<LayerWeights> layers;
  Eigen::VectorXd ln_scale, ln_shift;  // d_model; only used with use_final_norm
  Eigen::MatrixXd W_U;    // vocab x d_model

  /// All-zero weights with shapes matching `cfg`.
  static ModelWeights zeros(const ModelConfig& cfg);
};

/// Visits every parameter tensor in a fixed order with its archive name.
/// Works for const and non-const weights; `fn(name, tensor)`.
template <typename Weights, typename Fn>
void for_each_tensor(Weights& w, Fn&& fn) {
  fn(std::string("embed.W_E"), w.W_E);
  fn(std::string("embed.W_pos"), w.W_pos);
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    auto& layer = w.layers[l];
    const std::string p = "blocks." + std::to_string(l) + ".";
    for (std::size_t h = 0; h < layer.W_Q.size(); ++h) {
      const std::string hs = "." + std::to_string(h);
      fn(p + "attn.W_Q" + hs, layer.W_Q[h]);
      fn(p + "attn.W_K" + hs, layer.W_K[h]);
      fn(p + "attn.W_V" + hs, layer.W_V[h]);
      fn(p + "attn.W_O" + hs, layer.W_O[h]);
    }
    fn(p + "mlp.W_in", layer.W_in);
    fn(p + "mlp.b_in", layer.b_in);
    fn(p + "mlp.W_out", layer.W_out);
    fn(p + "mlp.b_out", layer.b_out);
  }
  fn(std::string("ln_final.w"), w.ln_scale);
  fn(std::string("ln_final.b"), w.ln_shift);
  fn(std::string("unembed.W_U"), w.W_U);
}

/// Immutable, cheaply copyable handle to a validated transformer.
class ModelHandle {
 public:
  ModelHandle(ModelConfig config, ModelWeights weights);

  const ModelConfig& config() const noexcept { return *config_; }
  const ModelWeights& weights() const noexcept { return *weights_; }

  void check_head(HeadId h) const;
  void check_token(int token) const;
  std::vector<HeadId> all_heads() const;

 private:
  std::shared_ptr<const ModelConfig> config_;
  std::shared_ptr<const ModelWeights> weights_;
};

/// Gaussian init scaled by 1/sqrt(fan_in); embeddings use fan_in = d_model.
ModelWeights init_weights(const ModelConfig& cfg, std::uint64_t seed);

Archive model_to_archive(const ModelHandle& model);
ModelHandle model_from_archive(const Archive& archive);
void save_model(const std::filesystem::path& path, const ModelHandle& model);
ModelHandle load_model(const std::filesystem::path& path);

/// Activations recorded during a forward pass. Matrices are column-per-position.
struct ForwardTrace {
  Eigen::MatrixXd post_embed;                              // d_model x T
  std::vector<Eigen::MatrixXd> post_layer;                 // [layer] d_model x T
  Eigen::MatrixXd pre_unembed;                             // residual fed to the final norm / W_U
  std::vector<std::vector<Eigen::MatrixXd>> attention;     // [layer][head] T x T, row = destination
  std::vector<std::vector<Eigen::MatrixXd>> head_out;      // [layer][head] d_model x T
  std::vector<Eigen::MatrixXd> mlp_hidden;                 // [layer] d_mlp x T, post-activation
  std::vector<Eigen::MatrixXd> mlp_out;                    // [layer] d_model x T
};

/// Replaces a head's output (d_model x T) wherever it is read downstream.
struct HeadPatch {
  HeadId head;
  Eigen::MatrixXd output;
};

/// Activation edits applied during a forward pass.
struct Intervention {
  std::vector<HeadPatch> patches;
  /// Added to the pre-unembed residual (before the final norm, if any).
  std::optional<Eigen::MatrixXd> final_delta;
};

struct ForwardResult {
  Eigen::MatrixXd logits;  // vocab x T
  std::optional<ForwardTrace> trace;
};

/// Throws ContextError for overlong or empty input and VocabError for out-of-range ids.
ForwardResult forward(const ModelHandle& model, const Tokens& tokens, bool want_trace,
                      const Intervention* intervention = nullptr);

/// Applies the final norm (if configured) and W_U to a residual matrix.
Eigen::MatrixXd unembed(const ModelHandle& model, const Eigen::MatrixXd& residual);

enum class ReprMode {
  residual,      // embedding + layer-0 attention + layer-0 MLP (default)
  block_output,  // layer-0 attention + MLP contributions only
};

/// Layer-0 computation for a single-token context at position 0.
struct Mlp0Breakdown {
  Eigen::VectorXd embed;      // W_E[:, t] + W_pos[:, 0]
  Eigen::VectorXd attn;       // sum of layer-0 head outputs (self-attention only)
  Eigen::VectorXd hidden;     // layer-0 MLP post-activation
  Eigen::VectorXd mlp;        // layer-0 MLP output
  Eigen::VectorXd representation(ReprMode mode = ReprMode::residual) const;
};

Mlp0Breakdown mlp0_breakdown(const ModelHandle& model, int token);

/// Same as mlp0_breakdown but lets the caller edit the MLP hidden vector before the output projection.
template <typename Edit>
Mlp0Breakdown mlp0_breakdown_edited(const ModelHandle& model, int token, Edit&& edit);

Eigen::VectorXd mlp0_representation(const ModelHandle& model, int token, ReprMode mode = ReprMode::residual);

/// Columns are the representations of `tokens`, in order.
Eigen::MatrixXd mlp0_representations(const ModelHandle& model, const Tokens& tokens,
                                     ReprMode mode = ReprMode::residual);

/// Post-embed residual of a single-token context (the input layer-0 heads see).
Eigen::VectorXd embed_representation(const ModelHandle& model, int token);

/// W_O W_V for one head (d_model x d_model).
Eigen::MatrixXd head_ov(const ModelHandle& model, HeadId head);

Eigen::VectorXd apply_activation(Activation a, const Eigen::VectorXd& x);
Eigen::MatrixXd apply_activation(Activation a, const Eigen::MatrixXd& x);
Eigen::MatrixXd activation_grad(Activation a, const Eigen::MatrixXd& pre);

constexpr double kLayerNormEps = 1e-5;

// ---------------------------------------------------------------------------

namespace detail {
Mlp0Breakdown mlp0_attn_part(const ModelHandle& model, int token);
Eigen::VectorXd mlp0_input(const ModelHandle& model, const Mlp0Breakdown& b);
}  // namespace detail

template <typename Edit>
Mlp0Breakdown mlp0_breakdown_edited(const ModelHandle& model, int token, Edit&& edit) {
  Mlp0Breakdown b = detail::mlp0_attn_part(model, token);
  const auto& layer = model.weights().layers.front();
  const Eigen::VectorXd in = detail::mlp0_input(model, b);
  b.hidden = apply_activation(model.config().activation, Eigen::VectorXd(layer.W_in * in + layer.b_in));
  edit(b.hidden);
  b.mlp = layer.W_out * b.hidden + layer.b_out;
  return b;
}

}  // namespace succlab
