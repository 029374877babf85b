#pragma once

// Full forward pass with every intermediate kept for backpropagation.

#include <vector>

#include <Eigen/Core>

#include "succlab/model.hpp"

namespace succlab::detail {

struct HeadCache {
  Eigen::MatrixXd q, k, v;  // d_head x T
  Eigen::MatrixXd attn;     // T x T
  Eigen::MatrixXd z;        // d_head x T
  Eigen::MatrixXd out;      // d_model x T (as read downstream, i.e. after patching)
  Eigen::MatrixXd raw_out;  // d_model x T (as computed)
};

struct LayerCache {
  Eigen::MatrixXd input;     // d_model x T
  std::vector<HeadCache> heads;
  Eigen::MatrixXd mlp_in;    // residual the MLP reads
  Eigen::MatrixXd mlp_pre;   // d_mlp x T
  Eigen::MatrixXd mlp_hidden;
  Eigen::MatrixXd mlp_out;
  Eigen::MatrixXd output;
};

struct ForwardCache {
  Eigen::MatrixXd post_embed;
  std::vector<LayerCache> layers;
  Eigen::MatrixXd pre_unembed;
  // Final norm intermediates (empty without use_final_norm).
  Eigen::MatrixXd normed_hat;     // (x - mu) / sigma
  Eigen::RowVectorXd inv_sigma;
  Eigen::MatrixXd final_resid;    // input to W_U
  Eigen::MatrixXd logits;
};

void validate_tokens(const ModelConfig& cfg, const Tokens& tokens);

/// `head_scale` (n_layers * n_heads, layer-major) multiplies each head's output.
void run_forward(const ModelConfig& cfg, const ModelWeights& w, const Tokens& tokens,
                 const Intervention* intervention, ForwardCache& cache,
                 const std::vector<double>* head_scale = nullptr);

/// Causal softmax attention pattern from queries/keys (T x T, row = destination).
Eigen::MatrixXd causal_attention(const Eigen::MatrixXd& q, const Eigen::MatrixXd& k);

void layer_norm_columns(const Eigen::MatrixXd& x, const Eigen::VectorXd& scale, const Eigen::VectorXd& shift,
                        Eigen::MatrixXd& out, Eigen::MatrixXd* x_hat, Eigen::RowVectorXd* inv_sigma);

}  // namespace succlab::detail
