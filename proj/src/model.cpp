#include <cstdio>
#include "succlab/model.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "forward_internal.hpp"
#include "succlab/error.hpp"

namespace succlab {
namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

double gelu_tanh(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

double gelu_tanh_grad(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

int parse_int(const Archive& a, const std::string& key) {
  const std::string v = a.meta(key);
  if (v.empty()) throw FormatError("manifest preamble lacks '" + key + "'");
  try {
    std::size_t used = 0;
    const long long n = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return static_cast<int>(n);
  } catch (const std::exception&) {
    throw FormatError("manifest key '" + key + "' is not an integer: '" + v + "'");
  }
}

bool parse_bool(const Archive& a, const std::string& key) {
  const std::string v = a.meta(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw FormatError("manifest key '" + key + "' is not a boolean: '" + v + "'");
}

void expect_shape(const Archive& a, const std::string& name, std::vector<std::size_t> shape) {
  const auto& t = a.get(name);
  if (t.shape != shape) {
    std::ostringstream os;
    os << "tensor '" << name << "' shape mismatch vs manifest config";
    throw IntegrityError(os.str());
  }
}

Eigen::MatrixXd slice3(const TensorRecord& t, std::size_t h) {
  const auto rows = static_cast<Eigen::Index>(t.shape[1]);
  const auto cols = static_cast<Eigen::Index>(t.shape[2]);
  Eigen::MatrixXd m(rows, cols);
  const std::size_t base = h * t.shape[1] * t.shape[2];
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = t.data[base + static_cast<std::size_t>(r * cols + c)];
  }
  return m;
}

void add_stacked(Archive& a, const std::string& name, const std::vector<Eigen::MatrixXd>& mats) {
  const auto rows = static_cast<std::size_t>(mats.front().rows());
  const auto cols = static_cast<std::size_t>(mats.front().cols());
  std::vector<float> data;
  data.reserve(mats.size() * rows * cols);
  for (const auto& m : mats) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(static_cast<float>(m(r, c)));
    }
  }
  a.add(name, {mats.size(), rows, cols}, std::move(data));
}

bool all_finite(const ModelWeights& w) {
  bool ok = true;
  for_each_tensor(w, [&](const std::string&, const auto& t) { ok = ok && t.allFinite(); });
  return ok;
}

}  // namespace

std::string to_string(Activation a) { return a == Activation::gelu_tanh ? "gelu_tanh" : "relu"; }

Activation activation_from_string(const std::string& s) {
  if (s == "gelu_tanh" || s == "gelu") return Activation::gelu_tanh;
  if (s == "relu") return Activation::relu;
  throw ConfigError("unknown activation '" + s + "'");
}

std::string to_string(HeadId h) { return "L" + std::to_string(h.layer) + "H" + std::to_string(h.head); }

HeadId head_from_string(const std::string& s) {
  int layer = -1, head = -1, used = 0;
  if (std::sscanf(s.c_str(), "L%dH%d%n", &layer, &head, &used) != 2 || used != static_cast<int>(s.size()) ||
      layer < 0 || head < 0) {
    throw ConfigError("head must look like L1H0, got '" + s + "'");
  }
  return {layer, head};
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& why) { throw ConfigError("invalid model config: " + why); };
  if (n_layers < 1) fail("n_layers must be >= 1");
  if (n_heads < 1 || d_head < 1 || d_model < 1 || d_mlp < 1) fail("dimensions must be positive");
  if (n_heads * d_head != d_model) fail("n_heads * d_head must equal d_model");
  if (vocab_size < 2) fail("vocab_size must be >= 2");
  if (max_context < 2) fail("max_context must be >= 2");
}

void ModelConfig::write_to(Archive& a) const {
  a.set_meta("kind", "model");
  a.set_meta("n_layers", std::to_string(n_layers));
  a.set_meta("n_heads", std::to_string(n_heads));
  a.set_meta("d_model", std::to_string(d_model));
  a.set_meta("d_head", std::to_string(d_head));
  a.set_meta("d_mlp", std::to_string(d_mlp));
  a.set_meta("vocab_size", std::to_string(vocab_size));
  a.set_meta("max_context", std::to_string(max_context));
  a.set_meta("parallel_attn", parallel_attn ? "true" : "false");
  a.set_meta("use_final_norm", use_final_norm ? "true" : "false");
  a.set_meta("activation", to_string(activation));
  a.set_meta("seed", std::to_string(seed));
}

ModelConfig ModelConfig::read_from(const Archive& a) {
  ModelConfig c;
  c.n_layers = parse_int(a, "n_layers");
  c.n_heads = parse_int(a, "n_heads");
  c.d_model = parse_int(a, "d_model");
  c.d_head = a.has_meta("d_head") ? parse_int(a, "d_head") : (c.n_heads > 0 ? c.d_model / c.n_heads : 0);
  c.d_mlp = parse_int(a, "d_mlp");
  c.vocab_size = parse_int(a, "vocab_size");
  c.max_context = parse_int(a, "max_context");
  c.parallel_attn = parse_bool(a, "parallel_attn");
  c.use_final_norm = parse_bool(a, "use_final_norm");
  try {
    c.activation = activation_from_string(a.meta("activation"));
  } catch (const ConfigError& e) {
    throw FormatError(e.what());
  }
  c.seed = a.has_meta("seed") ? std::stoull(a.meta("seed")) : 0;
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(e.what());
  }
  return c;
}

ModelWeights ModelWeights::zeros(const ModelConfig& c) {
  ModelWeights w;
  w.W_E = Eigen::MatrixXd::Zero(c.d_model, c.vocab_size);
  w.W_pos = Eigen::MatrixXd::Zero(c.d_model, c.max_context);
  w.layers.resize(static_cast<std::size_t>(c.n_layers));
  for (auto& layer : w.layers) {
    layer.W_Q.assign(static_cast<std::size_t>(c.n_heads), Eigen::MatrixXd::Zero(c.d_head, c.d_model));
    layer.W_K = layer.W_Q;
    layer.W_V = layer.W_Q;
    layer.W_O.assign(static_cast<std::size_t>(c.n_heads), Eigen::MatrixXd::Zero(c.d_model, c.d_head));
    layer.W_in = Eigen::MatrixXd::Zero(c.d_mlp, c.d_model);
    layer.b_in = Eigen::VectorXd::Zero(c.d_mlp);
    layer.W_out = Eigen::MatrixXd::Zero(c.d_model, c.d_mlp);
    layer.b_out = Eigen::VectorXd::Zero(c.d_model);
  }
  w.ln_scale = Eigen::VectorXd::Ones(c.d_model);
  w.ln_shift = Eigen::VectorXd::Zero(c.d_model);
  w.W_U = Eigen::MatrixXd::Zero(c.vocab_size, c.d_model);
  return w;
}

ModelHandle::ModelHandle(ModelConfig config, ModelWeights weights) {
  config.validate();
  const ModelWeights ref = ModelWeights::zeros(config);
  bool shapes_ok = weights.layers.size() == ref.layers.size();
  for (std::size_t l = 0; shapes_ok && l < ref.layers.size(); ++l) {
    shapes_ok = weights.layers[l].W_Q.size() == ref.layers[l].W_Q.size() &&
                weights.layers[l].W_K.size() == ref.layers[l].W_K.size() &&
                weights.layers[l].W_V.size() == ref.layers[l].W_V.size() &&
                weights.layers[l].W_O.size() == ref.layers[l].W_O.size();
  }
  if (!shapes_ok) throw IntegrityError("weight structure does not match config");
  std::vector<std::pair<Eigen::Index, Eigen::Index>> expected;
  for_each_tensor(ref, [&](const std::string&, const auto& t) { expected.emplace_back(t.rows(), t.cols()); });
  std::size_t i = 0;
  for_each_tensor(weights, [&](const std::string& name, const auto& t) {
    if (t.rows() != expected[i].first || t.cols() != expected[i].second) {
      throw IntegrityError("tensor '" + name + "' has the wrong shape for the config");
    }
    ++i;
  });
  if (!all_finite(weights)) throw IntegrityError("model weights contain non-finite values");
  config_ = std::make_shared<const ModelConfig>(config);
  weights_ = std::make_shared<const ModelWeights>(std::move(weights));
}

void ModelHandle::check_head(HeadId h) const {
  if (h.layer < 0 || h.layer >= config_->n_layers || h.head < 0 || h.head >= config_->n_heads) {
    throw IndexError("invalid head " + to_string(h));
  }
}

void ModelHandle::check_token(int token) const {
  if (token < 0 || token >= config_->vocab_size) {
    throw VocabError("token id " + std::to_string(token) + " outside vocab of size " +
                     std::to_string(config_->vocab_size));
  }
}

std::vector<HeadId> ModelHandle::all_heads() const {
  std::vector<HeadId> heads;
  for (int l = 0; l < config_->n_layers; ++l) {
    for (int h = 0; h < config_->n_heads; ++h) heads.push_back({l, h});
  }
  return heads;
}

ModelWeights init_weights(const ModelConfig& c, std::uint64_t seed) {
  c.validate();
  ModelWeights w = ModelWeights::zeros(c);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill = [&](Eigen::MatrixXd& m, double fan_in) {
    const double s = 1.0 / std::sqrt(fan_in);
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = s * normal(rng);
    }
  };
  fill(w.W_E, c.d_model);
  fill(w.W_pos, c.d_model);
  for (auto& layer : w.layers) {
    for (int h = 0; h < c.n_heads; ++h) {
      fill(layer.W_Q[h], c.d_model);
      fill(layer.W_K[h], c.d_model);
      fill(layer.W_V[h], c.d_model);
      fill(layer.W_O[h], c.d_head);
    }
    fill(layer.W_in, c.d_model);
    fill(layer.W_out, c.d_mlp);
  }
  fill(w.W_U, c.d_model);
  return w;
}

Archive model_to_archive(const ModelHandle& model) {
  const auto& c = model.config();
  const auto& w = model.weights();
  Archive a;
  c.write_to(a);
  a.add_matrix("embed.W_E", w.W_E);
  a.add_matrix("embed.W_pos", w.W_pos);
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const auto& layer = w.layers[l];
    const std::string p = "blocks." + std::to_string(l) + ".";
    add_stacked(a, p + "attn.W_Q", layer.W_Q);
    add_stacked(a, p + "attn.W_K", layer.W_K);
    add_stacked(a, p + "attn.W_V", layer.W_V);
    add_stacked(a, p + "attn.W_O", layer.W_O);
    a.add_matrix(p + "mlp.W_in", layer.W_in);
    a.add_vector(p + "mlp.b_in", layer.b_in);
    a.add_matrix(p + "mlp.W_out", layer.W_out);
    a.add_vector(p + "mlp.b_out", layer.b_out);
  }
  if (c.use_final_norm) {
    a.add_vector("ln_final.w", w.ln_scale);
    a.add_vector("ln_final.b", w.ln_shift);
  }
  a.add_matrix("unembed.W_U", w.W_U);
  return a;
}

ModelHandle model_from_archive(const Archive& a) {
  const ModelConfig c = ModelConfig::read_from(a);
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto dh = static_cast<std::size_t>(c.d_head);
  const auto nh = static_cast<std::size_t>(c.n_heads);
  const auto dm = static_cast<std::size_t>(c.d_mlp);
  const auto v = static_cast<std::size_t>(c.vocab_size);
  ModelWeights w = ModelWeights::zeros(c);
  expect_shape(a, "embed.W_E", {d, v});
  w.W_E = a.matrix("embed.W_E");
  expect_shape(a, "embed.W_pos", {d, static_cast<std::size_t>(c.max_context)});
  w.W_pos = a.matrix("embed.W_pos");
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    auto& layer = w.layers[l];
    const std::string p = "blocks." + std::to_string(l) + ".";
    for (const char* name : {"attn.W_Q", "attn.W_K", "attn.W_V"}) expect_shape(a, p + name, {nh, dh, d});
    expect_shape(a, p + "attn.W_O", {nh, d, dh});
    for (std::size_t h = 0; h < nh; ++h) {
      layer.W_Q[h] = slice3(a.get(p + "attn.W_Q"), h);
      layer.W_K[h] = slice3(a.get(p + "attn.W_K"), h);
      layer.W_V[h] = slice3(a.get(p + "attn.W_V"), h);
      layer.W_O[h] = slice3(a.get(p + "attn.W_O"), h);
    }
    expect_shape(a, p + "mlp.W_in", {dm, d});
    expect_shape(a, p + "mlp.b_in", {dm});
    expect_shape(a, p + "mlp.W_out", {d, dm});
    expect_shape(a, p + "mlp.b_out", {d});
    layer.W_in = a.matrix(p + "mlp.W_in");
    layer.b_in = a.vector(p + "mlp.b_in");
    layer.W_out = a.matrix(p + "mlp.W_out");
    layer.b_out = a.vector(p + "mlp.b_out");
  }
  if (c.use_final_norm) {
    expect_shape(a, "ln_final.w", {d});
    expect_shape(a, "ln_final.b", {d});
    w.ln_scale = a.vector("ln_final.w");
    w.ln_shift = a.vector("ln_final.b");
  }
  expect_shape(a, "unembed.W_U", {v, d});
  w.W_U = a.matrix("unembed.W_U");
  return ModelHandle(c, std::move(w));
}

void save_model(const std::filesystem::path& path, const ModelHandle& model) {
  write_archive(path, model_to_archive(model));
}

ModelHandle load_model(const std::filesystem::path& path) { return model_from_archive(read_archive(path)); }

Eigen::VectorXd apply_activation(Activation a, const Eigen::VectorXd& x) {
  if (a == Activation::relu) return x.cwiseMax(0.0);
  return x.unaryExpr([](double v) { return gelu_tanh(v); });
}

Eigen::MatrixXd apply_activation(Activation a, const Eigen::MatrixXd& x) {
  if (a == Activation::relu) return x.cwiseMax(0.0);
  return x.unaryExpr([](double v) { return gelu_tanh(v); });
}

Eigen::MatrixXd activation_grad(Activation a, const Eigen::MatrixXd& pre) {
  if (a == Activation::relu) return pre.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; });
  return pre.unaryExpr([](double v) { return gelu_tanh_grad(v); });
}

namespace detail {

void validate_tokens(const ModelConfig& cfg, const Tokens& tokens) {
  if (tokens.empty()) throw ContextError("empty token sequence");
  if (static_cast<int>(tokens.size()) > cfg.max_context) {
    throw ContextError("sequence length " + std::to_string(tokens.size()) + " exceeds max_context " +
                       std::to_string(cfg.max_context));
  }
  for (int t : tokens) {
    if (t < 0 || t >= cfg.vocab_size) {
      throw VocabError("token id " + std::to_string(t) + " outside vocab of size " + std::to_string(cfg.vocab_size));
    }
  }
}

Eigen::MatrixXd causal_attention(const Eigen::MatrixXd& q, const Eigen::MatrixXd& k) {
  const Eigen::Index T = q.cols();
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.rows()));
  Eigen::MatrixXd scores = (q.transpose() * k) * scale;
  Eigen::MatrixXd attn = Eigen::MatrixXd::Zero(T, T);
  for (Eigen::Index i = 0; i < T; ++i) {
    const double mx = scores.row(i).head(i + 1).maxCoeff();
    double sum = 0.0;
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double e = std::exp(scores(i, j) - mx);
      attn(i, j) = e;
      sum += e;
    }
    attn.row(i).head(i + 1) /= sum;
  }
  return attn;
}

void layer_norm_columns(const Eigen::MatrixXd& x, const Eigen::VectorXd& scale, const Eigen::VectorXd& shift,
                        Eigen::MatrixXd& out, Eigen::MatrixXd* x_hat, Eigen::RowVectorXd* inv_sigma) {
  const double n = static_cast<double>(x.rows());
  Eigen::MatrixXd hat(x.rows(), x.cols());
  Eigen::RowVectorXd inv(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double mu = x.col(j).mean();
    const double var = (x.col(j).array() - mu).square().sum() / n;
    inv(j) = 1.0 / std::sqrt(var + kLayerNormEps);
    hat.col(j) = (x.col(j).array() - mu) * inv(j);
  }
  out = (hat.array().colwise() * scale.array()).colwise() + shift.array();
  if (x_hat) *x_hat = std::move(hat);
  if (inv_sigma) *inv_sigma = std::move(inv);
}

void run_forward(const ModelConfig& cfg, const ModelWeights& w, const Tokens& tokens,
                 const Intervention* intervention, ForwardCache& cache, const std::vector<double>* head_scale) {
  const auto T = static_cast<Eigen::Index>(tokens.size());
  cache.post_embed.resize(cfg.d_model, T);
  for (Eigen::Index p = 0; p < T; ++p) cache.post_embed.col(p) = w.W_E.col(tokens[p]) + w.W_pos.col(p);

  if (intervention) {
    for (const auto& patch : intervention->patches) {
      if (patch.head.layer < 0 || patch.head.layer >= cfg.n_layers || patch.head.head < 0 ||
          patch.head.head >= cfg.n_heads) {
        throw IndexError("invalid head " + to_string(patch.head));
      }
      if (patch.output.rows() != cfg.d_model || patch.output.cols() != T) {
        throw ContextError("head patch shape does not match d_model x sequence length");
      }
    }
  }

  cache.layers.resize(static_cast<std::size_t>(cfg.n_layers));
  Eigen::MatrixXd x = cache.post_embed;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& lw = w.layers[static_cast<std::size_t>(l)];
    auto& lc = cache.layers[static_cast<std::size_t>(l)];
    lc.input = x;
    lc.heads.resize(static_cast<std::size_t>(cfg.n_heads));
    Eigen::MatrixXd attn_sum = Eigen::MatrixXd::Zero(cfg.d_model, T);
    for (int h = 0; h < cfg.n_heads; ++h) {
      auto& hc = lc.heads[static_cast<std::size_t>(h)];
      hc.q.noalias() = lw.W_Q[h] * x;
      hc.k.noalias() = lw.W_K[h] * x;
      hc.v.noalias() = lw.W_V[h] * x;
      hc.attn = causal_attention(hc.q, hc.k);
      hc.z.noalias() = hc.v * hc.attn.transpose();
      hc.raw_out.noalias() = lw.W_O[h] * hc.z;
      if (head_scale) hc.raw_out *= (*head_scale)[static_cast<std::size_t>(l * cfg.n_heads + h)];
      hc.out = hc.raw_out;
      if (intervention) {
        for (const auto& patch : intervention->patches) {
          if (patch.head == HeadId{l, h}) hc.out = patch.output;
        }
      }
      attn_sum += hc.out;
    }
    lc.mlp_in = cfg.parallel_attn ? x : Eigen::MatrixXd(x + attn_sum);
    lc.mlp_pre = (lw.W_in * lc.mlp_in).colwise() + lw.b_in;
    lc.mlp_hidden = apply_activation(cfg.activation, lc.mlp_pre);
    lc.mlp_out = (lw.W_out * lc.mlp_hidden).colwise() + lw.b_out;
    x = x + attn_sum + lc.mlp_out;
    lc.output = x;
  }
  cache.pre_unembed = x;
  if (intervention && intervention->final_delta) {
    const auto& delta = *intervention->final_delta;
    if (delta.rows() != cfg.d_model || delta.cols() != T) {
      throw ContextError("final residual delta shape does not match d_model x sequence length");
    }
    x += delta;
  }
  if (cfg.use_final_norm) {
    layer_norm_columns(x, w.ln_scale, w.ln_shift, cache.final_resid, &cache.normed_hat, &cache.inv_sigma);
  } else {
    cache.final_resid = x;
  }
  cache.logits.noalias() = w.W_U * cache.final_resid;
}

Mlp0Breakdown mlp0_attn_part(const ModelHandle& model, int token) {
  model.check_token(token);
  const auto& w = model.weights();
  const auto& layer = w.layers.front();
  Mlp0Breakdown b;
  b.embed = w.W_E.col(token) + w.W_pos.col(0);
  // A single position attends only to itself with weight 1.
  b.attn = Eigen::VectorXd::Zero(model.config().d_model);
  for (int h = 0; h < model.config().n_heads; ++h) b.attn += layer.W_O[h] * (layer.W_V[h] * b.embed);
  return b;
}

Eigen::VectorXd mlp0_input(const ModelHandle& model, const Mlp0Breakdown& b) {
  return model.config().parallel_attn ? b.embed : Eigen::VectorXd(b.embed + b.attn);
}

}  // namespace detail

ForwardResult forward(const ModelHandle& model, const Tokens& tokens, bool want_trace,
                      const Intervention* intervention) {
  detail::validate_tokens(model.config(), tokens);
  detail::ForwardCache cache;
  detail::run_forward(model.config(), model.weights(), tokens, intervention, cache);
  ForwardResult result;
  result.logits = std::move(cache.logits);
  if (want_trace) {
    ForwardTrace tr;
    tr.post_embed = std::move(cache.post_embed);
    for (auto& lc : cache.layers) {
      tr.post_layer.push_back(lc.output);
      std::vector<Eigen::MatrixXd> pats, outs;
      for (auto& hc : lc.heads) {
        pats.push_back(std::move(hc.attn));
        outs.push_back(std::move(hc.out));
      }
      tr.attention.push_back(std::move(pats));
      tr.head_out.push_back(std::move(outs));
      tr.mlp_hidden.push_back(std::move(lc.mlp_hidden));
      tr.mlp_out.push_back(std::move(lc.mlp_out));
    }
    tr.pre_unembed = std::move(cache.pre_unembed);
    result.trace = std::move(tr);
  }
  return result;
}

Eigen::MatrixXd unembed(const ModelHandle& model, const Eigen::MatrixXd& residual) {
  const auto& w = model.weights();
  if (!model.config().use_final_norm) return w.W_U * residual;
  Eigen::MatrixXd normed;
  detail::layer_norm_columns(residual, w.ln_scale, w.ln_shift, normed, nullptr, nullptr);
  return w.W_U * normed;
}

Eigen::VectorXd Mlp0Breakdown::representation(ReprMode mode) const {
  if (mode == ReprMode::block_output) return attn + mlp;
  return embed + attn + mlp;
}

Mlp0Breakdown mlp0_breakdown(const ModelHandle& model, int token) {
  return mlp0_breakdown_edited(model, token, [](Eigen::VectorXd&) {});
}

Eigen::VectorXd mlp0_representation(const ModelHandle& model, int token, ReprMode mode) {
  return mlp0_breakdown(model, token).representation(mode);
}

Eigen::MatrixXd mlp0_representations(const ModelHandle& model, const Tokens& tokens, ReprMode mode) {
  Eigen::MatrixXd out(model.config().d_model, static_cast<Eigen::Index>(tokens.size()));
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    out.col(static_cast<Eigen::Index>(i)) = mlp0_representation(model, tokens[i], mode);
  }
  return out;
}

Eigen::VectorXd embed_representation(const ModelHandle& model, int token) {
  model.check_token(token);
  return model.weights().W_E.col(token) + model.weights().W_pos.col(0);
}

Eigen::MatrixXd head_ov(const ModelHandle& model, HeadId head) {
  model.check_head(head);
  const auto& layer = model.weights().layers[static_cast<std::size_t>(head.layer)];
  return layer.W_O[head.head] * layer.W_V[head.head];
}

}  // namespace succlab
