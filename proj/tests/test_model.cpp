#include <cmath>
#include <random>

#include <Eigen/SVD>

#include "doctest.h"
#include "succlab/error.hpp"
#include "succlab/model.hpp"
#include "succlab/train.hpp"
#include "support/test_util.hpp"

using namespace succlab;
using testing::random_model;
using testing::random_tokens;
using testing::tiny_config;

TEST_CASE("zero network passes the embedding straight to W_U") {
  ModelConfig cfg = tiny_config();
  ModelWeights w = ModelWeights::zeros(cfg);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 1);
  for (Eigen::Index i = 0; i < w.W_E.size(); ++i) w.W_E.data()[i] = n(rng);
  w.W_U = w.W_E.transpose();
  const ModelHandle m(cfg, w);
  const auto out = forward(m, {0, 3, 5}, false);
  CHECK(!out.trace.has_value());
  const Eigen::VectorXd expected = w.W_U * w.W_E.col(0);
  CHECK((out.logits.col(0) - expected).norm() < 1e-12);
}

TEST_CASE("forward validates context length and token ids") {
  const ModelHandle m = random_model(tiny_config(), 2);
  CHECK_THROWS_AS(forward(m, Tokens(9, 1), false), ContextError);
  CHECK_THROWS_AS(forward(m, {1, 11}, false), VocabError);
  CHECK_THROWS_AS(forward(m, {-1}, false), VocabError);
}

TEST_CASE("attention is causal and row-stochastic across random prompts") {
  ModelConfig cfg = tiny_config();
  cfg.n_layers = 2;
  const ModelHandle m = random_model(cfg, 5);
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const auto out = forward(m, random_tokens(rng, cfg.vocab_size, 1 + trial % cfg.max_context), true);
    REQUIRE(out.trace.has_value());
    for (const auto& layer : out.trace->attention) {
      for (const auto& a : layer) {
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
          CHECK(std::abs(a.row(i).sum() - 1.0) < 1e-6);
          for (Eigen::Index j = i + 1; j < a.cols(); ++j) CHECK(a(i, j) == 0.0);
        }
      }
    }
  }
}

TEST_CASE("pre-unembed residual equals embeddings plus every traced component") {
  for (bool parallel : {true, false}) {
    ModelConfig cfg = tiny_config(parallel, false);
    cfg.n_layers = 3;
    const ModelHandle m = random_model(cfg, 9);
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 100; ++trial) {
      const auto out = forward(m, random_tokens(rng, cfg.vocab_size, cfg.max_context), true);
      const auto& tr = *out.trace;
      Eigen::MatrixXd sum = tr.post_embed;
      for (std::size_t l = 0; l < tr.head_out.size(); ++l) {
        for (const auto& h : tr.head_out[l]) sum += h;
        sum += tr.mlp_out[l];
      }
      CHECK((sum - tr.pre_unembed).cwiseAbs().maxCoeff() / tr.pre_unembed.cwiseAbs().maxCoeff() < 1e-6);
      CHECK((m.weights().W_U * sum - out.logits).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
}

TEST_CASE("mlp0 representation") {
  SUBCASE("zero layer-0 weights leave the embedding") {
    ModelConfig cfg = tiny_config();
    ModelWeights w = init_weights(cfg, 3);
    w.layers[0] = ModelWeights::zeros(cfg).layers[0];
    const ModelHandle m(cfg, w);
    const Eigen::VectorXd r = mlp0_representation(m, 4);
    CHECK((r - (w.W_E.col(4) + w.W_pos.col(0))).norm() == 0.0);
    CHECK(mlp0_representation(m, 4, ReprMode::block_output).norm() == 0.0);
  }
  SUBCASE("matches position 0 of any prompt starting with the token") {
    for (bool parallel : {true, false}) {
      ModelConfig cfg = tiny_config(parallel);
      cfg.n_layers = 2;
      const ModelHandle m = random_model(cfg, 6);
      std::mt19937_64 rng(8);
      for (int t = 0; t < cfg.vocab_size; ++t) {
        Tokens prompt = random_tokens(rng, cfg.vocab_size, 5);
        prompt[0] = t;
        const auto out = forward(m, prompt, true);
        CHECK((out.trace->post_layer[0].col(0) - mlp0_representation(m, t)).norm() < 1e-12);
      }
    }
  }
  SUBCASE("whole-vocab batch is finite with the expected shape") {
    const ModelHandle m = random_model(tiny_config(), 7);
    Tokens all(11);
    for (int i = 0; i < 11; ++i) all[static_cast<std::size_t>(i)] = i;
    const Eigen::MatrixXd reps = mlp0_representations(m, all);
    CHECK(reps.rows() == 8);
    CHECK(reps.cols() == 11);
    CHECK(reps.allFinite());
    CHECK_THROWS_AS(mlp0_representation(m, 11), VocabError);
  }
}

TEST_CASE("head OV matrix") {
  ModelConfig cfg = tiny_config();
  cfg.n_layers = 2;
  const ModelHandle m = random_model(cfg, 12);

  SUBCASE("zero value matrix gives zero OV") {
    ModelWeights w = m.weights();
    w.layers[1].W_V[0].setZero();
    CHECK(head_ov(ModelHandle(cfg, w), {1, 0}).norm() == 0.0);
  }
  SUBCASE("rank is bounded by d_head") {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(head_ov(m, {0, 1}));
    svd.setThreshold(1e-10);
    CHECK(svd.rank() <= cfg.d_head);
  }
  SUBCASE("traced output at a single-source position equals OV times the residual") {
    const auto out = forward(m, {3, 1, 2}, true);
    for (int h = 0; h < cfg.n_heads; ++h) {
      const Eigen::VectorXd expected = head_ov(m, {0, h}) * out.trace->post_embed.col(0);
      CHECK((out.trace->head_out[0][static_cast<std::size_t>(h)].col(0) - expected).norm() < 1e-6);
    }
    // Layer 1 at position 0 reads the post-layer-0 residual.
    const Eigen::VectorXd expected = head_ov(m, {1, 0}) * out.trace->post_layer[0].col(0);
    CHECK((out.trace->head_out[1][0].col(0) - expected).norm() < 1e-6);
  }
  SUBCASE("invalid head") { CHECK_THROWS_AS(head_ov(m, {2, 0}), IndexError); }
}

TEST_CASE("analytic gradients match central finite differences") {
  std::mt19937_64 rng(21);
  const std::vector<Tokens> batch = {random_tokens(rng, 11, 6), random_tokens(rng, 11, 5)};
  for (auto act : {Activation::gelu_tanh, Activation::relu}) {
    CAPTURE(to_string(act));
    const ModelHandle m = random_model(tiny_config(true, false, act), 31);
    const auto r = grad_check(m, batch);
    CHECK(r.all_finite);
    CHECK(r.max_rel_error < 1e-4);
    CHECK(r.checked > 500);
  }
}

TEST_CASE("zero-weight model has finite gradients everywhere") {
  const ModelConfig cfg = tiny_config(false, true);
  const ModelHandle m(cfg, ModelWeights::zeros(cfg));
  const auto lg = loss_and_grad(m, {{1, 2, 3}, {4, 5}});
  bool finite = true;
  for_each_tensor(lg.grad, [&](const std::string&, const auto& t) { finite = finite && t.allFinite(); });
  CHECK(finite);
  CHECK(lg.loss == doctest::Approx(std::log(11.0)).epsilon(1e-12));
}

TEST_CASE("toy training") {
  ModelConfig cfg;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_model = 16;
  cfg.d_head = 8;
  cfg.d_mlp = 32;
  cfg.vocab_size = 60;
  cfg.max_context = 16;
  cfg.seed = 5;
  std::mt19937_64 rng(2);
  const Tokens corpus = random_tokens(rng, cfg.vocab_size, 2000);
  TrainConfig tc;
  tc.batch_size = 4;
  tc.context = 16;
  tc.seed = 17;

  SUBCASE("zero steps returns the initialization") {
    tc.steps = 0;
    const auto cps = train_toy(cfg, corpus, tc, 10);
    REQUIRE(cps.size() == 1);
    CHECK(cps[0].step == 0);
    const ModelWeights init = init_weights(cfg, cfg.seed);
    CHECK(cps[0].model.weights().W_U == init.W_U);
    CHECK(cps[0].model.weights().layers[0].W_Q[1] == init.layers[0].W_Q[1]);
  }
  SUBCASE("initial loss is near uniform entropy") {
    tc.steps = 0;
    const auto cps = train_toy(cfg, corpus, tc, 0);
    CHECK(std::abs(cps[0].train_loss - std::log(60.0)) < 0.1 * std::log(60.0));
  }
  SUBCASE("same seed gives bit-identical weights; cadence is honored") {
    tc.steps = 25;
    const auto a = train_toy(cfg, corpus, tc, 10);
    const auto b = train_toy(cfg, corpus, tc, 10);
    REQUIRE(a.size() == 4);
    CHECK(a[1].step == 10);
    CHECK(a[3].step == 25);
    CHECK(encode_archive(model_to_archive(a.back().model)) == encode_archive(model_to_archive(b.back().model)));
    CHECK(a.back().model.weights().W_E == b.back().model.weights().W_E);
  }
  SUBCASE("frozen prefixes are left untouched") {
    tc.steps = 5;
    tc.frozen_prefixes = {"blocks.0."};
    const auto cps = train_toy(cfg, corpus, tc, 0);
    CHECK(cps.back().model.weights().layers[0].W_in == cps.front().model.weights().layers[0].W_in);
    CHECK(cps.back().model.weights().W_U != cps.front().model.weights().W_U);
  }
  SUBCASE("group lasso shrinks head value and output norms within its step window") {
    tc.steps = 40;
    tc.lr = 1e-2;
    auto ov_norm = [](const ModelHandle& m) {
      double s = 0.0;
      for (const auto& l : m.weights().layers) {
        for (std::size_t h = 0; h < l.W_V.size(); ++h) s += l.W_V[h].norm() + l.W_O[h].norm();
      }
      return s;
    };
    const auto plain = train_toy(cfg, corpus, tc, 0);
    tc.head_group_l1 = 1.0;
    const auto lasso = train_toy(cfg, corpus, tc, 0);
    CHECK(ov_norm(lasso.back().model) < 0.5 * ov_norm(plain.back().model));
    tc.head_group_l1_steps = tc.steps;
    const auto windowed = train_toy(cfg, corpus, tc, 0);
    CHECK(encode_archive(model_to_archive(windowed.back().model)) ==
          encode_archive(model_to_archive(lasso.back().model)));
    tc.head_group_l1_steps = 1;
    const auto short_window = train_toy(cfg, corpus, tc, 0);
    CHECK(ov_norm(short_window.back().model) > ov_norm(lasso.back().model));
    tc.head_group_l1_steps = -1;
    CHECK_THROWS_AS(train_toy(cfg, corpus, tc, 0), ConfigError);
  }
}
