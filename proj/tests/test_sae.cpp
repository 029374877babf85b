#include <doctest.h>

#include <algorithm>
#include <limits>
#include <map>
#include <random>

#include "succlab/error.hpp"
#include "succlab/sae.hpp"
#include "support/fixtures.hpp"

using namespace succlab;
using succlab::testing::planted_mod;

namespace {

SAEConfig planted_config(std::uint64_t seed) {
  SAEConfig c;
  c.n_features = 10;
  c.sparsity = 0.05;
  c.epochs = 100;
  c.seed = seed;
  return c;
}

const testing::PlantedMod& fixture() {
  static const auto p = planted_mod(1);
  return p;
}

const SparseAutoencoder& planted_sae(std::uint64_t seed) {
  static std::map<std::uint64_t, SparseAutoencoder> cache;
  auto it = cache.find(seed);
  if (it == cache.end()) it = cache.emplace(seed, train_sae(fixture().samples, planted_config(seed))).first;
  return it->second;
}

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return a.dot(b) / (a.norm() * b.norm()); }

}  // namespace

TEST_CASE("defaults match the reference regime") {
  const SAEConfig c;
  CHECK(c.n_features == 512);
  CHECK(c.sparsity == 0.3);
  CHECK(c.batch == 64);
  CHECK(c.epochs == 100);
  CHECK(c.train_fraction == 0.9);
}

TEST_CASE("config validation") {
  SAEConfig c;
  c.n_features = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.sparsity = -0.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.batch = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(train_sae(Eigen::MatrixXd(4, 0), SAEConfig{}), DatasetError);
}

TEST_CASE("planted dictionary is recovered and stable across seeds") {
  const auto& p = fixture();
  const auto& a = planted_sae(1);
  const auto& b = planted_sae(2);
  CHECK(mmcs(a.W_dec, p.features) > 0.9);
  CHECK(mmcs(a, b) > 0.9);
  CHECK(a.val_recon_error <= 1.5 * a.train_recon_error);
  for (Eigen::Index j = 0; j < a.W_dec.cols(); ++j) CHECK(std::abs(a.W_dec.col(j).norm() - 1.0) < 1e-6);
}

TEST_CASE("training is deterministic given the seed") {
  const auto& p = fixture();
  auto c = planted_config(5);
  c.epochs = 3;
  const auto a = train_sae(p.samples, c);
  const auto b = train_sae(p.samples, c);
  CHECK(a.W_enc == b.W_enc);
  CHECK(a.W_dec == b.W_dec);
  CHECK(a.b_enc == b.b_enc);
  c.seed = 6;
  const auto d = train_sae(p.samples, c);
  CHECK_FALSE(a.W_dec == d.W_dec);
}

TEST_CASE("decoder stays unit norm after every step") {
  const auto& p = fixture();
  for (int epochs : {1, 2, 7}) {
    auto c = planted_config(9);
    c.epochs = epochs;
    c.n_features = 24;
    const auto s = train_sae(p.samples.leftCols(300), c);
    for (Eigen::Index j = 0; j < s.W_dec.cols(); ++j) CHECK(std::abs(s.W_dec.col(j).norm() - 1.0) < 1e-6);
  }
}

TEST_CASE("unpenalized overcomplete autoencoder reconstructs low-rank data") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Eigen::MatrixXd basis(16, 4);
  for (Eigen::Index i = 0; i < basis.size(); ++i) basis.data()[i] = normal(rng);
  Eigen::MatrixXd x(16, 1000);
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    Eigen::VectorXd w(4);
    for (int k = 0; k < 4; ++k) w(k) = unit(rng);
    x.col(j) = basis * w;
  }
  SAEConfig c;
  c.n_features = 16;
  c.sparsity = 0.0;
  c.epochs = 200;
  c.seed = 4;
  c.lr = 3e-3;
  const auto s = train_sae(x, c);
  CHECK(s.val_recon_error < 1e-2);
}

TEST_CASE("non-finite loss is a training error") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Constant(4, 32, 1e200);
  SAEConfig c;
  c.n_features = 4;
  c.epochs = 1;
  CHECK_THROWS_AS(train_sae(x, c), TrainingError);
  x(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(train_sae(x, c), NumericError);
}

TEST_CASE("decompose") {
  SparseAutoencoder s;
  s.W_dec = Eigen::MatrixXd::Identity(3, 3);
  s.W_enc = Eigen::MatrixXd::Identity(3, 3);
  s.b_enc = Eigen::VectorXd::Zero(3);

  SUBCASE("zero input gives zero activations") {
    const auto d = decompose(s, Eigen::VectorXd::Zero(3));
    CHECK(d.activations.isZero(0.0));
    CHECK(d.error == 0.0);
  }
  SUBCASE("activations are rectified and the error is reported") {
    const auto d = decompose(s, Eigen::Vector3d(1.0, -2.0, 0.5));
    CHECK(d.activations.minCoeff() >= 0.0);
    CHECK(d.reconstruction.isApprox(Eigen::Vector3d(1.0, 0.0, 0.5)));
    CHECK(d.error == doctest::Approx(2.0));
  }
  SUBCASE("ablating an inactive feature leaves the reconstruction unchanged") {
    const auto d = decompose(s, Eigen::Vector3d(1.0, -2.0, 0.5));
    const Eigen::VectorXd ablated = d.reconstruction - d.activations(1) * s.W_dec.col(1);
    CHECK(ablated == d.reconstruction);
  }
  SUBCASE("size mismatch") { CHECK_THROWS_AS(decompose(s, Eigen::VectorXd::Zero(4)), IntegrityError); }
}

TEST_CASE("a scaled planted direction activates its matching feature") {
  const auto& p = fixture();
  const auto& s = planted_sae(1);
  for (int k = 0; k < 10; ++k) {
    const auto d = decompose(s, 5.0 * p.features.col(k));
    Eigen::Index best = 0;
    d.activations.maxCoeff(&best);
    CHECK(cosine(s.W_dec.col(best), p.features.col(k)) > 0.9);
    CHECK(std::isfinite(d.error));
  }
}

TEST_CASE("most important feature") {
  const auto& p = fixture();

  SUBCASE("single active feature wins") {
    SparseAutoencoder s;
    s.W_dec = p.features;
    s.W_enc = Eigen::MatrixXd::Zero(10, 64);
    s.W_enc.row(3) = p.features.col(3).transpose();
    s.b_enc = Eigen::VectorXd::Zero(10);
    const int tok = p.vocab.id("13");
    const auto r = most_important_feature(s, tok, p.model, p.head, p.dataset);
    REQUIRE(r.has_value());
    CHECK(r->feature == 3);
    CHECK(r->drop > 0.0);
  }
  SUBCASE("planted winners align with their class direction") {
    const auto& s = planted_sae(1);
    for (int ordinal : {1, 12, 23, 34, 45, 56, 67, 78, 89, 100}) {
      const int tok = p.vocab.id(std::to_string(ordinal));
      const auto r = most_important_feature(s, tok, p.model, p.head, p.dataset);
      REQUIRE(r.has_value());
      CHECK(cosine(s.W_dec.col(r->feature), p.features.col(ordinal % 10)) > 0.9);
    }
  }
  SUBCASE("token without successor") {
    CHECK_THROWS_AS(most_important_feature(planted_sae(1), p.vocab.id("200"), p.model, p.head, p.dataset),
                    DomainError);
    CHECK_THROWS_AS(most_important_feature(planted_sae(1), 0, p.model, p.head, p.dataset), DomainError);
  }
}

TEST_CASE("mod feature extraction") {
  const auto& p = fixture();
  const auto one = extract_mod_features({planted_sae(1)}, p.dataset, p.model, p.head);
  CHECK(one.run_count == 1);
  for (int n = 0; n < 10; ++n) {
    CHECK(cosine(one.features.col(n), p.features.col(n)) > 0.95);
    CHECK(std::abs(one.features.col(n).norm() - 1.0) < 1e-12);
    CHECK(one.modal_share[static_cast<std::size_t>(n)] >= 0.9);
  }

  const std::vector<SparseAutoencoder> five(5, planted_sae(1));
  const auto dup = extract_mod_features(five, p.dataset, p.model, p.head);
  CHECK((dup.features - one.features).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(dup.modal_share == one.modal_share);

  const auto two = extract_mod_features({planted_sae(1), planted_sae(2)}, p.dataset, p.model, p.head);
  CHECK(two.run_count == 2);
  CHECK(mmcs(two.features, p.features) > 0.95);

  CHECK_THROWS_AS(extract_mod_features({}, p.dataset, p.model, p.head), UsageError);
}

TEST_CASE("mmcs") {
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(6, 6);
  CHECK(mmcs(eye.leftCols(3), eye.leftCols(3)) == doctest::Approx(1.0));
  CHECK(mmcs(eye.leftCols(3), eye.rightCols(3)) == 0.0);
  const auto& a = planted_sae(1);
  CHECK(mmcs(a, a) == doctest::Approx(1.0));

  Eigen::MatrixXd perm;
  Eigen::PermutationMatrix<Eigen::Dynamic> P(a.W_dec.cols());
  P.setIdentity();
  std::mt19937 rng(1);
  std::shuffle(P.indices().data(), P.indices().data() + P.indices().size(), rng);
  perm = a.W_dec * P;
  CHECK(std::abs(mmcs(a.W_dec, perm) - mmcs(perm, a.W_dec)) < 1e-9);
  CHECK_THROWS_AS(mmcs(eye, Eigen::MatrixXd::Identity(5, 5)), IntegrityError);
}

TEST_CASE("feature logit table") {
  const auto& p = fixture();
  Tokens out;
  for (int o = 1; o <= 10; ++o) out.push_back(p.vocab.id(std::to_string(o)));
  const auto table = feature_logit_table(p.features, p.model, p.head, out);
  REQUIRE(table.rows() == 10);
  REQUIRE(table.cols() == 10);
  for (int i = 0; i < 10; ++i) {
    Eigen::Index best = 0;
    table.row(i).maxCoeff(&best);
    CHECK((best + 1) % 10 == (i + 1) % 10);
  }
  Eigen::MatrixXd zero = p.features;
  zero.col(4).setZero();
  const auto z = feature_logit_table(zero, p.model, p.head, out);
  CHECK(z.row(4).isZero(0.0));
}

TEST_CASE("archive round trips") {
  const auto& s = planted_sae(1);
  const auto back = sae_from_archive(decode_archive(encode_archive(sae_to_archive(s))));
  CHECK(back.W_dec.isApprox(s.W_dec, 1e-6));
  CHECK(back.W_enc.isApprox(s.W_enc, 1e-6));
  CHECK(back.config.n_features == s.config.n_features);
  CHECK(back.config.sparsity == s.config.sparsity);
  CHECK(back.config.seed == s.config.seed);

  const auto& p = fixture();
  const auto set = extract_mod_features({s}, p.dataset, p.model, p.head);
  const auto set2 = features_from_archive(decode_archive(encode_archive(features_to_archive(set))));
  CHECK(set2.features.isApprox(set.features, 1e-6));
  CHECK(set2.run_count == set.run_count);
  CHECK_THROWS_AS(sae_from_archive(features_to_archive(set)), FormatError);
}
