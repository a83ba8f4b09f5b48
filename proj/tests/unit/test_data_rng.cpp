#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "mixsgd/data.hpp"
#include "mixsgd/errors.hpp"
#include "mixsgd/eval.hpp"
#include "mixsgd/rng.hpp"
#include "mixsgd/spectral.hpp"

using namespace mixsgd;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name, const std::string& contents) {
  const fs::path dir = fs::temp_directory_path() / "mixsgd_unit";
  fs::create_directories(dir);
  const fs::path p = dir / name;
  std::ofstream(p, std::ios::binary) << contents;
  return p;
}

}  // namespace

TEST_CASE("rng: matches the reference xoshiro256** with splitmix64 seeding") {
  // Reference algorithms written out independently of the library.
  const auto rotl = [](std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
  for (std::uint64_t seed : {0ULL, 1ULL, 0xdeadbeefULL}) {
    std::uint64_t sm = seed;
    std::uint64_t s[4];
    for (auto& w : s) {
      std::uint64_t z = (sm += 0x9e3779b97f4a7c15ULL);
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      w = z ^ (z >> 31);
    }
    Rng rng(seed);
    for (int i = 0; i < 1000; ++i) {
      const std::uint64_t expected = rotl(s[1] * 5, 7) * 9;
      const std::uint64_t t = s[1] << 17;
      s[2] ^= s[0];
      s[3] ^= s[1];
      s[1] ^= s[2];
      s[0] ^= s[3];
      s[2] ^= t;
      s[3] = rotl(s[3], 45);
      REQUIRE(rng.next_u64() == expected);
    }
  }
  CHECK(Rng::derive_seed(7, 1) != Rng::derive_seed(7, 2));
  CHECK(Rng::derive_seed(7, 1) == Rng::derive_seed(7, 1));
}

TEST_CASE("rng: distributions") {
  Rng rng(123);
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.02);
  int hits = 0;
  for (int i = 0; i < n; ++i) hits += rng.uniform_index(10) == 3;
  CHECK(std::abs(hits / static_cast<double>(n) - 0.1) < 0.005);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform01();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("rng: bernoulli(1) consumes no state") {
  Rng a(5), b(5);
  for (int i = 0; i < 10; ++i) CHECK(a.bernoulli(1.0));
  CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("LabeledDataset bounds and validation") {
  RowMatrix X(2, 2);
  X << 3, 4, 0, 1;
  Vector y(2);
  y << -2, 1;
  const LabeledDataset data(X, y);
  CHECK(data.max_feature_norm() == doctest::Approx(5.0));
  CHECK(data.max_abs_label() == doctest::Approx(2.0));
  CHECK_THROWS_AS(LabeledDataset(RowMatrix(0, 2), Vector(0)), Error);
  CHECK_THROWS_AS(LabeledDataset(X, Vector::Ones(3)), Error);
  X(0, 0) = INFINITY;
  CHECK_THROWS_AS(LabeledDataset(X, y), Error);
}

TEST_CASE("synthetic regression construction") {
  SyntheticRegressionSpec spec;
  spec.d = 10;
  spec.n_P = 40;
  spec.n_Q = 20;
  spec.q_rank = 10;
  spec.seed = 4;
  SUBCASE("zero gap gives identical optima") {
    const auto inst = gen_synthetic_regression(spec);
    CHECK(inst.truth.theta_star_P == inst.truth.theta_star_Q);
  }
  SUBCASE("ratio 1 and full rank give no covariate shift") {
    const auto inst = gen_synthetic_regression(spec);
    CHECK(inst.truth.sigma_Q.isApprox(Matrix::Identity(10, 10)));
    CHECK(inst.truth.sigma_P.isApprox(Matrix::Identity(10, 10)));
  }
  SUBCASE("stated ratio and gap are realised") {
    spec.lambda_max_ratio = 8.0;
    spec.source_target_gap = 1.5;
    spec.q_rank = 4;
    const auto inst = gen_synthetic_regression(spec);
    CHECK(inst.truth.recompute_lambda_max_ratio() == doctest::Approx(8.0));
    CHECK(inst.truth.recompute_source_target_gap() == doctest::Approx(1.5));
    CHECK(population_excess_risk_q(inst.truth.theta_star_P, inst.truth) == doctest::Approx(1.5));
    CHECK(inst.source.size() == 40);
    CHECK(inst.target.size() == 20);
  }
  SUBCASE("invalid configurations") {
    spec.q_rank = 11;
    CHECK_THROWS_AS(gen_synthetic_regression(spec), Error);
    spec.q_rank = 5;
    spec.lambda_max_ratio = 0.5;
    CHECK_THROWS_AS(gen_synthetic_regression(spec), Error);
  }
  SUBCASE("same seed reproduces the data") {
    const auto a = gen_synthetic_regression(spec);
    const auto b = gen_synthetic_regression(spec);
    CHECK(a.source.X() == b.source.X());
    CHECK(a.target.y() == b.target.y());
  }
}

TEST_CASE("synthetic classification") {
  SyntheticClassificationSpec spec;
  spec.pos_ratio_P = 1.0;
  spec.seed = 3;
  const auto inst = gen_synthetic_classification(spec);
  CHECK((inst.source.y().array() == 1.0).all());
  spec.pos_ratio_Q = 0.0;
  CHECK_THROWS_AS(gen_synthetic_classification(spec), Error);
  spec.pos_ratio_Q = 1.5;
  CHECK_THROWS_AS(gen_synthetic_classification(spec), Error);
}

TEST_CASE("classification: zero margin has Bayes error one half") {
  Vector u = Vector::Zero(4);
  u(0) = 1.0;
  const auto test = sample_classification(u, 0.0, 0.5, 100000, 17);
  // Any fixed classifier is at chance when the class clouds coincide.
  CHECK(misclassification_rate(u, test) == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("classification: equal ratios give matching moments") {
  Vector u = Vector::Zero(3);
  u(1) = 1.0;
  const auto a = sample_classification(u, 1.0, 0.6, 100000, 1);
  const auto b = sample_classification(u, 1.0, 0.6, 100000, 2);
  const Vector mean_a = a.X().colwise().mean();
  const Vector mean_b = b.X().colwise().mean();
  CHECK((mean_a - mean_b).norm() < 0.05 * std::max(1.0, mean_a.norm()));
  const auto ca = empirical_covariance(a.X()).sigma_hat;
  const auto cb = empirical_covariance(b.X()).sigma_hat;
  CHECK((ca - cb).norm() <= 0.05 * ca.norm());
}

TEST_CASE("csv: direct read, errors and standardization") {
  const auto p = temp_file("ab.csv", "a,b,y\n1,0,2\n0,1,3\n");
  const auto loaded = load_csv(p, {"a", "b"}, "y", false);
  CHECK(loaded.data.X() == RowMatrix::Identity(2, 2));
  CHECK(loaded.data.y()(0) == 2.0);
  CHECK(loaded.data.y()(1) == 3.0);
  CHECK_FALSE(loaded.transform.has_value());

  try {
    load_csv(p, {"a", "missing"}, "y", false);
    FAIL("expected schema error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::schema);
  }
  const auto bad = temp_file("bad.csv", "a,y\n1,2\nx,3\n");
  try {
    load_csv(bad, {"a"}, "y", false);
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::parse);
    CHECK(std::string(e.what()).find("row") != std::string::npos);
  }

  const auto constant = temp_file("const.csv", "a,b,y\n1,5,0\n2,5,1\n3,5,0\n");
  const auto st = load_csv(constant, {"a", "b"}, "y", true);
  CHECK((st.data.X().col(1).array() == 0.0).all());
  CHECK(std::abs(st.data.X().col(0).mean()) < 1e-12);
  const auto back = Standardization::from_json(st.transform->to_json());
  CHECK(back.mean == st.transform->mean);
  CHECK(back.std == st.transform->std);
}

TEST_CASE("csv: write then load is bit-exact") {
  Rng rng(8);
  RowMatrix X(5, 2);
  Vector y(5);
  for (int i = 0; i < 5; ++i) {
    X(i, 0) = rng.normal();
    X(i, 1) = rng.normal() * 1e-7;
    y(i) = rng.normal() * 1e5;
  }
  const fs::path p = fs::temp_directory_path() / "mixsgd_unit" / "roundtrip.csv";
  fs::create_directories(p.parent_path());
  write_csv(LabeledDataset(X, y), p, {"f0", "f1"}, "label");
  const auto back = load_csv(p, {"f0", "f1"}, "label", false);
  CHECK(back.data.X() == X);
  CHECK(back.data.y() == y);
}

TEST_CASE("split: partition and determinism") {
  RowMatrix X(10, 1);
  for (int i = 0; i < 10; ++i) X(i, 0) = i;
  const LabeledDataset data(X, X.col(0));
  const auto whole = split(data, {1.0}, 3);
  REQUIRE(whole.size() == 1);
  CHECK(whole[0].size() == 10);

  const auto parts = split(data, {0.5, 0.5}, 3);
  REQUIRE(parts.size() == 2);
  CHECK(parts[0].size() == 5);
  CHECK(parts[1].size() == 5);
  std::set<double> seen;
  for (const auto& part : parts)
    for (Index i = 0; i < part.size(); ++i) seen.insert(part.y()(i));
  CHECK(seen.size() == 10);

  const auto again = split(data, {0.5, 0.5}, 3);
  CHECK(again[0].y() == parts[0].y());
  int distinct = 0;
  const auto base = permutation(10, 0);
  for (std::uint64_t s = 1; s <= 100; ++s) distinct += permutation(10, s) != base;
  CHECK(distinct == 100);

  const LabeledDataset tiny(RowMatrix::Ones(1, 1), Vector::Ones(1));
  try {
    split(tiny, {0.5, 0.5}, 1);
    FAIL("expected degenerate split");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::degenerate_split);
  }
}
