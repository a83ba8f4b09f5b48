#include <doctest.h>

#include <cmath>

#include "mixsgd/data.hpp"
#include "mixsgd/errors.hpp"
#include "mixsgd/losses.hpp"
#include "mixsgd/rng.hpp"
#include "mixsgd/spectral.hpp"
#include "test_util.hpp"

using namespace mixsgd;
using mixsgd::test::random_matrix;
using mixsgd::test::random_vector;

TEST_CASE("empirical_covariance: identity rows") {
  RowMatrix X = RowMatrix::Identity(2, 2);
  const auto cov = empirical_covariance(X, 1e-12);
  CHECK(cov.sigma_hat.isApprox(Matrix::Identity(2, 2) * 0.5));
  CHECK(cov.lambda_min_plus == doctest::Approx(0.5));
  CHECK(cov.kappa == doctest::Approx(1.0));
  CHECK(cov.rank() == 2);
}

TEST_CASE("empirical_covariance: rank one") {
  RowMatrix X(1, 2);
  X << 1, 0;
  const auto cov = empirical_covariance(X);
  CHECK(cov.sigma_hat(0, 0) == doctest::Approx(1.0));
  CHECK(cov.sigma_hat(1, 1) == doctest::Approx(0.0));
  CHECK(cov.lambda_min_plus == doctest::Approx(1.0));
  CHECK(cov.kappa == doctest::Approx(1.0));
  CHECK(cov.rank() == 1);
  CHECK_FALSE(cov.full_rank());
}

TEST_CASE("empirical_covariance: triple-loop oracle and reconstruction") {
  Rng rng(11);
  const RowMatrix X = random_matrix(rng, 20, 5);
  const auto cov = empirical_covariance(X);
  Matrix oracle = Matrix::Zero(5, 5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      double s = 0.0;
      for (int k = 0; k < 20; ++k) s += X(k, i) * X(k, j);
      oracle(i, j) = s / 20.0;
    }
  CHECK((cov.sigma_hat - oracle).cwiseAbs().maxCoeff() < 1e-12);
  const Matrix rebuilt = cov.eigenvectors * cov.eigenvalues.asDiagonal() * cov.eigenvectors.transpose();
  CHECK((rebuilt - oracle).cwiseAbs().maxCoeff() < 1e-12);
  for (Index i = 1; i < cov.eigenvalues.size(); ++i) CHECK(cov.eigenvalues(i - 1) >= cov.eigenvalues(i));
  CHECK(cov.kappa == doctest::Approx(cov.lambda_max / cov.lambda_min_plus));
}

TEST_CASE("empirical_covariance rejects bad input") {
  RowMatrix X(1, 2);
  X << 1, NAN;
  CHECK_THROWS_AS(empirical_covariance(X), Error);
  CHECK_THROWS_AS(empirical_covariance(RowMatrix(0, 3)), Error);
}

TEST_CASE("min_norm_erm examples") {
  RowMatrix X(1, 2);
  X << 1, 0;
  Vector y(1);
  y << 3;
  const Vector theta = min_norm_erm(X, y);
  CHECK(theta(0) == doctest::Approx(3.0));
  CHECK(std::abs(theta(1)) < 1e-14);

  const Vector t2 = min_norm_erm(RowMatrix::Identity(2, 2), Vector::LinSpaced(2, 1, 2));
  CHECK(t2(0) == doctest::Approx(1.0));
  CHECK(t2(1) == doctest::Approx(2.0));
}

TEST_CASE("min_norm_erm matches normal equations with an explicit 3x3 inverse") {
  Rng rng(5);
  const RowMatrix X = random_matrix(rng, 8, 3);
  const Vector y = random_vector(rng, 8);
  Matrix G = X.transpose() * X;
  // Adjugate inverse.
  Matrix inv(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const int r0 = (j + 1) % 3, r1 = (j + 2) % 3, c0 = (i + 1) % 3, c1 = (i + 2) % 3;
      inv(i, j) = G(r0, c0) * G(r1, c1) - G(r0, c1) * G(r1, c0);
    }
  const double det = G.row(0).dot(inv.col(0));
  inv /= det;
  const Vector oracle = inv * X.transpose() * y;
  CHECK((min_norm_erm(X, y) - oracle).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("quad_form examples") {
  CHECK(quad_form(Vector::Ones(2), Matrix::Identity(2, 2)) == doctest::Approx(2.0));
  Matrix S(2, 2);
  S << 2, 1, 1, 3;
  CHECK(quad_form(Vector::Zero(2), S) == 0.0);
  Vector v(2);
  v << 1, 2;
  CHECK(quad_form(v, S) == doctest::Approx(18.0));
}

TEST_CASE("loss values") {
  const auto sq = LossModel::square(1.0, 1.0);
  Vector theta(2), x(2);
  theta << 1, 0;
  x << 2, 5;
  CHECK(loss_value(sq, theta, x, 2.0) == 0.0);
  CHECK(loss_grad(sq, theta, x, 2.0).norm() == 0.0);

  const auto lg = LossModel::logistic(1.0, 1.0);
  CHECK(loss_value(lg, Vector::Zero(3), Vector::Ones(3), -1.0) == doctest::Approx(std::log(2.0)));
  Vector e1 = Vector::Zero(2);
  e1(0) = 1.0;
  const Vector g = loss_grad(lg, Vector::Zero(2), e1, 1.0);
  CHECK(g(0) == doctest::Approx(-0.5));
  CHECK(g(1) == 0.0);

  const auto hinge = LossModel::hinge(1.0);
  CHECK(loss_value(hinge, Vector::Constant(1, 0.5), Vector::Ones(1), 1.0) == doctest::Approx(0.5));
}

TEST_CASE("classification losses reject labels outside {-1, +1}") {
  const auto lg = LossModel::logistic(1.0, 1.0);
  CHECK_THROWS_AS(loss_value(lg, Vector::Zero(1), Vector::Ones(1), 0.5), Error);
  CHECK_THROWS_AS(loss_grad(LossModel::hinge(1.0), Vector::Zero(1), Vector::Ones(1), 2.0), Error);
  const LabeledDataset data(RowMatrix::Ones(1, 1), Vector::Constant(1, 0.0));
  CHECK_THROWS_AS(empirical_risk(lg, data, Vector::Zero(1)), Error);
}

TEST_CASE("gradients match central finite differences") {
  Rng rng(99);
  for (const auto& loss : {LossModel::square(2.0, 1.0), LossModel::logistic(2.0, 3.0), LossModel::hinge(2.0),
                           LossModel::weighted_hinge(2.0, 0.75)}) {
    for (int k = 0; k < 200; ++k) {
      const Vector theta = random_vector(rng, 4);
      const Vector x = random_vector(rng, 4);
      const double y = loss.is_classification() ? (rng.bernoulli(0.5) ? 1.0 : -1.0) : rng.normal();
      if (loss.is_classification() && std::abs(y * theta.dot(x) - 1.0) < 1e-4) continue;
      const Vector g = loss_grad(loss, theta, x, y);
      for (Index j = 0; j < 4; ++j) {
        Vector tp = theta, tm = theta;
        tp(j) += 1e-6;
        tm(j) -= 1e-6;
        const double fd = (loss_value(loss, tp, x, y) - loss_value(loss, tm, x, y)) / 2e-6;
        CHECK(std::abs(fd - g(j)) <= 1e-5 * std::max(1.0, std::abs(g(j))));
      }
    }
  }
}

TEST_CASE("empirical risk and gradient") {
  RowMatrix X(2, 2);
  X << 1, 0, 1, 0;
  Vector y(2);
  y << 0, 2;
  const LabeledDataset data(X, y);
  const auto sq = LossModel::square(1.0, 1.0);
  Vector e1 = Vector::Zero(2);
  e1(0) = 1.0;
  CHECK(empirical_risk(sq, data, e1) == doctest::Approx(1.0));
  const LabeledDataset one(X.topRows(1), Vector::Ones(1));
  CHECK(empirical_risk(sq, one, e1) == 0.0);
  CHECK(empirical_risk_grad(sq, one, e1).norm() == 0.0);

  Rng rng(3);
  const LabeledDataset rnd(random_matrix(rng, 30, 3), random_vector(rng, 30));
  const Vector theta = random_vector(rng, 3);
  double mean = 0.0;
  Vector grad = Vector::Zero(3);
  for (Index i = 0; i < 30; ++i) {
    mean += loss_value(sq, theta, rnd.X().row(i).transpose(), rnd.y()(i)) / 30.0;
    grad += loss_grad(sq, theta, rnd.X().row(i).transpose(), rnd.y()(i)) / 30.0;
  }
  CHECK(empirical_risk(sq, rnd, theta) == doctest::Approx(mean).epsilon(1e-12));
  CHECK((empirical_risk_grad(sq, rnd, theta) - grad).norm() < 1e-12);
}

TEST_CASE("convexity constants") {
  const auto sq = LossModel::square(2.0, 0.25);
  CHECK(sq.m2 == doctest::Approx(8.0));
  CHECK(sq.m1 == doctest::Approx(0.5));
  CHECK(sq.condition_number() == doctest::Approx(16.0));
  const auto lg = LossModel::logistic(2.0, 1.0);
  const double s = sigmoid(2.0);
  CHECK(lg.m2 == doctest::Approx(1.0));
  CHECK(lg.m1 == doctest::Approx(4.0 * s * (1.0 - s)));
  CHECK(std::isinf(LossModel::hinge(1.0).condition_number()));
}
