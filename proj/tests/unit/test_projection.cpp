#include <doctest.h>

#include <cmath>
#include <limits>

#include "mixsgd/data.hpp"
#include "mixsgd/errors.hpp"
#include "mixsgd/losses.hpp"
#include "mixsgd/projection.hpp"
#include "mixsgd/rng.hpp"
#include "test_util.hpp"

using namespace mixsgd;
using mixsgd::test::random_vector;

namespace {

QuadraticConstraint unit_ball(Index d) { return {Matrix::Identity(d, d), Vector::Zero(d), -1.0}; }

ConvexConstraint as_convex(const QuadraticConstraint& con, double smoothness) {
  ConvexConstraint g;
  g.value = [con](const Vector& t) { return con.value(t); };
  g.gradient = [con](const Vector& t) { return con.gradient(t); };
  g.smoothness = smoothness;
  return g;
}

}  // namespace

TEST_CASE("quadratic projection: sphere along a ray") {
  Vector theta_bar(2);
  theta_bar << 2, 0;
  const auto p = project_quadratic_sublevel(theta_bar, unit_ball(2));
  CHECK(p.theta(0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(std::abs(p.theta(1)) < 1e-15);
  CHECK(p.mu == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("quadratic projection: interior point unchanged") {
  Vector theta_bar(3);
  theta_bar << 0.1, -0.2, 0.3;
  const auto p = project_quadratic_sublevel(theta_bar, unit_ball(3));
  CHECK(p.theta == theta_bar);
  CHECK(p.mu == 0.0);
}

TEST_CASE("quadratic projection: empty set is infeasible") {
  QuadraticConstraint con{Matrix::Identity(2, 2), Vector::Zero(2), 1.0};
  try {
    QuadraticProjector proj(con);
    FAIL("expected infeasible");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::infeasible);
  }
}

TEST_CASE("quadratic projection: KKT on random and rank-deficient ellipsoids") {
  Rng rng(31);
  for (int k = 0; k < 200; ++k) {
    const Index d = 1 + k % 8;
    const Index rank = (k % 2 == 0) ? d : std::max<Index>(1, d / 2);
    Matrix B(d, rank);
    for (Index i = 0; i < d; ++i)
      for (Index j = 0; j < rank; ++j) B(i, j) = rng.normal();
    QuadraticConstraint con;
    con.A = B * B.transpose();
    const Vector center = random_vector(rng, d);
    con.b = con.A * center;
    con.c = center.dot(con.A * center) - 0.5;
    const Vector theta_bar = center + 3.0 * random_vector(rng, d);
    const auto p = project_quadratic_sublevel(theta_bar, con);
    CHECK(p.constraint_value <= 1e-9);
    CHECK(p.stationarity <= 1e-8);
    CHECK(p.complementarity <= 1e-8);
    CHECK(p.mu >= 0.0);
    // No feasible point is closer: compare against random feasible candidates.
    for (int j = 0; j < 20; ++j) {
      const Vector cand = p.theta + 0.1 * random_vector(rng, d);
      if (con.value(cand) <= 0.0) CHECK((cand - theta_bar).norm() >= (p.theta - theta_bar).norm() - 1e-9);
    }
  }
}

TEST_CASE("l2 ball projection") {
  Vector t(2);
  t << 0, 3;
  const Vector p = project_l2_ball(t, 1.0);
  CHECK(p(0) == 0.0);
  CHECK(p(1) == doctest::Approx(1.0));
  Vector inside(2);
  inside << 0.3, 0.4;
  CHECK(project_l2_ball(inside, 1.0) == inside);
  CHECK_THROWS_AS(project_l2_ball(inside, 0.0), Error);
}

TEST_CASE("general projection agrees with the quadratic path") {
  Rng rng(77);
  for (int k = 0; k < 50; ++k) {
    const Index d = 1 + k % 5;
    Matrix B(d, d);
    for (Index i = 0; i < d; ++i)
      for (Index j = 0; j < d; ++j) B(i, j) = rng.normal();
    QuadraticConstraint con{B * B.transpose() / static_cast<double>(d) + 0.1 * Matrix::Identity(d, d),
                            Vector::Zero(d), -1.0};
    const Vector theta_bar = 3.0 * random_vector(rng, d);
    const double smooth = 2.0 * con.A.eigenvalues().real().maxCoeff();
    const auto q = project_quadratic_sublevel(theta_bar, con);
    const auto g = project_general_convex(theta_bar, as_convex(con, smooth));
    CHECK((q.theta - g.theta).norm() <= 1e-5);
    CHECK(g.constraint_value <= 0.0);
  }
}

TEST_CASE("general projection: feasible point returned unchanged") {
  Vector t(2);
  t << 0.2, 0.1;
  const auto g = project_general_convex(t, as_convex(unit_ball(2), 2.0));
  CHECK(g.theta == t);
  CHECK(g.mu == 0.0);
}

TEST_CASE("general projection: logistic sublevel set matches a dense grid") {
  RowMatrix X(4, 2);
  X << 1, 0.5, -0.3, 1, 0.8, -1, -1, -0.2;
  Vector y(4);
  y << 1, 1, -1, -1;
  const LabeledDataset data(X, y);
  const auto loss = LossModel::logistic(data.max_feature_norm(), 3.0);
  const double level = 0.45;  // R(theta) <= level
  const auto g = risk_constraint(loss, data, level, 0.0);
  Vector theta_bar(2);
  theta_bar << -1.5, 1.0;
  REQUIRE(g.value(theta_bar) > 0.0);
  const auto p = project_general_convex(theta_bar, g);

  // 1000 x 1000 grid over [-4, 4]^2: closest feasible grid point.
  const int n = 1000;
  const double lo = -4.0, cell = 8.0 / (n - 1);
  double best = std::numeric_limits<double>::infinity();
  Vector best_pt(2);
  Vector t(2);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      t << lo + i * cell, lo + j * cell;
      const double dist = (t - theta_bar).squaredNorm();
      if (dist >= best) continue;
      if (empirical_risk(loss, data, t) <= level) {
        best = dist;
        best_pt = t;
      }
    }
  }
  CHECK((p.theta - best_pt).norm() <= 2.0 * cell * std::sqrt(2.0));
}
