#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "mixsgd/baselines.hpp"
#include "mixsgd/data.hpp"
#include "mixsgd/errors.hpp"
#include "mixsgd/eval.hpp"
#include "mixsgd/rng.hpp"
#include "mixsgd/solver.hpp"
#include "test_util.hpp"

using namespace mixsgd;
using mixsgd::test::linear_data;
using mixsgd::test::random_vector;

TEST_CASE("source and target ERM closed forms") {
  RowMatrix X = RowMatrix::Zero(1, 3);
  X(0, 0) = 1.0;
  const auto sq = LossModel::square(1.0, 1.0);
  const Vector t = source_erm(LabeledDataset(X, Vector::Ones(1)), sq);
  CHECK(t(0) == doctest::Approx(1.0));
  CHECK(t.tail(2).norm() == 0.0);
  const Vector u = target_erm(LabeledDataset(RowMatrix::Identity(2, 2), Vector::LinSpaced(2, 1, 2)), sq);
  CHECK(u(0) == doctest::Approx(1.0));
  CHECK(u(1) == doctest::Approx(2.0));
}

TEST_CASE("logistic ERM on a separable pair sits on the ball boundary") {
  RowMatrix X(2, 2);
  X << 1, 0.2, -1, 0.3;
  Vector y(2);
  y << 1, -1;
  const LabeledDataset data(X, y);
  const auto loss = LossModel::logistic(data.max_feature_norm(), 1.0);
  ErmOptions opt;
  opt.ball_radius = 1.0;
  const Vector theta = fit_erm(data, loss, opt);
  CHECK(theta.norm() == doctest::Approx(1.0).epsilon(1e-6));
  const double risk = empirical_risk(loss, data, theta);
  Rng rng(1);
  for (int k = 0; k < 50; ++k) {
    Vector cand = random_vector(rng, 2);
    cand *= std::sqrt(rng.uniform01()) / cand.norm();
    CHECK(risk <= empirical_risk(loss, data, cand) + 1e-12);
  }
}

TEST_CASE("hinge ERM decreases the risk") {
  SyntheticClassificationSpec spec;
  spec.seed = 2;
  const auto inst = gen_synthetic_classification(spec);
  const auto loss = LossModel::hinge(inst.source.max_feature_norm());
  ErmOptions opt;
  opt.ball_radius = 3.0;
  const Vector theta = fit_erm(inst.source, loss, opt);
  CHECK(theta.norm() <= 3.0 + 1e-12);
  CHECK(empirical_risk(loss, inst.source, theta) < empirical_risk(loss, inst.source, Vector::Zero(theta.size())));
}

TEST_CASE("biased regularization limits") {
  Rng rng(6);
  const Vector tP = random_vector(rng, 3);
  const auto S_Q = linear_data(rng, 25, random_vector(rng, 3), 0.3);
  const auto sq = LossModel::square(1.0, 1.0);
  const Vector anchor = tP;
  CHECK((fit_biased(S_Q, sq, anchor, 1e8) - anchor).norm() <= 1e-4);
  CHECK((fit_biased(S_Q, sq, anchor, 0.0) - min_norm_erm(S_Q.X(), S_Q.y())).norm() <= 1e-10);
}

TEST_CASE("biased regularization matches a dense grid in d = 2") {
  RowMatrix X(3, 2);
  X << 1, 0.5, -0.4, 1, 0.3, -0.8;
  Vector y(3);
  y << 1.0, -0.5, 0.7;
  const LabeledDataset S(X, y);
  const auto sq = LossModel::square(1.0, 1.0);
  Vector anchor(2);
  anchor << 0.8, -0.6;
  const Vector theta = fit_biased(S, sq, anchor, 1.0);
  const int n = 1000;
  const double lo = -3.0, cell = 6.0 / (n - 1);
  double best = std::numeric_limits<double>::infinity();
  Vector best_pt(2), t(2);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      t << lo + i * cell, lo + j * cell;
      const double v = empirical_risk(sq, S, t) + (t - anchor).squaredNorm();
      if (v < best) {
        best = v;
        best_pt = t;
      }
    }
  CHECK((theta - best_pt).norm() <= 2.0 * cell * std::sqrt(2.0));
}

TEST_CASE("htl: reproducible selection and validation") {
  Rng rng(10);
  const Vector t = random_vector(rng, 4);
  const auto S_P = linear_data(rng, 200, t, 0.5);
  const auto S_Q = linear_data(rng, 30, t + 0.3 * random_vector(rng, 4), 0.5);
  const auto sq = LossModel::square(1.0, 1.0);
  const auto a = htl(S_P, S_Q, sq, default_beta_grid(), 5, 77);
  const auto b = htl(S_P, S_Q, sq, default_beta_grid(), 5, 77);
  CHECK(a.chosen_beta == b.chosen_beta);
  CHECK(a.theta == b.theta);
  CHECK(a.cv_risk.size() == 13);
  const auto best = std::min_element(a.cv_risk.begin(), a.cv_risk.end()) - a.cv_risk.begin();
  CHECK(a.chosen_beta == default_beta_grid()[static_cast<std::size_t>(best)]);
  CHECK(default_beta_grid().front() == doctest::Approx(1e-4));
  CHECK(default_beta_grid().back() == doctest::Approx(1e2));
  CHECK_THROWS_AS(htl(S_P, S_Q, sq, {}, 5, 1), Error);
  CHECK_THROWS_AS(htl(S_P, S_Q, sq, default_beta_grid(), 1, 1), Error);
}

TEST_CASE("psgd: interior trajectory equals plain SGD and output is feasible") {
  Rng rng(12);
  const Vector t = random_vector(rng, 3);
  const auto S = linear_data(rng, 40, t, 0.3);
  const auto sq = LossModel::square(1.0, 1.0);
  HyperParams hp;
  hp.T = 300;
  hp.eta = 0.01;
  hp.gamma = 1.0;
  hp.lambda_slack = 1e6;
  hp.proj_slack = 1.0;
  const auto res = psgd(S, S, sq, hp, 5);

  Rng oracle(5);
  Vector theta = Vector::Zero(3), sum = Vector::Zero(3);
  for (int k = 0; k < 300; ++k) {
    const auto i = static_cast<Index>(oracle.uniform_index(40));
    const auto x = S.X().row(i).transpose();
    theta.noalias() -= (0.01 * (2.0 * (theta.dot(x) - S.y()(i)))) * x;
    sum += theta;
  }
  CHECK(res.theta_bar == sum / 300.0);
  CHECK(res.theta == res.theta_bar);

  hp.lambda_slack = 0.01;
  hp.proj_slack = 0.005;
  const auto tight = psgd(linear_data(rng, 40, t + random_vector(rng, 3), 0.3), S, sq, hp, 6);
  CHECK(tight.max_violation <= 1e-8);
  CHECK(empirical_risk(sq, S, tight.theta) <= tight.reference_risk_Q + 0.01 + 1e-8);
}

TEST_CASE("population excess risk") {
  SyntheticRegressionSpec spec;
  spec.d = 5;
  spec.q_rank = 5;
  spec.lambda_max_ratio = 3.0;
  spec.source_target_gap = 0.8;
  spec.seed = 1;
  const auto inst = gen_synthetic_regression(spec);
  CHECK(population_excess_risk_q(inst.truth.theta_star_Q, inst.truth) == 0.0);
  CHECK(population_excess_risk_q(inst.truth.theta_star_P, inst.truth) == doctest::Approx(0.8));

  Rng rng(3);
  const Vector theta = random_vector(rng, 5);
  const auto fresh = sample_regression(inst.truth, true, 1000000, 99);
  const Vector diff = fresh.X() * (theta - inst.truth.theta_star_Q);
  const double mc = diff.squaredNorm() / 1e6;
  CHECK(population_excess_risk_q(theta, inst.truth) == doctest::Approx(mc).epsilon(0.01));
  for (int k = 0; k < 100; ++k) CHECK(population_excess_risk_q(random_vector(rng, 5), inst.truth) >= 0.0);
}

TEST_CASE("empirical excess risk identities") {
  Rng rng(4);
  const auto test = linear_data(rng, 50, random_vector(rng, 3), 0.2);
  const auto sq = LossModel::square(1.0, 1.0);
  const Vector th = random_vector(rng, 3), r1 = random_vector(rng, 3), r2 = random_vector(rng, 3);
  CHECK(empirical_excess_risk(th, test, sq, th) == 0.0);
  const double lhs = empirical_excess_risk(th, test, sq, r1) - empirical_excess_risk(th, test, sq, r2);
  CHECK(lhs == doctest::Approx(empirical_risk(sq, test, r2) - empirical_risk(sq, test, r1)));
  double direct = 0.0;
  for (Index i = 0; i < 50; ++i) {
    const double a = test.X().row(i).dot(th) - test.y()(i);
    const double b = test.X().row(i).dot(r1) - test.y()(i);
    direct += (a * a - b * b) / 50.0;
  }
  CHECK(empirical_excess_risk(th, test, sq, r1) == doctest::Approx(direct));
}

TEST_CASE("misclassification rate") {
  RowMatrix X(4, 1);
  X << 1, 2, -1, -3;
  Vector y(4);
  y << 1, 1, -1, -1;
  const LabeledDataset test(X, y);
  CHECK(misclassification_rate(Vector::Ones(1), test) == 0.0);
  CHECK(misclassification_rate(Vector::Zero(1), test) == 0.5);  // sign(0) = +1
  Rng rng(9);
  const auto cls = sample_classification(Vector::Unit(3, 0), 0.5, 0.5, 500, 4);
  const Vector theta = random_vector(rng, 3);
  int wrong = 0;
  for (Index i = 0; i < cls.size(); ++i) wrong += ((cls.X().row(i).dot(theta) >= 0.0) ? 1.0 : -1.0) != cls.y()(i);
  const double rate = misclassification_rate(theta, cls);
  CHECK(rate == doctest::Approx(wrong / 500.0));
  CHECK(rate >= 0.0);
  CHECK(rate <= 1.0);
}

TEST_CASE("aggregate_trials") {
  const auto s = aggregate_trials({1.0, 3.0});
  CHECK(s.mean == 2.0);
  CHECK(s.std == doctest::Approx(std::sqrt(2.0)));
  CHECK(s.count == 2);
  const auto one = aggregate_trials({4.5});
  CHECK(one.mean == 4.5);
  CHECK(one.std == 0.0);
  CHECK(one.count == 1);
  CHECK_THROWS_AS(aggregate_trials({}), Error);

  Rng rng(2);
  std::vector<double> v;
  for (int i = 0; i < 1000; ++i) v.push_back(100.0 + rng.normal());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= 1000.0;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const auto agg = aggregate_trials(v);
  CHECK(std::abs(agg.mean - mean) <= 1e-12 * mean);
  CHECK(std::abs(agg.std - std::sqrt(ss / 999.0)) <= 1e-12);
  std::reverse(v.begin(), v.end());
  CHECK(aggregate_trials(v).mean == doctest::Approx(agg.mean).epsilon(1e-14));
}
