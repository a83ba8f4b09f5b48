#include "mixsgd/eval.hpp"

#include <cmath>

#include "mixsgd/errors.hpp"
#include "mixsgd/spectral.hpp"

namespace mixsgd {

double population_excess_risk_q(const VectorRef& theta, const SyntheticTruth& truth) {
  if (theta.size() != truth.theta_star_Q.size()) {
    throw Error(ErrorCode::invalid_data, "parameter dimension does not match the instance");
  }
  return std::max(0.0, quad_form(theta - truth.theta_star_Q, truth.sigma_Q));
}

double empirical_excess_risk(const VectorRef& theta, const LabeledDataset& test, const LossModel& loss,
                             const VectorRef& reference_theta) {
  return empirical_risk(loss, test, theta) - empirical_risk(loss, test, reference_theta);
}

double misclassification_rate(const VectorRef& theta, const LabeledDataset& test) {
  if (theta.size() != test.dim()) throw Error(ErrorCode::invalid_data, "parameter dimension does not match data");
  const Vector scores = test.X() * theta;
  Index wrong = 0;
  for (Index i = 0; i < test.size(); ++i) {
    const double predicted = scores(i) >= 0.0 ? 1.0 : -1.0;
    if (predicted != test.y()(i)) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(test.size());
}

TrialSummary aggregate_trials(const std::vector<double>& values) {
  if (values.empty()) throw Error(ErrorCode::empty_dataset, "no trial values to aggregate");
  TrialSummary s;
  s.count = values.size();
  // Welford keeps the result independent of the magnitude of the mean.
  double m2 = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double delta = values[i] - s.mean;
    s.mean += delta / static_cast<double>(i + 1);
    m2 += delta * (values[i] - s.mean);
  }
  s.std = s.count > 1 ? std::sqrt(std::max(0.0, m2) / static_cast<double>(s.count - 1)) : 0.0;
  return s;
}

}  // namespace mixsgd
