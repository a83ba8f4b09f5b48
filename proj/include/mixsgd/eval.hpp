#pragma once

#include <cstddef>
#include <vector>

#include "mixsgd/data.hpp"
#include "mixsgd/losses.hpp"
#include "mixsgd/types.hpp"

namespace mixsgd {

/// ||theta - theta*_Q||^2 in the Sigma_Q norm.
double population_excess_risk_q(const VectorRef& theta, const SyntheticTruth& truth);

/// R_test(theta) - R_test(reference_theta).
double empirical_excess_risk(const VectorRef& theta, const LabeledDataset& test, const LossModel& loss,
                             const VectorRef& reference_theta);

/// Share of points with sign(theta^T x) != y, where sign(0) = +1.
double misclassification_rate(const VectorRef& theta, const LabeledDataset& test);

struct TrialSummary {
  double mean = 0.0;
  double std = 0.0;  // unbiased (n - 1); 0 when count == 1
  std::size_t count = 0;
};

TrialSummary aggregate_trials(const std::vector<double>& values);

}  // namespace mixsgd
