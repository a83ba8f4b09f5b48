#pragma once

#include <string_view>

#include "mixsgd/types.hpp"

namespace mixsgd {

class LabeledDataset;

enum class LossKind { square, logistic, hinge, weighted_hinge };

std::string_view to_string(LossKind kind);
LossKind parse_loss_kind(std::string_view name);

/// Per-example loss with its convexity constants over the working domain.
///
/// Classification losses expect labels in {-1, +1}. For weighted_hinge the
/// weight w applies to positives and (1 - w) to negatives. Hinge losses have
/// m1 = 0 and a nominal m2 = M_x^2 used only as a step scale.
struct LossModel {
  LossKind kind = LossKind::square;
  double m1 = 0.0;
  double m2 = 1.0;
  double weight = 0.5;

  /// m2 = 2 M_x^2, m1 = 2 lambda_min_plus.
  static LossModel square(double max_feature_norm, double lambda_min_plus);
  /// Over a ball of radius B: m2 = M_x^2 / 4, m1 = M_x^2 s (1 - s), s = sigmoid(B M_x).
  static LossModel logistic(double max_feature_norm, double ball_radius);
  static LossModel hinge(double max_feature_norm);
  static LossModel weighted_hinge(double max_feature_norm, double positive_weight);

  bool is_classification() const { return kind != LossKind::square; }
  /// m2 / m1, or +inf when m1 = 0.
  double condition_number() const;

  /// Loss as a function of the margin score s = theta^T x.
  double value_from_score(double score, double y) const;
  /// d loss / d score; the gradient is this times x.
  double derivative_from_score(double score, double y) const;
};

double loss_value(const LossModel& model, const VectorRef& theta, const VectorRef& x, double y);
Vector loss_grad(const LossModel& model, const VectorRef& theta, const VectorRef& x, double y);

double empirical_risk(const LossModel& model, const LabeledDataset& data, const VectorRef& theta);
Vector empirical_risk_grad(const LossModel& model, const LabeledDataset& data, const VectorRef& theta);

/// Throws invalid_label unless every label is -1 or +1 (no-op for square loss).
void check_labels(const LossModel& model, const LabeledDataset& data);

double sigmoid(double z);

}  // namespace mixsgd
