#include "mixsgd/losses.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "mixsgd/data.hpp"
#include "mixsgd/errors.hpp"

namespace mixsgd {

namespace {

void check_label(const LossModel& model, double y) {
  if (model.is_classification() && y != 1.0 && y != -1.0) {
    throw Error(ErrorCode::invalid_label, "classification label must be -1 or +1, got " + std::to_string(y));
  }
}

// ln(1 + exp(z)) without overflow.
double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::square: return "square";
    case LossKind::logistic: return "logistic";
    case LossKind::hinge: return "hinge";
    case LossKind::weighted_hinge: return "weighted_hinge";
  }
  return "unknown";
}

LossKind parse_loss_kind(std::string_view name) {
  if (name == "square") return LossKind::square;
  if (name == "logistic") return LossKind::logistic;
  if (name == "hinge") return LossKind::hinge;
  if (name == "weighted_hinge") return LossKind::weighted_hinge;
  throw Error(ErrorCode::invalid_config, "unknown loss '" + std::string(name) + "'");
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

LossModel LossModel::square(double max_feature_norm, double lambda_min_plus) {
  return LossModel{LossKind::square, 2.0 * lambda_min_plus, 2.0 * max_feature_norm * max_feature_norm, 0.5};
}

LossModel LossModel::logistic(double max_feature_norm, double ball_radius) {
  const double mx2 = max_feature_norm * max_feature_norm;
  const double s = sigmoid(ball_radius * max_feature_norm);
  return LossModel{LossKind::logistic, mx2 * s * (1.0 - s), mx2 / 4.0, 0.5};
}

LossModel LossModel::hinge(double max_feature_norm) {
  return LossModel{LossKind::hinge, 0.0, max_feature_norm * max_feature_norm, 0.5};
}

LossModel LossModel::weighted_hinge(double max_feature_norm, double positive_weight) {
  if (!(positive_weight > 0.0 && positive_weight < 1.0)) {
    throw Error(ErrorCode::invalid_config, "weighted hinge weight must lie in (0, 1)");
  }
  return LossModel{LossKind::weighted_hinge, 0.0, max_feature_norm * max_feature_norm, positive_weight};
}

double LossModel::condition_number() const {
  return m1 > 0.0 ? m2 / m1 : std::numeric_limits<double>::infinity();
}

double LossModel::value_from_score(double score, double y) const {
  switch (kind) {
    case LossKind::square: {
      const double r = score - y;
      return r * r;
    }
    case LossKind::logistic:
      return softplus(-y * score);
    case LossKind::hinge:
      return std::max(0.0, 1.0 - y * score);
    case LossKind::weighted_hinge:
      return (y > 0.0 ? weight : 1.0 - weight) * std::max(0.0, 1.0 - y * score);
  }
  return 0.0;
}

double LossModel::derivative_from_score(double score, double y) const {
  switch (kind) {
    case LossKind::square:
      return 2.0 * (score - y);
    case LossKind::logistic:
      return -y * sigmoid(-y * score);
    case LossKind::hinge:
      // Subgradient 0 at the kink.
      return y * score < 1.0 ? -y : 0.0;
    case LossKind::weighted_hinge:
      return y * score < 1.0 ? -y * (y > 0.0 ? weight : 1.0 - weight) : 0.0;
  }
  return 0.0;
}

double loss_value(const LossModel& model, const VectorRef& theta, const VectorRef& x, double y) {
  if (theta.size() != x.size()) throw Error(ErrorCode::invalid_data, "loss_value: shape mismatch");
  check_label(model, y);
  return model.value_from_score(theta.dot(x), y);
}

Vector loss_grad(const LossModel& model, const VectorRef& theta, const VectorRef& x, double y) {
  if (theta.size() != x.size()) throw Error(ErrorCode::invalid_data, "loss_grad: shape mismatch");
  check_label(model, y);
  return model.derivative_from_score(theta.dot(x), y) * x;
}

void check_labels(const LossModel& model, const LabeledDataset& data) {
  if (!model.is_classification()) return;
  for (Index i = 0; i < data.size(); ++i) check_label(model, data.y()(i));
}

double empirical_risk(const LossModel& model, const LabeledDataset& data, const VectorRef& theta) {
  if (theta.size() != data.dim()) throw Error(ErrorCode::invalid_data, "empirical_risk: shape mismatch");
  check_labels(model, data);
  const Vector scores = data.X() * theta;
  double total = 0.0;
  for (Index i = 0; i < data.size(); ++i) total += model.value_from_score(scores(i), data.y()(i));
  return total / static_cast<double>(data.size());
}

Vector empirical_risk_grad(const LossModel& model, const LabeledDataset& data, const VectorRef& theta) {
  if (theta.size() != data.dim()) throw Error(ErrorCode::invalid_data, "empirical_risk_grad: shape mismatch");
  check_labels(model, data);
  const Vector scores = data.X() * theta;
  Vector weights(data.size());
  for (Index i = 0; i < data.size(); ++i) weights(i) = model.derivative_from_score(scores(i), data.y()(i));
  return data.X().transpose() * weights / static_cast<double>(data.size());
}

}  // namespace mixsgd
