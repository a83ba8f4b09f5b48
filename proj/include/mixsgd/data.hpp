#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mixsgd/types.hpp"

namespace mixsgd {

/// Feature matrix plus labels for one distribution, with the derived bounds
/// M_x (largest row norm) and M_y_hat (largest |y|). Immutable once built, so
/// the bounds always describe the stored data.
class LabeledDataset {
 public:
  LabeledDataset(RowMatrix X, Vector y);

  const RowMatrix& X() const { return X_; }
  const Vector& y() const { return y_; }
  Index size() const { return X_.rows(); }
  Index dim() const { return X_.cols(); }
  double max_feature_norm() const { return max_feature_norm_; }
  double max_abs_label() const { return max_abs_label_; }

  /// Rows in the given order (duplicates allowed).
  LabeledDataset subset(const std::vector<Index>& rows) const;

 private:
  RowMatrix X_;
  Vector y_;
  double max_feature_norm_ = 0.0;
  double max_abs_label_ = 0.0;
};

/// Population parameters behind a synthetic regression pair.
struct SyntheticTruth {
  Matrix sigma_P;
  Matrix sigma_Q;
  Vector theta_star_P;
  Vector theta_star_Q;
  double sigma_y = 1.0;
  double lambda_max_ratio = 1.0;   // lambda_max(Sigma_P^{-1} Sigma_Q)
  double source_target_gap = 0.0;  // quad_form(theta*_P - theta*_Q, Sigma_Q)

  /// Recomputes both derived scalars from the matrices and vectors.
  double recompute_lambda_max_ratio() const;
  double recompute_source_target_gap() const;
};

struct SyntheticRegressionSpec {
  Index d = 50;
  Index n_P = 500;
  Index n_Q = 100;
  double lambda_max_ratio = 1.0;
  double source_target_gap = 0.0;
  double sigma_y = 1.0;
  Index q_rank = 50;
  std::uint64_t seed = 0;
};

struct SyntheticRegression {
  LabeledDataset source;
  LabeledDataset target;
  SyntheticTruth truth;
};

/// Sigma_P = I, Sigma_Q diagonal with a log-spaced active block from
/// lambda_max_ratio down to 1 over the first q_rank coordinates (zero after),
/// theta*_Q unit-norm in the active block and theta*_P shifted along a unit
/// active direction so the Sigma_Q-gap equals source_target_gap.
SyntheticRegression gen_synthetic_regression(const SyntheticRegressionSpec& spec);

/// Draws n fresh target-distribution samples consistent with a truth.
LabeledDataset sample_regression(const SyntheticTruth& truth, bool from_target, Index n, std::uint64_t seed);

struct SyntheticClassificationSpec {
  Index d = 10;
  Index n_P = 100;
  Index n_Q = 50;
  double pos_ratio_P = 0.5;
  double pos_ratio_Q = 0.8;
  double margin = 1.0;
  std::uint64_t seed = 0;
};

struct SyntheticClassification {
  LabeledDataset source;
  LabeledDataset target;
  Vector direction;  // unit vector u; classes sit at +-margin * u
};

/// Two unit-covariance Gaussian clouds at +-margin*u; label +1 drawn with the
/// per-domain positive ratio. Ratios must lie in (0, 1].
SyntheticClassification gen_synthetic_classification(const SyntheticClassificationSpec& spec);

/// Extra samples from the same class-conditional model (e.g. a target test set).
LabeledDataset sample_classification(const Vector& direction, double margin, double pos_ratio, Index n,
                                     std::uint64_t seed);

/// Affine per-column map to zero mean / unit variance.
struct Standardization {
  std::vector<double> mean;
  std::vector<double> std;

  /// Columns with variance below this floor map to zero.
  static constexpr double kVarianceFloor = 1e-12;

  static Standardization fit(const RowMatrix& X);
  RowMatrix apply(const RowMatrix& X) const;
  LabeledDataset apply(const LabeledDataset& data) const;

  std::string to_json() const;
  static Standardization from_json(const std::string& text);
};

struct CsvDataset {
  LabeledDataset data;
  std::optional<Standardization> transform;
};

/// Reads a comma-separated numeric table with one header row. Columns are
/// selected by name; a missing column is a schema error, a non-numeric cell a
/// parse error naming the row and column.
CsvDataset load_csv(const std::filesystem::path& path, const std::vector<std::string>& feature_columns,
                    const std::string& label_column, bool standardize);

/// Writes with shortest round-trip formatting so reloading is bit-exact.
void write_csv(const LabeledDataset& data, const std::filesystem::path& path,
               const std::vector<std::string>& feature_columns, const std::string& label_column);

/// Deterministic shuffled partition. Part sizes are floor(f_i * n) with the
/// remainder given to the first part; any empty part is an error.
std::vector<LabeledDataset> split(const LabeledDataset& data, const std::vector<double>& fractions,
                                  std::uint64_t seed);

/// Fisher-Yates permutation of 0..n-1 driven by the library RNG.
std::vector<Index> permutation(Index n, std::uint64_t seed);

}  // namespace mixsgd
