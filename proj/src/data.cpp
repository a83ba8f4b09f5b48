#include "mixsgd/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "mixsgd/errors.hpp"
#include "mixsgd/rng.hpp"
#include "mixsgd/spectral.hpp"

namespace mixsgd {

LabeledDataset::LabeledDataset(RowMatrix X, Vector y) : X_(std::move(X)), y_(std::move(y)) {
  if (X_.rows() == 0) throw Error(ErrorCode::empty_dataset, "dataset has no rows");
  if (X_.cols() == 0) throw Error(ErrorCode::invalid_data, "dataset has no feature columns");
  if (X_.rows() != y_.size()) throw Error(ErrorCode::invalid_data, "feature rows and labels differ in count");
  if (!X_.allFinite() || !y_.allFinite()) throw Error(ErrorCode::invalid_data, "dataset has non-finite entries");
  max_feature_norm_ = X_.rowwise().norm().maxCoeff();
  max_abs_label_ = y_.cwiseAbs().maxCoeff();
}

LabeledDataset LabeledDataset::subset(const std::vector<Index>& rows) const {
  RowMatrix X(static_cast<Index>(rows.size()), dim());
  Vector y(static_cast<Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    X.row(static_cast<Index>(k)) = X_.row(rows[k]);
    y(static_cast<Index>(k)) = y_(rows[k]);
  }
  return LabeledDataset(std::move(X), std::move(y));
}

// ---------------------------------------------------------------------------
// Synthetic regression

double SyntheticTruth::recompute_lambda_max_ratio() const {
  // Generalized eigenproblem Sigma_Q v = lambda Sigma_P v with Sigma_P PD.
  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> solver(sigma_Q, sigma_P, Eigen::EigenvaluesOnly);
  return solver.eigenvalues().maxCoeff();
}

double SyntheticTruth::recompute_source_target_gap() const {
  return quad_form(theta_star_P - theta_star_Q, sigma_Q);
}

namespace {

Vector target_spectrum(Index d, Index q_rank, double ratio) {
  Vector s = Vector::Zero(d);
  if (q_rank == 1) {
    s(0) = ratio;
    return s;
  }
  const double log_top = std::log(ratio);
  for (Index i = 0; i < q_rank; ++i) {
    const double frac = static_cast<double>(i) / static_cast<double>(q_rank - 1);
    s(i) = std::exp(log_top * (1.0 - frac));
  }
  s(0) = ratio;
  s(q_rank - 1) = 1.0;
  return s;
}

Vector random_unit(Index active, Index d, Rng& rng) {
  Vector v = Vector::Zero(d);
  double norm = 0.0;
  while (norm == 0.0) {
    for (Index i = 0; i < active; ++i) v(i) = rng.normal();
    norm = v.norm();
  }
  return v / norm;
}

// Rows are sqrt(diag) * z, z standard normal; labels theta^T x + sigma_y * e.
LabeledDataset draw_diagonal_gaussian(const Vector& variances, const Vector& theta, double sigma_y, Index n,
                                      Rng& rng) {
  const Index d = variances.size();
  const Vector scale = variances.cwiseSqrt();
  RowMatrix X(n, d);
  Vector y(n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < d; ++j) X(i, j) = scale(j) * rng.normal();
    y(i) = X.row(i).dot(theta) + sigma_y * rng.normal();
  }
  return LabeledDataset(std::move(X), std::move(y));
}

}  // namespace

SyntheticRegression gen_synthetic_regression(const SyntheticRegressionSpec& spec) {
  if (spec.d < 1 || spec.n_P < 1 || spec.n_Q < 1 || spec.q_rank < 1) {
    throw Error(ErrorCode::invalid_config, "dimension, sample sizes and q_rank must be >= 1");
  }
  if (spec.q_rank > spec.d) throw Error(ErrorCode::invalid_config, "q_rank exceeds d");
  if (!(spec.lambda_max_ratio >= 1.0)) throw Error(ErrorCode::invalid_config, "lambda_max_ratio must be >= 1");
  if (!(spec.source_target_gap >= 0.0)) throw Error(ErrorCode::invalid_config, "source_target_gap must be >= 0");
  if (!(spec.sigma_y >= 0.0)) throw Error(ErrorCode::invalid_config, "sigma_y must be >= 0");

  Rng rng(spec.seed);
  const Index d = spec.d;
  const Vector q_diag = target_spectrum(d, spec.q_rank, spec.lambda_max_ratio);

  SyntheticTruth truth;
  truth.sigma_P = Matrix::Identity(d, d);
  truth.sigma_Q = q_diag.asDiagonal();
  truth.sigma_y = spec.sigma_y;
  truth.lambda_max_ratio = spec.lambda_max_ratio;
  truth.source_target_gap = spec.source_target_gap;

  truth.theta_star_Q = random_unit(spec.q_rank, d, rng);
  const Vector shift_dir = random_unit(spec.q_rank, d, rng);
  const double curvature = quad_form(shift_dir, truth.sigma_Q);
  const double delta = spec.source_target_gap > 0.0 ? std::sqrt(spec.source_target_gap / curvature) : 0.0;
  truth.theta_star_P = truth.theta_star_Q + delta * shift_dir;

  const std::uint64_t seed_P = Rng::derive_seed(spec.seed, 1);
  const std::uint64_t seed_Q = Rng::derive_seed(spec.seed, 2);
  Rng rng_P(seed_P);
  Rng rng_Q(seed_Q);
  auto source = draw_diagonal_gaussian(Vector::Ones(d), truth.theta_star_P, spec.sigma_y, spec.n_P, rng_P);
  auto target = draw_diagonal_gaussian(q_diag, truth.theta_star_Q, spec.sigma_y, spec.n_Q, rng_Q);
  return SyntheticRegression{std::move(source), std::move(target), std::move(truth)};
}

LabeledDataset sample_regression(const SyntheticTruth& truth, bool from_target, Index n, std::uint64_t seed) {
  const Matrix& sigma = from_target ? truth.sigma_Q : truth.sigma_P;
  if (!sigma.isDiagonal()) throw Error(ErrorCode::invalid_config, "sample_regression expects diagonal covariances");
  Rng rng(seed);
  return draw_diagonal_gaussian(sigma.diagonal(), from_target ? truth.theta_star_Q : truth.theta_star_P,
                                truth.sigma_y, n, rng);
}

// ---------------------------------------------------------------------------
// Synthetic classification

LabeledDataset sample_classification(const Vector& direction, double margin, double pos_ratio, Index n,
                                     std::uint64_t seed) {
  if (!(pos_ratio > 0.0 && pos_ratio <= 1.0)) throw Error(ErrorCode::invalid_config, "positive ratio must lie in (0, 1]");
  if (n < 1) throw Error(ErrorCode::invalid_config, "sample size must be >= 1");
  Rng rng(seed);
  const Index d = direction.size();
  RowMatrix X(n, d);
  Vector y(n);
  for (Index i = 0; i < n; ++i) {
    const double label = rng.bernoulli(pos_ratio) ? 1.0 : -1.0;
    for (Index j = 0; j < d; ++j) X(i, j) = rng.normal();
    X.row(i) += (label * margin) * direction.transpose();
    y(i) = label;
  }
  return LabeledDataset(std::move(X), std::move(y));
}

SyntheticClassification gen_synthetic_classification(const SyntheticClassificationSpec& spec) {
  if (spec.d < 1 || spec.n_P < 1 || spec.n_Q < 1) throw Error(ErrorCode::invalid_config, "sizes must be >= 1");
  for (double r : {spec.pos_ratio_P, spec.pos_ratio_Q}) {
    if (!(r > 0.0 && r <= 1.0)) throw Error(ErrorCode::invalid_config, "positive ratio must lie in (0, 1]");
  }
  if (!(spec.margin >= 0.0)) throw Error(ErrorCode::invalid_config, "margin must be >= 0");
  Rng rng(spec.seed);
  const Vector u = random_unit(spec.d, spec.d, rng);
  auto source = sample_classification(u, spec.margin, spec.pos_ratio_P, spec.n_P, Rng::derive_seed(spec.seed, 1));
  auto target = sample_classification(u, spec.margin, spec.pos_ratio_Q, spec.n_Q, Rng::derive_seed(spec.seed, 2));
  return SyntheticClassification{std::move(source), std::move(target), u};
}

// ---------------------------------------------------------------------------
// Standardization

Standardization Standardization::fit(const RowMatrix& X) {
  Standardization t;
  const double n = static_cast<double>(X.rows());
  for (Index j = 0; j < X.cols(); ++j) {
    const double mean = X.col(j).mean();
    const double var = (X.col(j).array() - mean).square().sum() / n;
    t.mean.push_back(mean);
    t.std.push_back(var > kVarianceFloor ? std::sqrt(var) : 0.0);
  }
  return t;
}

RowMatrix Standardization::apply(const RowMatrix& X) const {
  if (static_cast<std::size_t>(X.cols()) != mean.size()) {
    throw Error(ErrorCode::invalid_data, "standardization width does not match data");
  }
  RowMatrix out(X.rows(), X.cols());
  for (Index j = 0; j < X.cols(); ++j) {
    const auto k = static_cast<std::size_t>(j);
    if (std[k] == 0.0) {
      out.col(j).setZero();
    } else {
      out.col(j) = (X.col(j).array() - mean[k]) / std[k];
    }
  }
  return out;
}

LabeledDataset Standardization::apply(const LabeledDataset& data) const {
  return LabeledDataset(apply(data.X()), data.y());
}

std::string Standardization::to_json() const {
  nlohmann::json j;
  j["mean"] = mean;
  j["std"] = std;
  return j.dump();
}

Standardization Standardization::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    Standardization t;
    t.mean = j.at("mean").get<std::vector<double>>();
    t.std = j.at("std").get<std::vector<double>>();
    if (t.mean.size() != t.std.size()) throw Error(ErrorCode::schema, "mean and std lengths differ");
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::parse, std::string("standardization json: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cell.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cell));
      cell.clear();
    } else {
      cell.push_back(c);
    }
  }
  cells.push_back(std::move(cell));
  return cells;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

double parse_cell(const std::string& raw, std::size_t row, std::size_t col) {
  const std::string cell = trim(raw);
  double value = 0.0;
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  if (!cell.empty() && *begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (cell.empty() || ec != std::errc() || ptr != end || !std::isfinite(value)) {
    throw Error(ErrorCode::parse, "non-numeric cell '" + cell + "' at row " + std::to_string(row) + ", column " +
                                      std::to_string(col));
  }
  return value;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace

CsvDataset load_csv(const std::filesystem::path& path, const std::vector<std::string>& feature_columns,
                    const std::string& label_column, bool standardize) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::schema, "cannot open " + path.string());
  if (feature_columns.empty()) throw Error(ErrorCode::schema, "no feature columns requested");

  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::empty_dataset, path.string() + " has no header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  // Strip a UTF-8 byte-order mark.
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  auto header = split_csv_line(line);
  for (auto& h : header) h = trim(h);

  const auto column_of = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw Error(ErrorCode::schema, "missing column '" + name + "' in " + path.string());
    return static_cast<std::size_t>(it - header.begin());
  };
  std::vector<std::size_t> feature_idx;
  for (const auto& name : feature_columns) feature_idx.push_back(column_of(name));
  const std::size_t label_idx = column_of(label_column);

  std::vector<double> values;
  std::vector<double> labels;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw Error(ErrorCode::parse, "row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                                        " cells, header has " + std::to_string(header.size()));
    }
    for (std::size_t c : feature_idx) values.push_back(parse_cell(cells[c], row, c));
    labels.push_back(parse_cell(cells[label_idx], row, label_idx));
  }
  const auto n = static_cast<Index>(labels.size());
  if (n == 0) throw Error(ErrorCode::empty_dataset, path.string() + " has no data rows");
  const auto d = static_cast<Index>(feature_columns.size());
  RowMatrix X = Eigen::Map<const RowMatrix>(values.data(), n, d);
  Vector y = Eigen::Map<const Vector>(labels.data(), n);

  if (!standardize) return CsvDataset{LabeledDataset(std::move(X), std::move(y)), std::nullopt};
  auto transform = Standardization::fit(X);
  return CsvDataset{LabeledDataset(transform.apply(X), std::move(y)), std::move(transform)};
}

void write_csv(const LabeledDataset& data, const std::filesystem::path& path,
               const std::vector<std::string>& feature_columns, const std::string& label_column) {
  if (static_cast<Index>(feature_columns.size()) != data.dim()) {
    throw Error(ErrorCode::schema, "feature column names do not match dataset width");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::schema, "cannot write " + path.string());
  for (const auto& name : feature_columns) out << quote_if_needed(name) << ',';
  out << quote_if_needed(label_column) << '\n';
  for (Index i = 0; i < data.size(); ++i) {
    for (Index j = 0; j < data.dim(); ++j) out << format_double(data.X()(i, j)) << ',';
    out << format_double(data.y()(i)) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Splitting

std::vector<Index> permutation(Index n, std::uint64_t seed) {
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  Rng rng(seed);
  for (Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Index>(rng.uniform_index(static_cast<std::uint64_t>(i + 1)));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  return perm;
}

std::vector<LabeledDataset> split(const LabeledDataset& data, const std::vector<double>& fractions,
                                  std::uint64_t seed) {
  if (fractions.empty()) throw Error(ErrorCode::invalid_config, "no split fractions");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw Error(ErrorCode::invalid_config, "split fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw Error(ErrorCode::invalid_config, "split fractions must sum to 1");

  const Index n = data.size();
  std::vector<Index> sizes;
  Index assigned = 0;
  for (double f : fractions) {
    sizes.push_back(static_cast<Index>(std::floor(f * static_cast<double>(n))));
    assigned += sizes.back();
  }
  sizes.front() += n - assigned;
  for (Index s : sizes) {
    if (s == 0) throw Error(ErrorCode::degenerate_split, "a split part would be empty");
  }

  const auto perm = permutation(n, seed);
  std::vector<LabeledDataset> parts;
  std::size_t offset = 0;
  for (Index s : sizes) {
    std::vector<Index> rows(perm.begin() + static_cast<std::ptrdiff_t>(offset),
                            perm.begin() + static_cast<std::ptrdiff_t>(offset + static_cast<std::size_t>(s)));
    parts.push_back(data.subset(rows));
    offset += static_cast<std::size_t>(s);
  }
  return parts;
}

}  // namespace mixsgd
