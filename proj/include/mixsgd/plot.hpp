#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mixsgd/experiment.hpp"

namespace mixsgd {

struct PlotPoint {
  double x = 0.0;
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;
};

struct PlotSeries {
  std::string method;
  std::vector<PlotPoint> points;  // sorted by x
};

/// Per-method mean and unbiased std of `metric` at each sweep value. Methods
/// keep their first-appearance order. Throws schema for an unknown metric.
std::vector<PlotSeries> summarize_metric(const std::vector<ResultRow>& rows, const std::string& metric);

/// Deterministic SVG 1.1 line plot. The data panel is a nested <svg> whose
/// viewBox spans the data range padded by 5% on each side (y flipped).
std::string render_plot_svg(const std::vector<ResultRow>& rows, const std::string& metric);

void emit_plot(const std::vector<ResultRow>& rows, const std::string& metric, const std::filesystem::path& path);

}  // namespace mixsgd
