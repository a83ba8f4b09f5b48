#include "mixsgd/plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "mixsgd/errors.hpp"
#include "mixsgd/eval.hpp"

namespace mixsgd {

namespace {

constexpr double kWidth = 720.0;
constexpr double kHeight = 440.0;
constexpr double kLeft = 80.0;
constexpr double kRight = 160.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 60.0;
constexpr double kPad = 0.05;

constexpr std::array<const char*, 8> kColors{"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                             "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Range {
  double lo;
  double hi;
};

Range padded(double lo, double hi) {
  double span = hi - lo;
  if (!(span > 0.0)) {
    // Degenerate range: widen around the single value.
    span = std::max(std::abs(lo), 1.0);
    lo -= 0.5 * span;
    hi += 0.5 * span;
    span = hi - lo;
  }
  return {lo - kPad * span, hi + kPad * span};
}

}  // namespace

std::vector<PlotSeries> summarize_metric(const std::vector<ResultRow>& rows, const std::string& metric) {
  std::vector<std::string> order;
  std::map<std::string, std::map<double, std::vector<double>>> groups;
  for (const auto& r : rows) {
    if (r.metric != metric) continue;
    if (!groups.count(r.method)) order.push_back(r.method);
    groups[r.method][r.sweep_value].push_back(r.value);
  }
  if (order.empty()) throw Error(ErrorCode::schema, "unknown metric '" + metric + "'");
  std::vector<PlotSeries> out;
  for (const auto& method : order) {
    PlotSeries s{method, {}};
    for (const auto& [x, values] : groups[method]) {
      const auto t = aggregate_trials(values);
      s.points.push_back({x, t.mean, t.std, t.count});
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::string render_plot_svg(const std::vector<ResultRow>& rows, const std::string& metric) {
  const auto series = summarize_metric(rows, metric);
  std::string sweep_var;
  for (const auto& r : rows) {
    if (r.metric == metric) {
      sweep_var = r.sweep_var;
      break;
    }
  }

  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& s : series) {
    for (const auto& p : s.points) {
      xmin = std::min(xmin, p.x);
      xmax = std::max(xmax, p.x);
      ymin = std::min(ymin, p.mean - p.std);
      ymax = std::max(ymax, p.mean + p.std);
    }
  }
  const Range xr = padded(xmin, xmax);
  const Range yr = padded(ymin, ymax);
  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  const auto px = [&](double x) { return kLeft + (x - xr.lo) / (xr.hi - xr.lo) * pw; };
  const auto py = [&](double y) { return kTop + (yr.hi - y) / (yr.hi - yr.lo) * ph; };

  std::ostringstream o;
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << num(kWidth) << "\" height=\""
    << num(kHeight) << "\" viewBox=\"0 0 " << num(kWidth) << ' ' << num(kHeight) << "\">\n"
    << "<rect x=\"0\" y=\"0\" width=\"" << num(kWidth) << "\" height=\"" << num(kHeight) << "\" fill=\"white\"/>\n"
    << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"15\">"
    << escape(metric) << "</text>\n";

  // Axes with five ticks each.
  o << "<g stroke=\"black\" stroke-width=\"1\" fill=\"none\">\n"
    << "<rect x=\"" << num(kLeft) << "\" y=\"" << num(kTop) << "\" width=\"" << num(pw) << "\" height=\"" << num(ph)
    << "\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = xr.lo + (xr.hi - xr.lo) * i / 4.0;
    const double yv = yr.lo + (yr.hi - yr.lo) * i / 4.0;
    o << "<line x1=\"" << num(px(xv)) << "\" y1=\"" << num(kTop + ph) << "\" x2=\"" << num(px(xv)) << "\" y2=\""
      << num(kTop + ph + 5) << "\"/>\n";
    o << "<line x1=\"" << num(kLeft - 5) << "\" y1=\"" << num(py(yv)) << "\" x2=\"" << num(kLeft) << "\" y2=\""
      << num(py(yv)) << "\"/>\n";
  }
  o << "</g>\n<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = xr.lo + (xr.hi - xr.lo) * i / 4.0;
    const double yv = yr.lo + (yr.hi - yr.lo) * i / 4.0;
    o << "<text x=\"" << num(px(xv)) << "\" y=\"" << num(kTop + ph + 18) << "\" text-anchor=\"middle\">" << num(xv)
      << "</text>\n";
    o << "<text x=\"" << num(kLeft - 8) << "\" y=\"" << num(py(yv) + 4) << "\" text-anchor=\"end\">" << num(yv)
      << "</text>\n";
  }
  o << "<text x=\"" << num(kLeft + pw / 2) << "\" y=\"" << num(kHeight - 14)
    << "\" text-anchor=\"middle\" font-size=\"13\">" << escape(sweep_var) << "</text>\n</g>\n";

  // Data panel in data coordinates; y is flipped by the group transform.
  o << "<svg x=\"" << num(kLeft) << "\" y=\"" << num(kTop) << "\" width=\"" << num(pw) << "\" height=\"" << num(ph)
    << "\" viewBox=\"" << num(xr.lo) << ' ' << num(-yr.hi) << ' ' << num(xr.hi - xr.lo) << ' '
    << num(yr.hi - yr.lo) << "\" preserveAspectRatio=\"none\">\n"
    << "<g transform=\"scale(1,-1)\">\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kColors[k % kColors.size()];
    o << "<g class=\"series\" data-method=\"" << escape(s.method) << "\">\n";
    if (s.points.size() > 1) {
      o << "<path class=\"band\" fill=\"" << color << "\" fill-opacity=\"0.18\" stroke=\"none\" d=\"";
      for (std::size_t i = 0; i < s.points.size(); ++i) {
        o << (i == 0 ? "M" : " L") << num(s.points[i].x) << ',' << num(s.points[i].mean + s.points[i].std);
      }
      for (std::size_t i = s.points.size(); i-- > 0;) {
        o << " L" << num(s.points[i].x) << ',' << num(s.points[i].mean - s.points[i].std);
      }
      o << " Z\"/>\n";
      o << "<path class=\"line\" fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"2\" vector-effect=\"non-scaling-stroke\" d=\"";
      for (std::size_t i = 0; i < s.points.size(); ++i) {
        o << (i == 0 ? "M" : " L") << num(s.points[i].x) << ',' << num(s.points[i].mean);
      }
      o << "\"/>\n";
    }
    for (const auto& p : s.points) {
      // A zero-length segment with round caps renders as an undistorted dot.
      o << "<path class=\"marker\" stroke=\"" << color
        << "\" stroke-width=\"7\" stroke-linecap=\"round\" vector-effect=\"non-scaling-stroke\" d=\"M"
        << num(p.x) << ',' << num(p.mean) << " l0,0\"/>\n";
    }
    o << "</g>\n";
  }
  o << "</g>\n</svg>\n";

  // Legend.
  o << "<g font-family=\"sans-serif\" font-size=\"12\">\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const double y = kTop + 14 + 20.0 * static_cast<double>(k);
    const double x = kLeft + pw + 16;
    o << "<line x1=\"" << num(x) << "\" y1=\"" << num(y) << "\" x2=\"" << num(x + 22) << "\" y2=\"" << num(y)
      << "\" stroke=\"" << kColors[k % kColors.size()] << "\" stroke-width=\"3\"/>\n"
      << "<text x=\"" << num(x + 28) << "\" y=\"" << num(y + 4) << "\">" << escape(series[k].method) << "</text>\n";
  }
  o << "</g>\n</svg>\n";
  return o.str();
}

void emit_plot(const std::vector<ResultRow>& rows, const std::string& metric, const std::filesystem::path& path) {
  const std::string svg = render_plot_svg(rows, metric);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::invalid_config, "cannot write " + path.string());
  out << svg;
}

}  // namespace mixsgd
