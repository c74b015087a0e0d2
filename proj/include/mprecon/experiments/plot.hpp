#pragma once

// SVG line plots of record tables: the first column is the x axis, every
// other column is a series. Tables whose x column is "n" use a log x axis.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "record.hpp"

namespace mprecon::experiments {

struct PlotStyle {
  int width = 640;
  int height = 420;
  int left = 80, right = 170, top = 40, bottom = 60;
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
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

inline const char* series_color(std::size_t k) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
  return colors[k % 8];
}

struct Axis {
  bool log = false;
  double lo = 0.0, hi = 1.0;

  double t(double v) const { return log ? (std::log10(v) - lo) / (hi - lo) : (v - lo) / (hi - lo); }
};

inline Axis make_axis(const std::vector<double>& vals, bool log) {
  Axis a;
  a.log = log;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : vals) {
    if (!std::isfinite(v) || (log && v <= 0.0)) continue;
    const double u = log ? std::log10(v) : v;
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
  if (hi - lo < 1e-12) {
    lo -= 0.5;
    hi += 0.5;
  } else if (!log) {
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
  }
  a.lo = lo;
  a.hi = hi;
  return a;
}

inline std::vector<double> axis_ticks(const Axis& a) {
  std::vector<double> ticks;
  if (a.log) {
    for (double e = std::ceil(a.lo); e <= a.hi + 1e-9; e += 1.0) ticks.push_back(std::pow(10.0, e));
    if (ticks.size() < 2) ticks = {std::pow(10.0, a.lo), std::pow(10.0, a.hi)};
    return ticks;
  }
  const double span = a.hi - a.lo;
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  for (double v = std::ceil(a.lo / step) * step; v <= a.hi + 1e-12 * span; v += step)
    ticks.push_back(std::abs(v) < 1e-12 * span ? 0.0 : v);
  return ticks;
}

}  // namespace detail

// Log y is used when every value is positive and they span more than two decades.
inline std::string table_to_svg(const std::string& title, const Table& t, const PlotStyle& st = {}) {
  mprecon::detail::require(t.columns.size() >= 2, "plot: table '" + title + "' needs an x column and at least one series");
  mprecon::detail::require(!t.rows.empty(), "plot: table '" + title + "' has no rows");
  const auto xs = t.column(0);
  std::vector<double> ys;
  for (std::size_t c = 1; c < t.columns.size(); ++c) {
    const auto col = t.column(c);
    ys.insert(ys.end(), col.begin(), col.end());
  }
  const bool logX = t.columns[0] == "n";
  bool logY = true;
  double ymin = std::numeric_limits<double>::infinity(), ymax = 0.0;
  for (double v : ys) {
    if (!std::isfinite(v)) continue;
    if (v <= 0.0) logY = false;
    ymin = std::min(ymin, v);
    ymax = std::max(ymax, v);
  }
  logY = logY && std::isfinite(ymin) && ymax / ymin > 100.0;
  const auto ax = detail::make_axis(xs, logX), ay = detail::make_axis(ys, logY);

  const double pw = st.width - st.left - st.right, ph = st.height - st.top - st.bottom;
  auto px = [&](double v) { return st.left + ax.t(v) * pw; };
  auto py = [&](double v) { return st.top + (1.0 - ay.t(v)) * ph; };

  std::string s = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n",
      st.width, st.height, st.width, st.height);
  s += fmt::format("<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n", st.width, st.height);
  s += fmt::format("<text x=\"{:.1f}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
                   st.left + pw / 2.0, detail::xml_escape(title));
  s += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{:.1f}\" height=\"{:.1f}\" fill=\"none\" stroke=\"black\"/>\n", st.left,
                   st.top, pw, ph);

  for (double v : detail::axis_ticks(ax)) {
    const double x = px(v);
    s += fmt::format("<line x1=\"{0:.1f}\" y1=\"{1:.1f}\" x2=\"{0:.1f}\" y2=\"{2:.1f}\" stroke=\"#ccc\"/>\n", x,
                     static_cast<double>(st.top), st.top + ph);
    s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{:.3g}</text>\n", x, st.top + ph + 16.0, v);
  }
  for (double v : detail::axis_ticks(ay)) {
    const double y = py(v);
    s += fmt::format("<line x1=\"{0:.1f}\" y1=\"{1:.1f}\" x2=\"{2:.1f}\" y2=\"{1:.1f}\" stroke=\"#ccc\"/>\n",
                     static_cast<double>(st.left), y, st.left + pw);
    s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"end\">{:.3g}</text>\n", st.left - 6.0, y + 4.0, v);
  }
  const std::string xLabel = t.columns[0] + (logX ? " (log scale)" : "");
  const std::string yLabel = t.columns.size() == 2 ? t.columns[1] : std::string("value");
  s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{}</text>\n", st.left + pw / 2.0,
                   st.top + ph + 40.0, detail::xml_escape(xLabel));
  s += fmt::format(
      "<text x=\"18\" y=\"{0:.1f}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {0:.1f})\">{1}</text>\n",
      st.top + ph / 2.0, detail::xml_escape(yLabel + (logY ? " (log scale)" : "")));

  for (std::size_t c = 1; c < t.columns.size(); ++c) {
    std::string pts;
    for (const auto& r : t.rows) {
      if (!std::isfinite(r[0]) || !std::isfinite(r[c]) || (logX && r[0] <= 0.0) || (logY && r[c] <= 0.0)) continue;
      pts += fmt::format("{}{:.2f},{:.2f}", pts.empty() ? "" : " ", px(r[0]), py(r[c]));
    }
    const char* color = detail::series_color(c - 1);
    s += fmt::format("<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>\n", pts, color);
    const double ly = st.top + 14.0 + 18.0 * static_cast<double>(c - 1);
    const double lx = st.left + pw + 12.0;
    s += fmt::format("<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"{}\" stroke-width=\"2\"/>\n", lx,
                     ly, lx + 20.0, ly, color);
    s += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\">{}</text>\n", lx + 26.0, ly + 4.0,
                     detail::xml_escape(t.columns[c]));
  }
  s += "</svg>\n";
  return s;
}

// One SVG per table, keyed by file name.
inline std::vector<std::pair<std::string, std::string>> emit_plots(const ResultRecord& r, const PlotStyle& st = {}) {
  mprecon::detail::require(!r.tables.empty(), "emit_plots: record '" + r.scenario + "' has no tables");
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [name, t] : r.tables) out.emplace_back(name + ".svg", table_to_svg(r.scenario + ": " + name, t, st));
  return out;
}

inline void add_plot_files(FileBatch& batch, const ResultRecord& r, const std::filesystem::path& dir) {
  for (auto& [file, svg] : emit_plots(r)) batch.add(dir / file, std::move(svg));
}

}  // namespace mprecon::experiments
