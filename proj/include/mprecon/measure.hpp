#pragma once

// Measure representations shared by every other module: weighted discrete
// point measures and axis-aligned grid densities, plus sampling, moments and
// gaussian smoothing onto a grid.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "error.hpp"
#include "rng.hpp"

namespace mprecon {

using Point = std::vector<double>;

inline constexpr double kMergeTolerance = 1e-12;
inline constexpr double kDiscreteMassTolerance = 1e-12;
inline constexpr double kGridMassTolerance = 1e-9;
inline constexpr double kMinCapturedMass = 0.999;
inline constexpr std::size_t kDefaultCellsPerAxis = 256;
inline constexpr std::size_t kMaxDimension = 4;

// ---------------------------------------------------------------------------
// Sample

// Labeled feature points. `classes`, when present, partitions the indices.
struct Sample {
  std::vector<Point> features;
  std::optional<std::vector<double>> labels;
  std::optional<std::vector<std::vector<std::size_t>>> classes;

  std::size_t size() const noexcept { return features.size(); }
  std::size_t dim() const noexcept { return features.empty() ? 0 : features.front().size(); }
  bool has_labels() const noexcept { return labels.has_value(); }

  void validate() const {
    detail::require(!features.empty(), "sample: features must be nonempty");
    const std::size_t p = dim();
    detail::require(p >= 1, "sample: feature dimension must be >= 1");
    for (const auto& x : features) {
      detail::require(x.size() == p, "sample: dimension mismatch among points");
      for (double v : x) detail::require(std::isfinite(v), "sample: non-finite coordinate");
    }
    if (labels) {
      detail::require(labels->size() == features.size(),
                      "sample: labels must have the same length as features");
      for (double v : *labels) detail::require(std::isfinite(v), "sample: non-finite label");
    }
    if (classes) {
      std::vector<int> seen(features.size(), 0);
      for (const auto& group : *classes) {
        for (std::size_t i : group) {
          detail::require(i < features.size(), "sample: class index out of range");
          detail::require(seen[i] == 0, "sample: classes overlap");
          seen[i] = 1;
        }
      }
      detail::require(std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }),
                      "sample: classes do not cover every index");
    }
  }

  // Points of R^(p+1) with the label appended as the last coordinate.
  std::vector<Point> joint_points() const {
    detail::require(labels.has_value(), "sample: joint points require labels");
    std::vector<Point> out;
    out.reserve(features.size());
    for (std::size_t i = 0; i < features.size(); ++i) {
      Point q = features[i];
      q.push_back((*labels)[i]);
      out.push_back(std::move(q));
    }
    return out;
  }

  // Subsample restricted to the given indices (labels carried along).
  Sample subset(std::span<const std::size_t> idx) const {
    Sample s;
    s.features.reserve(idx.size());
    if (labels) s.labels.emplace();
    for (std::size_t i : idx) {
      s.features.push_back(features.at(i));
      if (labels) s.labels->push_back((*labels)[i]);
    }
    return s;
  }
};

// Partition of indices by distinct label value, in increasing label order.
inline std::vector<std::vector<std::size_t>> classes_from_labels(std::span<const double> labels,
                                                                 std::vector<double>* values = nullptr) {
  std::vector<double> distinct(labels.begin(), labels.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  std::vector<std::vector<std::size_t>> groups(distinct.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto it = std::lower_bound(distinct.begin(), distinct.end(), labels[i]);
    groups[static_cast<std::size_t>(it - distinct.begin())].push_back(i);
  }
  if (values) *values = std::move(distinct);
  return groups;
}

// ---------------------------------------------------------------------------
// Discrete measures

struct DiscreteMeasure {
  std::size_t dim = 0;
  std::vector<double> coords;   // row-major, size() * dim
  std::vector<double> weights;  // probability masses

  std::size_t size() const noexcept { return weights.size(); }
  std::span<const double> point(std::size_t i) const { return {coords.data() + i * dim, dim}; }
  Point point_vec(std::size_t i) const {
    auto s = point(i);
    return {s.begin(), s.end()};
  }

  void validate() const {
    detail::require(dim >= 1, "discrete measure: dimension must be >= 1");
    detail::require(!weights.empty(), "discrete measure: empty support");
    detail::require(coords.size() == weights.size() * dim, "discrete measure: coordinate array size mismatch");
    double total = 0.0;
    for (double w : weights) {
      detail::require(w >= 0.0 && std::isfinite(w), "discrete measure: weights must be nonnegative");
      total += w;
    }
    detail::require(std::abs(total - 1.0) <= 1e3 * kDiscreteMassTolerance,
                    "discrete measure: weights must sum to 1");
    for (double c : coords) detail::require(std::isfinite(c), "discrete measure: non-finite coordinate");
  }
};

// ---------------------------------------------------------------------------
// Grids

struct GridSpec {
  std::vector<double> lo;
  std::vector<double> hi;
  std::vector<std::size_t> cells;

  static GridSpec line(double lo, double hi, std::size_t cells = kDefaultCellsPerAxis) {
    return GridSpec{{lo}, {hi}, {cells}};
  }
  static GridSpec box(std::vector<double> lo, std::vector<double> hi, std::size_t cellsPerAxis = kDefaultCellsPerAxis) {
    std::vector<std::size_t> c(lo.size(), cellsPerAxis);
    return GridSpec{std::move(lo), std::move(hi), std::move(c)};
  }

  std::size_t dim() const noexcept { return cells.size(); }
  double width(std::size_t a) const { return (hi[a] - lo[a]) / static_cast<double>(cells[a]); }
  double center(std::size_t a, std::size_t k) const { return lo[a] + (static_cast<double>(k) + 0.5) * width(a); }
  double edge(std::size_t a, std::size_t k) const { return lo[a] + static_cast<double>(k) * width(a); }

  double cell_volume() const {
    double v = 1.0;
    for (std::size_t a = 0; a < dim(); ++a) v *= width(a);
    return v;
  }
  std::size_t size() const {
    std::size_t n = 1;
    for (auto c : cells) n *= c;
    return n;
  }
  // Stride of axis a in the row-major flat index (last axis fastest).
  std::size_t stride(std::size_t a) const {
    std::size_t s = 1;
    for (std::size_t b = a + 1; b < dim(); ++b) s *= cells[b];
    return s;
  }
  std::vector<std::size_t> unravel(std::size_t flat) const {
    std::vector<std::size_t> k(dim());
    for (std::size_t a = dim(); a-- > 0;) {
      k[a] = flat % cells[a];
      flat /= cells[a];
    }
    return k;
  }
  Point center_of(std::size_t flat) const {
    Point x(dim());
    for (std::size_t a = dim(); a-- > 0;) {
      x[a] = center(a, flat % cells[a]);
      flat /= cells[a];
    }
    return x;
  }
  // Cell index along axis a containing v (half-open cells), or nullopt.
  std::optional<std::size_t> axis_cell(std::size_t a, double v) const {
    if (!(v >= lo[a]) || !(v < hi[a])) return std::nullopt;
    auto k = static_cast<std::size_t>(std::floor((v - lo[a]) / width(a)));
    return std::min(k, cells[a] - 1);
  }
  std::optional<std::size_t> cell_of(std::span<const double> x) const {
    std::size_t flat = 0;
    for (std::size_t a = 0; a < dim(); ++a) {
      auto k = axis_cell(a, x[a]);
      if (!k) return std::nullopt;
      flat = flat * cells[a] + *k;
    }
    return flat;
  }
  double diameter() const {
    double s = 0.0;
    for (std::size_t a = 0; a < dim(); ++a) s += (hi[a] - lo[a]) * (hi[a] - lo[a]);
    return std::sqrt(s);
  }

  void validate() const {
    detail::require(dim() >= 1 && dim() <= kMaxDimension, "grid: dimension must be in [1, 4]");
    detail::require(lo.size() == dim() && hi.size() == dim(), "grid: box and resolution dimensions differ");
    for (std::size_t a = 0; a < dim(); ++a) {
      detail::require(std::isfinite(lo[a]) && std::isfinite(hi[a]) && lo[a] < hi[a], "grid: need lo < hi on every axis");
      detail::require(cells[a] >= 1, "grid: need at least one cell per axis");
    }
  }

  bool same_as(const GridSpec& o, double tol = 1e-12) const {
    if (cells != o.cells) return false;
    for (std::size_t a = 0; a < dim(); ++a) {
      const double scale = std::max(1.0, std::abs(hi[a] - lo[a]));
      if (std::abs(lo[a] - o.lo[a]) > tol * scale || std::abs(hi[a] - o.hi[a]) > tol * scale) return false;
    }
    return true;
  }
};

inline bool operator==(const GridSpec& a, const GridSpec& b) {
  return a.lo == b.lo && a.hi == b.hi && a.cells == b.cells;
}

// Piecewise-constant density: values are mass / cell volume.
struct GridDensity {
  GridSpec grid;
  std::vector<double> values;

  std::size_t dim() const noexcept { return grid.dim(); }
  double cell_mass(std::size_t i) const { return values[i] * grid.cell_volume(); }
  double mass() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s * grid.cell_volume();
  }
  // Density at x (0 outside the box).
  double at(std::span<const double> x) const {
    auto c = grid.cell_of(x);
    return c ? values[*c] : 0.0;
  }

  void validate() const {
    grid.validate();
    detail::require(values.size() == grid.size(), "grid density: value array size mismatch");
    for (double v : values) detail::require(v >= 0.0 && std::isfinite(v), "grid density: values must be nonnegative");
    detail::require(std::abs(mass() - 1.0) <= kGridMassTolerance, "grid density: total mass must be 1");
  }
};

// Builds a density from per-cell masses, normalizing them to total mass 1.
inline GridDensity grid_from_masses(GridSpec spec, std::vector<double> masses) {
  spec.validate();
  detail::require(masses.size() == spec.size(), "grid density: mass array size mismatch");
  const double total = std::accumulate(masses.begin(), masses.end(), 0.0);
  detail::require<DegenerateInput>(total > 0.0 && std::isfinite(total), "grid density: zero total mass");
  const double vol = spec.cell_volume();
  for (double& m : masses) m = m / total / vol;
  return GridDensity{std::move(spec), std::move(masses)};
}

// Midpoint discretization of an (unnormalized) density function.
template <class F>
GridDensity grid_from_function(GridSpec spec, F&& density) {
  spec.validate();
  std::vector<double> m(spec.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double v = density(spec.center_of(i));
    detail::require(v >= 0.0 && std::isfinite(v), "grid density: density function must be nonnegative");
    m[i] = v;
  }
  return grid_from_masses(std::move(spec), std::move(m));
}

// ---------------------------------------------------------------------------
// Measure

// Discrete or grid measure. `joint` marks the last axis as the label axis of
// a measure on R^p x R.
class Measure {
 public:
  Measure(DiscreteMeasure d, bool joint = false) : v_(std::move(d)), joint_(joint) { check_joint(); }
  Measure(GridDensity g, bool joint = false) : v_(std::move(g)), joint_(joint) { check_joint(); }

  bool is_discrete() const noexcept { return std::holds_alternative<DiscreteMeasure>(v_); }
  bool is_grid() const noexcept { return std::holds_alternative<GridDensity>(v_); }
  const DiscreteMeasure& discrete() const {
    detail::require(is_discrete(), "measure: not a discrete measure");
    return std::get<DiscreteMeasure>(v_);
  }
  const GridDensity& grid() const {
    detail::require(is_grid(), "measure: not a grid density");
    return std::get<GridDensity>(v_);
  }
  std::size_t dim() const { return is_discrete() ? discrete().dim : grid().dim(); }
  bool joint() const noexcept { return joint_; }
  std::size_t feature_dim() const { return joint_ ? dim() - 1 : dim(); }
  std::size_t label_axis() const {
    detail::require(joint_, "measure: integrand references the label axis of a feature-only measure");
    return dim() - 1;
  }
  Measure with_joint(bool joint) const {
    Measure m = *this;
    m.joint_ = joint;
    m.check_joint();
    return m;
  }
  void validate() const {
    if (is_discrete()) discrete().validate();
    else grid().validate();
  }
  const std::variant<DiscreteMeasure, GridDensity>& variant() const noexcept { return v_; }

 private:
  void check_joint() const {
    if (joint_) detail::require(dim() >= 2, "measure: a joint measure needs at least one feature axis and a label axis");
  }
  std::variant<DiscreteMeasure, GridDensity> v_;
  bool joint_;
};

// ---------------------------------------------------------------------------
// Flat weighted point view of any measure (grid cells -> centers).

// Atoms with weight <= minWeight are dropped; weights are not renormalized.
inline DiscreteMeasure atoms_of(const Measure& m, double minWeight = 0.0) {
  DiscreteMeasure out;
  if (m.is_discrete()) {
    const auto& d = m.discrete();
    out.dim = d.dim;
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (d.weights[i] <= minWeight) continue;
      auto p = d.point(i);
      out.coords.insert(out.coords.end(), p.begin(), p.end());
      out.weights.push_back(d.weights[i]);
    }
  } else {
    const auto& g = m.grid();
    out.dim = g.dim();
    const double vol = g.grid.cell_volume();
    for (std::size_t i = 0; i < g.values.size(); ++i) {
      const double w = g.values[i] * vol;
      if (w <= minWeight) continue;
      auto c = g.grid.center_of(i);
      out.coords.insert(out.coords.end(), c.begin(), c.end());
      out.weights.push_back(w);
    }
  }
  return out;
}

namespace detail {

inline double sup_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) d = std::max(d, std::abs(a[k] - b[k]));
  return d;
}

// Merges points within kMergeTolerance (sup-norm) of each other. Output keeps
// the order of first occurrence.
inline DiscreteMeasure merge_atoms(std::size_t dim, const std::vector<double>& coords, const std::vector<double>& w) {
  const std::size_t n = w.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto pt = [&](std::size_t i) { return std::span<const double>(coords.data() + i * dim, dim); };
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    auto pa = pt(a), pb = pt(b);
    if (std::lexicographical_compare(pa.begin(), pa.end(), pb.begin(), pb.end())) return true;
    if (std::lexicographical_compare(pb.begin(), pb.end(), pa.begin(), pa.end())) return false;
    return a < b;
  });
  // Points within tolerance share the representative of the earliest one;
  // candidates are found by scanning back along the first coordinate.
  std::vector<std::size_t> rep(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i = order[k];
    rep[i] = i;
    for (std::size_t j = k; j-- > 0;) {
      const std::size_t q = order[j];
      if (pt(i)[0] - pt(q)[0] > kMergeTolerance) break;
      if (sup_distance(pt(i), pt(q)) <= kMergeTolerance) {
        rep[i] = rep[q];
        break;
      }
    }
  }
  // Representative = smallest index in its group, so output order follows first occurrence.
  std::vector<std::size_t> groupMin(n, SIZE_MAX);
  for (std::size_t i = 0; i < n; ++i) groupMin[rep[i]] = std::min(groupMin[rep[i]], i);
  for (std::size_t i = 0; i < n; ++i) rep[i] = groupMin[rep[i]];
  DiscreteMeasure out;
  out.dim = dim;
  std::vector<std::size_t> slot(n, SIZE_MAX);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = rep[i];
    if (slot[r] == SIZE_MAX) {
      slot[r] = out.weights.size();
      auto p = pt(r);
      out.coords.insert(out.coords.end(), p.begin(), p.end());
      out.weights.push_back(0.0);
    }
    out.weights[slot[r]] += w[i];
  }
  return out;
}

}  // namespace detail

// Discrete measure from points; uniform weights when none are given.
// Coincident points are merged with summed weight.
inline DiscreteMeasure make_discrete_measure(const std::vector<Point>& points,
                                             const std::optional<std::vector<double>>& weights = std::nullopt) {
  detail::require(!points.empty(), "make_discrete: empty point list");
  const std::size_t p = points.front().size();
  detail::require(p >= 1, "make_discrete: points must have dimension >= 1");
  std::vector<double> coords;
  coords.reserve(points.size() * p);
  for (const auto& x : points) {
    detail::require(x.size() == p, "make_discrete: dimension mismatch among points");
    for (double v : x) detail::require(std::isfinite(v), "make_discrete: non-finite coordinate");
    coords.insert(coords.end(), x.begin(), x.end());
  }
  std::vector<double> w;
  if (weights) {
    detail::require(weights->size() == points.size(), "make_discrete: weights and points differ in length");
    w = *weights;
    for (double v : w) detail::require(v >= 0.0 && std::isfinite(v), "make_discrete: weights must be nonnegative");
  } else {
    w.assign(points.size(), 1.0);
  }
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  detail::require(total > 0.0, "make_discrete: all weights are zero");
  for (double& v : w) v /= total;
  return detail::merge_atoms(p, coords, w);
}

inline Measure make_discrete(const std::vector<Point>& points,
                             const std::optional<std::vector<double>>& weights = std::nullopt, bool joint = false) {
  return Measure(make_discrete_measure(points, weights), joint);
}

inline Measure dirac(Point x) { return make_discrete({std::move(x)}); }

// ---------------------------------------------------------------------------
// Sampling

namespace detail {

inline std::size_t draw_categorical(Rng& rng, const std::vector<double>& cumulative) {
  const double u = rng.uniform() * cumulative.back();
  auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  if (it == cumulative.end()) --it;
  return static_cast<std::size_t>(it - cumulative.begin());
}

}  // namespace detail

// n i.i.d. draws. For joint measures the last coordinate becomes the label.
inline Sample sample_from(const Measure& m, std::size_t n, RandomSeed seed) {
  detail::require(n >= 1, "sample_from: n must be >= 1");
  Rng rng(seed);
  const std::size_t p = m.dim();
  std::vector<Point> pts;
  pts.reserve(n);
  if (m.is_discrete()) {
    const auto& d = m.discrete();
    std::vector<double> cum(d.size());
    std::partial_sum(d.weights.begin(), d.weights.end(), cum.begin());
    for (std::size_t i = 0; i < n; ++i) pts.push_back(d.point_vec(detail::draw_categorical(rng, cum)));
  } else {
    const auto& g = m.grid();
    std::vector<double> cum(g.values.size());
    std::partial_sum(g.values.begin(), g.values.end(), cum.begin());
    for (std::size_t i = 0; i < n; ++i) {
      const auto k = g.grid.unravel(detail::draw_categorical(rng, cum));
      Point x(p);
      for (std::size_t a = 0; a < p; ++a) x[a] = g.grid.edge(a, k[a]) + rng.uniform() * g.grid.width(a);
      pts.push_back(std::move(x));
    }
  }
  Sample s;
  if (m.joint()) {
    s.labels.emplace();
    s.labels->reserve(n);
    for (auto& x : pts) {
      s.labels->push_back(x.back());
      x.pop_back();
    }
  }
  s.features = std::move(pts);
  return s;
}

// ---------------------------------------------------------------------------
// Moments

struct Integrand {
  enum class Kind { One, X, X2, Y, Y2, XY, Custom };
  Kind kind = Kind::One;
  std::size_t axis = 0;  // feature axis used by X, X2 and XY
  std::function<double(std::span<const double>)> custom;

  static Integrand one() { return {Kind::One}; }
  static Integrand x(std::size_t axis = 0) { return {Kind::X, axis}; }
  static Integrand x2(std::size_t axis = 0) { return {Kind::X2, axis}; }
  static Integrand y() { return {Kind::Y}; }
  static Integrand y2() { return {Kind::Y2}; }
  static Integrand xy(std::size_t axis = 0) { return {Kind::XY, axis}; }
  static Integrand of(std::function<double(std::span<const double>)> g) { return {Kind::Custom, 0, std::move(g)}; }
};

inline double moment(const Measure& m, const Integrand& g) {
  using K = Integrand::Kind;
  const bool needsLabel = g.kind == K::Y || g.kind == K::Y2 || g.kind == K::XY;
  const std::size_t ya = needsLabel ? m.label_axis() : 0;
  if (g.kind == K::X || g.kind == K::X2 || g.kind == K::XY)
    detail::require(g.axis < m.feature_dim(), "moment: feature axis out of range");
  auto eval = [&](std::span<const double> z) -> double {
    switch (g.kind) {
      case K::One: return 1.0;
      case K::X: return z[g.axis];
      case K::X2: return z[g.axis] * z[g.axis];
      case K::Y: return z[ya];
      case K::Y2: return z[ya] * z[ya];
      case K::XY: return z[g.axis] * z[ya];
      case K::Custom: return g.custom(z);
    }
    return 0.0;
  };
  double s = 0.0;
  if (m.is_discrete()) {
    const auto& d = m.discrete();
    for (std::size_t i = 0; i < d.size(); ++i) s += d.weights[i] * eval(d.point(i));
  } else {
    const auto& gd = m.grid();
    const double vol = gd.grid.cell_volume();
    for (std::size_t i = 0; i < gd.values.size(); ++i) {
      if (gd.values[i] == 0.0) continue;
      s += gd.values[i] * vol * eval(gd.grid.center_of(i));
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Separable accumulation onto grids (shared by smoothing and KDE).

namespace detail {

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Mass of a 1-D factor over a contiguous run of cells along one axis.
struct AxisWindow {
  std::size_t first = 0;
  std::vector<double> mass;
};

// Cell masses of N(x, sigma^2) along axis a, truncated at 10 sigma.
inline AxisWindow gaussian_axis_window(const GridSpec& g, std::size_t a, double x, double sigma) {
  AxisWindow w;
  const double r = 10.0 * sigma;
  const double wa = g.width(a);
  const double fLo = std::floor((x - r - g.lo[a]) / wa);
  const double fHi = std::ceil((x + r - g.lo[a]) / wa);
  const auto n = static_cast<double>(g.cells[a]);
  const double kLo = std::clamp(fLo, 0.0, n);
  const double kHi = std::clamp(fHi, 0.0, n);
  if (kHi <= kLo) return w;
  w.first = static_cast<std::size_t>(kLo);
  const auto last = static_cast<std::size_t>(kHi);
  w.mass.reserve(last - w.first);
  double prev = normal_cdf((g.edge(a, w.first) - x) / sigma);
  for (std::size_t k = w.first; k < last; ++k) {
    const double next = normal_cdf((g.edge(a, k + 1) - x) / sigma);
    w.mass.push_back(std::max(0.0, next - prev));
    prev = next;
  }
  return w;
}

// Unit mass in the cell containing x along axis a (empty if outside).
inline AxisWindow point_axis_window(const GridSpec& g, std::size_t a, double x) {
  AxisWindow w;
  if (auto k = g.axis_cell(a, x)) {
    w.first = *k;
    w.mass = {1.0};
  }
  return w;
}

// masses[cell] += weight * prod_a window[a][k_a]. Returns the added mass.
inline double accumulate_separable(const GridSpec& g, std::vector<double>& masses, double weight,
                                   const std::vector<AxisWindow>& win) {
  const std::size_t p = g.dim();
  for (const auto& w : win)
    if (w.mass.empty()) return 0.0;
  double added = 0.0;
  std::vector<std::size_t> strides(p);
  for (std::size_t a = 0; a < p; ++a) strides[a] = g.stride(a);
  // Recursive outer product over axes.
  auto rec = [&](auto&& self, std::size_t a, std::size_t base, double factor) -> void {
    const auto& w = win[a];
    if (a + 1 == p) {
      for (std::size_t k = 0; k < w.mass.size(); ++k) {
        const double v = factor * w.mass[k];
        masses[base + (w.first + k) * strides[a]] += v;
        added += v;
      }
      return;
    }
    for (std::size_t k = 0; k < w.mass.size(); ++k) {
      const double f = factor * w.mass[k];
      if (f == 0.0) continue;
      self(self, a + 1, base + (w.first + k) * strides[a], f);
    }
  };
  rec(rec, 0, 0, weight);
  return added;
}

}  // namespace detail

// mu * N(0, sigma^2 I) discretized onto `target` by exact per-cell gaussian
// integrals, renormalized on the box. Axes with blurAxes[a] == false are not
// smoothed (atoms fall into their containing cell), which lets a joint measure
// be blurred along features only.
inline GridDensity gaussian_convolve(const DiscreteMeasure& m, double sigma, const GridSpec& target,
                                     std::vector<bool> blurAxes = {}) {
  m.validate();
  target.validate();
  detail::require(sigma > 0.0 && std::isfinite(sigma), "gaussian_convolve: sigma must be > 0");
  detail::require(target.dim() == m.dim, "gaussian_convolve: grid and measure dimensions differ");
  if (blurAxes.empty()) blurAxes.assign(m.dim, true);
  detail::require(blurAxes.size() == m.dim, "gaussian_convolve: blur axis mask has wrong size");
  std::vector<double> masses(target.size(), 0.0);
  double captured = 0.0;
  std::vector<detail::AxisWindow> win(m.dim);
  for (std::size_t i = 0; i < m.size(); ++i) {
    auto x = m.point(i);
    for (std::size_t a = 0; a < m.dim; ++a)
      win[a] = blurAxes[a] ? detail::gaussian_axis_window(target, a, x[a], sigma)
                           : detail::point_axis_window(target, a, x[a]);
    captured += detail::accumulate_separable(target, masses, m.weights[i], win);
  }
  if (captured < kMinCapturedMass)
    throw GridCoverageError("gaussian_convolve: grid box too small (captured mass " + std::to_string(captured) + ")",
                            captured);
  return grid_from_masses(target, std::move(masses));
}

inline Measure gaussian_convolve(const Measure& m, double sigma, const GridSpec& target,
                                 std::vector<bool> blurAxes = {}) {
  return Measure(gaussian_convolve(m.discrete(), sigma, target, std::move(blurAxes)), m.joint());
}

// ---------------------------------------------------------------------------
// Measure-level transforms

// Image of m under x_axis -> scale * x_axis + shift (scale > 0).
inline Measure affine_axis(const Measure& m, std::size_t axis, double scale, double shift) {
  detail::require(axis < m.dim(), "affine_axis: axis out of range");
  detail::require(scale > 0.0 && std::isfinite(scale) && std::isfinite(shift), "affine_axis: need finite scale > 0");
  if (m.is_discrete()) {
    DiscreteMeasure d = m.discrete();
    for (std::size_t i = 0; i < d.size(); ++i) d.coords[i * d.dim + axis] = scale * d.coords[i * d.dim + axis] + shift;
    return Measure(std::move(d), m.joint());
  }
  GridDensity g = m.grid();
  g.grid.lo[axis] = scale * g.grid.lo[axis] + shift;
  g.grid.hi[axis] = scale * g.grid.hi[axis] + shift;
  for (double& v : g.values) v /= scale;
  return Measure(std::move(g), m.joint());
}

// (1 - t) a + t b. Grid measures must share the same grid.
inline Measure mixture(const Measure& a, const Measure& b, double t) {
  detail::require(t >= 0.0 && t <= 1.0, "mixture: t must be in [0, 1]");
  detail::require(a.dim() == b.dim(), "mixture: dimension mismatch");
  if (a.is_discrete() && b.is_discrete()) {
    const auto& da = a.discrete();
    const auto& db = b.discrete();
    std::vector<double> coords = da.coords;
    coords.insert(coords.end(), db.coords.begin(), db.coords.end());
    std::vector<double> w;
    for (double v : da.weights) w.push_back((1.0 - t) * v);
    for (double v : db.weights) w.push_back(t * v);
    return Measure(detail::merge_atoms(da.dim, coords, w), a.joint());
  }
  detail::require(a.is_grid() && b.is_grid(), "mixture: cannot mix a discrete and a grid measure");
  detail::require(a.grid().grid.same_as(b.grid().grid), "mixture: grid measures must share a grid");
  GridDensity g = a.grid();
  for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] = (1.0 - t) * g.values[i] + t * b.grid().values[i];
  return Measure(std::move(g), a.joint());
}

// Density of g evaluated at the centers of `spec` (0 outside g's box),
// renormalized to mass 1.
inline GridDensity resample(const GridDensity& g, const GridSpec& spec) {
  std::vector<double> m(spec.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = g.at(spec.center_of(i));
  return grid_from_masses(spec, std::move(m));
}

}  // namespace mprecon
