#pragma once

// Pre-conditioned replacements for the empirical measure of a sample.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "error.hpp"
#include "kernel.hpp"
#include "measure.hpp"
#include "metrics.hpp"
#include "transport.hpp"

namespace mprecon {

namespace detail {

// Sample points in a space of dimension `dim`: the features, or the features
// with the label appended when dim is one more than the feature dimension.
inline std::vector<Point> points_in(const Sample& s, std::size_t dim) {
  if (dim == s.dim()) return s.features;
  detail::require(dim == s.dim() + 1 && s.has_labels(),
                  "sample dimension does not match the target space (expected " + std::to_string(dim) + ")");
  return s.joint_points();
}

inline bool is_joint_space(const Sample& s, std::size_t dim) { return dim == s.dim() + 1; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Empirical and histogram

// Weight 1/n per draw; labeled samples give the joint empirical measure.
inline Measure build_empirical(const Sample& s) {
  s.validate();
  if (s.has_labels()) return make_discrete(s.joint_points(), std::nullopt, true);
  return make_discrete(s.features);
}

// Piecewise-constant density (count / n) / volume on the cells of `bins`.
inline Measure build_histogram(const Sample& s, const GridSpec& bins) {
  s.validate();
  bins.validate();
  const auto pts = detail::points_in(s, bins.dim());
  std::vector<double> counts(bins.size(), 0.0);
  for (const auto& x : pts) {
    auto c = bins.cell_of(x);
    detail::require(c.has_value(), "build_histogram: sample point outside all bins");
    counts[*c] += 1.0;
  }
  const double n = static_cast<double>(pts.size());
  const double vol = bins.cell_volume();
  for (double& v : counts) v = v / n / vol;
  GridDensity g{bins, std::move(counts)};
  return Measure(std::move(g), detail::is_joint_space(s, bins.dim()));
}

// ---------------------------------------------------------------------------
// Kernel density estimate

// (1 / (n H^p)) sum_i K((x - X_i) / H) integrated exactly over each cell,
// renormalized on the box. Axes with smoothAxes[a] == false are not smoothed.
inline Measure build_kde(const Sample& s, const Kernel& k, const BandwidthRule& bw, const GridSpec& grid,
                         std::vector<bool> smoothAxes = {}) {
  s.validate();
  grid.validate();
  const auto pts = detail::points_in(s, grid.dim());
  const double h = bw.at(pts.size());
  if (smoothAxes.empty()) smoothAxes.assign(grid.dim(), true);
  detail::require(smoothAxes.size() == grid.dim(), "build_kde: smoothing mask has wrong size");
  std::vector<double> masses(grid.size(), 0.0);
  std::vector<detail::AxisWindow> win(grid.dim());
  const double w = 1.0 / static_cast<double>(pts.size());
  double captured = 0.0;
  for (const auto& x : pts) {
    for (std::size_t a = 0; a < grid.dim(); ++a)
      win[a] = smoothAxes[a] ? detail::kernel_axis_window(grid, a, x[a], h, k) : detail::point_axis_window(grid, a, x[a]);
    captured += detail::accumulate_separable(grid, masses, w, win);
  }
  if (captured < kMinCapturedMass)
    throw GridCoverageError("build_kde: grid box too small (captured mass " + std::to_string(captured) + ")", captured);
  return Measure(grid_from_masses(grid, std::move(masses)), detail::is_joint_space(s, grid.dim()));
}

// ---------------------------------------------------------------------------
// Uniform measure on the convex hull

namespace detail {

struct Vec2 {
  double x, y;
};

inline double cross(const Vec2& o, const Vec2& a, const Vec2& b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

// Andrew's monotone chain; counter-clockwise, no repeated endpoint.
inline std::vector<Vec2> convex_hull(std::vector<Vec2> p) {
  std::sort(p.begin(), p.end(), [](const Vec2& a, const Vec2& b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  p.erase(std::unique(p.begin(), p.end(), [](const Vec2& a, const Vec2& b) { return a.x == b.x && a.y == b.y; }), p.end());
  if (p.size() < 3) return p;
  std::vector<Vec2> h(2 * p.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    while (k >= 2 && cross(h[k - 2], h[k - 1], p[i]) <= 0.0) --k;
    h[k++] = p[i];
  }
  for (std::size_t i = p.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(h[k - 2], h[k - 1], p[i]) <= 0.0) --k;
    h[k++] = p[i];
  }
  h.resize(k - 1);
  return h;
}

inline double polygon_area(const std::vector<Vec2>& h) {
  double a = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const auto& p = h[i];
    const auto& q = h[(i + 1) % h.size()];
    a += p.x * q.y - q.x * p.y;
  }
  return 0.5 * a;
}

inline bool inside_convex(const std::vector<Vec2>& h, const Vec2& q) {
  for (std::size_t i = 0; i < h.size(); ++i)
    if (cross(h[i], h[(i + 1) % h.size()], q) < 0.0) return false;
  return true;
}

}  // namespace detail

// Density 1/Leb(hull) inside the hull, 0 outside; cells crossed by the
// boundary get the fraction of 16 sub-sample points falling inside. The
// default grid is the bounding box with kDefaultCellsPerAxis cells per axis.
inline Measure build_convex_hull_uniform(const Sample& s, std::optional<GridSpec> grid = std::nullopt) {
  s.validate();
  const std::size_t p = s.dim();
  detail::require(p == 1 || p == 2, "build_convex_hull_uniform: dimension must be 1 or 2");
  std::vector<double> lo(p, std::numeric_limits<double>::infinity()), hi(p, -std::numeric_limits<double>::infinity());
  for (const auto& x : s.features) {
    for (std::size_t a = 0; a < p; ++a) {
      lo[a] = std::min(lo[a], x[a]);
      hi[a] = std::max(hi[a], x[a]);
    }
  }
  if (p == 1) {
    detail::require<DegenerateInput>(hi[0] > lo[0], "build_convex_hull_uniform: degenerate hull (all points equal)");
    const GridSpec g = grid ? *grid : GridSpec::line(lo[0], hi[0]);
    g.validate();
    std::vector<double> m(g.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      // Exact overlap of the cell with [lo, hi].
      const double a = std::max(g.edge(0, i), lo[0]), b = std::min(g.edge(0, i + 1), hi[0]);
      m[i] = std::max(0.0, b - a);
    }
    return Measure(grid_from_masses(g, std::move(m)));
  }
  std::vector<detail::Vec2> pts;
  for (const auto& x : s.features) pts.push_back({x[0], x[1]});
  const auto hull = detail::convex_hull(pts);
  const double area = hull.size() >= 3 ? detail::polygon_area(hull) : 0.0;
  const double scale = std::max((hi[0] - lo[0]) * (hi[1] - lo[1]), std::numeric_limits<double>::min());
  detail::require<DegenerateInput>(hull.size() >= 3 && area > 1e-12 * scale,
                                   "build_convex_hull_uniform: degenerate hull (points are collinear)");
  const GridSpec g = grid ? *grid : GridSpec::box(lo, hi);
  g.validate();
  detail::require(g.dim() == 2, "build_convex_hull_uniform: grid must be 2-D");
  std::vector<double> m(g.size(), 0.0);
  const double wx = g.width(0), wy = g.width(1);
  for (std::size_t i = 0; i < g.cells[0]; ++i) {
    for (std::size_t j = 0; j < g.cells[1]; ++j) {
      const double x0 = g.edge(0, i), y0 = g.edge(1, j);
      const bool allIn = detail::inside_convex(hull, {x0, y0}) && detail::inside_convex(hull, {x0 + wx, y0}) &&
                         detail::inside_convex(hull, {x0, y0 + wy}) && detail::inside_convex(hull, {x0 + wx, y0 + wy});
      double frac = 1.0;
      if (!allIn) {
        int hits = 0;
        for (int u = 0; u < 4; ++u)
          for (int v = 0; v < 4; ++v)
            if (detail::inside_convex(hull, {x0 + (u + 0.5) * wx / 4.0, y0 + (v + 0.5) * wy / 4.0})) ++hits;
        frac = hits / 16.0;
      }
      m[i * g.cells[1] + j] = frac;
    }
  }
  return Measure(grid_from_masses(g, std::move(m)));
}

// ---------------------------------------------------------------------------
// Barycenters

// Minimizer of sum_k d2(rho, delta_{X_k})^2: the Dirac at the sample mean.
inline Measure build_wasserstein_barycenter(const Sample& s) {
  s.validate();
  const auto pts = s.has_labels() ? s.joint_points() : s.features;
  Point mean(pts.front().size(), 0.0);
  for (const auto& x : pts)
    for (std::size_t a = 0; a < x.size(); ++a) mean[a] += x[a];
  for (double& v : mean) v /= static_cast<double>(pts.size());
  return Measure(make_discrete_measure({mean}), s.has_labels());
}

struct EntropicConfig {
  GridDensity reference;      // nu
  double entropyWeight = 1.0;  // lambda

  void validate() const {
    reference.validate();
    detail::require(entropyWeight > 0.0 && std::isfinite(entropyWeight), "entropic config: lambda must be > 0");
  }
};

namespace detail {

// V(y) = (1/n) sum_k |y - X_k|^2 at every cell center, via the expansion
// |y|^2 - 2 y.mean + mean(|X|^2).
inline std::vector<double> mean_squared_distance_field(const GridSpec& g, const std::vector<Point>& pts) {
  const std::size_t p = g.dim();
  Point mean(p, 0.0);
  double sq = 0.0;
  for (const auto& x : pts) {
    for (std::size_t a = 0; a < p; ++a) {
      mean[a] += x[a];
      sq += x[a] * x[a];
    }
  }
  const double n = static_cast<double>(pts.size());
  for (double& v : mean) v /= n;
  sq /= n;
  std::vector<double> V(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Point y = g.center_of(i);
    double yy = 0.0, ym = 0.0;
    for (std::size_t a = 0; a < p; ++a) {
      yy += y[a] * y[a];
      ym += y[a] * mean[a];
    }
    V[i] = std::max(0.0, yy - 2.0 * ym + sq);
  }
  return V;
}

inline void require_inside(const GridSpec& g, const std::vector<Point>& pts, const std::string& what) {
  for (const auto& x : pts) {
    for (std::size_t a = 0; a < g.dim(); ++a)
      detail::require(x[a] >= g.lo[a] && x[a] <= g.hi[a], what + ": reference grid does not cover the sample");
  }
}

}  // namespace detail

// Gibbs density d rho / d nu = exp(-V / lambda) / Z.
inline Measure build_entropic_barycenter(const Sample& s, const EntropicConfig& cfg) {
  s.validate();
  cfg.validate();
  const GridSpec& g = cfg.reference.grid;
  const auto pts = detail::points_in(s, g.dim());
  detail::require_inside(g, pts, "build_entropic_barycenter");
  const auto V = detail::mean_squared_distance_field(g, pts);
  const double lambda = cfg.entropyWeight;
  double vmin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < V.size(); ++i)
    if (cfg.reference.values[i] > 0.0) vmin = std::min(vmin, V[i] / lambda);
  if (vmin > 700.0)
    throw DegenerateInput("build_entropic_barycenter: normalizing constant underflows (V/lambda > 700 on the whole "
                          "support); rescale the data or increase lambda");
  std::vector<double> m(g.size(), 0.0);
  for (std::size_t i = 0; i < V.size(); ++i) {
    const double nu = cfg.reference.values[i];
    if (nu > 0.0) m[i] = nu * std::exp(-(V[i] / lambda - vmin));
  }
  return Measure(grid_from_masses(g, std::move(m)), detail::is_joint_space(s, g.dim()));
}

// First variation V + lambda (log(d rho / d nu) + 1) per cell of the
// reference grid: +inf where nu = 0, NaN where rho = 0 < nu.
inline std::vector<double> entropic_first_variation(const Sample& s, const EntropicConfig& cfg, const GridDensity& rho) {
  const GridSpec& g = cfg.reference.grid;
  detail::require(rho.grid.same_as(g), "entropic_first_variation: rho must live on the reference grid");
  const auto V = detail::mean_squared_distance_field(g, detail::points_in(s, g.dim()));
  std::vector<double> out(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double nu = cfg.reference.values[i], r = rho.values[i];
    if (nu <= 0.0) out[i] = std::numeric_limits<double>::infinity();
    else if (r <= 0.0) out[i] = std::numeric_limits<double>::quiet_NaN();
    else out[i] = V[i] + cfg.entropyWeight * (std::log(r / nu) + 1.0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Class-based barycenter

// How each class measure nu_k is built from the class subsample.
struct ClassMeasureRule {
  enum class Kind { Kde, Entropic };
  Kind kind = Kind::Kde;
  Kernel kernel = Kernel::gaussian();
  BandwidthRule bandwidth = BandwidthRule::power_law(1.06, 0.2);
};

struct ClassBarycenterOptions {
  double tolerance = 1e-8;  // stop once an accepted step lowers the objective by less
  std::size_t maxIterations = 2000;
  std::size_t maxSupport = 512;  // cells of the reference support
};

struct ClassBarycenterResult {
  GridDensity density;
  double epsilon = 0.0;  // entropic regularization used for the d2 terms
  double objective = 0.0;
  std::vector<double> trace;
  std::size_t iterations = 0;
};

namespace detail {

// (1/m) sum_k S_eps(rho, nu_k) + lambda KL(rho | nu) with the debiased
// Sinkhorn divergence S_eps standing in for d2^2, on the support of nu.
class ClassBarycenterObjective {
 public:
  ClassBarycenterObjective(const std::vector<GridDensity>& nus, const EntropicConfig& cfg, std::size_t maxSupport)
      : cfg_(cfg) {
    cfg.validate();
    detail::require(!nus.empty(), "class barycenter: need at least one class");
    const GridSpec& g = cfg.reference.grid;
    eps_ = 0.01 * g.diameter() * g.diameter();
    const double vol = g.cell_volume();
    support_.dim = g.dim();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (cfg.reference.values[i] <= 0.0) continue;
      cells_.push_back(i);
      const Point c = g.center_of(i);
      support_.coords.insert(support_.coords.end(), c.begin(), c.end());
      support_.weights.push_back(cfg.reference.values[i] * vol);
    }
    detail::require(cells_.size() <= maxSupport, "class barycenter: reference support has " +
                                                     std::to_string(cells_.size()) + " cells (limit " +
                                                     std::to_string(maxSupport) + "); use a coarser grid");
    nuMass_ = support_.weights;
    selfCost_ = cost_matrix(support_, support_, CostSpec::quadratic());
    for (const auto& nu : nus) {
      detail::require(nu.grid.same_as(g), "class barycenter: class measures must share the reference grid");
      DiscreteMeasure d = atoms_of(Measure(nu), 0.0);
      ClassTerm t;
      t.cost = cost_matrix(support_, d, CostSpec::quadratic());
      t.selfValue = sinkhorn_with_cost(d, d, cost_matrix(d, d, CostSpec::quadratic()), eps_, opts()).dualValue;
      t.measure = std::move(d);
      terms_.push_back(std::move(t));
    }
  }

  double epsilon() const { return eps_; }
  const std::vector<double>& reference_masses() const { return nuMass_; }
  const std::vector<std::size_t>& cells() const { return cells_; }

  // Objective at rho (masses on the support); fills the first variation.
  double evaluate(const std::vector<double>& rho, std::vector<double>* grad) {
    DiscreteMeasure r = support_;
    r.weights = rho;
    const std::size_t n = rho.size();
    const double m = static_cast<double>(terms_.size());
    double value = 0.0;
    if (grad) grad->assign(n, 0.0);
    auto self = sinkhorn_with_cost(r, r, selfCost_, eps_, opts(), selfWarm_.empty() ? nullptr : &selfWarm_);
    selfWarm_ = self.g;
    for (auto& t : terms_) {
      auto res = sinkhorn_with_cost(r, t.measure, t.cost, eps_, opts(), t.warm.empty() ? nullptr : &t.warm);
      t.warm = res.g;
      value += (res.dualValue - 0.5 * self.dualValue - 0.5 * t.selfValue) / m;
      if (grad)
        for (std::size_t i = 0; i < n; ++i) (*grad)[i] += (res.f[i] - self.f[i]) / m;
    }
    const double lambda = cfg_.entropyWeight;
    for (std::size_t i = 0; i < n; ++i) {
      if (rho[i] > 0.0) value += lambda * rho[i] * std::log(rho[i] / nuMass_[i]);
      if (grad) (*grad)[i] += lambda * ((rho[i] > 0.0 ? std::log(rho[i] / nuMass_[i]) : -745.0) + 1.0);
    }
    return value;
  }

 private:
  struct ClassTerm {
    DiscreteMeasure measure;
    std::vector<double> cost;
    double selfValue = 0.0;
    std::vector<double> warm;
  };
  static SinkhornOptions opts() {
    SinkhornOptions o;
    o.tolerance = 1e-11;
    o.buildPlan = false;
    return o;
  }
  const EntropicConfig& cfg_;
  double eps_ = 0.0;
  DiscreteMeasure support_;
  std::vector<std::size_t> cells_;
  std::vector<double> nuMass_;
  std::vector<double> selfCost_;
  std::vector<double> selfWarm_;
  std::vector<ClassTerm> terms_;
};

}  // namespace detail

// Objective of a candidate density (must vanish where nu does).
inline double class_barycenter_objective(const std::vector<GridDensity>& nus, const EntropicConfig& cfg,
                                         const GridDensity& candidate) {
  detail::ClassBarycenterObjective obj(nus, cfg, std::numeric_limits<std::size_t>::max());
  std::vector<double> rho;
  double outside = 0.0;
  const double vol = candidate.grid.cell_volume();
  detail::require(candidate.grid.same_as(cfg.reference.grid), "class barycenter: candidate must share the reference grid");
  std::size_t k = 0;
  for (std::size_t i = 0; i < candidate.values.size(); ++i) {
    if (k < obj.cells().size() && obj.cells()[k] == i) {
      rho.push_back(candidate.values[i] * vol);
      ++k;
    } else {
      outside += candidate.values[i] * vol;
    }
  }
  if (outside > 0.0) return std::numeric_limits<double>::infinity();
  return obj.evaluate(rho, nullptr);
}

// Exponentiated-gradient descent from nu with backtracking.
inline ClassBarycenterResult class_barycenter_from_measures(const std::vector<GridDensity>& nus, const EntropicConfig& cfg,
                                                            const ClassBarycenterOptions& opt = {}) {
  detail::ClassBarycenterObjective obj(nus, cfg, opt.maxSupport);
  std::vector<double> rho = obj.reference_masses();
  const double total = std::accumulate(rho.begin(), rho.end(), 0.0);
  for (double& r : rho) r /= total;
  std::vector<double> grad, cand(rho.size()), candGrad;
  double value = obj.evaluate(rho, &grad);
  ClassBarycenterResult res;
  res.epsilon = obj.epsilon();
  res.trace.push_back(value);
  double eta = -1.0;
  bool converged = false;
  for (std::size_t it = 0; it < opt.maxIterations; ++it) {
    double mean = 0.0;
    for (std::size_t i = 0; i < rho.size(); ++i) mean += rho[i] * grad[i];
    double spread = 0.0;
    for (std::size_t i = 0; i < rho.size(); ++i) spread = std::max(spread, std::abs(grad[i] - mean));
    if (spread == 0.0) {
      converged = true;
      break;
    }
    if (eta < 0.0) eta = 1.0 / spread;
    bool accepted = false;
    double newValue = value;
    while (eta * spread > 1e-14) {
      double s = 0.0;
      for (std::size_t i = 0; i < rho.size(); ++i) {
        cand[i] = rho[i] * std::exp(-eta * (grad[i] - mean));
        s += cand[i];
      }
      for (double& c : cand) c /= s;
      newValue = obj.evaluate(cand, &candGrad);
      if (newValue <= value) {
        accepted = true;
        break;
      }
      eta *= 0.5;
    }
    if (!accepted) {
      converged = true;  // no descent direction left at machine precision
      break;
    }
    const double decrease = value - newValue;
    rho.swap(cand);
    grad.swap(candGrad);
    value = newValue;
    res.trace.push_back(value);
    res.iterations = it + 1;
    eta *= 2.0;
    if (decrease < opt.tolerance) {
      converged = true;
      break;
    }
  }
  const GridSpec& g = cfg.reference.grid;
  std::vector<double> masses(g.size(), 0.0);
  for (std::size_t k = 0; k < rho.size(); ++k) masses[obj.cells()[k]] = rho[k];
  if (!converged)
    throw NonConvergence("class barycenter: objective still decreasing after " + std::to_string(opt.maxIterations) +
                             " iterations",
                         res.trace, masses);
  res.density = grid_from_masses(g, std::move(masses));
  res.objective = value;
  return res;
}

// Builds nu_k per class on the reference grid, then the barycenter.
inline ClassBarycenterResult build_class_barycenter(const Sample& s, const ClassMeasureRule& rule, const EntropicConfig& cfg,
                                                    const ClassBarycenterOptions& opt = {}) {
  s.validate();
  cfg.validate();
  detail::require(s.classes.has_value() && !s.classes->empty(), "build_class_barycenter: sample has no classes");
  std::vector<GridDensity> nus;
  for (const auto& group : *s.classes) {
    detail::require(!group.empty(), "build_class_barycenter: empty class");
    Sample sub = s.subset(group);
    sub.labels.reset();
    if (rule.kind == ClassMeasureRule::Kind::Kde)
      nus.push_back(build_kde(sub, rule.kernel, rule.bandwidth, cfg.reference.grid).grid());
    else
      nus.push_back(build_entropic_barycenter(sub, cfg).grid());
  }
  return class_barycenter_from_measures(nus, cfg, opt);
}

// ---------------------------------------------------------------------------
// MMD-relaxed transport plan

struct MMDPlanConfig {
  Kernel kernel = Kernel::gaussian();
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  CostSpec cost = CostSpec::quadratic();
  double tolerance = 1e-10;  // Frank-Wolfe duality gap
  std::size_t maxIterations = 200000;

  void validate() const {
    detail::require(lambda1 >= 0.0 && lambda2 >= 0.0 && std::isfinite(lambda1) && std::isfinite(lambda2),
                    "mmd plan: penalties must be nonnegative");
  }
};

struct MMDPlanResult {
  TransportPlan plan;
  double objective = 0.0;
  double dualityGap = 0.0;
  std::vector<double> trace;
  std::size_t iterations = 0;
};

namespace detail {

struct MMDPlanProblem {
  std::size_t m = 0, n = 0;
  std::vector<double> C, Kx, Ky, a, b;
  double lambda1 = 0.0, lambda2 = 0.0;

  // Objective and gradient at the flat plan pi.
  double evaluate(const std::vector<double>& pi, std::vector<double>* grad) const {
    std::vector<double> r(m, 0.0), c(n, 0.0);
    double lin = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double v = pi[i * n + j];
        r[i] += v;
        c[j] += v;
        lin += v * C[i * n + j];
      }
    }
    std::vector<double> dr(m), dc(n), Kdr(m, 0.0), Kdc(n, 0.0);
    for (std::size_t i = 0; i < m; ++i) dr[i] = r[i] - a[i];
    for (std::size_t j = 0; j < n; ++j) dc[j] = c[j] - b[j];
    double q1 = 0.0, q2 = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t k = 0; k < m; ++k) Kdr[i] += Kx[i * m + k] * dr[k];
      q1 += dr[i] * Kdr[i];
    }
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k = 0; k < n; ++k) Kdc[j] += Ky[j * n + k] * dc[k];
      q2 += dc[j] * Kdc[j];
    }
    if (grad) {
      grad->resize(m * n);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          (*grad)[i * n + j] = C[i * n + j] + 2.0 * lambda1 * Kdr[i] + 2.0 * lambda2 * Kdc[j];
    }
    return lin + lambda1 * std::max(0.0, q1) + lambda2 * std::max(0.0, q2);
  }
};

inline std::vector<double> gram(const DiscreteMeasure& d, const Kernel& k, double bw) {
  std::vector<double> G(d.size() * d.size());
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = 0; j < d.size(); ++j) G[i * d.size() + j] = k.profile(std::sqrt(squared_distance(d.point(i), d.point(j))) / bw);
  return G;
}

inline MMDPlanProblem make_mmd_problem(const DiscreteMeasure& a, const DiscreteMeasure& b, const MMDPlanConfig& cfg) {
  MMDPlanProblem P;
  P.m = a.size();
  P.n = b.size();
  P.C = cost_matrix(a, b, cfg.cost);
  const double bw = mmd_bandwidth(a, b, cfg.kernel);
  P.Kx = gram(a, cfg.kernel, bw);
  P.Ky = gram(b, cfg.kernel, bw);
  P.a = a.weights;
  P.b = b.weights;
  P.lambda1 = cfg.lambda1;
  P.lambda2 = cfg.lambda2;
  return P;
}

}  // namespace detail

// min <C, pi> + l1 MMD^2(P1 # pi, a) + l2 MMD^2(P2 # pi, b) over plans of
// total mass 1, by pairwise Frank-Wolfe with exact line search.
inline MMDPlanResult mmd_plan_between(const DiscreteMeasure& a, const DiscreteMeasure& b, const MMDPlanConfig& cfg) {
  cfg.validate();
  const auto P = detail::make_mmd_problem(a, b, cfg);
  const std::size_t m = P.m, n = P.n, N = m * n;
  std::vector<double> pi(N);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) pi[i * n + j] = a.weights[i] * b.weights[j];
  std::vector<double> dr(m), dc(n), Kdr(m, 0.0), Kdc(n, 0.0);
  auto refresh = [&] {
    std::fill(dr.begin(), dr.end(), 0.0);
    std::fill(dc.begin(), dc.end(), 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        dr[i] += pi[i * n + j];
        dc[j] += pi[i * n + j];
      }
    for (std::size_t i = 0; i < m; ++i) dr[i] -= P.a[i];
    for (std::size_t j = 0; j < n; ++j) dc[j] -= P.b[j];
    for (std::size_t i = 0; i < m; ++i) {
      Kdr[i] = 0.0;
      for (std::size_t k = 0; k < m; ++k) Kdr[i] += P.Kx[i * m + k] * dr[k];
    }
    for (std::size_t j = 0; j < n; ++j) {
      Kdc[j] = 0.0;
      for (std::size_t k = 0; k < n; ++k) Kdc[j] += P.Ky[j * n + k] * dc[k];
    }
  };
  auto grad = [&](std::size_t k) { return P.C[k] + 2.0 * P.lambda1 * Kdr[k / n] + 2.0 * P.lambda2 * Kdc[k % n]; };
  refresh();
  double value = P.evaluate(pi, nullptr);
  MMDPlanResult res;
  res.trace.push_back(value);
  double gap = 0.0;
  std::size_t it = 0;
  for (;; ++it) {
    if (it % 1000 == 999) refresh();
    std::size_t s = 0, v = N;
    double gs = std::numeric_limits<double>::infinity(), gv = -gs, inner = 0.0;
    for (std::size_t k = 0; k < N; ++k) {
      const double g = grad(k);
      if (g < gs) {
        gs = g;
        s = k;
      }
      if (pi[k] > 0.0) {
        inner += pi[k] * g;
        if (g > gv) {
          gv = g;
          v = k;
        }
      }
    }
    gap = std::max(0.0, inner - gs);
    if (gap <= cfg.tolerance || it >= cfg.maxIterations || v == s || gv - gs <= 0.0) break;
    const std::size_t i = s / n, j = s % n, k2 = v / n, l = v % n;
    const double curv = 2.0 * P.lambda1 * (P.Kx[i * m + i] + P.Kx[k2 * m + k2] - 2.0 * P.Kx[i * m + k2]) +
                        2.0 * P.lambda2 * (P.Ky[j * n + j] + P.Ky[l * n + l] - 2.0 * P.Ky[j * n + l]);
    const double slope = gs - gv;
    double t = pi[v];
    if (curv > 0.0) t = std::min(t, -slope / curv);
    if (t <= 0.0) break;
    pi[s] += t;
    pi[v] = t == pi[v] ? 0.0 : pi[v] - t;
    if (i != k2) {
      dr[i] += t;
      dr[k2] -= t;
      for (std::size_t q = 0; q < m; ++q) Kdr[q] += t * (P.Kx[q * m + i] - P.Kx[q * m + k2]);
    }
    if (j != l) {
      dc[j] += t;
      dc[l] -= t;
      for (std::size_t q = 0; q < n; ++q) Kdc[q] += t * (P.Ky[q * n + j] - P.Ky[q * n + l]);
    }
    const double decrease = t * slope + 0.5 * t * t * curv;
    if (decrease < 0.0) value += decrease;
    res.trace.push_back(value);
  }
  if (gap > std::max(cfg.tolerance, 1e-9 * (1.0 + std::abs(value))))
    throw NonConvergence("mmd plan: duality gap " + detail::format_number(gap) + " after " + std::to_string(it) + " iterations",
                         res.trace, pi);
  value = P.evaluate(pi, nullptr);
  res.plan = TransportPlan{a, b, pi, value, true};
  res.objective = value;
  res.dualityGap = gap;
  res.iterations = it;
  return res;
}

inline MMDPlanResult build_mmd_plan(const Sample& source, const Sample& target, const MMDPlanConfig& cfg) {
  source.validate();
  target.validate();
  detail::require(source.dim() == target.dim(), "build_mmd_plan: feature dimensions differ");
  return mmd_plan_between(make_discrete_measure(source.features), make_discrete_measure(target.features), cfg);
}

}  // namespace mprecon
