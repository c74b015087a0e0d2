#pragma once

// Distances and statistics between measures.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "error.hpp"
#include "kernel.hpp"
#include "lp.hpp"
#include "measure.hpp"
#include "transport.hpp"

namespace mprecon {

enum class ConvergenceMode { Weak, D1, D2, TV, Setwise };

inline std::string to_string(ConvergenceMode m) {
  switch (m) {
    case ConvergenceMode::Weak: return "weak";
    case ConvergenceMode::D1: return "d1";
    case ConvergenceMode::D2: return "d2";
    case ConvergenceMode::TV: return "tv";
    case ConvergenceMode::Setwise: return "setwise";
  }
  return "";
}

inline ConvergenceMode mode_from_string(const std::string& s) {
  if (s == "weak") return ConvergenceMode::Weak;
  if (s == "d1") return ConvergenceMode::D1;
  if (s == "d2") return ConvergenceMode::D2;
  if (s == "tv") return ConvergenceMode::TV;
  if (s == "setwise") return ConvergenceMode::Setwise;
  throw InvalidArgument("unknown convergence mode '" + s + "'");
}

// ---------------------------------------------------------------------------
// Total variation

namespace detail {

// Smallest grid containing both boxes with the finer cell width per axis.
inline GridSpec common_refinement(const GridSpec& a, const GridSpec& b) {
  GridSpec g;
  for (std::size_t k = 0; k < a.dim(); ++k) {
    const double lo = std::min(a.lo[k], b.lo[k]);
    const double hi = std::max(a.hi[k], b.hi[k]);
    const double w = std::min(a.width(k), b.width(k));
    g.lo.push_back(lo);
    g.hi.push_back(hi);
    g.cells.push_back(static_cast<std::size_t>(std::ceil((hi - lo) / w - 1e-9)));
  }
  return g;
}

}  // namespace detail

// sup_A |a(A) - b(A)|.
inline double tv_distance(const Measure& a, const Measure& b) {
  detail::require(a.dim() == b.dim(), "tv_distance: incompatible dimensions");
  if (a.is_discrete() != b.is_discrete()) return 1.0;  // atomic vs absolutely continuous
  if (a.is_discrete()) {
    const auto& da = a.discrete();
    const auto& db = b.discrete();
    std::vector<double> coords = da.coords;
    coords.insert(coords.end(), db.coords.begin(), db.coords.end());
    std::vector<double> w = da.weights;
    for (double v : db.weights) w.push_back(-v);
    const DiscreteMeasure merged = detail::merge_atoms(da.dim, coords, w);
    double s = 0.0;
    for (double v : merged.weights) s += std::abs(v);
    return std::min(1.0, 0.5 * s);
  }
  const auto& ga = a.grid();
  const auto& gb = b.grid();
  if (ga.grid.same_as(gb.grid)) {
    double s = 0.0;
    for (std::size_t i = 0; i < ga.values.size(); ++i) s += std::abs(ga.values[i] - gb.values[i]);
    return std::min(1.0, 0.5 * s * ga.grid.cell_volume());
  }
  const GridSpec common = detail::common_refinement(ga.grid, gb.grid);
  double s = 0.0;
  for (std::size_t i = 0; i < common.size(); ++i) {
    const Point c = common.center_of(i);
    s += std::abs(ga.at(c) - gb.at(c));
  }
  return std::min(1.0, 0.5 * s * common.cell_volume());
}

// ---------------------------------------------------------------------------
// Wasserstein distances

struct WassersteinResult {
  double value = 0.0;
  double lower = 0.0;  // certified bounds on W_p of the discretized inputs
  double upper = 0.0;
  bool exact = true;
  std::size_t atomsA = 0;
  std::size_t atomsB = 0;
};

namespace detail {

inline double pow_p(double d, int p) { return p == 1 ? d : d * d; }

// Exact W_p^p between 1-D discrete measures by the quantile coupling.
inline double wasserstein_1d_pp(const DiscreteMeasure& a, const DiscreteMeasure& b, int p) {
  auto sorted = [](const DiscreteMeasure& m) {
    std::vector<std::pair<double, double>> v(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) v[i] = {m.coords[i], m.weights[i]};
    std::sort(v.begin(), v.end());
    return v;
  };
  const auto va = sorted(a), vb = sorted(b);
  double ta = va.empty() ? 0.0 : va[0].second, tb = vb.empty() ? 0.0 : vb[0].second;
  std::size_t i = 0, j = 0;
  double used = 0.0, total = 0.0;
  while (i < va.size() && j < vb.size()) {
    const double step = std::min(ta, tb) - used;
    if (step > 0.0) total += step * pow_p(std::abs(va[i].first - vb[j].first), p);
    used = std::min(ta, tb);
    if (ta <= tb) {
      if (++i < va.size()) ta += va[i].second;
    } else {
      if (++j < vb.size()) tb += vb[j].second;
    }
  }
  return total;
}

struct Coarsened {
  DiscreteMeasure measure;
  double displacement = 0.0;  // sum_i w_i |x_i - c(x_i)|^p
};

// Aggregates atoms into blocks of a regular lattice (mass-weighted centroids).
inline Coarsened coarsen(const DiscreteMeasure& m, const std::vector<double>& lo, const std::vector<double>& hi,
                         std::size_t perAxis, int p) {
  const std::size_t dim = m.dim;
  std::size_t blocks = 1;
  for (std::size_t a = 0; a < dim; ++a) blocks *= perAxis;
  std::vector<double> mass(blocks, 0.0), sum(blocks * dim, 0.0);
  std::vector<std::size_t> blockOf(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    auto x = m.point(i);
    std::size_t flat = 0;
    for (std::size_t a = 0; a < dim; ++a) {
      const double w = (hi[a] - lo[a]) / static_cast<double>(perAxis);
      double k = w > 0.0 ? std::floor((x[a] - lo[a]) / w) : 0.0;
      k = std::clamp(k, 0.0, static_cast<double>(perAxis - 1));
      flat = flat * perAxis + static_cast<std::size_t>(k);
    }
    blockOf[i] = flat;
    mass[flat] += m.weights[i];
    for (std::size_t a = 0; a < dim; ++a) sum[flat * dim + a] += m.weights[i] * x[a];
  }
  Coarsened c;
  c.measure.dim = dim;
  std::vector<std::size_t> slot(blocks, SIZE_MAX);
  for (std::size_t b = 0; b < blocks; ++b) {
    if (mass[b] <= 0.0) continue;
    slot[b] = c.measure.weights.size();
    c.measure.weights.push_back(mass[b]);
    for (std::size_t a = 0; a < dim; ++a) c.measure.coords.push_back(sum[b * dim + a] / mass[b]);
  }
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double d = std::sqrt(squared_distance(m.point(i), c.measure.point(slot[blockOf[i]])));
    c.displacement += m.weights[i] * pow_p(d, p);
  }
  return c;
}

inline double root_p(double v, int p) { return p == 1 ? v : std::sqrt(std::max(0.0, v)); }

}  // namespace detail

// W_p between the (discretized) measures. Exact when both have at most
// maxAtoms atoms or the dimension is 1; otherwise both are coarsened onto a
// shared lattice and value = W_p of the coarsened pair, with lower/upper
// bounds from the coarsening displacement (triangle inequality).
inline WassersteinResult wasserstein_detail(const Measure& a, const Measure& b, int p,
                                            std::size_t maxAtoms = kMaxExactOtAtoms) {
  detail::require(p == 1 || p == 2, "wasserstein_p: p must be 1 or 2");
  detail::require(a.dim() == b.dim(), "wasserstein_p: incompatible dimensions");
  const DiscreteMeasure da = atoms_of(a), db = atoms_of(b);
  const CostSpec cost = p == 1 ? CostSpec::absolute() : CostSpec::quadratic();
  WassersteinResult r;
  r.atomsA = da.size();
  r.atomsB = db.size();
  if (da.dim == 1) {
    r.value = detail::root_p(detail::wasserstein_1d_pp(da, db, p), p);
    r.lower = r.upper = r.value;
    return r;
  }
  if (da.size() <= maxAtoms && db.size() <= maxAtoms) {
    r.value = detail::root_p(solve_exact_ot(da, db, cost).cost, p);
    r.lower = r.upper = r.value;
    return r;
  }
  const std::size_t dim = da.dim;
  std::size_t perAxis = 1;
  while (true) {
    std::size_t next = 1;
    for (std::size_t k = 0; k < dim; ++k) next *= perAxis + 1;
    if (next > maxAtoms) break;
    ++perAxis;
  }
  std::vector<double> lo(dim, std::numeric_limits<double>::infinity()), hi(dim, -std::numeric_limits<double>::infinity());
  for (const auto* m : {&da, &db}) {
    for (std::size_t i = 0; i < m->size(); ++i) {
      for (std::size_t k = 0; k < dim; ++k) {
        lo[k] = std::min(lo[k], m->point(i)[k]);
        hi[k] = std::max(hi[k], m->point(i)[k]);
      }
    }
  }
  const auto ca = detail::coarsen(da, lo, hi, perAxis, p);
  const auto cb = detail::coarsen(db, lo, hi, perAxis, p);
  const double core = detail::root_p(solve_exact_ot(ca.measure, cb.measure, cost).cost, p);
  const double ea = detail::root_p(ca.displacement, p), eb = detail::root_p(cb.displacement, p);
  r.exact = false;
  r.value = core;
  r.upper = core + ea + eb;
  r.lower = std::max(0.0, core - ea - eb);
  return r;
}

inline double wasserstein_p(const Measure& a, const Measure& b, int p) { return wasserstein_detail(a, b, p).value; }

// ---------------------------------------------------------------------------
// Kantorovich-Rubinstein dual

inline constexpr std::size_t kMaxDualAtoms = 48;

// max sum_x phi(x) (a - b)(x) over 1-Lipschitz phi on the union support.
inline double d1_dual(const Measure& a, const Measure& b) {
  detail::require(a.dim() == b.dim(), "d1_dual: incompatible dimensions");
  const DiscreteMeasure da = atoms_of(a), db = atoms_of(b);
  std::vector<double> coords = da.coords;
  coords.insert(coords.end(), db.coords.begin(), db.coords.end());
  std::vector<double> w = da.weights;
  for (double v : db.weights) w.push_back(-v);
  const DiscreteMeasure u = detail::merge_atoms(da.dim, coords, w);
  const std::size_t n = u.size();
  detail::require(n <= kMaxDualAtoms, "d1_dual: union support exceeds " + std::to_string(kMaxDualAtoms) + " atoms");
  if (n == 1) return 0.0;
  // phi >= 0 loses nothing: the objective is invariant under constant shifts.
  std::vector<std::vector<double>> A;
  std::vector<double> rhs;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      std::vector<double> row(n, 0.0);
      row[i] = 1.0;
      row[j] = -1.0;
      A.push_back(std::move(row));
      rhs.push_back(std::sqrt(squared_distance(u.point(i), u.point(j))));
    }
  }
  try {
    return std::max(0.0, solve_lp_max(A, rhs, u.weights).objective);
  } catch (const InternalError&) {
    throw InternalError("d1_dual: LP reported unbounded on valid input");
  }
}

// ---------------------------------------------------------------------------
// MMD

namespace detail {

inline double median_pairwise_distance(const DiscreteMeasure& a, const DiscreteMeasure& b) {
  std::vector<double> pts = a.coords;
  pts.insert(pts.end(), b.coords.begin(), b.coords.end());
  const std::size_t dim = a.dim, n = pts.size() / dim;
  std::vector<double> d;
  d.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      d.push_back(std::sqrt(squared_distance({pts.data() + i * dim, dim}, {pts.data() + j * dim, dim})));
  if (d.empty()) return 1.0;
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid > 0.0 ? *mid : 1.0;
}

inline double kernel_mean(const DiscreteMeasure& a, const DiscreteMeasure& b, const Kernel& k, double bw) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j)
      s += a.weights[i] * b.weights[j] * k.profile(std::sqrt(squared_distance(a.point(i), b.point(j))) / bw);
  return s;
}

}  // namespace detail

inline double mmd_bandwidth(const DiscreteMeasure& a, const DiscreteMeasure& b, const Kernel& k) {
  if (k.bandwidth) {
    detail::require(*k.bandwidth > 0.0, "mmd: bandwidth must be > 0");
    return *k.bandwidth;
  }
  return detail::median_pairwise_distance(a, b);
}

// Squared MMD, V-statistic with independent copies, clamped at 0.
inline double mmd(const Measure& a, const Measure& b, const Kernel& k = Kernel::gaussian()) {
  detail::require(a.dim() == b.dim(), "mmd: incompatible dimensions");
  const DiscreteMeasure da = atoms_of(a), db = atoms_of(b);
  const double bw = mmd_bandwidth(da, db, k);
  const double v = detail::kernel_mean(da, da, k, bw) + detail::kernel_mean(db, db, k, bw) -
                   2.0 * detail::kernel_mean(da, db, k, bw);
  return std::max(0.0, v);
}

// ---------------------------------------------------------------------------
// Kolmogorov-Smirnov

// Piecewise-linear CDF through the given (t, F(t)) knots; 0 left of the
// first knot and 1 right of the last.
struct TabulatedCdf {
  std::vector<double> t;
  std::vector<double> F;

  void validate() const {
    detail::require(t.size() == F.size() && t.size() >= 2, "cdf: need matching knot arrays with >= 2 knots");
    for (std::size_t i = 1; i < t.size(); ++i) {
      detail::require(t[i] > t[i - 1], "cdf: knots must be strictly increasing");
      detail::require(F[i] >= F[i - 1], "cdf: values must be nondecreasing");
    }
    detail::require(F.front() >= 0.0 && F.back() <= 1.0, "cdf: values must lie in [0, 1]");
  }

  double operator()(double x) const {
    if (x <= t.front()) return x < t.front() ? 0.0 : F.front();
    if (x >= t.back()) return 1.0;
    auto it = std::upper_bound(t.begin(), t.end(), x);
    const std::size_t j = static_cast<std::size_t>(it - t.begin());
    const double s = (x - t[j - 1]) / (t[j] - t[j - 1]);
    return F[j - 1] + s * (F[j] - F[j - 1]);
  }

  template <class Fn>
  static TabulatedCdf from_function(Fn&& f, double lo, double hi, std::size_t knots) {
    TabulatedCdf c;
    for (std::size_t i = 0; i < knots; ++i) {
      const double x = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(knots - 1);
      c.t.push_back(x);
      c.F.push_back(f(x));
    }
    c.validate();
    return c;
  }
};

// sup_t |F_n(t) - F(t)|, evaluated exactly at the jump points.
inline double ks_statistic(std::vector<double> xs, const std::function<double(double)>& cdf) {
  detail::require(!xs.empty(), "ks_statistic: empty sample");
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double F = cdf(xs[i]);
    d = std::max({d, std::abs(F - static_cast<double>(i) / n), std::abs(F - static_cast<double>(i + 1) / n)});
  }
  return d;
}

inline double ks_statistic(const Sample& s, const std::function<double(double)>& cdf) {
  s.validate();
  detail::require(s.dim() == 1, "ks_statistic: sample must be 1-D");
  std::vector<double> xs;
  xs.reserve(s.size());
  for (const auto& x : s.features) xs.push_back(x[0]);
  return ks_statistic(std::move(xs), cdf);
}

// P(sup |B_s - s B_1| < b) = sum_m (-1)^m exp(-2 m^2 b^2).
inline double kolmogorov_limit_cdf(double b) {
  detail::require(b > 0.0 && std::isfinite(b), "kolmogorov_limit_cdf: b must be > 0");
  // For small b the alternating series converges slowly; use the dual
  // (Jacobi theta) form sqrt(2 pi)/b sum_k exp(-(2k-1)^2 pi^2 / (8 b^2)).
  if (b < 0.5) {
    double s = 0.0;
    for (int k = 1;; ++k) {
      const double t = std::exp(-static_cast<double>((2 * k - 1) * (2 * k - 1)) * std::numbers::pi * std::numbers::pi / (8.0 * b * b));
      s += t;
      if (t < 1e-300 || t < 1e-16 * s) break;
    }
    return std::clamp(std::sqrt(2.0 * std::numbers::pi) / b * s, 0.0, 1.0);
  }
  double s = 1.0;
  for (int m = 1;; ++m) {
    const double t = 2.0 * std::exp(-2.0 * m * m * b * b);
    s += (m % 2 == 1) ? -t : t;
    const double nextTerm = 2.0 * std::exp(-2.0 * (m + 1) * (m + 1) * b * b);
    if (nextTerm < 1e-12) break;
  }
  return std::clamp(s, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Setwise distance over lattice boxes

struct BoxFamily {
  std::vector<double> lo;
  std::vector<double> hi;
  std::size_t cellsPerAxis = 16;
};

namespace detail {

inline BoxFamily default_boxes(const DiscreteMeasure& a, const DiscreteMeasure& b) {
  BoxFamily f;
  const std::size_t dim = a.dim;
  f.lo.assign(dim, std::numeric_limits<double>::infinity());
  f.hi.assign(dim, -std::numeric_limits<double>::infinity());
  for (const auto* m : {&a, &b}) {
    for (std::size_t i = 0; i < m->size(); ++i) {
      for (std::size_t k = 0; k < dim; ++k) {
        f.lo[k] = std::min(f.lo[k], m->point(i)[k]);
        f.hi[k] = std::max(f.hi[k], m->point(i)[k]);
      }
    }
  }
  for (std::size_t k = 0; k < dim; ++k) {
    const double pad = 1e-9 * std::max(1.0, f.hi[k] - f.lo[k]);
    f.lo[k] -= pad;
    f.hi[k] += pad;
  }
  f.cellsPerAxis = dim <= 3 ? 16 : 8;
  return f;
}

}  // namespace detail

// max over boxes with corners on the lattice of |a(B) - b(B)|. Grid cells are
// assigned to lattice cells by their centers.
inline double setwise_box_distance(const Measure& a, const Measure& b, std::optional<BoxFamily> family = std::nullopt) {
  detail::require(a.dim() == b.dim(), "setwise_box_distance: incompatible dimensions");
  const DiscreteMeasure da = atoms_of(a), db = atoms_of(b);
  const BoxFamily f = family ? *family : detail::default_boxes(da, db);
  const std::size_t dim = da.dim, L = f.cellsPerAxis;
  detail::require(L >= 1 && f.lo.size() == dim && f.hi.size() == dim, "setwise_box_distance: bad box family");
  // Signed lattice-cell masses, then inclusive prefix sums with a zero border.
  std::vector<std::size_t> ext(dim, L + 1);
  std::size_t total = 1;
  for (std::size_t k = 0; k < dim; ++k) total *= L + 1;
  std::vector<double> P(total, 0.0);
  auto flat_ext = [&](const std::vector<std::size_t>& idx) {
    std::size_t f0 = 0;
    for (std::size_t k = 0; k < dim; ++k) f0 = f0 * (L + 1) + idx[k];
    return f0;
  };
  auto deposit = [&](const DiscreteMeasure& m, double sign) {
    std::vector<std::size_t> idx(dim);
    for (std::size_t i = 0; i < m.size(); ++i) {
      bool inside = true;
      for (std::size_t k = 0; k < dim; ++k) {
        const double x = m.point(i)[k];
        if (x < f.lo[k] || x > f.hi[k]) {
          inside = false;
          break;
        }
        const double w = (f.hi[k] - f.lo[k]) / static_cast<double>(L);
        auto c = static_cast<std::size_t>(std::floor((x - f.lo[k]) / w));
        idx[k] = std::min(c, L - 1) + 1;
      }
      if (inside) P[flat_ext(idx)] += sign * m.weights[i];
    }
  };
  deposit(da, 1.0);
  deposit(db, -1.0);
  for (std::size_t k = 0; k < dim; ++k) {
    const std::size_t stride = [&] {
      std::size_t s = 1;
      for (std::size_t j = k + 1; j < dim; ++j) s *= L + 1;
      return s;
    }();
    for (std::size_t i = 0; i < total; ++i) {
      const std::size_t coord = (i / stride) % (L + 1);
      if (coord > 0) P[i] += P[i - stride];
    }
  }
  // Enumerate boxes [l_k, u_k) in extended prefix coordinates, 0 <= l < u <= L.
  double best = 0.0;
  std::vector<std::size_t> lo(dim, 0), hi(dim, 1);
  std::vector<std::size_t> corner(dim);
  auto box_sum = [&] {
    double s = 0.0;
    for (std::size_t mask = 0; mask < (std::size_t{1} << dim); ++mask) {
      int sign = 1;
      for (std::size_t k = 0; k < dim; ++k) {
        if (mask & (std::size_t{1} << k)) {
          corner[k] = lo[k];
          sign = -sign;
        } else {
          corner[k] = hi[k];
        }
      }
      s += sign * P[flat_ext(corner)];
    }
    return s;
  };
  for (;;) {
    best = std::max(best, std::abs(box_sum()));
    std::size_t k = 0;
    for (; k < dim; ++k) {
      if (hi[k] < L) {
        ++hi[k];
        break;
      }
      if (lo[k] + 1 < L) {
        ++lo[k];
        hi[k] = lo[k] + 1;
        break;
      }
      lo[k] = 0;
      hi[k] = 1;
    }
    if (k == dim) break;
  }
  return std::min(1.0, best);
}

// ---------------------------------------------------------------------------
// Dispatch by convergence mode

// Weak convergence is metrized by d1 on bounded supports.
inline double mode_distance(const Measure& a, const Measure& b, ConvergenceMode mode) {
  switch (mode) {
    case ConvergenceMode::Weak:
    case ConvergenceMode::D1: return wasserstein_p(a, b, 1);
    case ConvergenceMode::D2: return wasserstein_p(a, b, 2);
    case ConvergenceMode::TV: return tv_distance(a, b);
    case ConvergenceMode::Setwise: return setwise_box_distance(a, b);
  }
  return 0.0;
}

}  // namespace mprecon
