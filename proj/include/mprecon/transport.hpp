#pragma once

// Discrete optimal transport: exact plans (network simplex), entropic plans
// (log-domain Sinkhorn), barycentric maps and map inversion.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "measure.hpp"

namespace mprecon {

inline constexpr std::size_t kMaxExactOtAtoms = 512;

// ---------------------------------------------------------------------------
// Costs

struct CostSpec {
  enum class Kind { Quadratic, Absolute, Tabulated };
  Kind kind = Kind::Quadratic;
  std::vector<double> matrix;  // rows x cols, only for Tabulated
  std::size_t rows = 0;
  std::size_t cols = 0;

  static CostSpec quadratic() { return {Kind::Quadratic}; }
  static CostSpec absolute() { return {Kind::Absolute}; }
  static CostSpec tabulated(std::vector<double> m, std::size_t rows, std::size_t cols) {
    return {Kind::Tabulated, std::move(m), rows, cols};
  }

  // Same cost with the roles of the two supports exchanged.
  CostSpec transposed() const {
    if (kind != Kind::Tabulated) return *this;
    std::vector<double> t(matrix.size());
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) t[j * rows + i] = matrix[i * cols + j];
    return tabulated(std::move(t), cols, rows);
  }
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

inline std::vector<double> cost_matrix(const DiscreteMeasure& a, const DiscreteMeasure& b, const CostSpec& c) {
  const std::size_t m = a.size(), n = b.size();
  if (c.kind == CostSpec::Kind::Tabulated) {
    detail::require(c.rows == m && c.cols == n && c.matrix.size() == m * n,
                    "cost: tabulated matrix dimensions do not match the supports");
    for (double v : c.matrix) detail::require(std::isfinite(v) && v >= 0.0, "cost: tabulated entries must be finite and nonnegative");
    return c.matrix;
  }
  detail::require(a.dim == b.dim, "cost: support dimensions differ");
  std::vector<double> C(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double d2 = squared_distance(a.point(i), b.point(j));
      C[i * n + j] = c.kind == CostSpec::Kind::Quadratic ? d2 : std::sqrt(d2);
    }
  }
  return C;
}

// ---------------------------------------------------------------------------
// Plans and maps

struct TransportPlan {
  DiscreteMeasure rows;
  DiscreteMeasure cols;
  std::vector<double> matrix;  // rows.size() x cols.size()
  double cost = 0.0;
  bool marginalsRelaxed = false;

  double at(std::size_t i, std::size_t j) const { return matrix[i * cols.size() + j]; }
  double row_sum(std::size_t i) const {
    double s = 0.0;
    for (std::size_t j = 0; j < cols.size(); ++j) s += at(i, j);
    return s;
  }
  double col_sum(std::size_t j) const {
    double s = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) s += at(i, j);
    return s;
  }
  double total_mass() const { return std::accumulate(matrix.begin(), matrix.end(), 0.0); }

  // Largest absolute marginal violation.
  double marginal_error() const {
    double e = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) e = std::max(e, std::abs(row_sum(i) - rows.weights[i]));
    for (std::size_t j = 0; j < cols.size(); ++j) e = std::max(e, std::abs(col_sum(j) - cols.weights[j]));
    return e;
  }

  void validate() const {
    detail::require(matrix.size() == rows.size() * cols.size(), "plan: matrix size mismatch");
    for (double v : matrix) detail::require(v >= 0.0 && std::isfinite(v), "plan: entries must be nonnegative");
    if (marginalsRelaxed) {
      detail::require(std::abs(total_mass() - 1.0) <= 1e-8, "plan: total mass must be 1");
    } else {
      detail::require(marginal_error() <= 1e-8, "plan: marginals violated");
    }
  }
};

struct TransportMap {
  std::size_t dim = 0;
  std::vector<double> sources;  // flat, dim per atom
  std::vector<double> images;   // flat, imageDim per atom
  std::size_t imageDim = 0;
  bool deterministic = false;
  bool approximateInverse = false;

  std::size_t size() const noexcept { return dim == 0 ? 0 : sources.size() / dim; }
  std::span<const double> source(std::size_t i) const { return {sources.data() + i * dim, dim}; }
  std::span<const double> image(std::size_t i) const { return {images.data() + i * imageDim, imageDim}; }

  // Index of the source atom nearest to x (ties -> smallest index).
  std::size_t nearest_source(std::span<const double> x) const {
    detail::require(size() > 0, "transport map: empty map");
    detail::require(x.size() == dim, "transport map: point dimension mismatch");
    std::size_t best = 0;
    double bestD = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < size(); ++i) {
      const double d = squared_distance(source(i), x);
      if (d < bestD) {
        bestD = d;
        best = i;
      }
    }
    return best;
  }

  // T(x), extended off the source atoms by 1-nearest-atom lookup.
  Point apply(std::span<const double> x) const {
    auto im = image(nearest_source(x));
    return {im.begin(), im.end()};
  }
};

// ---------------------------------------------------------------------------
// Network simplex for the transportation problem

namespace detail {

// Uncapacitated network simplex on the bipartite graph sources -> sinks with
// an artificial root, strongly feasible spanning trees (Cunningham's leaving
// arc rule) and block-search pricing. Tree bookkeeping is rebuilt by a DFS
// after every pivot, which is cheap at the sizes this library targets.
class TransportSimplex {
 public:
  TransportSimplex(std::span<const double> supply, std::span<const double> demand, std::span<const double> cost)
      : m_(supply.size()), n_(demand.size()), nodes_(m_ + n_ + 1), root_(m_ + n_) {
    const std::size_t realArcs = m_ * n_;
    arcs_ = realArcs + m_ + n_;
    src_.resize(arcs_);
    tgt_.resize(arcs_);
    cost_.resize(arcs_);
    flow_.assign(arcs_, 0.0);
    inTree_.assign(arcs_, 0);
    double maxCost = 0.0;
    for (std::size_t i = 0; i < m_; ++i) {
      for (std::size_t j = 0; j < n_; ++j) {
        const std::size_t e = i * n_ + j;
        src_[e] = i;
        tgt_[e] = m_ + j;
        cost_[e] = cost[e];
        maxCost = std::max(maxCost, std::abs(cost[e]));
      }
    }
    const double artCost = (maxCost + 1.0) * static_cast<double>(nodes_);
    eps_ = 1e-12 * (maxCost + 1.0);
    for (std::size_t u = 0; u < m_ + n_; ++u) {
      const std::size_t e = realArcs + u;
      const double s = u < m_ ? supply[u] : -demand[u - m_];
      if (s >= 0.0) {
        src_[e] = u;
        tgt_[e] = root_;
        cost_[e] = 0.0;
        flow_[e] = s;
      } else {
        src_[e] = root_;
        tgt_[e] = u;
        cost_[e] = artCost;
        flow_[e] = -s;
      }
      inTree_[e] = 1;
      tree_.push_back(e);
    }
    blockSize_ = std::max<std::size_t>(16, static_cast<std::size_t>(std::sqrt(static_cast<double>(arcs_))));
    parent_.assign(nodes_, SIZE_MAX);
    pred_.assign(nodes_, SIZE_MAX);
    up_.assign(nodes_, 0);
    depth_.assign(nodes_, 0);
    pi_.assign(nodes_, 0.0);
    adj_.assign(nodes_, {});
    rebuild();
  }

  void run(std::size_t maxPivots) {
    std::size_t pivots = 0;
    for (;;) {
      const std::size_t in = find_entering();
      if (in == SIZE_MAX) return;
      pivot(in);
      if (++pivots > maxPivots) throw NonConvergence("network simplex: pivot limit exceeded", {});
    }
  }

  double flow(std::size_t i, std::size_t j) const { return flow_[i * n_ + j]; }

 private:
  double reduced(std::size_t e) const { return cost_[e] + pi_[src_[e]] - pi_[tgt_[e]]; }

  std::size_t find_entering() {
    double best = -eps_;
    std::size_t in = SIZE_MAX;
    std::size_t count = blockSize_;
    for (std::size_t scanned = 0; scanned < arcs_; ++scanned) {
      const std::size_t e = next_;
      next_ = next_ + 1 == arcs_ ? 0 : next_ + 1;
      if (!inTree_[e]) {
        const double rc = reduced(e);
        if (rc < best) {
          best = rc;
          in = e;
        }
      }
      if (--count == 0) {
        if (in != SIZE_MAX) return in;
        count = blockSize_;
      }
    }
    return in;
  }

  void pivot(std::size_t in) {
    const std::size_t first = src_[in];
    const std::size_t second = tgt_[in];
    std::size_t u = first, v = second;
    while (u != v) {
      if (depth_[u] > depth_[v]) u = parent_[u];
      else if (depth_[v] > depth_[u]) v = parent_[v];
      else {
        u = parent_[u];
        v = parent_[v];
      }
    }
    const std::size_t join = u;
    const double inf = std::numeric_limits<double>::infinity();
    double delta = inf;
    std::size_t out = SIZE_MAX;
    // Flow runs join -> ... -> first -> (in) -> second -> ... -> join.
    for (std::size_t w = first; w != join; w = parent_[w]) {
      const double d = up_[w] ? flow_[pred_[w]] : inf;
      if (d < delta) {
        delta = d;
        out = w;
      }
    }
    for (std::size_t w = second; w != join; w = parent_[w]) {
      const double d = up_[w] ? inf : flow_[pred_[w]];
      if (d <= delta) {
        delta = d;
        out = w;
      }
    }
    if (out == SIZE_MAX) throw InternalError("network simplex: unbounded cycle");
    if (delta > 0.0) {
      flow_[in] += delta;
      for (std::size_t w = first; w != join; w = parent_[w]) adjust(pred_[w], up_[w] ? -delta : delta);
      for (std::size_t w = second; w != join; w = parent_[w]) adjust(pred_[w], up_[w] ? delta : -delta);
    }
    const std::size_t leaving = pred_[out];
    inTree_[leaving] = 0;
    inTree_[in] = 1;
    *std::find(tree_.begin(), tree_.end(), leaving) = in;
    rebuild();
  }

  void adjust(std::size_t e, double d) {
    double f = flow_[e] + d;
    if (std::abs(f) < 1e-15) f = 0.0;
    flow_[e] = std::max(0.0, f);
  }

  void rebuild() {
    for (auto& a : adj_) a.clear();
    for (std::size_t e : tree_) {
      adj_[src_[e]].push_back(e);
      adj_[tgt_[e]].push_back(e);
    }
    std::vector<std::size_t> stack{root_};
    parent_[root_] = SIZE_MAX;
    pred_[root_] = SIZE_MAX;
    depth_[root_] = 0;
    pi_[root_] = 0.0;
    while (!stack.empty()) {
      const std::size_t u = stack.back();
      stack.pop_back();
      for (std::size_t e : adj_[u]) {
        if (e == pred_[u]) continue;
        const bool down = src_[e] == u;  // u -> w, so w hangs below u via a down arc
        const std::size_t w = down ? tgt_[e] : src_[e];
        parent_[w] = u;
        pred_[w] = e;
        up_[w] = down ? 0 : 1;
        depth_[w] = depth_[u] + 1;
        pi_[w] = down ? pi_[u] + cost_[e] : pi_[u] - cost_[e];
        stack.push_back(w);
      }
    }
  }

  std::size_t m_, n_, nodes_, root_, arcs_ = 0;
  std::vector<std::size_t> src_, tgt_;
  std::vector<double> cost_, flow_;
  std::vector<char> inTree_;
  std::vector<std::size_t> tree_;
  std::vector<std::size_t> parent_, pred_, depth_;
  std::vector<char> up_;
  std::vector<double> pi_;
  std::vector<std::vector<std::size_t>> adj_;
  std::size_t blockSize_ = 16;
  std::size_t next_ = 0;
  double eps_ = 1e-12;
};

}  // namespace detail

// Exact optimal plan between two discrete probability measures.
inline TransportPlan solve_exact_ot(const DiscreteMeasure& a, const DiscreteMeasure& b, const CostSpec& c,
                                    std::size_t maxAtoms = kMaxExactOtAtoms) {
  detail::require(a.size() >= 1 && b.size() >= 1, "solve_exact_ot: empty support");
  detail::require(a.size() <= maxAtoms && b.size() <= maxAtoms,
                  "solve_exact_ot: support size limit exceeded (" + std::to_string(std::max(a.size(), b.size())) +
                      " > " + std::to_string(maxAtoms) + ")");
  const double sa = std::accumulate(a.weights.begin(), a.weights.end(), 0.0);
  const double sb = std::accumulate(b.weights.begin(), b.weights.end(), 0.0);
  detail::require(std::abs(sa - sb) <= 1e-9, "solve_exact_ot: infeasible marginals (total masses differ)");
  const std::vector<double> C = cost_matrix(a, b, c);
  detail::TransportSimplex ns(a.weights, b.weights, C);
  ns.run(100 * (a.size() + b.size()) * (a.size() + b.size()) + 100000);
  TransportPlan plan{a, b, std::vector<double>(a.size() * b.size()), 0.0, false};
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      const double f = ns.flow(i, j);
      plan.matrix[i * b.size() + j] = f;
      plan.cost += f * C[i * b.size() + j];
    }
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Sinkhorn

struct SinkhornResult {
  TransportPlan plan;
  std::vector<double> f;  // row potentials, defined on every row (also zero-weight ones)
  std::vector<double> g;  // column potentials
  double dualValue = 0.0;  // <f, a> + <g, b>
  double marginalError = 0.0;
  std::size_t iterations = 0;
};

struct SinkhornOptions {
  double tolerance = 1e-6;       // L1 violation of the row marginal
  std::size_t maxIterations = 100000;
  bool buildPlan = true;
};

namespace detail {

inline double log_sum_exp(const std::vector<double>& v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace detail

// Entropic OT  min <C,P> + eps KL(P | a x b)  by log-domain Sinkhorn on a
// precomputed cost matrix. Potentials may be warm-started.
inline SinkhornResult sinkhorn_with_cost(const DiscreteMeasure& a, const DiscreteMeasure& b,
                                         const std::vector<double>& C, double epsilon,
                                         const SinkhornOptions& opt = {},
                                         const std::vector<double>* warmG = nullptr) {
  detail::require(epsilon > 0.0 && std::isfinite(epsilon), "sinkhorn: epsilon must be > 0");
  const std::size_t m = a.size(), n = b.size();
  detail::require(C.size() == m * n, "sinkhorn: cost size mismatch");
  const double ninf = -std::numeric_limits<double>::infinity();
  std::vector<double> la(m), lb(n);
  for (std::size_t i = 0; i < m; ++i) la[i] = a.weights[i] > 0.0 ? std::log(a.weights[i]) : ninf;
  for (std::size_t j = 0; j < n; ++j) lb[j] = b.weights[j] > 0.0 ? std::log(b.weights[j]) : ninf;
  std::vector<double> f(m, 0.0), g(n, 0.0);
  if (warmG && warmG->size() == n) g = *warmG;
  std::vector<double> buf(std::max(m, n));
  auto update_f = [&] {
    buf.resize(n);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) buf[j] = lb[j] + (g[j] - C[i * n + j]) / epsilon;
      f[i] = -epsilon * detail::log_sum_exp(buf);
    }
  };
  auto update_g = [&] {
    buf.resize(m);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < m; ++i) buf[i] = la[i] + (f[i] - C[i * n + j]) / epsilon;
      g[j] = -epsilon * detail::log_sum_exp(buf);
    }
  };
  // Row-marginal violation with f fixed and g freshly updated.
  auto row_error = [&] {
    double err = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      if (la[i] == ninf) continue;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (lb[j] == ninf) continue;
        s += std::exp(la[i] + lb[j] + (f[i] + g[j] - C[i * n + j]) / epsilon);
      }
      err += std::abs(s - a.weights[i]);
    }
    return err;
  };
  SinkhornResult res;
  std::vector<double> trace;
  double err = std::numeric_limits<double>::infinity();
  std::size_t it = 0;
  for (; it < opt.maxIterations; ++it) {
    update_f();
    update_g();
    if (it % 5 == 4 || it + 1 == opt.maxIterations || it < 3) {
      err = row_error();
      if (trace.size() < 1000) trace.push_back(err);
      if (err < opt.tolerance) break;
    }
  }
  if (!(err < opt.tolerance))
    throw NonConvergence("sinkhorn: marginal residual " + std::to_string(err) + " after " +
                             std::to_string(opt.maxIterations) + " iterations",
                         trace);
  // Final f update keeps f consistent with g on every row, including rows of zero weight.
  update_f();
  res.iterations = it + 1;
  res.marginalError = row_error();
  res.f = f;
  res.g = g;
  for (std::size_t i = 0; i < m; ++i)
    if (a.weights[i] > 0.0) res.dualValue += a.weights[i] * f[i];
  for (std::size_t j = 0; j < n; ++j)
    if (b.weights[j] > 0.0) res.dualValue += b.weights[j] * g[j];
  if (opt.buildPlan) {
    res.plan = TransportPlan{a, b, std::vector<double>(m * n, 0.0), 0.0, false};
    for (std::size_t i = 0; i < m; ++i) {
      if (la[i] == ninf) continue;
      for (std::size_t j = 0; j < n; ++j) {
        if (lb[j] == ninf) continue;
        const double p = std::exp(la[i] + lb[j] + (f[i] + g[j] - C[i * n + j]) / epsilon);
        res.plan.matrix[i * n + j] = p;
        res.plan.cost += p * C[i * n + j];
      }
    }
  }
  return res;
}

inline SinkhornResult solve_sinkhorn(const DiscreteMeasure& a, const DiscreteMeasure& b, const CostSpec& c,
                                     double epsilon, const SinkhornOptions& opt = {}) {
  return sinkhorn_with_cost(a, b, cost_matrix(a, b, c), epsilon, opt);
}

// ---------------------------------------------------------------------------
// Maps

// T(x_i) = sum_j pi_ij y_j / sum_j pi_ij.
inline TransportMap barycentric_map(const TransportPlan& p) {
  const std::size_t m = p.rows.size(), n = p.cols.size();
  TransportMap t;
  t.dim = p.rows.dim;
  t.imageDim = p.cols.dim;
  t.sources = p.rows.coords;
  t.images.assign(m * t.imageDim, 0.0);
  t.deterministic = true;
  for (std::size_t i = 0; i < m; ++i) {
    const double rs = p.row_sum(i);
    detail::require(rs > 0.0, "barycentric_map: zero row in plan");
    std::size_t nonzero = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const double w = p.at(i, j);
      if (w > 1e-9 * rs) ++nonzero;
      if (w == 0.0) continue;
      auto y = p.cols.point(j);
      for (std::size_t k = 0; k < t.imageDim; ++k) t.images[i * t.imageDim + k] += w * y[k];
    }
    for (std::size_t k = 0; k < t.imageDim; ++k) t.images[i * t.imageDim + k] /= rs;
    if (nonzero != 1) t.deterministic = false;
  }
  return t;
}

// Whether t is a bijection between its source atoms and distinct images.
inline bool is_atom_bijection(const TransportMap& t) {
  if (!t.deterministic || t.dim != t.imageDim) return false;
  const std::size_t n = t.size();
  std::vector<double> w(n, 1.0);
  const DiscreteMeasure merged = detail::merge_atoms(t.imageDim, t.images, w);
  return merged.size() == n;
}

// Exact inverse for atom bijections; otherwise the barycentric map of the
// reverse-direction plan, flagged approximateInverse.
inline TransportMap invert_map(const TransportMap& t, const TransportPlan& reversePlan) {
  if (is_atom_bijection(t)) {
    TransportMap inv;
    inv.dim = t.imageDim;
    inv.imageDim = t.dim;
    inv.sources = t.images;
    inv.images = t.sources;
    inv.deterministic = true;
    return inv;
  }
  TransportMap inv = barycentric_map(reversePlan);
  inv.approximateInverse = true;
  return inv;
}

// Exact plan for the reverse problem (target -> source) under the same cost.
inline TransportPlan reverse_plan(const TransportPlan& p, const CostSpec& c) {
  return solve_exact_ot(p.cols, p.rows, c.transposed());
}

// Image measure of the plan's source under a map defined on its rows.
inline DiscreteMeasure pushforward(const TransportMap& t, const std::vector<double>& weights) {
  detail::require(weights.size() == t.size(), "pushforward: weight count mismatch");
  return detail::merge_atoms(t.imageDim, t.images, weights);
}

}  // namespace mprecon
