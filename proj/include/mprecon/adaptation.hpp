#pragma once

// Optimal-transport domain adaptation: adapted agents f* o T^-1, per-class
// transport maps under loss-matching costs, the conditional average guess,
// the transferability score d_h, affine recovery and blur sweeps.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "learning.hpp"
#include "measure.hpp"
#include "preconditioners.hpp"
#include "rng.hpp"
#include "transport.hpp"

namespace mprecon {

// ---------------------------------------------------------------------------
// Domains

// x -> A x + b with A stored row-major.
struct AffinePreMap {
  std::size_t dim = 1;
  std::vector<double> A{1.0};
  std::vector<double> b{0.0};

  void validate() const {
    detail::require(dim >= 1 && A.size() == dim * dim && b.size() == dim, "affine pre-map: shape mismatch");
    for (double v : A) detail::require(std::isfinite(v), "affine pre-map: non-finite entry");
    for (double v : b) detail::require(std::isfinite(v), "affine pre-map: non-finite entry");
  }

  Point apply(std::span<const double> x) const {
    detail::require(x.size() == dim, "affine pre-map: point dimension mismatch");
    Point y(b);
    for (std::size_t r = 0; r < dim; ++r)
      for (std::size_t c = 0; c < dim; ++c) y[r] += A[r * dim + c] * x[c];
    return y;
  }
};

struct DomainPair {
  Sample source;
  Sample target;
  bool targetLabelsVisible = true;
  std::vector<std::pair<double, double>> classMap;  // source label -> target label; empty means identity
  std::optional<AffinePreMap> targetPreMap;          // applied to target features before transport

  // Distinct labels of a sample in increasing order.
  static std::vector<double> labels_of(const Sample& s) {
    detail::require(s.has_labels(), "domain pair: samples need labels");
    std::set<double> u(s.labels->begin(), s.labels->end());
    return {u.begin(), u.end()};
  }

  // Declared correspondence, or the identity on the source labels.
  std::vector<std::pair<double, double>> class_pairs() const {
    if (!classMap.empty()) return classMap;
    std::vector<std::pair<double, double>> out;
    for (double y : labels_of(source)) out.emplace_back(y, y);
    return out;
  }

  void validate() const {
    source.validate();
    target.validate();
    detail::require(source.has_labels(), "domain pair: source sample needs labels");
    detail::require(target.has_labels(), "domain pair: target sample needs labels (evaluation-only when hidden)");
    detail::require(source.dim() == target.dim(), "domain pair: feature dimensions differ");
    if (targetPreMap) {
      targetPreMap->validate();
      detail::require(targetPreMap->dim == target.dim(), "domain pair: pre-map dimension mismatch");
    }
  }

  // Class-level checks, needed by the conditional maps but not by d_h.
  void validate_classes() const {
    validate();
    const auto pairs = class_pairs();
    std::set<double> s, t;
    for (const auto& [a, b] : pairs) {
      detail::require(s.insert(a).second && t.insert(b).second, "domain pair: class map is not a bijection");
    }
    for (double y : labels_of(source))
      detail::require(s.count(y) == 1, "domain pair: source label " + detail::format_number(y) + " has no correspondent");
    for (double y : labels_of(target))
      detail::require(t.count(y) == 1, "domain pair: target label " + detail::format_number(y) + " has no correspondent");
  }

  Point prepared_target(std::size_t i) const {
    const Point& x = target.features[i];
    return targetPreMap ? targetPreMap->apply(x) : x;
  }
};

namespace detail {

inline std::vector<std::size_t> indices_with_label(const Sample& s, double y) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < s.size(); ++i)
    if ((*s.labels)[i] == y) idx.push_back(i);
  return idx;
}

// Uniform measure on the listed points, duplicates kept as separate atoms.
inline DiscreteMeasure uniform_atoms(const std::vector<Point>& pts) {
  require(!pts.empty(), "uniform_atoms: no points");
  DiscreteMeasure m;
  m.dim = pts.front().size();
  for (const auto& p : pts) m.coords.insert(m.coords.end(), p.begin(), p.end());
  m.weights.assign(pts.size(), 1.0 / static_cast<double>(pts.size()));
  return m;
}

inline double nearest_label(double v, const std::vector<double>& labels) {
  double best = labels.front();
  for (double y : labels)
    if (std::abs(v - y) < std::abs(v - best)) best = y;
  return best;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Adapted agents

struct AdaptedPredictor {
  Predictor base;
  TransportMap inverse;  // target -> source, extended by nearest atom
  std::optional<AffinePreMap> preMap;

  double operator()(std::span<const double> x) const {
    if (preMap) {
      const Point z = preMap->apply(x);
      return base(inverse.apply(z));
    }
    return base(inverse.apply(x));
  }
  double operator()(const Point& x) const { return (*this)(std::span<const double>(x)); }

  Predictor as_predictor() const {
    return [self = *this](std::span<const double> x) { return self(x); };
  }
};

// f o T^-1 for a source -> target map. A reverse plan is needed only when t is
// not a bijection between atoms.
inline AdaptedPredictor adapt_agent(const Predictor& f, const TransportMap& t,
                                    const std::optional<TransportPlan>& reversePlan = std::nullopt) {
  detail::require(t.size() > 0, "adapt_agent: empty map");
  detail::require(static_cast<bool>(f), "adapt_agent: missing agent");
  if (!is_atom_bijection(t))
    detail::require(reversePlan.has_value(), "adapt_agent: map is not invertible on atoms and no reverse plan was given");
  TransportMap inv = reversePlan ? invert_map(t, *reversePlan) : invert_map(t, TransportPlan{});
  return {f, std::move(inv), std::nullopt};
}

inline AdaptedPredictor adapt_agent(const Agent& f, const TransportMap& t,
                                    const std::optional<TransportPlan>& reversePlan = std::nullopt) {
  return adapt_agent(as_predictor(f), t, reversePlan);
}

// From a solved source -> target plan; the reverse plan is solved under the same cost when required.
inline AdaptedPredictor adapt_agent(const Agent& f, const TransportPlan& plan, const CostSpec& cost) {
  detail::require(plan.rows.size() > 0 && plan.cols.size() > 0, "adapt_agent: empty plan");
  const TransportMap t = barycentric_map(plan);
  if (is_atom_bijection(t)) return adapt_agent(f, t);
  return adapt_agent(f, t, reverse_plan(plan, cost));
}

// ---------------------------------------------------------------------------
// Conditional transport maps

struct ClassTransport {
  double sourceLabel = 0.0;
  double targetLabel = 0.0;
  CostSpec cost;  // tabulated c_y
  TransportPlan plan;
  TransportMap map;
};

struct ConditionalMaps {
  std::vector<ClassTransport> classes;
  std::optional<AffinePreMap> preMap;
};

// Exact OT between the class-conditional samples under
// c_y(x, x~) = |L1(f*(x), y) - L2(f*(x~), y~)|, with y~ the corresponding target label.
inline ConditionalMaps conditional_ot_maps(const DomainPair& d, const Predictor& fStar, const LossFunction& L1,
                                           const LossFunction& L2) {
  d.validate_classes();
  detail::require(d.targetLabelsVisible, "conditional_ot_maps: target class-conditionals need visible labels");
  ConditionalMaps out;
  out.preMap = d.targetPreMap;
  for (const auto& [ys, yt] : d.class_pairs()) {
    const auto is = detail::indices_with_label(d.source, ys);
    const auto it = detail::indices_with_label(d.target, yt);
    detail::require(!is.empty(), "conditional_ot_maps: empty source class " + detail::format_number(ys));
    detail::require(!it.empty(), "conditional_ot_maps: empty target class " + detail::format_number(yt));
    std::vector<Point> xs, xt;
    for (std::size_t i : is) xs.push_back(d.source.features[i]);
    for (std::size_t j : it) xt.push_back(d.prepared_target(j));
    std::vector<double> ls(xs.size()), lt(xt.size());
    for (std::size_t i = 0; i < xs.size(); ++i) ls[i] = L1.value(fStar(xs[i]), ys);
    for (std::size_t j = 0; j < xt.size(); ++j) lt[j] = L2.value(fStar(xt[j]), yt);
    std::vector<double> C(xs.size() * xt.size());
    for (std::size_t i = 0; i < xs.size(); ++i)
      for (std::size_t j = 0; j < xt.size(); ++j) C[i * xt.size() + j] = std::abs(ls[i] - lt[j]);
    ClassTransport ct;
    ct.sourceLabel = ys;
    ct.targetLabel = yt;
    ct.cost = CostSpec::tabulated(std::move(C), xs.size(), xt.size());
    ct.plan = solve_exact_ot(detail::uniform_atoms(xs), detail::uniform_atoms(xt), ct.cost);
    ct.map = barycentric_map(ct.plan);
    out.classes.push_back(std::move(ct));
  }
  return out;
}

inline ConditionalMaps conditional_ot_maps(const DomainPair& d, const Agent& fStar, const LossFunction& L1,
                                           const LossFunction& L2) {
  return conditional_ot_maps(d, as_predictor(fStar), L1, L2);
}

// Empirical nu^t in the order of the class correspondence.
inline std::vector<double> target_class_weights(const DomainPair& d) {
  d.validate_classes();
  std::vector<double> w;
  for (const auto& pr : d.class_pairs())
    w.push_back(static_cast<double>(detail::indices_with_label(d.target, pr.second).size()) /
                static_cast<double>(d.target.size()));
  return w;
}

// ---------------------------------------------------------------------------
// Conditional average guess

enum class GuessMode { AverageMaps, AverageInverses, ProjectionWeighted };
enum class ProjectionWeighting { DistanceProportional, InverseDistance, ProjectionSumNorm };

inline std::string to_string(GuessMode m) {
  switch (m) {
    case GuessMode::AverageMaps: return "average-maps";
    case GuessMode::AverageInverses: return "average-inverses";
    case GuessMode::ProjectionWeighted: return "projection-weighted";
  }
  return "?";
}

inline GuessMode guess_mode_from_string(const std::string& s) {
  if (s == "average-maps") return GuessMode::AverageMaps;
  if (s == "average-inverses") return GuessMode::AverageInverses;
  if (s == "projection-weighted") return GuessMode::ProjectionWeighted;
  throw InvalidArgument("unknown guess mode '" + s + "'");
}

inline std::string to_string(ProjectionWeighting w) {
  switch (w) {
    case ProjectionWeighting::DistanceProportional: return "distance";
    case ProjectionWeighting::InverseDistance: return "inverse-distance";
    case ProjectionWeighting::ProjectionSumNorm: return "projection-sum-norm";
  }
  return "?";
}

inline ProjectionWeighting projection_weighting_from_string(const std::string& s) {
  if (s == "distance") return ProjectionWeighting::DistanceProportional;
  if (s == "inverse-distance") return ProjectionWeighting::InverseDistance;
  if (s == "projection-sum-norm") return ProjectionWeighting::ProjectionSumNorm;
  throw InvalidArgument("unknown projection weighting '" + s + "'");
}

struct GuessOptions {
  GuessMode mode = GuessMode::AverageMaps;
  ProjectionWeighting weighting = ProjectionWeighting::DistanceProportional;
};

namespace detail {

inline TransportMap class_inverse(const ClassTransport& c) {
  if (is_atom_bijection(c.map)) return invert_map(c.map, TransportPlan{});
  return invert_map(c.map, reverse_plan(c.plan, c.cost));
}

// Per-class weights of the projection-weighted guess at a target point.
inline std::vector<double> projection_weights(const std::vector<double>& dist, const std::vector<Point>& proj,
                                              ProjectionWeighting w) {
  const std::size_t K = dist.size();
  std::vector<double> out(K, 1.0 / static_cast<double>(K));
  switch (w) {
    case ProjectionWeighting::DistanceProportional: {
      const double s = std::accumulate(dist.begin(), dist.end(), 0.0);
      if (s > 0.0)
        for (std::size_t k = 0; k < K; ++k) out[k] = dist[k] / s;
      break;
    }
    case ProjectionWeighting::InverseDistance: {
      std::size_t zeros = static_cast<std::size_t>(std::count(dist.begin(), dist.end(), 0.0));
      if (zeros > 0) {
        for (std::size_t k = 0; k < K; ++k) out[k] = dist[k] == 0.0 ? 1.0 / static_cast<double>(zeros) : 0.0;
        break;
      }
      double s = 0.0;
      for (double v : dist) s += 1.0 / v;
      for (std::size_t k = 0; k < K; ++k) out[k] = (1.0 / dist[k]) / s;
      break;
    }
    case ProjectionWeighting::ProjectionSumNorm: {
      Point sum(proj.front().size(), 0.0);
      for (const auto& p : proj)
        for (std::size_t a = 0; a < p.size(); ++a) sum[a] += p[a];
      double nrm = 0.0;
      for (double v : sum) nrm += v * v;
      nrm = std::sqrt(nrm);
      require<DegenerateInput>(nrm > 0.0, "projection weights: sum of class projections is zero");
      for (std::size_t k = 0; k < K; ++k) out[k] = dist[k] / nrm;
      break;
    }
  }
  return out;
}

}  // namespace detail

struct GuessPredictor {
  Predictor base;
  GuessMode mode = GuessMode::AverageMaps;
  ProjectionWeighting weighting = ProjectionWeighting::DistanceProportional;
  std::optional<AdaptedPredictor> averaged;  // AverageMaps
  std::vector<TransportMap> inverses;        // AverageInverses / ProjectionWeighted
  std::vector<double> classWeights;
  std::optional<AffinePreMap> preMap;

  // Preimage of a target point under the guessed transport.
  Point preimage(std::span<const double> x0) const {
    const Point x = preMap ? preMap->apply(x0) : Point(x0.begin(), x0.end());
    if (mode == GuessMode::AverageMaps) return averaged->inverse.apply(x);
    const std::size_t K = inverses.size();
    std::vector<double> w = classWeights;
    if (mode == GuessMode::ProjectionWeighted) {
      std::vector<double> dist(K);
      std::vector<Point> proj(K);
      for (std::size_t k = 0; k < K; ++k) {
        auto s = inverses[k].source(inverses[k].nearest_source(x));
        proj[k] = Point(s.begin(), s.end());
        dist[k] = std::sqrt(squared_distance(x, proj[k]));
      }
      w = detail::projection_weights(dist, proj, weighting);
    }
    Point z(inverses.front().imageDim, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
      const Point im = inverses[k].apply(x);
      for (std::size_t a = 0; a < z.size(); ++a) z[a] += w[k] * im[a];
    }
    return z;
  }

  double operator()(std::span<const double> x) const {
    if (mode == GuessMode::AverageMaps) return (*averaged)(x);
    return base(preimage(x));
  }
  double operator()(const Point& x) const { return (*this)(std::span<const double>(x)); }

  Predictor as_predictor() const {
    return [self = *this](std::span<const double> x) { return self(x); };
  }
};

// f_ad = f* o (T^{f*})^-1 with T^{f*}(x) = sum_y nu^t(y) T^{f,y}(x).
inline GuessPredictor conditional_average_guess(const ConditionalMaps& maps, const std::vector<double>& targetClassWeights,
                                                const Predictor& fStar, const GuessOptions& opt = {}) {
  const std::size_t K = maps.classes.size();
  detail::require(K >= 1, "conditional_average_guess: no classes");
  detail::require(targetClassWeights.size() == K, "conditional_average_guess: weight/class mismatch");
  double total = 0.0;
  for (double w : targetClassWeights) {
    detail::require(w >= 0.0 && std::isfinite(w), "conditional_average_guess: weights must be nonnegative");
    total += w;
  }
  detail::require(std::abs(total - 1.0) <= 1e-9, "conditional_average_guess: class weights must sum to 1");
  GuessPredictor g;
  g.base = fStar;
  g.mode = opt.mode;
  g.weighting = opt.weighting;
  g.classWeights = targetClassWeights;
  g.preMap = maps.preMap;

  if (opt.mode == GuessMode::AverageMaps) {
    if (K == 1) {
      const auto& c = maps.classes.front();
      std::optional<TransportPlan> rev;
      if (!is_atom_bijection(c.map)) rev = reverse_plan(c.plan, c.cost);
      g.averaged = adapt_agent(fStar, c.map, rev);
    } else {
      TransportMap avg;
      avg.dim = maps.classes.front().map.dim;
      avg.imageDim = maps.classes.front().map.imageDim;
      avg.deterministic = true;
      for (const auto& c : maps.classes) {
        for (std::size_t i = 0; i < c.map.size(); ++i) {
          auto x = c.map.source(i);
          avg.sources.insert(avg.sources.end(), x.begin(), x.end());
          Point im(avg.imageDim, 0.0);
          for (std::size_t k = 0; k < K; ++k) {
            const Point t = maps.classes[k].map.apply(x);
            for (std::size_t a = 0; a < im.size(); ++a) im[a] += targetClassWeights[k] * t[a];
          }
          avg.images.insert(avg.images.end(), im.begin(), im.end());
        }
      }
      std::optional<TransportPlan> rev;
      if (!is_atom_bijection(avg)) {
        const std::size_t n = avg.size();
        const DiscreteMeasure src{avg.dim, avg.sources, std::vector<double>(n, 1.0 / static_cast<double>(n))};
        const DiscreteMeasure img{avg.imageDim, avg.images, std::vector<double>(n, 1.0 / static_cast<double>(n))};
        rev = solve_exact_ot(img, src, CostSpec::quadratic());
      }
      g.averaged = adapt_agent(fStar, avg, rev);
    }
    g.averaged->preMap = maps.preMap;
    return g;
  }
  for (const auto& c : maps.classes) g.inverses.push_back(detail::class_inverse(c));
  return g;
}

inline GuessPredictor conditional_average_guess(const ConditionalMaps& maps, const std::vector<double>& targetClassWeights,
                                                const Agent& fStar, const GuessOptions& opt = {}) {
  return conditional_average_guess(maps, targetClassWeights, as_predictor(fStar), opt);
}

// ---------------------------------------------------------------------------
// Transferability

struct HFunction {
  enum class Kind { Square, AbsSmoothed, Custom };
  Kind kind = Kind::Square;
  std::function<double(double)> custom;

  static HFunction square() { return {Kind::Square, {}}; }
  static HFunction abs_smoothed() { return {Kind::AbsSmoothed, {}}; }
  static HFunction from(std::function<double(double)> h) {
    detail::require(static_cast<bool>(h), "h: empty function");
    detail::require(h(0.0) == 0.0, "h: must satisfy h(0) = 0");
    return {Kind::Custom, std::move(h)};
  }

  double operator()(double r) const {
    switch (kind) {
      case Kind::Square: return r * r;
      case Kind::AbsSmoothed: return std::pow(std::abs(r), 1.01);
      case Kind::Custom: return custom(r);
    }
    return 0.0;
  }

  std::string name() const {
    switch (kind) {
      case Kind::Square: return "square";
      case Kind::AbsSmoothed: return "abs-smoothed";
      case Kind::Custom: return "custom";
    }
    return "?";
  }
};

inline HFunction h_from_string(const std::string& s) {
  if (s == "square") return HFunction::square();
  if (s == "abs-smoothed") return HFunction::abs_smoothed();
  throw InvalidArgument("unknown h preset '" + s + "'");
}

struct TransferabilityResult {
  double value = 0.0;
  TransportPlan plan;
};

// Exact OT between the joint empirical measures with ground cost
// h(L1(f1(x1), y1) - L2(f2(x2), y2)).
inline TransferabilityResult transferability_detail(const DomainPair& d, const Predictor& f1, const Predictor& f2,
                                                    const LossFunction& L1, const LossFunction& L2, const HFunction& h) {
  d.validate();
  const std::size_t m = d.source.size(), n = d.target.size();
  std::vector<double> ls(m), lt(n);
  for (std::size_t i = 0; i < m; ++i) ls[i] = L1.value(f1(d.source.features[i]), (*d.source.labels)[i]);
  for (std::size_t j = 0; j < n; ++j) lt[j] = L2.value(f2(d.prepared_target(j)), (*d.target.labels)[j]);
  std::vector<double> C(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double v = h(ls[i] - lt[j]);
      detail::require(std::isfinite(v) && v >= 0.0, "transferability: h must be finite and nonnegative");
      C[i * n + j] = v;
    }
  TransferabilityResult r;
  r.plan = solve_exact_ot(detail::uniform_atoms(d.source.joint_points()), detail::uniform_atoms(d.target.joint_points()),
                          CostSpec::tabulated(std::move(C), m, n));
  r.value = std::max(0.0, r.plan.cost);
  return r;
}

inline double transferability_dh(const DomainPair& d, const Predictor& f1, const Predictor& f2, const LossFunction& L1,
                                 const LossFunction& L2, const HFunction& h = HFunction::square()) {
  return transferability_detail(d, f1, f2, L1, L2, h).value;
}

inline double transferability_dh(const DomainPair& d, const Agent& f1, const Agent& f2, const LossFunction& L1,
                                 const LossFunction& L2, const HFunction& h = HFunction::square()) {
  return transferability_dh(d, as_predictor(f1), as_predictor(f2), L1, L2, h);
}

// ---------------------------------------------------------------------------
// Transfer reports

struct ClassAccuracy {
  double label = 0.0;
  std::size_t count = 0;
  double accuracy = 0.0;
};

struct TransferReport {
  double dh = 0.0;
  double adaptedLoss = 0.0;
  double oracleLoss = 0.0;
  double gap = 0.0;
  double sourceLoss = 0.0;
  double unadaptedLoss = 0.0;
  std::optional<double> accuracy;
  std::optional<std::vector<ClassAccuracy>> perClassAccuracy;
  bool oracleOptimal = true;
  Agent sourceAgent;
  Agent oracleAgent;
};

struct TransferOptions {
  GuessOptions guess;
  ErmOptions erm;
  HFunction h = HFunction::square();
  bool classification = true;  // report accuracies with nearest-label decisions
};

// Share of points whose prediction, rounded to the nearest label value, is correct.
inline std::pair<double, std::vector<ClassAccuracy>> accuracy_by_class(const Sample& s, const Predictor& f) {
  const auto labels = DomainPair::labels_of(s);
  std::vector<ClassAccuracy> per;
  for (double y : labels) per.push_back({y, 0, 0.0});
  std::size_t correct = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double y = (*s.labels)[i];
    const std::size_t k =
        static_cast<std::size_t>(std::lower_bound(labels.begin(), labels.end(), y) - labels.begin());
    ++per[k].count;
    if (detail::nearest_label(f(s.features[i]), labels) == y) {
      per[k].accuracy += 1.0;
      ++correct;
    }
  }
  for (auto& c : per) c.accuracy /= static_cast<double>(c.count);
  return {static_cast<double>(correct) / static_cast<double>(s.size()), per};
}

// Source ERM, conditional maps, the average guess on the target, and a target oracle.
inline TransferReport run_transfer(const DomainPair& d, std::shared_ptr<const HypothesisClass> cls, const LossFunction& L1,
                                   const LossFunction& L2, const TransferOptions& opt = {}) {
  d.validate_classes();
  TransferReport r;
  const auto src = erm_detail(build_empirical(d.source), cls, L1, opt.erm);
  r.sourceAgent = src.agent;
  r.sourceLoss = src.loss;

  Sample tgt = d.target;
  if (d.targetPreMap)
    for (std::size_t i = 0; i < tgt.size(); ++i) tgt.features[i] = d.prepared_target(i);
  const Measure target = build_empirical(tgt);
  const auto orc = erm_detail(target, cls, L2, opt.erm);
  r.oracleAgent = orc.agent;
  r.oracleLoss = orc.loss;

  const ConditionalMaps maps = conditional_ot_maps(d, r.sourceAgent, L1, L2);
  GuessPredictor g = conditional_average_guess(maps, target_class_weights(d), r.sourceAgent, opt.guess);
  // The pre-map already acts on tgt; evaluate the guess on prepared points.
  g.preMap.reset();
  if (g.averaged) g.averaged->preMap.reset();
  const Predictor fad = g.as_predictor();
  r.adaptedLoss = total_loss(target, fad, L2);
  r.unadaptedLoss = total_loss(target, as_predictor(r.sourceAgent), L2);
  r.gap = r.adaptedLoss - r.oracleLoss;
  r.oracleOptimal = r.oracleLoss <= r.adaptedLoss + 1e-9;
  if (opt.classification) {
    auto [acc, per] = accuracy_by_class(tgt, fad);
    r.accuracy = acc;
    r.perClassAccuracy = std::move(per);
  }
  r.dh = transferability_dh(d, as_predictor(r.sourceAgent), as_predictor(r.oracleAgent), L1, L2, opt.h);
  return r;
}

// ---------------------------------------------------------------------------
// Affine recovery

struct AffineRecoveryReport {
  std::size_t n = 0;
  std::size_t dim = 0;
  bool identityPairing = false;
  std::size_t mismatches = 0;
  double planCost = 0.0;
  double sourceLoss = 0.0;
  double adaptedLoss = 0.0;
  double gap = 0.0;
  bool passed = false;
};

namespace detail {

// Cholesky test for symmetric positive definiteness.
inline bool symmetric_positive_definite(const std::vector<double>& A, std::size_t p) {
  for (std::size_t r = 0; r < p; ++r)
    for (std::size_t c = 0; c < r; ++c)
      if (std::abs(A[r * p + c] - A[c * p + r]) > 1e-12 * (1.0 + std::abs(A[r * p + c]))) return false;
  std::vector<double> Lc(p * p, 0.0);
  for (std::size_t j = 0; j < p; ++j) {
    double s = A[j * p + j];
    for (std::size_t k = 0; k < j; ++k) s -= Lc[j * p + k] * Lc[j * p + k];
    if (!(s > 0.0)) return false;
    Lc[j * p + j] = std::sqrt(s);
    for (std::size_t i = j + 1; i < p; ++i) {
      double t = A[i * p + j];
      for (std::size_t k = 0; k < j; ++k) t -= Lc[i * p + k] * Lc[j * p + k];
      Lc[i * p + j] = t / Lc[j * p + j];
    }
  }
  return true;
}

}  // namespace detail

// Source x ~ N(0, I), labels y = 1 + sum_k x_k + N(0, 0.25); target x^t = A x + b
// with identical labels. The quadratic-cost plan must pair i with i and the
// adapted agent must reproduce the source ERM loss on the target.
inline AffineRecoveryReport affine_recovery_test(std::size_t n, const std::vector<double>& A, const std::vector<double>& b,
                                                 std::shared_ptr<const HypothesisClass> cls, const LossFunction& L,
                                                 RandomSeed seed, const ErmOptions& ermOpt = {}) {
  detail::require(n >= 1, "affine_recovery_test: n must be positive");
  const std::size_t p = b.size();
  detail::require(p >= 1 && A.size() == p * p, "affine_recovery_test: A and b shapes differ");
  detail::require(detail::symmetric_positive_definite(A, p), "affine_recovery_test: A must be symmetric positive definite");
  detail::require(cls != nullptr && cls->featureDim == p, "affine_recovery_test: class feature dimension mismatch");
  Rng rng(derive_seed(seed.value, 0));
  Sample s, t;
  s.labels.emplace();
  t.labels.emplace();
  const AffinePreMap T{p, A, b};
  for (std::size_t i = 0; i < n; ++i) {
    Point x(p);
    double y = 1.0;
    for (std::size_t a = 0; a < p; ++a) {
      x[a] = rng.normal();
      y += x[a];
    }
    y += 0.5 * rng.normal();
    t.features.push_back(T.apply(x));
    s.features.push_back(std::move(x));
    s.labels->push_back(y);
    t.labels->push_back(y);
  }
  const auto src = erm_detail(build_empirical(s), cls, L, ermOpt);
  const TransportPlan plan =
      solve_exact_ot(detail::uniform_atoms(s.features), detail::uniform_atoms(t.features), CostSpec::quadratic());
  AffineRecoveryReport r;
  r.n = n;
  r.dim = p;
  r.planCost = plan.cost;
  for (std::size_t i = 0; i < n; ++i)
    if (plan.at(i, i) < (1.0 - 1e-9) / static_cast<double>(n)) ++r.mismatches;
  r.identityPairing = r.mismatches == 0;
  const AdaptedPredictor fad = adapt_agent(src.agent, plan, CostSpec::quadratic());
  r.sourceLoss = src.loss;
  r.adaptedLoss = total_loss(build_empirical(t), fad.as_predictor(), L);
  r.gap = std::abs(r.adaptedLoss - r.sourceLoss);
  r.passed = r.identityPairing && r.gap < 1e-6;
  return r;
}

// ---------------------------------------------------------------------------
// Blur sweep

struct BlurRow {
  double sigma = 0.0;
  std::vector<double> theta;
  double blurredLoss = 0.0;  // ERM objective on the blurred measure
  double loss = 0.0;         // total loss on the unblurred joint
  std::optional<double> accuracy;
};

struct BlurSweepOptions {
  double slack = 0.1;
  double absTolerance = 1e-12;
  std::size_t maxClassLabels = 16;  // accuracies are reported when labels take at most this many values
  ErmOptions erm;
};

struct BlurSweepReport {
  std::vector<BlurRow> rows;
  std::vector<double> lossDeltas;      // |loss(sigma) - loss(0)|
  std::vector<double> accuracyDeltas;  // |accuracy(sigma) - accuracy(0)|
  bool lossMonotone = false;           // deltas nonincreasing along sigma order within slack
  std::size_t monotoneViolations = 0;
};

// Features blurred by gaussian_convolve on `grid` (labels untouched), ERM on
// each blurred measure, evaluation on the raw joint. sigma = 0 is plain ERM.
inline BlurSweepReport blur_sweep(const Sample& joint, const std::vector<double>& sigmas,
                                  std::shared_ptr<const HypothesisClass> cls, const LossFunction& L, const GridSpec& grid,
                                  const BlurSweepOptions& opt = {}) {
  joint.validate();
  detail::require(joint.has_labels(), "blur_sweep: sample needs labels");
  detail::require(!sigmas.empty() && sigmas.back() == 0.0, "blur_sweep: last sigma must be 0");
  for (std::size_t k = 1; k < sigmas.size(); ++k)
    detail::require(sigmas[k] < sigmas[k - 1], "blur_sweep: sigmas must be strictly decreasing");
  detail::require(sigmas.front() >= 0.0, "blur_sweep: sigmas must be nonnegative");
  detail::require(grid.dim() == joint.dim() + 1, "blur_sweep: grid must live in the joint space");
  const Measure raw = build_empirical(joint);
  const auto labels = DomainPair::labels_of(joint);
  const bool classification = labels.size() <= opt.maxClassLabels;
  std::vector<bool> mask(joint.dim() + 1, true);
  mask.back() = false;

  BlurSweepReport rep;
  for (double sigma : sigmas) {
    const Measure m = sigma > 0.0 ? gaussian_convolve(raw, sigma, grid, mask) : raw;
    const auto e = erm_detail(m, cls, L, opt.erm);
    BlurRow row;
    row.sigma = sigma;
    row.theta = e.agent.theta;
    row.blurredLoss = e.loss;
    row.loss = total_loss(raw, e.agent, L);
    if (classification) row.accuracy = accuracy_by_class(joint, as_predictor(e.agent)).first;
    rep.rows.push_back(std::move(row));
  }
  const BlurRow& base = rep.rows.back();
  for (const auto& r : rep.rows) {
    rep.lossDeltas.push_back(std::abs(r.loss - base.loss));
    if (classification) rep.accuracyDeltas.push_back(std::abs(*r.accuracy - *base.accuracy));
  }
  for (std::size_t k = 1; k < rep.lossDeltas.size(); ++k)
    if (rep.lossDeltas[k] > (1.0 + opt.slack) * rep.lossDeltas[k - 1] + opt.absTolerance) ++rep.monotoneViolations;
  rep.lossMonotone = rep.monotoneViolations == 0;
  return rep;
}

// ---------------------------------------------------------------------------
// Synthetic domains

// Labels alternate -1, +1; x | y ~ N(y * separation + shift, 1).
inline Sample two_class_gaussian(std::size_t n, double separation, double shift, RandomSeed seed) {
  detail::require(n >= 2, "two_class_gaussian: need at least two points");
  Rng rng(seed);
  Sample s;
  s.labels.emplace();
  for (std::size_t i = 0; i < n; ++i) {
    const double y = i % 2 == 0 ? -1.0 : 1.0;
    s.features.push_back({y * separation + shift + rng.normal()});
    s.labels->push_back(y);
  }
  return s;
}

// Source and target two-class samples, the target shifted by `shift`.
inline DomainPair shifted_two_class_pair(std::size_t n, double separation, double shift, RandomSeed seed) {
  DomainPair d;
  d.source = two_class_gaussian(n, separation, 0.0, RandomSeed{derive_seed(seed.value, 1)});
  d.target = two_class_gaussian(n, separation, shift, RandomSeed{derive_seed(seed.value, 2)});
  return d;
}

// Two classes in the plane, x | y ~ N(y (c, c), sd^2 I) conditioned on y (x1 + x2) >= margin.
inline Sample separable_two_class(std::size_t n, RandomSeed seed, double c = 1.5, double sd = 0.5, double margin = 1.0) {
  detail::require(n >= 2, "separable_two_class: need at least two points");
  Rng rng(seed);
  Sample s;
  s.labels.emplace();
  for (std::size_t i = 0; i < n; ++i) {
    const double y = i % 2 == 0 ? -1.0 : 1.0;
    Point x(2);
    do {
      x[0] = y * c + sd * rng.normal();
      x[1] = y * c + sd * rng.normal();
    } while (y * (x[0] + x[1]) < margin);
    s.features.push_back(std::move(x));
    s.labels->push_back(y);
  }
  return s;
}

}  // namespace mprecon
