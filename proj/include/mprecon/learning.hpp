#pragma once

// Losses, hypothesis classes, total loss and empirical risk minimization.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "measure.hpp"
#include "metrics.hpp"
#include "rng.hpp"

namespace mprecon {

// ---------------------------------------------------------------------------
// Losses

enum class LossKind { Squared, Absolute, Logistic };

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::Squared: return "squared";
    case LossKind::Absolute: return "absolute";
    case LossKind::Logistic: return "logistic";
  }
  return "?";
}

inline LossKind loss_kind_from_string(const std::string& s) {
  if (s == "squared") return LossKind::Squared;
  if (s == "absolute") return LossKind::Absolute;
  if (s == "logistic") return LossKind::Logistic;
  throw InvalidArgument("unknown loss kind '" + s + "'");
}

struct LossFunction {
  LossKind kind = LossKind::Squared;
  std::optional<double> clip;    // L = min(base, clip) when set
  std::optional<double> boundM;  // sup bound flag
  std::optional<double> lipC;    // Lipschitz constant of (x, y) -> L(f(x), y) over the class

  static LossFunction squared() { return {LossKind::Squared}; }
  static LossFunction absolute() { return {LossKind::Absolute}; }
  static LossFunction logistic() { return {LossKind::Logistic}; }
  static LossFunction clipped(LossKind base, double M) { return {base, M, M, std::nullopt}; }

  LossFunction with_lipschitz(double c) const {
    LossFunction l = *this;
    l.lipC = c;
    return l;
  }

  double operator()(double f, double y) const {
    double v = 0.0;
    switch (kind) {
      case LossKind::Squared: v = (f - y) * (f - y); break;
      case LossKind::Absolute: v = std::abs(f - y); break;
      case LossKind::Logistic: {
        const double z = -y * f;
        v = z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
        break;
      }
    }
    return clip ? std::min(v, *clip) : v;
  }

  LossFunction scaled(double s) const {
    detail::require(s > 0.0, "LossFunction::scaled: factor must be positive");
    LossFunction l = *this;
    l.scale = scale * s;
    return l;
  }

  double value(double f, double y) const { return scale * (*this)(f, y); }

  void validate() const {
    if (clip) {
      detail::require(*clip > 0.0 && std::isfinite(*clip), "clipped loss: clip level must be positive");
      detail::require(boundM.has_value(), "clipped loss: boundM must be set");
    }
    if (boundM) detail::require(*boundM > 0.0 && std::isfinite(*boundM), "loss: boundM must be positive");
    if (lipC) detail::require(*lipC > 0.0 && std::isfinite(*lipC), "loss: lipC must be positive");
    detail::require(scale > 0.0, "loss: scale must be positive");
  }

  std::string name() const {
    std::string s = to_string(kind);
    if (clip) s = "clipped(" + s + ")";
    return s;
  }

  double scale = 1.0;
};

// ---------------------------------------------------------------------------
// Hypothesis classes

enum class ClassFamily { Affine, Tabulated };

struct HypothesisClass {
  using Member = std::function<double(std::span<const double>)>;

  ClassFamily family = ClassFamily::Affine;
  std::size_t featureDim = 1;
  std::vector<double> paramLo, paramHi;     // theta box (affine: slopes then intercept)
  std::vector<double> featureLo, featureHi;  // box carrying the evaluation lattice
  std::vector<Member> members;               // tabulated family
  std::vector<std::string> memberNames;

  static HypothesisClass affine(std::vector<double> paramLo, std::vector<double> paramHi, std::vector<double> featureLo,
                                std::vector<double> featureHi) {
    HypothesisClass c;
    c.family = ClassFamily::Affine;
    c.featureDim = featureLo.size();
    c.paramLo = std::move(paramLo);
    c.paramHi = std::move(paramHi);
    c.featureLo = std::move(featureLo);
    c.featureHi = std::move(featureHi);
    c.validate();
    return c;
  }

  static HypothesisClass tabulated(std::vector<Member> members, std::vector<double> featureLo, std::vector<double> featureHi,
                                   std::vector<std::string> names = {}) {
    HypothesisClass c;
    c.family = ClassFamily::Tabulated;
    c.featureDim = featureLo.size();
    c.members = std::move(members);
    c.memberNames = std::move(names);
    c.paramLo = {0.0};
    c.paramHi = {static_cast<double>(c.members.size()) - 1.0};
    c.featureLo = std::move(featureLo);
    c.featureHi = std::move(featureHi);
    c.validate();
    return c;
  }

  std::size_t param_dim() const { return paramLo.size(); }

  void validate() const {
    detail::require(featureDim >= 1 && featureLo.size() == featureDim && featureHi.size() == featureDim,
                    "hypothesis class: feature box must match the feature dimension");
    for (std::size_t a = 0; a < featureDim; ++a)
      detail::require(std::isfinite(featureLo[a]) && std::isfinite(featureHi[a]) && featureLo[a] < featureHi[a],
                      "hypothesis class: feature box must be bounded and nonempty");
    if (family == ClassFamily::Affine) {
      detail::require(paramLo.size() == featureDim + 1 && paramHi.size() == featureDim + 1,
                      "affine class: paramBox needs featureDim + 1 coordinates");
      for (std::size_t k = 0; k < paramLo.size(); ++k)
        detail::require(std::isfinite(paramLo[k]) && std::isfinite(paramHi[k]) && paramLo[k] <= paramHi[k],
                        "affine class: paramBox must be bounded");
    } else {
      detail::require(!members.empty(), "tabulated class: no members");
      for (const auto& m : members) detail::require(static_cast<bool>(m), "tabulated class: empty member");
      detail::require(memberNames.empty() || memberNames.size() == members.size(),
                      "tabulated class: names and members differ in length");
    }
  }

  bool contains(const std::vector<double>& theta) const {
    if (theta.size() != param_dim()) return false;
    for (std::size_t k = 0; k < theta.size(); ++k)
      if (!(theta[k] >= paramLo[k] && theta[k] <= paramHi[k])) return false;
    if (family == ClassFamily::Tabulated) return theta[0] == std::floor(theta[0]);
    return true;
  }

  double predict(const std::vector<double>& theta, std::span<const double> x) const {
    if (family == ClassFamily::Tabulated) return members[static_cast<std::size_t>(theta[0])](x);
    double v = theta[featureDim];
    for (std::size_t a = 0; a < featureDim; ++a) v += theta[a] * x[a];
    return v;
  }

  // Roughly 64 points spread over the feature box, endpoints included.
  std::vector<Point> lattice() const {
    std::size_t per = 1;
    while (std::pow(static_cast<double>(per), static_cast<double>(featureDim)) < 64.0) ++per;
    std::size_t total = 1;
    for (std::size_t a = 0; a < featureDim; ++a) total *= per;
    std::vector<Point> pts;
    pts.reserve(total);
    for (std::size_t flat = 0; flat < total; ++flat) {
      Point p(featureDim);
      std::size_t r = flat;
      for (std::size_t a = featureDim; a-- > 0;) {
        const std::size_t i = r % per;
        r /= per;
        p[a] = featureLo[a] + (featureHi[a] - featureLo[a]) * static_cast<double>(i) / static_cast<double>(per - 1);
      }
      pts.push_back(std::move(p));
    }
    return pts;
  }

  // Sup-distance of predictions over the lattice.
  double distance(const std::vector<double>& t1, const std::vector<double>& t2) const {
    double d = 0.0;
    for (const auto& x : lattice()) d = std::max(d, std::abs(predict(t1, x) - predict(t2, x)));
    return d;
  }
};

struct Agent {
  std::shared_ptr<const HypothesisClass> cls;
  std::vector<double> theta;

  Agent() = default;
  Agent(std::shared_ptr<const HypothesisClass> c, std::vector<double> t) : cls(std::move(c)), theta(std::move(t)) {
    detail::require(cls != nullptr, "agent: missing hypothesis class");
    detail::require(cls->contains(theta), "agent: theta outside the parameter box");
  }

  std::size_t feature_dim() const { return cls->featureDim; }
  double operator()(std::span<const double> x) const { return cls->predict(theta, x); }
  double operator()(const Point& x) const { return cls->predict(theta, std::span<const double>(x)); }
};

inline double agent_distance(const Agent& f, const Agent& g) {
  detail::require(f.cls && g.cls, "agent_distance: missing class");
  return f.cls->distance(f.theta, g.theta);
}

// Predictors outside a parametric class, e.g. adapted agents.
using Predictor = std::function<double(std::span<const double>)>;

inline Predictor as_predictor(const Agent& f) {
  return [f](std::span<const double> x) { return f(x); };
}

// ---------------------------------------------------------------------------
// Total loss

namespace detail {

// Weighted (x, y) atoms of a joint measure; grid cells enter at their centers.
struct JointAtoms {
  std::size_t p = 0;
  std::vector<double> x, y, w;

  std::size_t size() const { return w.size(); }
  std::span<const double> xs(std::size_t i) const { return {x.data() + i * p, p}; }
};

inline JointAtoms joint_atoms(const Measure& m) {
  detail::require(m.joint(), "total loss needs a joint measure on features x labels");
  JointAtoms j;
  j.p = m.feature_dim();
  const std::size_t ya = m.label_axis();
  auto push = [&](std::span<const double> z, double w) {
    if (w <= 0.0) return;
    for (std::size_t a = 0; a < j.p; ++a) j.x.push_back(z[a]);
    j.y.push_back(z[ya]);
    j.w.push_back(w);
  };
  if (m.is_discrete()) {
    const auto& d = m.discrete();
    for (std::size_t i = 0; i < d.size(); ++i) push(d.point(i), d.weights[i]);
  } else {
    const auto& g = m.grid();
    for (std::size_t i = 0; i < g.values.size(); ++i)
      if (g.values[i] > 0.0) push(g.grid.center_of(i), g.cell_mass(i));
  }
  return j;
}

inline double total_loss_atoms(const JointAtoms& j, const Predictor& f, const LossFunction& L) {
  double s = 0.0;
  for (std::size_t i = 0; i < j.size(); ++i) s += j.w[i] * L.value(f(j.xs(i)), j.y[i]);
  return s;
}

}  // namespace detail

inline double total_loss(const Measure& m, const Predictor& f, const LossFunction& L) {
  L.validate();
  return detail::total_loss_atoms(detail::joint_atoms(m), f, L);
}

inline double total_loss(const Measure& m, const Agent& f, const LossFunction& L) {
  detail::require(m.joint() && m.feature_dim() == f.feature_dim(), "total_loss: agent and measure dimensions differ");
  return total_loss(m, as_predictor(f), L);
}

// ---------------------------------------------------------------------------
// Flag verification

struct ScenarioBox {
  std::vector<double> featureLo, featureHi;
  double labelLo = -1.0, labelHi = 1.0;
};

struct FlagCheck {
  bool boundOk = true;
  bool lipschitzOk = true;
  double maxLoss = 0.0;
  double maxRatio = 0.0;  // largest |dL| / |d(x, y)| seen
};

// Samples 10^4 random (theta, x, y) triples (and pairs for the Lipschitz flag).
inline FlagCheck verify_flags(const LossFunction& L, const HypothesisClass& c, const ScenarioBox& box,
                              RandomSeed seed = RandomSeed{0}, std::size_t draws = 10000) {
  L.validate();
  c.validate();
  detail::require(box.featureLo.size() == c.featureDim && box.featureHi.size() == c.featureDim,
                  "verify_flags: scenario box dimension mismatch");
  Rng rng(seed.value);
  auto draw_theta = [&] {
    std::vector<double> t(c.param_dim());
    if (c.family == ClassFamily::Tabulated) t[0] = static_cast<double>(rng.below(c.members.size()));
    else
      for (std::size_t k = 0; k < t.size(); ++k) t[k] = rng.uniform(c.paramLo[k], c.paramHi[k]);
    return t;
  };
  auto draw_point = [&] {
    Point z(c.featureDim + 1);
    for (std::size_t a = 0; a < c.featureDim; ++a) z[a] = rng.uniform(box.featureLo[a], box.featureHi[a]);
    z[c.featureDim] = rng.uniform(box.labelLo, box.labelHi);
    return z;
  };
  FlagCheck out;
  for (std::size_t k = 0; k < draws; ++k) {
    const auto t = draw_theta();
    const auto z1 = draw_point();
    // Nearby partner so local slopes are probed, plus a far one.
    auto z2 = z1;
    if (k % 2 == 0) {
      for (auto& v : z2) v += rng.uniform(-1e-3, 1e-3);
    } else {
      z2 = draw_point();
    }
    std::span<const double> x1(z1.data(), c.featureDim), x2(z2.data(), c.featureDim);
    const double l1 = L.value(c.predict(t, x1), z1.back());
    const double l2 = L.value(c.predict(t, x2), z2.back());
    out.maxLoss = std::max({out.maxLoss, l1, l2});
    const double dz = std::sqrt(squared_distance(z1, z2));
    if (dz > 0.0) out.maxRatio = std::max(out.maxRatio, std::abs(l1 - l2) / dz);
  }
  if (L.boundM) out.boundOk = out.maxLoss <= *L.boundM * L.scale * (1.0 + 1e-12);
  if (L.lipC) out.lipschitzOk = out.maxRatio <= *L.lipC * (1.0 + 1e-9);
  return out;
}

// ---------------------------------------------------------------------------
// Empirical risk minimization

struct ErmOptions {
  std::size_t gridPerAxis = 33;
  double finalStep = 1e-6;
  std::size_t maxGridPoints = 1200000;  // per-axis count shrinks in high parameter dimension
};

struct ErmResult {
  Agent agent;
  double loss = 0.0;
  std::size_t evaluations = 0;
};

namespace detail {

// Squared loss of an affine predictor through second moments of (x, 1, y).
struct QuadraticRisk {
  std::size_t d = 0;
  std::vector<double> S, r;
  double yy = 0.0;

  explicit QuadraticRisk(const JointAtoms& j) : d(j.p + 1), S(d * d, 0.0), r(d, 0.0) {
    std::vector<double> phi(d);
    for (std::size_t i = 0; i < j.size(); ++i) {
      for (std::size_t a = 0; a < j.p; ++a) phi[a] = j.x[i * j.p + a];
      phi[j.p] = 1.0;
      for (std::size_t a = 0; a < d; ++a) {
        r[a] += j.w[i] * phi[a] * j.y[i];
        for (std::size_t b = 0; b < d; ++b) S[a * d + b] += j.w[i] * phi[a] * phi[b];
      }
      yy += j.w[i] * j.y[i] * j.y[i];
    }
  }

  double operator()(const std::vector<double>& t) const {
    double v = yy;
    for (std::size_t a = 0; a < d; ++a) {
      v -= 2.0 * t[a] * r[a];
      for (std::size_t b = 0; b < d; ++b) v += t[a] * S[a * d + b] * t[b];
    }
    return std::max(0.0, v);
  }
};

}  // namespace detail

inline ErmResult erm_detail(const Measure& m, std::shared_ptr<const HypothesisClass> cls, const LossFunction& L,
                            const ErmOptions& opt = {}) {
  detail::require(cls != nullptr, "erm: missing class");
  cls->validate();
  L.validate();
  detail::require(m.joint() && m.feature_dim() == cls->featureDim, "erm: measure and class dimensions differ");
  const auto atoms = detail::joint_atoms(m);
  const HypothesisClass& c = *cls;
  ErmResult res;
  if (c.family == ClassFamily::Tabulated) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t k = 0; k < c.members.size(); ++k) {
      const double v = detail::total_loss_atoms(atoms, c.members[k], L);
      ++res.evaluations;
      if (v < best) {
        best = v;
        arg = k;
      }
    }
    res.agent = Agent(cls, {static_cast<double>(arg)});
    res.loss = best;
    return res;
  }

  std::optional<detail::QuadraticRisk> quad;
  if (L.kind == LossKind::Squared && !L.clip) quad.emplace(atoms);
  auto risk = [&](const std::vector<double>& t) {
    ++res.evaluations;
    if (quad) return L.scale * (*quad)(t);
    double s = 0.0;
    for (std::size_t i = 0; i < atoms.size(); ++i) s += atoms.w[i] * L.value(c.predict(t, atoms.xs(i)), atoms.y[i]);
    return s;
  };

  const std::size_t d = c.param_dim();
  std::size_t per = std::max<std::size_t>(opt.gridPerAxis, 2);
  while (per > 2 && std::pow(static_cast<double>(per), static_cast<double>(d)) > static_cast<double>(opt.maxGridPoints)) --per;
  std::size_t total = 1;
  for (std::size_t k = 0; k < d; ++k) total *= per;

  auto coord = [&](std::size_t k, std::size_t i) {
    if (c.paramHi[k] == c.paramLo[k]) return c.paramLo[k];
    return c.paramLo[k] + (c.paramHi[k] - c.paramLo[k]) * static_cast<double>(i) / static_cast<double>(per - 1);
  };
  // Lexicographic order over the grid, strict improvement keeps the smallest tie.
  std::vector<double> best(d), t(d);
  double bestV = std::numeric_limits<double>::infinity();
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t r = flat;
    for (std::size_t k = d; k-- > 0;) {
      t[k] = coord(k, r % per);
      r /= per;
    }
    const double v = risk(t);
    if (v < bestV) {
      bestV = v;
      best = t;
    }
  }

  // Coordinate descent with step halving, clamped to the box.
  double step = 0.0;
  for (std::size_t k = 0; k < d; ++k) step = std::max(step, (c.paramHi[k] - c.paramLo[k]) / static_cast<double>(per - 1));
  step *= 0.5;
  while (step >= opt.finalStep) {
    bool improved = false;
    for (std::size_t k = 0; k < d; ++k) {
      for (double sgn : {-1.0, 1.0}) {
        for (;;) {
          auto cand = best;
          cand[k] = std::clamp(cand[k] + sgn * step, c.paramLo[k], c.paramHi[k]);
          if (cand[k] == best[k]) break;
          const double v = risk(cand);
          if (!(v < bestV)) break;
          bestV = v;
          best = std::move(cand);
          improved = true;
        }
      }
    }
    if (!improved) step *= 0.5;
  }
  res.agent = Agent(cls, best);
  res.loss = bestV;
  return res;
}

inline Agent erm(const Measure& m, std::shared_ptr<const HypothesisClass> cls, const LossFunction& L,
                 const ErmOptions& opt = {}) {
  return erm_detail(m, std::move(cls), L, opt).agent;
}

// ---------------------------------------------------------------------------
// Closed-form least squares on R x R

struct RegressionCoefficients {
  double a = 0.0;
  double b = 0.0;
};

inline RegressionCoefficients regression_coefficients(const Measure& m) {
  detail::require(m.joint() && m.feature_dim() == 1, "regression_coefficients: needs a joint measure on R x R");
  const double mx = moment(m, Integrand::x()), my = moment(m, Integrand::y());
  const double var = moment(m, Integrand::x2()) - mx * mx;
  if (!(var > 1e-12)) throw DegenerateInput("regression_coefficients: degenerate feature variance");
  const double a = (moment(m, Integrand::xy()) - mx * my) / var;
  return {a, my - a * mx};
}

struct RegressionBoundRow {
  double gap = 0.0;    // |a_n - a| after standardizing x
  double tv = 0.0;
  double supXY = 0.0;  // over the union of supports, standardized x
  double bound = 0.0;  // 2 supXY TV (TV here is the sup over sets)
  bool ok = true;
  bool vacuous = false;
};

struct RegressionBoundReport {
  std::vector<RegressionBoundRow> rows;
  std::size_t violations = 0;
};

namespace detail {

struct Standardized {
  double slope = 0.0;  // slope in standardized x
  double mean = 0.0, sd = 1.0;
};

inline Standardized standardized_slope(const Measure& m) {
  const double mx = moment(m, Integrand::x()), my = moment(m, Integrand::y());
  const double var = moment(m, Integrand::x2()) - mx * mx;
  if (!(var > 1e-12)) throw DegenerateInput("regression_tv_bound_check: degenerate feature variance");
  const double sd = std::sqrt(var);
  return {(moment(m, Integrand::xy()) - mx * my) / sd, mx, sd};
}

// sup |x' y| over the support with x' = (x - mean) / sd; grid cells use their corners.
inline double sup_abs_xy(const Measure& m, const Standardized& s) {
  double best = 0.0;
  if (m.is_discrete()) {
    const auto& d = m.discrete();
    for (std::size_t i = 0; i < d.size(); ++i)
      if (d.weights[i] > 0.0) best = std::max(best, std::abs((d.coords[i * 2] - s.mean) / s.sd * d.coords[i * 2 + 1]));
  } else {
    const auto& g = m.grid();
    for (std::size_t i = 0; i < g.values.size(); ++i) {
      if (g.values[i] <= 0.0) continue;
      const auto idx = g.grid.unravel(i);
      for (int cx = 0; cx < 2; ++cx)
        for (int cy = 0; cy < 2; ++cy) {
          const double x = g.grid.edge(0, idx[0] + cx), y = g.grid.edge(1, idx[1] + cy);
          best = std::max(best, std::abs((x - s.mean) / s.sd * y));
        }
    }
  }
  return best;
}

}  // namespace detail

inline RegressionBoundReport regression_tv_bound_check(const std::vector<Measure>& seq, const Measure& target) {
  detail::require(!seq.empty(), "regression_tv_bound_check: empty sequence");
  for (const auto& m : seq)
    detail::require(m.joint() && m.feature_dim() == 1, "regression_tv_bound_check: needs joint measures on R x R");
  detail::require(target.joint() && target.feature_dim() == 1, "regression_tv_bound_check: target must be a joint on R x R");
  const auto st = detail::standardized_slope(target);
  const double supTarget = detail::sup_abs_xy(target, st);
  RegressionBoundReport rep;
  for (const auto& m : seq) {
    const auto sn = detail::standardized_slope(m);
    RegressionBoundRow row;
    row.gap = std::abs(sn.slope - st.slope);
    row.tv = tv_distance(m, target);
    row.supXY = std::max(supTarget, detail::sup_abs_xy(m, sn));
    row.bound = 2.0 * row.supXY * row.tv;
    row.ok = row.gap <= row.bound + 1e-12;
    row.vacuous = row.tv >= 1.0 - 1e-12;
    if (!row.ok) ++rep.violations;
    rep.rows.push_back(row);
  }
  return rep;
}

}  // namespace mprecon
