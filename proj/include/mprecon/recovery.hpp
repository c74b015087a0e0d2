#pragma once

// Empirical checks of the two Fatou-type recovery conditions and of
// minimizer convergence along sequences of pre-conditioned measures.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "error.hpp"
#include "kernel.hpp"
#include "learning.hpp"
#include "measure.hpp"
#include "metrics.hpp"
#include "preconditioners.hpp"
#include "rng.hpp"

namespace mprecon {

struct MeasureSequence {
  std::function<Measure(std::size_t n, RandomSeed seed)> generator;
  std::vector<std::size_t> nGrid;
  Measure target{DiscreteMeasure{1, {0.0}, {1.0}}};
  RandomSeed seed{0};

  void validate() const {
    detail::require(static_cast<bool>(generator), "measure sequence: missing generator");
    detail::require(nGrid.size() >= 4, "measure sequence: nGrid needs at least 4 entries");
    for (std::size_t k = 0; k < nGrid.size(); ++k) {
      detail::require(nGrid[k] >= 1, "measure sequence: sample sizes must be positive");
      if (k > 0) detail::require(nGrid[k] > nGrid[k - 1], "measure sequence: nGrid must be strictly increasing");
    }
  }

  // Every element gets the same seed, so generators that draw sequentially
  // see nested samples: pi_n is built from the first n points of one stream.
  std::vector<Measure> realize() const {
    validate();
    std::vector<Measure> out;
    out.reserve(nGrid.size());
    for (std::size_t n : nGrid) out.push_back(generator(n, seed));
    return out;
  }
};

// Sequence of pre-conditioned n-samples of a fixed target.
inline MeasureSequence preconditioned_sequence(Measure target, std::vector<std::size_t> nGrid, RandomSeed seed,
                                               std::function<Measure(const Sample&)> precondition) {
  MeasureSequence s;
  s.target = target;
  s.nGrid = std::move(nGrid);
  s.seed = seed;
  s.generator = [target, precondition](std::size_t n, RandomSeed sd) { return precondition(sample_from(target, n, sd)); };
  return s;
}

inline MeasureSequence constant_sequence(Measure target, std::vector<std::size_t> nGrid) {
  MeasureSequence s;
  s.target = target;
  s.nGrid = std::move(nGrid);
  s.generator = [target](std::size_t, RandomSeed) { return target; };
  return s;
}

// ---------------------------------------------------------------------------
// Presets

enum class CaseKind { SetwiseBounded, WeakUI, D1Lipschitz, TVBounded };

inline std::string to_string(CaseKind k) {
  switch (k) {
    case CaseKind::SetwiseBounded: return "setwise-bounded";
    case CaseKind::WeakUI: return "weak-UI";
    case CaseKind::D1Lipschitz: return "d1-lipschitz";
    case CaseKind::TVBounded: return "tv-bounded";
  }
  return "?";
}

inline CaseKind case_from_string(const std::string& s) {
  for (auto k : {CaseKind::SetwiseBounded, CaseKind::WeakUI, CaseKind::D1Lipschitz, CaseKind::TVBounded})
    if (s == to_string(k)) return k;
  throw InvalidArgument("unknown preset '" + s + "'");
}

struct CasePreset {
  CaseKind which = CaseKind::TVBounded;

  ConvergenceMode mode() const {
    switch (which) {
      case CaseKind::SetwiseBounded: return ConvergenceMode::Setwise;
      case CaseKind::WeakUI: return ConvergenceMode::Weak;
      case CaseKind::D1Lipschitz: return ConvergenceMode::D1;
      case CaseKind::TVBounded: return ConvergenceMode::TV;
    }
    return ConvergenceMode::TV;
  }

  bool needs_bound() const { return true; }
  bool needs_lipschitz() const { return which == CaseKind::D1Lipschitz; }

  void require_flags(const LossFunction& L) const {
    if (needs_bound() && !L.boundM) throw InvalidArgument("preset " + to_string(which) + " requires boundM on the loss");
    if (needs_lipschitz() && !L.lipC) throw InvalidArgument("preset " + to_string(which) + " requires lipC on the loss");
  }
};

struct VerdictTolerances {
  double margin = 1e-2;
  double modeDecrease = 10.0;
  double gapDecrease = 5.0;
  double zero = 1e-12;  // trajectories ending below this count as converged
};

// ---------------------------------------------------------------------------
// Fatou margins

namespace detail {

// Indices of the last third of a trajectory (at least one).
inline std::size_t last_third_start(std::size_t len) { return len - (len + 2) / 3; }

}  // namespace detail

struct MarginResult {
  double margin = 0.0;
  std::vector<double> losses;  // E_{pi_n} L(f_n)
  double targetLoss = 0.0;     // E_pi L(f)
  bool satisfied = true;
};

// min over the last third of E_{pi_n}[L(f_n)] - E_pi[L(f)].
inline MarginResult check_liminf(const std::vector<Measure>& measures, const Measure& target, const std::vector<Agent>& fPath,
                                 const Agent& f, const LossFunction& L, double tol = 1e-2) {
  detail::require(fPath.size() == measures.size(), "check_liminf: path and sequence lengths differ");
  detail::require(!measures.empty(), "check_liminf: empty sequence");
  MarginResult r;
  r.targetLoss = total_loss(target, f, L);
  for (std::size_t k = 0; k < measures.size(); ++k) r.losses.push_back(total_loss(measures[k], fPath[k], L));
  r.margin = std::numeric_limits<double>::infinity();
  for (std::size_t k = detail::last_third_start(measures.size()); k < measures.size(); ++k)
    r.margin = std::min(r.margin, r.losses[k] - r.targetLoss);
  r.satisfied = r.margin >= -tol;
  return r;
}

inline MarginResult check_liminf(const MeasureSequence& seq, const std::vector<Agent>& fPath, const Agent& f,
                                 const LossFunction& L, double tol = 1e-2) {
  return check_liminf(seq.realize(), seq.target, fPath, f, L, tol);
}

struct RecoverySequenceResult {
  std::vector<Agent> fPath;
  MarginResult margin;
};

// Constant recovery path f_j = f; margin = E_pi L(f) - max over the last third of E_{pi_j} L(f).
inline RecoverySequenceResult build_recovery_sequence(const std::vector<Measure>& measures, const Measure& target,
                                                      const Agent& f, const LossFunction& L, double tol = 1e-2) {
  detail::require(!measures.empty(), "build_recovery_sequence: empty sequence");
  RecoverySequenceResult r;
  r.fPath.assign(measures.size(), f);
  auto& m = r.margin;
  m.targetLoss = total_loss(target, f, L);
  for (const auto& pm : measures) m.losses.push_back(total_loss(pm, f, L));
  m.margin = std::numeric_limits<double>::infinity();
  for (std::size_t k = detail::last_third_start(measures.size()); k < measures.size(); ++k)
    m.margin = std::min(m.margin, m.targetLoss - m.losses[k]);
  m.satisfied = m.margin >= -tol;
  return r;
}

inline RecoverySequenceResult build_recovery_sequence(const MeasureSequence& seq, const Agent& f, const LossFunction& L,
                                                      double tol = 1e-2) {
  return build_recovery_sequence(seq.realize(), seq.target, f, L, tol);
}

// ---------------------------------------------------------------------------
// Verdict

enum class Verdict { Pass, Fail };

inline std::string to_string(Verdict v) { return v == Verdict::Pass ? "pass" : "fail"; }

struct RecoveryReport {
  std::string preset;
  std::vector<std::size_t> nGrid;
  std::vector<double> modeTrajectory;
  double liminfMargin = 0.0;
  double limsupMargin = 0.0;
  std::vector<double> paramGaps;  // d(theta_n, theta*)
  std::vector<double> lossGaps;   // |E_{pi_n} L(f_n) - E_pi L(f*)|
  std::vector<double> ermLosses;
  double targetLoss = 0.0;
  std::vector<std::vector<double>> ermThetas;
  std::vector<double> targetTheta;
  Verdict verdict = Verdict::Pass;
  std::vector<std::string> failures;  // stage names that failed
  bool empirical = true;              // liminf/limsup are proxied by finite-n extrema
};

namespace detail {

inline bool decreased_by(const std::vector<double>& v, double factor, double zero) {
  if (v.back() < zero) return true;
  return v.front() >= factor * v.back();
}

}  // namespace detail

inline RecoveryReport flrs_verdict(const std::vector<Measure>& measures, const std::vector<std::size_t>& nGrid,
                                   const Measure& target, std::shared_ptr<const HypothesisClass> cls, const LossFunction& L,
                                   const CasePreset& preset, const VerdictTolerances& tol = {}, const ErmOptions& ermOpt = {}) {
  preset.require_flags(L);
  detail::require(measures.size() == nGrid.size() && measures.size() >= 2, "flrs_verdict: sequence and nGrid lengths differ");
  RecoveryReport r;
  r.preset = to_string(preset.which);
  r.nGrid = nGrid;
  for (const auto& m : measures) r.modeTrajectory.push_back(mode_distance(m, target, preset.mode()));

  const auto star = erm_detail(target, cls, L, ermOpt);
  r.targetTheta = star.agent.theta;
  std::vector<Agent> path;
  for (const auto& m : measures) {
    auto e = erm_detail(m, cls, L, ermOpt);
    r.ermThetas.push_back(e.agent.theta);
    r.ermLosses.push_back(e.loss);
    path.push_back(e.agent);
  }
  const auto lim = check_liminf(measures, target, path, star.agent, L, tol.margin);
  const auto rec = build_recovery_sequence(measures, target, star.agent, L, tol.margin);
  r.targetLoss = lim.targetLoss;
  r.liminfMargin = lim.margin;
  r.limsupMargin = rec.margin.margin;
  for (std::size_t k = 0; k < measures.size(); ++k) {
    r.paramGaps.push_back(agent_distance(path[k], star.agent));
    r.lossGaps.push_back(std::abs(lim.losses[k] - lim.targetLoss));
  }
  if (!detail::decreased_by(r.modeTrajectory, tol.modeDecrease, tol.zero)) r.failures.push_back("mode");
  if (!lim.satisfied) r.failures.push_back("liminf");
  if (!rec.margin.satisfied) r.failures.push_back("limsup");
  if (!detail::decreased_by(r.paramGaps, tol.gapDecrease, tol.zero)) r.failures.push_back("param-gap");
  if (!detail::decreased_by(r.lossGaps, tol.gapDecrease, tol.zero)) r.failures.push_back("loss-gap");
  r.verdict = r.failures.empty() ? Verdict::Pass : Verdict::Fail;
  return r;
}

inline RecoveryReport flrs_verdict(const MeasureSequence& seq, std::shared_ptr<const HypothesisClass> cls, const LossFunction& L,
                                   const CasePreset& preset, const VerdictTolerances& tol = {}, const ErmOptions& ermOpt = {}) {
  preset.require_flags(L);
  return flrs_verdict(seq.realize(), seq.nGrid, seq.target, std::move(cls), L, preset, tol, ermOpt);
}

// ---------------------------------------------------------------------------
// Total-loss inequalities

struct PropListRow {
  double lossDiff = 0.0;  // |E_{pi_n} L(f) - E_pi L(f)|
  std::optional<double> tv, tvBound;
  std::optional<double> d1, d1Bound;
  bool tvOk = true;
  bool d1Ok = true;
};

struct PropListTable {
  std::vector<PropListRow> rows;
  std::size_t violations = 0;
};

// Item 1: lossDiff <= 2 M TV (TV as the sup over sets). Item 2: lossDiff <= C d1,
// where d1 uses the upper bound whenever the transport solve was coarsened.
inline PropListTable prop_list_check(const std::vector<Measure>& measures, const Measure& target, const Agent& f,
                                     const LossFunction& L) {
  detail::require(L.boundM || L.lipC, "prop_list_check: loss carries neither boundM nor lipC");
  const double base = total_loss(target, f, L);
  PropListTable t;
  for (const auto& m : measures) {
    PropListRow row;
    row.lossDiff = std::abs(total_loss(m, f, L) - base);
    if (L.boundM) {
      row.tv = tv_distance(m, target);
      row.tvBound = 2.0 * *L.boundM * L.scale * *row.tv;
      row.tvOk = row.lossDiff <= *row.tvBound + 1e-12;
    }
    if (L.lipC) {
      const auto w = wasserstein_detail(m, target, 1);
      row.d1 = w.exact ? w.value : w.upper;
      row.d1Bound = *L.lipC * *row.d1;
      row.d1Ok = row.lossDiff <= *row.d1Bound + 1e-12;
    }
    if (!row.tvOk || !row.d1Ok) ++t.violations;
    t.rows.push_back(row);
  }
  return t;
}

// ---------------------------------------------------------------------------
// Disintegration: x-marginal on a finite lattice, per-x conditional estimates

struct DisintegrationSetup {
  std::vector<double> xs;      // feature lattice
  std::vector<double> mu;      // x-marginal weights
  std::function<double(double)> g;  // conditional mean
  double conditionalSd = 0.5;
  GridSpec yGrid = GridSpec::line(-8.0, 8.0, 512);
  Kernel kernel = Kernel::gaussian();
  BandwidthRule bandwidth = BandwidthRule::power_law(1.06, 0.2);

  void validate() const {
    detail::require(!xs.empty() && xs.size() == mu.size(), "disintegration: lattice and weights differ in length");
    double s = 0.0;
    for (double w : mu) {
      detail::require(w >= 0.0, "disintegration: negative weight");
      s += w;
    }
    detail::require(std::abs(s - 1.0) < 1e-9, "disintegration: weights must sum to 1");
    detail::require(static_cast<bool>(g) && conditionalSd > 0.0, "disintegration: bad conditional law");
    bandwidth.validate();
  }
};

struct DisintegrationRow {
  std::size_t n = 0;
  double estimate = 0.0;
  double gap = 0.0;
};

struct DisintegrationReport {
  double truth = 0.0;
  std::vector<DisintegrationRow> rows;
};

inline DisintegrationReport disintegration_check(const DisintegrationSetup& s, const std::vector<std::size_t>& nGrid,
                                                 const Predictor& f, const LossFunction& L, RandomSeed seed) {
  s.validate();
  const auto& yg = s.yGrid;
  auto inner = [&](double x, const GridDensity& nu) {
    const double fx = f(std::span<const double>(&x, 1));
    double v = 0.0;
    for (std::size_t j = 0; j < nu.values.size(); ++j)
      if (nu.values[j] > 0.0) v += nu.cell_mass(j) * L.value(fx, yg.center(0, j));
    return v;
  };
  DisintegrationReport rep;
  for (std::size_t i = 0; i < s.xs.size(); ++i) {
    const double m = s.g(s.xs[i]), sd = s.conditionalSd;
    auto nu = grid_from_function(yg, [&](const Point& y) {
      const double z = (y[0] - m) / sd;
      return std::exp(-0.5 * z * z);
    });
    rep.truth += s.mu[i] * inner(s.xs[i], nu);
  }
  std::vector<double> cum(s.mu.size());
  std::partial_sum(s.mu.begin(), s.mu.end(), cum.begin());
  for (std::size_t k = 0; k < nGrid.size(); ++k) {
    const std::size_t n = nGrid[k];
    Rng rng(derive_seed(seed.value, k));
    std::vector<std::vector<Point>> ys(s.xs.size());
    for (std::size_t t = 0; t < n; ++t) {
      const double u = rng.uniform() * cum.back();
      const std::size_t i = std::min<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin(), s.xs.size() - 1);
      ys[i].push_back({rng.normal(s.g(s.xs[i]), s.conditionalSd)});
    }
    DisintegrationRow row;
    row.n = n;
    for (std::size_t i = 0; i < s.xs.size(); ++i) {
      if (ys[i].empty()) continue;
      const double muN = static_cast<double>(ys[i].size()) / static_cast<double>(n);
      Sample cond{ys[i], std::nullopt, std::nullopt};
      row.estimate += muN * inner(s.xs[i], build_kde(cond, s.kernel, s.bandwidth, yg).grid());
    }
    row.gap = std::abs(row.estimate - rep.truth);
    rep.rows.push_back(row);
  }
  return rep;
}

}  // namespace mprecon
