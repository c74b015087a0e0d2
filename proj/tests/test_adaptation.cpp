#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mprecon/adaptation.hpp"
#include "oracles.hpp"

using namespace mprecon;

namespace {

std::shared_ptr<const HypothesisClass> affine(std::size_t p, double lo, double hi, double fLo, double fHi) {
  return std::make_shared<const HypothesisClass>(HypothesisClass::affine(
      std::vector<double>(p + 1, lo), std::vector<double>(p + 1, hi), std::vector<double>(p, fLo),
      std::vector<double>(p, fHi)));
}

Predictor identity_1d() {
  return [](std::span<const double> x) { return x[0]; };
}

TransportMap map_1d(const std::vector<double>& src, const std::vector<double>& img) {
  TransportMap t;
  t.dim = t.imageDim = 1;
  t.sources = src;
  t.images = img;
  t.deterministic = true;
  return t;
}

Sample labeled(const std::vector<double>& xs, const std::vector<double>& ys) {
  Sample s;
  for (double x : xs) s.features.push_back({x});
  s.labels = ys;
  return s;
}

double brute_force_min_over_perms(const std::vector<double>& C, std::size_t n, std::vector<std::size_t>* best,
                                  double* secondBest) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  double m1 = std::numeric_limits<double>::infinity(), m2 = m1;
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i) c += C[i * n + perm[i]];
    if (c < m1) {
      m2 = m1;
      m1 = c;
      *best = perm;
    } else if (c < m2) {
      m2 = c;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  *secondBest = m2;
  return m1;
}

// Symmetric A = Q diag(l) Q^T with eigenvalues in [s, 10 s].
std::vector<double> random_spd(Rng& rng, std::size_t p) {
  const double s = rng.uniform(0.3, 1.5);
  std::vector<double> lam(p);
  for (auto& l : lam) l = s * rng.uniform(1.0, 10.0);
  lam[0] = s;
  if (p > 1) lam[1] = 10.0 * s;
  std::vector<double> Q(p * p, 0.0);
  if (p == 1) {
    Q[0] = 1.0;
  } else {
    const double th = rng.uniform(0.0, 3.14159);
    Q = {std::cos(th), -std::sin(th), std::sin(th), std::cos(th)};
  }
  std::vector<double> A(p * p, 0.0);
  for (std::size_t r = 0; r < p; ++r)
    for (std::size_t c = 0; c < p; ++c)
      for (std::size_t k = 0; k < p; ++k) A[r * p + c] += Q[r * p + k] * lam[k] * Q[c * p + k];
  for (std::size_t r = 0; r < p; ++r)
    for (std::size_t c = 0; c < r; ++c) A[r * p + c] = A[c * p + r];
  return A;
}

}  // namespace

// ---------------------------------------------------------------------------
// adapt_agent

TEST(AdaptAgent, IdentityMapReturnsSameAgent) {
  const auto t = map_1d({-1.0, 0.0, 2.5}, {-1.0, 0.0, 2.5});
  const auto f = adapt_agent(identity_1d(), t);
  for (double x : {-1.0, 0.0, 2.5}) EXPECT_DOUBLE_EQ(f(Point{x}), x);
  EXPECT_FALSE(f.inverse.approximateInverse);
}

TEST(AdaptAgent, ShiftIsInverted) {
  const auto t = map_1d({0.0, 1.0, 2.0}, {1.0, 2.0, 3.0});
  const auto f = adapt_agent(identity_1d(), t);
  for (double y : {1.0, 2.0, 3.0}) EXPECT_DOUBLE_EQ(f(Point{y}), y - 1.0);
  // Off the support the inverse uses the nearest atom.
  EXPECT_DOUBLE_EQ(f(Point{10.0}), 2.0);
  EXPECT_DOUBLE_EQ(f(Point{-4.0}), 0.0);
}

TEST(AdaptAgent, ShiftedRegressionKeepsSourceOptimum) {
  Rng rng(11);
  std::vector<double> xs, ys, xt;
  for (int i = 0; i < 60; ++i) {
    const double x = rng.normal();
    xs.push_back(x);
    ys.push_back(2.0 * x + 0.3 * rng.normal());
    xt.push_back(x + 3.0);
  }
  const Sample s = labeled(xs, ys), t = labeled(xt, ys);
  const auto cls = affine(1, -5.0, 5.0, -4.0, 7.0);
  const auto L = LossFunction::squared();
  const auto src = erm_detail(build_empirical(s), cls, L);
  const TransportPlan plan = solve_exact_ot(build_empirical(Sample{s.features, {}, {}}).discrete(),
                                            build_empirical(Sample{t.features, {}, {}}).discrete(), CostSpec::quadratic());
  const auto fad = adapt_agent(src.agent, plan, CostSpec::quadratic());
  EXPECT_NEAR(total_loss(build_empirical(t), fad.as_predictor(), L), src.loss, 1e-6);
}

TEST(AdaptAgent, Errors) {
  EXPECT_THROW(adapt_agent(identity_1d(), TransportMap{}), InvalidArgument);
  const auto collapsing = map_1d({0.0, 1.0}, {5.0, 5.0});
  EXPECT_THROW(adapt_agent(identity_1d(), collapsing), InvalidArgument);
}

TEST(AdaptAgent, NonInjectiveMapUsesReversePlan) {
  const DiscreteMeasure a{1, {0.0, 1.0, 2.0}, {1.0 / 3, 1.0 / 3, 1.0 / 3}};
  const DiscreteMeasure b{1, {0.5, 2.0}, {2.0 / 3, 1.0 / 3}};
  const TransportPlan p = solve_exact_ot(a, b, CostSpec::quadratic());
  const TransportMap t = barycentric_map(p);
  ASSERT_FALSE(is_atom_bijection(t));
  const auto fad = adapt_agent(identity_1d(), t, reverse_plan(p, CostSpec::quadratic()));
  EXPECT_TRUE(fad.inverse.approximateInverse);
  EXPECT_NEAR(fad(Point{0.5}), 0.5, 1e-12);
  EXPECT_NEAR(fad(Point{2.0}), 2.0, 1e-12);
}

// ---------------------------------------------------------------------------
// conditional_ot_maps

TEST(ConditionalMaps, IdenticalDomainsGiveIdentity) {
  // Points with x > y keep the squared losses injective inside each class.
  const Sample s = labeled({1.2, 2.0, 3.1, 1.5, 2.7, 4.0}, {0.0, 0.0, 0.0, 1.0, 1.0, 1.0});
  DomainPair d{s, s};
  const auto maps = conditional_ot_maps(d, identity_1d(), LossFunction::squared(), LossFunction::squared());
  ASSERT_EQ(maps.classes.size(), 2u);
  for (const auto& c : maps.classes) {
    EXPECT_NEAR(c.plan.cost, 0.0, 1e-15);
    EXPECT_TRUE(c.map.deterministic);
    for (std::size_t i = 0; i < c.map.size(); ++i) EXPECT_DOUBLE_EQ(c.map.image(i)[0], c.map.source(i)[0]);
  }
}

TEST(ConditionalMaps, ConstantAgentHasZeroCost) {
  const Sample s = labeled({0.0, 1.0, 2.0, 3.0}, {0.0, 0.0, 1.0, 1.0});
  const Sample t = labeled({5.0, 9.0, -3.0, 4.0, 8.0}, {0.0, 0.0, 1.0, 1.0, 1.0});
  const Predictor constant = [](std::span<const double>) { return 0.4; };
  const auto maps = conditional_ot_maps(DomainPair{s, t}, constant, LossFunction::squared(), LossFunction::squared());
  for (const auto& c : maps.classes) {
    for (double v : c.cost.matrix) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(c.plan.cost, 0.0);
  }
}

TEST(ConditionalMaps, MatchesBruteForcePermutations) {
  Rng rng(5);
  const auto L = LossFunction::squared();
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 2 + rng.below(5);
    std::vector<double> xs, xt, ys(n, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      xs.push_back(rng.uniform(-2.0, 2.0));
      xt.push_back(rng.uniform(-2.0, 3.0));
    }
    const auto maps = conditional_ot_maps(DomainPair{labeled(xs, ys), labeled(xt, ys)}, identity_1d(), L, L);
    std::vector<double> C(n * n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) C[i * n + j] = std::abs(L(xs[i], 1.0) - L(xt[j], 1.0));
    std::vector<std::size_t> best;
    double second = 0.0;
    const double bf = brute_force_min_over_perms(C, n, &best, &second) / static_cast<double>(n);
    const auto& c = maps.classes.front();
    EXPECT_NEAR(c.plan.cost, bf, 1e-12);
    if (second / static_cast<double>(n) > bf + 1e-9) {
      for (std::size_t i = 0; i < n; ++i) EXPECT_DOUBLE_EQ(c.map.image(i)[0], xt[best[i]]);
    }
  }
}

TEST(ConditionalMaps, Errors) {
  const Sample s = labeled({0.0, 1.0}, {0.0, 1.0});
  const Sample t = labeled({0.0, 1.0}, {0.0, 0.0});
  DomainPair d{s, t, true, {{0.0, 0.0}, {1.0, 2.0}}};
  EXPECT_THROW(conditional_ot_maps(d, identity_1d(), LossFunction::squared(), LossFunction::squared()),
               InvalidArgument);
  DomainPair hidden{s, s, false};
  EXPECT_THROW(conditional_ot_maps(hidden, identity_1d(), LossFunction::squared(), LossFunction::squared()),
               InvalidArgument);
  DomainPair unmatched{s, labeled({0.0, 1.0}, {0.0, 7.0})};
  EXPECT_THROW(unmatched.validate_classes(), InvalidArgument);
  EXPECT_NO_THROW(unmatched.validate());
}

TEST(ConditionalMaps, DeclaredCorrespondenceAndPreMap) {
  const Sample s = labeled({0.0, 1.0, 5.0, 6.0}, {1.0, 1.0, 9.0, 9.0});
  const Sample t = labeled({-0.5, -1.5, 5.5, 6.5}, {7.0, 7.0, 6.0, 6.0});
  DomainPair d{s, t, true, {{1.0, 7.0}, {9.0, 6.0}}};
  d.targetPreMap = AffinePreMap{1, {-1.0}, {0.0}};
  const auto maps = conditional_ot_maps(d, identity_1d(), LossFunction::absolute(), LossFunction::absolute());
  ASSERT_EQ(maps.classes.size(), 2u);
  EXPECT_EQ(maps.classes[0].targetLabel, 7.0);
  // Flipped target class 7 sits at {0.5, 1.5}.
  EXPECT_NEAR(maps.classes[0].map.image(0)[0] + maps.classes[0].map.image(1)[0], 2.0, 1e-12);
}

// ---------------------------------------------------------------------------
// conditional_average_guess

TEST(Guess, SingleClassEqualsAdaptAgent) {
  Rng rng(3);
  std::vector<double> xs, xt;
  for (int i = 0; i < 12; ++i) {
    xs.push_back(rng.uniform(0.0, 2.0));
    xt.push_back(rng.uniform(1.0, 4.0));
  }
  const std::vector<double> ys(12, 1.0);
  const Predictor f = [](std::span<const double> x) { return 0.8 * x[0] - 0.1; };
  const auto L = LossFunction::squared();
  const auto maps = conditional_ot_maps(DomainPair{labeled(xs, ys), labeled(xt, ys)}, f, L, L);
  const auto g = conditional_average_guess(maps, {1.0}, f);
  const auto& c = maps.classes.front();
  std::optional<TransportPlan> rev;
  if (!is_atom_bijection(c.map)) rev = reverse_plan(c.plan, c.cost);
  const auto a = adapt_agent(f, c.map, rev);
  for (double x = -1.0; x <= 5.0; x += 0.05) EXPECT_EQ(g(Point{x}), a(Point{x}));
}

TEST(Guess, IdenticalClassesGiveIdentity) {
  const Sample s = labeled({1.2, 2.0, 3.1, 1.25, 2.05, 3.15}, {0.0, 0.0, 0.0, 1.0, 1.0, 1.0});
  const auto L = LossFunction::squared();
  const auto maps = conditional_ot_maps(DomainPair{s, s}, identity_1d(), L, L);
  for (const auto& c : maps.classes)
    for (std::size_t i = 0; i < c.map.size(); ++i) ASSERT_DOUBLE_EQ(c.map.image(i)[0], c.map.source(i)[0]);
  // Same points in both classes so the averaged map is the identity on atoms.
  const Sample twin = labeled({1.0, 2.0, 3.0, 1.0, 2.0, 3.0}, {0.0, 0.0, 0.0, 1.0, 1.0, 1.0});
  const Sample twinT = labeled({1.0, 2.0, 3.0, 1.0, 2.0, 3.0}, {0.0, 0.0, 0.0, 1.0, 1.0, 1.0});
  const auto tm = conditional_ot_maps(DomainPair{twin, twinT}, identity_1d(), LossFunction::absolute(),
                                      LossFunction::absolute());
  for (auto mode : {GuessMode::AverageMaps, GuessMode::AverageInverses}) {
    const auto g = conditional_average_guess(tm, {0.5, 0.5}, identity_1d(), GuessOptions{mode});
    for (double x : {1.0, 2.0, 3.0}) EXPECT_NEAR(g(Point{x}), x, 1e-12) << to_string(mode);
  }
}

TEST(Guess, ShiftedGaussianClassesTransfer) {
  const DomainPair d = shifted_two_class_pair(200, 2.0, 2.0, RandomSeed{0});
  const auto cls = affine(1, -10.0, 10.0, -6.0, 8.0);
  const auto L = LossFunction::logistic();
  const auto r = run_transfer(d, cls, L, L);
  ASSERT_TRUE(r.accuracy.has_value());
  EXPECT_GE(*r.accuracy, 0.9);
  EXPECT_LE(r.gap, 0.1);
  EXPECT_LT(r.adaptedLoss, r.unadaptedLoss);
  EXPECT_TRUE(r.oracleOptimal);
}

TEST(Guess, Errors) {
  const Sample s = labeled({0.0, 1.0}, {0.0, 1.0});
  const auto maps = conditional_ot_maps(DomainPair{s, s}, identity_1d(), LossFunction::squared(), LossFunction::squared());
  EXPECT_THROW(conditional_average_guess(maps, {1.0}, identity_1d()), InvalidArgument);
  EXPECT_THROW(conditional_average_guess(maps, {0.5, 0.6}, identity_1d()), InvalidArgument);
  EXPECT_THROW(conditional_average_guess(ConditionalMaps{}, {}, identity_1d()), InvalidArgument);
}

TEST(Guess, ProjectionWeights) {
  const std::vector<Point> proj{{1.0}, {3.0}};
  const auto d = detail::projection_weights({1.0, 3.0}, proj, ProjectionWeighting::DistanceProportional);
  EXPECT_DOUBLE_EQ(d[0], 0.25);
  EXPECT_DOUBLE_EQ(d[1], 0.75);
  const auto inv = detail::projection_weights({1.0, 3.0}, proj, ProjectionWeighting::InverseDistance);
  EXPECT_DOUBLE_EQ(inv[0], 0.75);
  EXPECT_DOUBLE_EQ(inv[1], 0.25);
  const auto lit = detail::projection_weights({1.0, 3.0}, proj, ProjectionWeighting::ProjectionSumNorm);
  EXPECT_DOUBLE_EQ(lit[0], 0.25);
  EXPECT_DOUBLE_EQ(lit[1], 0.75);
  const auto onAtom = detail::projection_weights({0.0, 2.0}, proj, ProjectionWeighting::InverseDistance);
  EXPECT_DOUBLE_EQ(onAtom[0], 1.0);
  EXPECT_DOUBLE_EQ(onAtom[1], 0.0);
  EXPECT_THROW(detail::projection_weights({1.0, 1.0}, {{1.0}, {-1.0}}, ProjectionWeighting::ProjectionSumNorm),
               DegenerateInput);
}

TEST(Transfer, OracleNeverWorseThanAdapted) {
  const auto cls = affine(1, -10.0, 10.0, -6.0, 8.0);
  for (auto L : {LossFunction::logistic(), LossFunction::squared(), LossFunction::clipped(LossKind::Squared, 4.0)}) {
    for (auto mode : {GuessMode::AverageMaps, GuessMode::AverageInverses, GuessMode::ProjectionWeighted}) {
      for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto d = shifted_two_class_pair(120, 2.0, 2.0, RandomSeed{seed});
        TransferOptions o;
        o.guess.mode = mode;
        const auto r = run_transfer(d, cls, L, L, o);
        EXPECT_LE(r.oracleLoss, r.adaptedLoss + 1e-9) << L.name() << " " << to_string(mode) << " seed " << seed;
        EXPECT_TRUE(r.oracleOptimal);
        EXPECT_GE(r.dh, 0.0);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// transferability_dh

TEST(Transferability, ZeroForIdenticalDomains) {
  const DomainPair d = shifted_two_class_pair(40, 2.0, 0.0, RandomSeed{1});
  const DomainPair same{d.source, d.source};
  const Predictor f = [](std::span<const double> x) { return 0.5 * x[0]; };
  for (auto h : {HFunction::square(), HFunction::abs_smoothed()})
    EXPECT_NEAR(transferability_dh(same, f, f, LossFunction::squared(), LossFunction::squared(), h), 0.0, 1e-15);
}

TEST(Transferability, TwoByTwoMatchesExtremePoints) {
  Rng rng(8);
  const auto L = LossFunction::squared();
  for (int trial = 0; trial < 20; ++trial) {
    const Sample s = labeled({rng.normal(), rng.normal()}, {rng.normal(), rng.normal()});
    const Sample t = labeled({rng.normal(), rng.normal()}, {rng.normal(), rng.normal()});
    const Predictor f1 = [](std::span<const double> x) { return 2.0 * x[0]; };
    const Predictor f2 = [](std::span<const double> x) { return x[0] - 1.0; };
    for (auto h : {HFunction::square(), HFunction::abs_smoothed()}) {
      std::vector<double> C(4);
      for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j)
          C[i * 2 + j] = h(L(f1(s.features[i]), (*s.labels)[i]) - L(f2(t.features[j]), (*t.labels)[j]));
      const double bf = 0.5 * std::min(C[0] + C[3], C[1] + C[2]);
      EXPECT_NEAR(transferability_dh(DomainPair{s, t}, f1, f2, L, L, h), bf, 1e-12);
    }
  }
}

TEST(Transferability, NonnegativeAndValidated) {
  Rng rng(9);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto d = shifted_two_class_pair(30, 1.0, rng.uniform(-3.0, 3.0), RandomSeed{seed});
    const Predictor f = [](std::span<const double> x) { return x[0]; };
    EXPECT_GE(transferability_dh(d, f, f, LossFunction::logistic(), LossFunction::squared()), 0.0);
  }
  EXPECT_THROW(HFunction::from([](double r) { return r * r + 1.0; }), InvalidArgument);
  EXPECT_NO_THROW(HFunction::from([](double r) { return std::cosh(r) - 1.0; }));
  EXPECT_THROW(h_from_string("cubic"), InvalidArgument);
  const auto big = shifted_two_class_pair(600, 1.0, 0.0, RandomSeed{0});
  const Predictor f = [](std::span<const double> x) { return x[0]; };
  EXPECT_THROW(transferability_dh(big, f, f, LossFunction::squared(), LossFunction::squared()), InvalidArgument);
}

// ---------------------------------------------------------------------------
// affine_recovery_test

TEST(AffineRecovery, IdentityMap) {
  const auto r = affine_recovery_test(24, {1.0}, {0.0}, affine(1, -5.0, 5.0, -4.0, 4.0), LossFunction::squared(),
                                      RandomSeed{0});
  EXPECT_TRUE(r.identityPairing);
  EXPECT_NEAR(r.planCost, 0.0, 1e-15);
  EXPECT_LT(r.gap, 1e-12);
  EXPECT_TRUE(r.passed);
}

TEST(AffineRecovery, OneDimensionalMatchesSortedOracle) {
  const auto r = affine_recovery_test(32, {2.0}, {1.0}, affine(1, -5.0, 5.0, -4.0, 4.0), LossFunction::squared(),
                                      RandomSeed{1});
  EXPECT_TRUE(r.identityPairing);
  EXPECT_LT(r.gap, 1e-6);
  // Sorted matching oracle: x -> 2x + 1 preserves order, so the plan cost is
  // the mean of (x + 1)^2 over the same draws.
  Rng rng(derive_seed(1, 0));
  double cost = 0.0;
  for (int i = 0; i < 32; ++i) {
    const double x = rng.normal();
    rng.normal();
    cost += (x + 1.0) * (x + 1.0) / 32.0;
  }
  EXPECT_NEAR(r.planCost, cost, 1e-12);
}

TEST(AffineRecovery, TwoDimensionalHungarianOracle) {
  const std::vector<double> A{2.0, 0.0, 0.0, 0.5}, b{1.0, -1.0};
  const auto r = affine_recovery_test(16, A, b, affine(2, -5.0, 5.0, -4.0, 4.0), LossFunction::squared(), RandomSeed{2});
  EXPECT_TRUE(r.identityPairing);
  EXPECT_LT(r.gap, 1e-6);
  Rng rng(derive_seed(2, 0));
  std::vector<Point> xs, xt;
  for (int i = 0; i < 16; ++i) {
    Point x{rng.normal(), rng.normal()};
    rng.normal();
    xt.push_back({2.0 * x[0] + 1.0, 0.5 * x[1] - 1.0});
    xs.push_back(x);
  }
  std::vector<double> C(256);
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = 0; j < 16; ++j) C[i * 16 + j] = squared_distance(xs[i], xt[j]);
  std::vector<std::size_t> assign;
  const double h = oracle::hungarian(C, 16, &assign);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(assign[i], i);
  EXPECT_NEAR(r.planCost, h / 16.0, 1e-9);
}

TEST(AffineRecovery, RandomWellConditionedMaps) {
  Rng rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t p = 1 + trial % 2;
    const std::size_t n = 8 + rng.below(57);
    const auto A = random_spd(rng, p);
    std::vector<double> b(p);
    for (auto& v : b) v = rng.uniform(-3.0, 3.0);
    const auto r = affine_recovery_test(n, A, b, affine(p, -5.0, 5.0, -4.0, 4.0), LossFunction::squared(),
                                        RandomSeed{static_cast<std::uint64_t>(trial)});
    EXPECT_TRUE(r.identityPairing) << "trial " << trial << " mismatches " << r.mismatches;
    EXPECT_LT(r.gap, 1e-6) << "trial " << trial;
  }
}

TEST(AffineRecovery, RejectsIndefiniteMatrix) {
  const auto cls = affine(2, -5.0, 5.0, -4.0, 4.0);
  EXPECT_THROW(affine_recovery_test(8, {1.0, 0.0, 0.0, -1.0}, {0.0, 0.0}, cls, LossFunction::squared(), RandomSeed{0}),
               InvalidArgument);
  EXPECT_THROW(affine_recovery_test(8, {1.0, 2.0, 0.0, 1.0}, {0.0, 0.0}, cls, LossFunction::squared(), RandomSeed{0}),
               InvalidArgument);
}

// ---------------------------------------------------------------------------
// blur_sweep

namespace {

Sample regression_sample(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Sample s;
  s.labels.emplace();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.normal();
    s.features.push_back({x});
    s.labels->push_back(2.0 * x + 0.5 * rng.normal());
  }
  return s;
}

}  // namespace

TEST(BlurSweep, ZeroSigmaIsPlainErm) {
  const Sample s = regression_sample(200, 1);
  const auto cls = affine(1, -5.0, 5.0, -4.0, 4.0);
  const GridSpec g{{-8.0, -15.0}, {8.0, 15.0}, {64, 64}};
  const auto rep = blur_sweep(s, {0.0}, cls, LossFunction::squared(), g);
  const auto e = erm_detail(build_empirical(s), cls, LossFunction::squared());
  ASSERT_EQ(rep.rows.size(), 1u);
  EXPECT_EQ(rep.rows[0].theta, e.agent.theta);
  EXPECT_EQ(rep.rows[0].loss, total_loss(build_empirical(s), e.agent, LossFunction::squared()));
}

TEST(BlurSweep, LossDeltasShrinkWithSigma) {
  const Sample s = regression_sample(400, 2);
  const auto cls = affine(1, -5.0, 5.0, -4.0, 4.0);
  const GridSpec g{{-9.0, -15.0}, {9.0, 15.0}, {720, 1200}};
  const auto rep = blur_sweep(s, {1.0, 0.5, 0.1, 0.0}, cls, LossFunction::squared(), g);
  EXPECT_TRUE(rep.lossMonotone) << rep.lossDeltas[0] << " " << rep.lossDeltas[1] << " " << rep.lossDeltas[2];
  EXPECT_GT(rep.lossDeltas[0], rep.lossDeltas[2]);
  // Blurring x attenuates the fitted slope.
  EXPECT_LT(rep.rows[0].theta[0], rep.rows[3].theta[0]);
}

TEST(BlurSweep, SeparableAccuracyRecovered) {
  const Sample s = separable_two_class(400, RandomSeed{0});
  const auto cls = affine(2, -5.0, 5.0, -5.0, 5.0);
  const GridSpec g{{-7.0, -7.0, -2.0}, {7.0, 7.0, 2.0}, {280, 280, 2}};
  const auto rep = blur_sweep(s, {1.0, 0.5, 0.1, 0.01, 0.0}, cls, LossFunction::squared(), g);
  ASSERT_EQ(rep.accuracyDeltas.size(), 5u);
  EXPECT_DOUBLE_EQ(*rep.rows.back().accuracy, 1.0);
  EXPECT_LE(rep.accuracyDeltas[3], 0.02);
  EXPECT_TRUE(rep.lossMonotone);
}

TEST(BlurSweep, Errors) {
  const Sample s = regression_sample(50, 3);
  const auto cls = affine(1, -5.0, 5.0, -4.0, 4.0);
  const GridSpec small{{-1.0, -15.0}, {1.0, 15.0}, {32, 64}};
  EXPECT_THROW(blur_sweep(s, {5.0, 0.0}, cls, LossFunction::squared(), small), GridCoverageError);
  const GridSpec g{{-8.0, -15.0}, {8.0, 15.0}, {64, 64}};
  EXPECT_THROW(blur_sweep(s, {0.5, 1.0, 0.0}, cls, LossFunction::squared(), g), InvalidArgument);
  EXPECT_THROW(blur_sweep(s, {1.0, 0.5}, cls, LossFunction::squared(), g), InvalidArgument);
}
