#include <gtest/gtest.h>

#include <cmath>

#include "mprecon/learning.hpp"
#include "mprecon/preconditioners.hpp"

using namespace mprecon;

namespace {

std::shared_ptr<const HypothesisClass> affine_1d(double lo = -5.0, double hi = 5.0) {
  return std::make_shared<const HypothesisClass>(HypothesisClass::affine({lo, lo}, {hi, hi}, {-3.0}, {3.0}));
}

Measure joint(const std::vector<Point>& pts, std::optional<std::vector<double>> w = std::nullopt) {
  return make_discrete(pts, w, true);
}

Measure random_joint(Rng& rng, std::size_t n) {
  std::vector<Point> pts;
  std::vector<double> w;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.uniform(-2.0, 2.0);
    pts.push_back({x, 0.7 * x - 0.3 + rng.normal(0.0, 0.5)});
    w.push_back(rng.uniform(0.1, 1.0));
  }
  return joint(pts, w);
}

}  // namespace

TEST(Loss, Values) {
  EXPECT_DOUBLE_EQ(LossFunction::squared()(1.0, 3.0), 4.0);
  EXPECT_DOUBLE_EQ(LossFunction::absolute()(1.0, 3.0), 2.0);
  EXPECT_NEAR(LossFunction::logistic()(0.0, 1.0), std::log(2.0), 1e-15);
  EXPECT_NEAR(LossFunction::logistic()(800.0, -1.0), 800.0, 1e-9);
  EXPECT_DOUBLE_EQ(LossFunction::clipped(LossKind::Squared, 1.5)(0.0, 3.0), 1.5);
  LossFunction bad = LossFunction::squared();
  bad.clip = 2.0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
}

TEST(Loss, FlagVerification) {
  auto c = affine_1d(-1.0, 1.0);
  ScenarioBox box{{-3.0}, {3.0}, -1.0, 1.0};
  auto clipped = LossFunction::clipped(LossKind::Squared, 2.0);
  EXPECT_TRUE(verify_flags(clipped, *c, box).boundOk);
  // Logistic: |d/df| <= 1 and |d/dy| <= |f|, so with |a|,|b| <= 1 on |x| <= 3 the constant sqrt(1 + 16) works.
  auto lip = LossFunction::logistic().with_lipschitz(std::sqrt(17.0));
  EXPECT_TRUE(verify_flags(lip, *c, box).lipschitzOk);
  auto wrong = LossFunction::logistic().with_lipschitz(0.1);
  EXPECT_FALSE(verify_flags(wrong, *c, box).lipschitzOk);
  auto squaredBound = LossFunction::squared();
  squaredBound.boundM = 0.5;
  EXPECT_FALSE(verify_flags(squaredBound, *c, box).boundOk);
}

TEST(TotalLoss, Examples) {
  auto c = affine_1d();
  Agent id(c, {1.0, 0.0});
  EXPECT_DOUBLE_EQ(total_loss(joint({{0.0, 0.0}}), id, LossFunction::squared()), 0.0);
  EXPECT_DOUBLE_EQ(total_loss(joint({{0.0, 1.0}, {1.0, 0.0}}), id, LossFunction::squared()), 1.0);
  Rng rng(5);
  auto m = random_joint(rng, 30);
  EXPECT_LE(total_loss(m, Agent(c, {4.0, 4.0}), LossFunction::clipped(LossKind::Squared, 0.8)), 0.8);
  EXPECT_THROW(total_loss(make_discrete({{0.0, 1.0}}), id, LossFunction::squared()), InvalidArgument);
  auto c2 = std::make_shared<const HypothesisClass>(HypothesisClass::affine({0, 0, 0}, {1, 1, 1}, {0, 0}, {1, 1}));
  EXPECT_THROW(total_loss(joint({{0.0, 1.0}}), Agent(c2, {0, 0, 0}), LossFunction::squared()), InvalidArgument);
}

TEST(TotalLoss, GridQuadrature) {
  // Uniform on [0,1]x[0,1], f(x) = x, squared loss: E(x - y)^2 = 1/6 up to midpoint error.
  auto g = grid_from_function(GridSpec::box({0.0, 0.0}, {1.0, 1.0}, 200), [](const Point&) { return 1.0; });
  EXPECT_NEAR(total_loss(Measure(g, true), Agent(affine_1d(), {1.0, 0.0}), LossFunction::squared()), 1.0 / 6.0, 1e-4);
}

TEST(Agent, ThetaInsideBox) {
  auto c = affine_1d(-1.0, 1.0);
  EXPECT_THROW(Agent(c, {2.0, 0.0}), InvalidArgument);
  EXPECT_THROW(Agent(c, {0.0}), InvalidArgument);
}

TEST(Erm, RealizableLine) {
  std::vector<Point> pts;
  for (int i = 0; i < 10; ++i) pts.push_back({0.3 * i - 1.0, 2.0 * (0.3 * i - 1.0)});
  auto r = erm_detail(joint(pts), affine_1d(), LossFunction::squared());
  EXPECT_NEAR(r.agent.theta[0], 2.0, 1e-5);
  EXPECT_NEAR(r.agent.theta[1], 0.0, 1e-5);
  EXPECT_NEAR(r.loss, 0.0, 1e-9);
  // Same with the generic path (absolute loss).
  auto a = erm_detail(joint(pts), affine_1d(), LossFunction::absolute());
  EXPECT_NEAR(a.agent.theta[0], 2.0, 1e-5);
  EXPECT_NEAR(a.loss, 0.0, 1e-5);
}

TEST(Erm, TabulatedFamily) {
  auto c = std::make_shared<const HypothesisClass>(HypothesisClass::tabulated(
      {[](std::span<const double> x) { return x[0]; }, [](std::span<const double>) { return 1.0; },
       [](std::span<const double>) { return 1.0; }},
      {-1.0}, {1.0}));
  auto m = joint({{0.0, 1.0}, {0.5, 1.0}});
  auto f = erm(m, c, LossFunction::squared());
  // Members 1 and 2 tie at 0; the smaller index wins.
  EXPECT_EQ(f.theta[0], 1.0);
}

TEST(Regression, Examples) {
  auto r = regression_coefficients(joint({{-1.0, -1.0}, {1.0, 1.0}}));
  EXPECT_DOUBLE_EQ(r.a, 1.0);
  EXPECT_DOUBLE_EQ(r.b, 0.0);
  EXPECT_THROW(regression_coefficients(joint({{0.0, 3.0}})), DegenerateInput);
  auto r2 = regression_coefficients(joint({{-1.0, 1.0}, {1.0, -1.0}}));
  EXPECT_DOUBLE_EQ(r2.a, -1.0);
  EXPECT_DOUBLE_EQ(r2.b, 0.0);
  auto e = erm_detail(joint({{-1.0, 1.0}, {1.0, -1.0}}), affine_1d(), LossFunction::squared());
  EXPECT_NEAR(e.agent.theta[0], -1.0, 1e-5);
}

TEST(Regression, ClosedFormMatchesErmOnRandomJoints) {
  Rng rng(7);
  auto c = affine_1d();
  for (int t = 0; t < 20; ++t) {
    auto m = random_joint(rng, 3 + rng.below(20));
    const auto cf = regression_coefficients(m);
    const auto e = erm_detail(m, c, LossFunction::squared());
    EXPECT_NEAR(e.agent.theta[0], cf.a, 1e-5);
    EXPECT_NEAR(e.agent.theta[1], cf.b, 1e-5);
    const double closed = total_loss(m, Agent(c, {cf.a, cf.b}), LossFunction::squared());
    EXPECT_NEAR(e.loss, closed, 1e-5);
    EXPECT_GE(e.loss, closed - 1e-12);
  }
}

TEST(Erm, NeverWorseThanRandomAgents) {
  Rng rng(11);
  auto c = affine_1d(-2.0, 2.0);
  for (auto L : {LossFunction::squared(), LossFunction::absolute(), LossFunction::logistic(),
                 LossFunction::clipped(LossKind::Squared, 1.0)}) {
    auto m = random_joint(rng, 25);
    const auto e = erm_detail(m, c, L);
    Rng draws(123);
    for (int k = 0; k < 100; ++k) {
      Agent g(c, {draws.uniform(-2.0, 2.0), draws.uniform(-2.0, 2.0)});
      EXPECT_LE(e.loss, total_loss(m, g, L) + 1e-12) << L.name();
    }
    EXPECT_NEAR(e.loss, total_loss(m, e.agent, L), 1e-12);
  }
}

TEST(Erm, ScaleInvariantArgmin) {
  Rng rng(13);
  auto c = affine_1d(-2.0, 2.0);
  for (auto L : {LossFunction::absolute(), LossFunction::logistic(), LossFunction::squared()}) {
    auto m = random_joint(rng, 15);
    const auto e1 = erm(m, c, L);
    const auto e2 = erm(m, c, L.scaled(7.0));
    EXPECT_NEAR(e1.theta[0], e2.theta[0], 1e-5) << L.name();
    EXPECT_NEAR(e1.theta[1], e2.theta[1], 1e-5) << L.name();
  }
}

TEST(Erm, TwoDimensionalFeatures) {
  auto c = std::make_shared<const HypothesisClass>(HypothesisClass::affine({-3, -3, -3}, {3, 3, 3}, {-1, -1}, {1, 1}));
  std::vector<Point> pts;
  Rng rng(17);
  for (int i = 0; i < 40; ++i) {
    const double x1 = rng.uniform(-1, 1), x2 = rng.uniform(-1, 1);
    pts.push_back({x1, x2, 1.5 * x1 - 0.5 * x2 + 0.25});
  }
  auto f = erm(make_discrete(pts, std::nullopt, true), c, LossFunction::squared());
  EXPECT_NEAR(f.theta[0], 1.5, 1e-5);
  EXPECT_NEAR(f.theta[1], -0.5, 1e-5);
  EXPECT_NEAR(f.theta[2], 0.25, 1e-5);
}

TEST(ClassMetric, EquivalentToParameterDistance) {
  auto c = affine_1d();
  EXPECT_EQ(c->lattice().size(), 64u);
  Rng rng(19);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> t1{rng.uniform(-5, 5), rng.uniform(-5, 5)}, t2{rng.uniform(-5, 5), rng.uniform(-5, 5)};
    const double dp = std::max(std::abs(t1[0] - t2[0]), std::abs(t1[1] - t2[1]));
    const double d = c->distance(t1, t2);
    // On |x| <= 3: d <= (1 + 3) |dtheta|_inf, and the endpoints give d >= |dtheta|_inf / 2.
    EXPECT_LE(d, 4.0 * dp + 1e-12);
    EXPECT_GE(d, 0.5 * dp - 1e-12);
  }
  EXPECT_EQ(HypothesisClass::affine({0, 0, 0}, {1, 1, 1}, {0, 0}, {1, 1}).lattice().size(), 64u);
}

TEST(RegressionBound, ConstantSequence) {
  auto pi = joint({{-1.0, -0.5}, {0.0, 0.1}, {1.0, 1.2}});
  auto rep = regression_tv_bound_check({pi, pi, pi}, pi);
  for (const auto& r : rep.rows) {
    EXPECT_EQ(r.gap, 0.0);
    EXPECT_TRUE(r.ok);
  }
}

TEST(RegressionBound, KdeSequenceSatisfiesBound) {
  // Target: x ~ N(0,1) restricted to the grid, y | x ~ N(x / 2, 0.25).
  const auto g = GridSpec::box({-7.0, -7.0}, {7.0, 7.0}, 128);
  auto target = Measure(grid_from_function(g, [](const Point& z) {
                          const double r = z[1] - 0.5 * z[0];
                          return std::exp(-0.5 * z[0] * z[0]) * std::exp(-r * r / (2 * 0.25));
                        }),
                        true);
  std::vector<Measure> seq, emp;
  for (std::size_t n : {50u, 200u, 800u, 3200u}) {
    auto s = sample_from(target, n, RandomSeed{n});
    Sample plain{s.joint_points(), std::nullopt, std::nullopt};
    seq.push_back(build_kde(plain, Kernel::gaussian(), BandwidthRule::power_law(1.0, 1.0 / 6.0), g).with_joint(true));
    emp.push_back(build_empirical(s));
  }
  auto rep = regression_tv_bound_check(seq, target);
  EXPECT_EQ(rep.violations, 0u);
  for (const auto& r : rep.rows) EXPECT_FALSE(r.vacuous);
  auto repE = regression_tv_bound_check(emp, target);
  for (const auto& r : repE.rows) {
    EXPECT_TRUE(r.vacuous);
    EXPECT_TRUE(r.ok);
  }
}
