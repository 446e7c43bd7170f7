#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <numbers>
#include <random>

#include "sol/mt_functional.hpp"

using namespace sol;

namespace {

constexpr double kPi = std::numbers::pi;

// Random field with coefficient variance ~ 1/(l(l+1))^2, scaled to the
// requested H1 seminorm.
SHCoefficients random_field(int L, int Lmax, double h1, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  SHCoefficients c(L);
  for (int l = 1; l <= std::min(L, Lmax); ++l)
    for (int m = -l; m <= l; ++m) c(l, m) = g(rng) / (l * (l + 1.0));
  c *= h1 / std::sqrt(dirichlet_energy(c));
  c(0, 0) = g(rng);
  return c;
}

}  // namespace

TEST(ExpIntegral, ConstantFieldWithoutSingularities) {
  const auto grid = grid_for_band_limit(16);
  EXPECT_NEAR(exp_integral(ScalarField::constant(grid, 0.0), SingularWeight{}), 4 * kPi, 1e-12);
}

TEST(ExpIntegral, SinglePolarSingularity) {
  // int (e/2)^{-1/2} (1 - x3)^{-1/2} = 4 pi sqrt(2) (2/e)^{1/2}.
  const double exact = 4 * kPi * std::sqrt(2.0) * std::sqrt(2.0 / std::numbers::e);
  EXPECT_NEAR(exact, 15.2438, 1e-4);
  for (int L : {8, 32, 128}) {
    const auto grid = grid_for_band_limit(L);
    const SingularWeight w({{SpherePoint::north(), -0.5}});
    EXPECT_NEAR(exp_integral(ScalarField::constant(grid, 0.0), w), exact, 1e-12 * exact) << "L = " << L;
  }
}

TEST(ExpIntegral, PolarSingularityOfOtherOrders) {
  // int (1 - t)^a dt over [-1, 1] = 2^{a+1} / (a+1).
  const auto grid = grid_for_band_limit(32);
  for (double a : {-0.9, -0.75, -0.25, 0.3, 1.7}) {
    const SingularWeight w({{SpherePoint::south(), a}});
    const double exact = 2 * kPi * std::pow(std::numbers::e / 2, a) * std::pow(2.0, a + 1) / (a + 1);
    EXPECT_NEAR(exp_integral(ScalarField::constant(grid, 0.0), w), exact, 1e-10 * exact) << "a = " << a;
  }
}

TEST(ExpIntegral, OffAxisSingularityUsesBlendedCap) {
  const double exact = 4 * kPi * std::sqrt(2.0) * std::sqrt(2.0 / std::numbers::e);
  const auto grid = grid_for_band_limit(64);
  const SingularWeight w({{SpherePoint(0.3, -0.2, 0.5), -0.5}});
  SingularCapRule rule;
  rule.radius = 0.3;
  EXPECT_NEAR(exp_integral(ScalarField::constant(grid, 0.0), w, rule), exact, 1e-6 * exact);
}

TEST(ExpIntegral, SmoothFieldAgainstOneDimensionalOracle) {
  // u = b x3 with a singularity at the north pole: 2 pi (e/2)^a int (1-t)^a e^{b t} dt.
  const double a = -0.6, b = 1.3;
  const auto grid = grid_for_band_limit(32);
  const SingularWeight w({{SpherePoint::north(), a}});
  const auto u = ScalarField::sample(grid, [&](const SpherePoint& x) { return b * x[2]; });
  // Substitute t = 1 - s^{1/(1+a)} to remove the endpoint singularity.
  const double k = 1.0 / (1.0 + a);
  auto f = [&](double s) {
    const double t = 1.0 - std::pow(s, k);
    return k * std::exp(b * t);
  };
  const double oracle = 2 * kPi * std::pow(std::numbers::e / 2, a) *
                        boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, std::pow(2.0, 1 + a), 15, 1e-14);
  EXPECT_NEAR(exp_integral(u, w), oracle, 1e-10 * oracle);
}

TEST(ExpIntegral, CapRuleConvergesMonotonically) {
  // Off-axis cap with few radial nodes; differences between n and 2n shrink.
  const auto grid = grid_for_band_limit(32);
  const SingularWeight w({{SpherePoint(0.0, 1.0, 0.2), -0.7}});
  const auto u = ScalarField::sample(grid, [](const SpherePoint& x) { return 0.5 * x[1]; });
  std::vector<double> values;
  for (int n : {4, 8, 16, 32, 64}) {
    SingularCapRule rule;
    rule.radius = 0.3;
    rule.radial_nodes = n;
    values.push_back(exp_integral(u, w, rule));
  }
  double prev = std::abs(values[1] - values[0]);
  for (std::size_t i = 2; i < values.size(); ++i) {
    const double diff = std::abs(values[i] - values[i - 1]);
    EXPECT_LT(diff, prev) << "step " << i;
    prev = diff;
  }
}

TEST(ExpIntegral, OverflowCeiling) {
  const auto grid = grid_for_band_limit(8);
  EXPECT_THROW(exp_integral(ScalarField::constant(grid, 800.0), SingularWeight{}), OverflowError);
  EXPECT_NO_THROW(exp_integral(ScalarField::constant(grid, 800.0), SingularWeight{}, {}, 900.0));
}

TEST(EvalJ, ConstantsGiveZero) {
  const auto grid = grid_for_band_limit(16);
  EXPECT_NEAR(eval_J(ScalarField::constant(grid, 0.0), FunctionalParams{8 * kPi, {}}), 0.0, 1e-12);
  const SingularWeight w({{SpherePoint::north(), -0.5}, {SpherePoint::south(), 0.3}});
  // J(c) = rho c - rho log(e^c Q / 4pi) = -rho log(Q / 4pi): zero only when int h = 4pi.
  for (double c : {-3.0, 0.0, 4.0}) {
    EXPECT_NEAR(eval_J(ScalarField::constant(grid, c), FunctionalParams{5.0, {}}), 0.0, 1e-9);
    const double J0 = eval_J(ScalarField::constant(grid, 0.0), FunctionalParams{5.0, w});
    EXPECT_NEAR(eval_J(ScalarField::constant(grid, c), FunctionalParams{5.0, w}), J0, 1e-9);
  }
}

TEST(EvalJ, ConstantShiftInvariance) {
  std::mt19937_64 rng(21);
  const auto grid = grid_for_band_limit(32);
  const SingularWeight w({{SpherePoint::north(), -0.5}});
  const MTFunctional f(grid, FunctionalParams{w.rho_bar() - 0.3, w});
  const auto a = random_field(32, 32, 3.0, rng);
  const double J0 = f.value(a).J;
  for (double c : {-10.0, -1.0, 2.5, 10.0}) {
    auto b = a;
    b(0, 0) += c * std::sqrt(4 * kPi);
    EXPECT_NEAR(f.value(b).J, J0, 1e-9);
  }
}

TEST(EvalJ, GradientMatchesCentralDifferences) {
  std::mt19937_64 rng(5);
  const auto grid = grid_for_band_limit(24);
  const SingularWeight w({{SpherePoint::north(), -0.5}, {SpherePoint::south(), 0.25}});
  const MTFunctional f(grid, FunctionalParams{w.rho_bar() - 0.5, w});
  const auto a = random_field(24, 24, 2.0, rng);
  SHCoefficients g;
  f.value_and_gradient(a, g);
  for (int trial = 0; trial < 5; ++trial) {
    const auto v = random_field(24, 24, 1.0, rng);
    const double step = 1e-5;
    const double fd = (f.value(a + step * v).J - f.value(a - step * v).J) / (2 * step);
    const double an = g.dot(v);
    EXPECT_NEAR(an, fd, 1e-5 * std::max(1.0, std::abs(an))) << "direction " << trial;
  }
}

TEST(ElResidual, VanishesForConstantsAndHasZeroMean) {
  const auto grid = grid_for_band_limit(16);
  const auto r0 = el_residual(ScalarField::constant(grid, 0.7), FunctionalParams{3.0, {}});
  for (double v : r0.field.values()) EXPECT_NEAR(v, 0.0, 1e-10);

  std::mt19937_64 rng(8);
  const SingularWeight w({{SpherePoint::north(), -0.3}});
  const MTFunctional f(grid, FunctionalParams{10.0, w});
  const auto a = random_field(16, 16, 2.0, rng);
  const auto r = el_residual(f, a);
  EXPECT_LT(std::abs(r.mean), 1e-8);
  EXPECT_LT(std::abs(integrate(r.field)) / (4 * kPi), 1e-8);
  EXPECT_GT(r.l2_norm, 0.0);
}

TEST(Normalize, UnitExponentialIntegral) {
  std::mt19937_64 rng(13);
  const auto grid = grid_for_band_limit(24);
  const SingularWeight w({{SpherePoint::north(), -0.5}});
  const MTFunctional f(grid, FunctionalParams{w.rho_bar() - 0.1, w});
  const auto a = f.normalized(random_field(24, 24, 4.0, rng));
  EXPECT_NEAR(std::exp(f.log_exp_integral(a)), 1.0, 1e-12);
}

TEST(TroyanovGap, OnofriInequalityOnRandomFields) {
  std::mt19937_64 rng(17);
  const auto grid = grid_for_band_limit(64);
  const MTFunctional f(grid, FunctionalParams{8 * kPi, {}});
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_field(64, 12, 0.5 + 0.25 * trial, rng);
    EXPECT_GE(troyanov_gap(f, a, 0.0), -1e-6) << "trial " << trial;
  }
}

TEST(TroyanovGap, EqualsScaledFunctional) {
  std::mt19937_64 rng(19);
  const auto grid = grid_for_band_limit(24);
  const SingularWeight w({{SpherePoint::north(), -0.4}});
  const MTFunctional f(grid, FunctionalParams{w.rho_bar(), w});
  const auto a = random_field(24, 24, 2.0, rng);
  EXPECT_NEAR(troyanov_gap(f, a, 0.3), f.value(a).J / w.rho_bar() + 0.3, 1e-12);
}
