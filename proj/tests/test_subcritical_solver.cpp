#include <gtest/gtest.h>

#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/special_functions/legendre.hpp>
#include <cmath>
#include <numbers>
#include <random>

#include "sol/enrichment.hpp"
#include "sol/subcritical_solver.hpp"

using namespace sol;

namespace {

constexpr double kPi = std::numbers::pi;

SingularWeight single(double a) { return SingularWeight({{SpherePoint::north(), a}}); }

SHCoefficients random_coefficients(int L, int lmax, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> g(0.0, 1.0);
  SHCoefficients c(L);
  for (int l = 1; l <= lmax; ++l)
    for (int m = -l; m <= l; ++m) c(l, m) = scale * g(rng) / (l * l);
  return c;
}

double h1_norm(const SHCoefficients& c) { return std::sqrt(dirichlet_energy(c)); }

}  // namespace

// ---------------------------------------------------------------------------
// Enrichment

TEST(RadialPotential, SolvesPoissonEquationSpectrally) {
  // l(l+1) <psi, Y_l0> = <q^b, Y_l0> against one-dimensional Legendre integrals.
  boost::math::quadrature::tanh_sinh<double> ts;
  for (double beta : {-0.5, 0.25}) {
    const RadialPotential P(SpherePoint::north(), beta);
    for (int l : {1, 2, 5}) {
      // In q = 1 - t, so the endpoint singularity sits at q = 0 exactly.
      auto y = [&](double q) { return std::sqrt((2 * l + 1) / (4 * kPi)) * boost::math::legendre_p(l, 1 - q); };
      const double lhs = l * (l + 1.0) * 2 * kPi * ts.integrate([&](double q) { return P.profile(q) * y(q); }, 0.0, 2.0);
      const double rhs = 2 * kPi * ts.integrate([&](double q) { return std::pow(q, beta) * y(q); }, 0.0, 2.0);
      EXPECT_NEAR(lhs, rhs, 1e-8 * std::abs(rhs) + 1e-10) << "beta " << beta << " l " << l;
    }
  }
}

TEST(RadialPotential, ProfileDerivativeAndMean) {
  boost::math::quadrature::tanh_sinh<double> ts;
  for (double beta : {-0.75, -0.5, 0.5, 1.5}) {
    const RadialPotential P(SpherePoint::north(), beta);
    for (double q : {0.1, 0.7, 1.5}) {
      const double h = 1e-5;
      EXPECT_NEAR((P.profile(q + h) - P.profile(q - h)) / (2 * h), P.profile_derivative(q), 1e-7);
    }
    // Zero mean: (1/2) int_0^2 profile dq.
    EXPECT_NEAR(ts.integrate([&](double q) { return P.profile(q); }, 0.0, 2.0), 0.0, 1e-9);
  }
  EXPECT_THROW(RadialPotential(SpherePoint::north(), -1.0), std::invalid_argument);
}

TEST(RadialPotential, EnergyReferenceValues) {
  // 2 pi int_0^2 Psi'(q)^2 q (2 - q) dq evaluated to 20 digits with mpmath.
  const std::vector<std::pair<double, double>> ref{
      {-0.5, 5.71546879643977}, {0.5, 0.6785238185126127}, {1.5, 4.462147749040439}, {2.75, 21.38740983393431}};
  const auto grid = grid_for_band_limit(8);
  const SingularWeight w({{SpherePoint::north(), -0.5}, {SpherePoint::south(), 0.25}});
  const auto e = Enrichment::build(SingularQuadrature(grid, w), w, 3, 0.0);
  for (std::size_t k = 0; k < e->size(); ++k)
    for (const auto& [beta, E] : ref)
      if (std::abs(e->potentials()[k].beta() - beta) < 1e-12) EXPECT_NEAR(e->gram(k, k), E, 1e-11 * E) << beta;
}

TEST(Enrichment, GramMatchesEnergyIntegral) {
  boost::math::quadrature::tanh_sinh<double> ts;
  const auto grid = grid_for_band_limit(32);
  const SingularWeight w({{SpherePoint::north(), -0.5}, {SpherePoint::south(), -0.75}});
  const SingularQuadrature q(grid, w);
  const auto e = Enrichment::build(q, w, 3, 0.0);
  ASSERT_GE(e->size(), 3u);
  for (std::size_t k = 0; k < e->size(); ++k) {
    const auto& P = e->potentials()[k];
    // int |grad psi|^2 = 2 pi int_0^2 Psi'(q)^2 q (2 - q) dq.
    const double E = 2 * kPi * ts.integrate(
                                   [&](double x) {
                                     const double d = P.profile_derivative(x) * std::sqrt(x);
                                     return d * d * (2 - x);
                                   },
                                   0.0, 2.0);
    EXPECT_NEAR(e->gram(k, k), E, 1e-9 * E) << "beta " << P.beta();
    EXPECT_GT(e->schur(k, k), 0.0);
  }
}

TEST(Enrichment, SkipsSmoothAndResolvedTerms) {
  const auto grid = grid_for_band_limit(64);
  const auto w = single(-0.5);
  const SingularQuadrature q(grid, w);
  // beta = 0 is smooth; beta = 0.5 is resolved to 1e-7 of its energy.
  const auto e = Enrichment::build(q, w);
  ASSERT_EQ(e->size(), 1u);
  EXPECT_NEAR(e->potentials()[0].beta(), -0.5, 1e-15);
  // Off-axis points are not enriched.
  const SingularWeight off({{SpherePoint(0.48, 0.36, 0.8), -0.5}});
  EXPECT_TRUE(Enrichment::build(SingularQuadrature(grid, off), off)->empty());
}

TEST(EnrichedFunctional, MatchesBaseWithoutPotentials) {
  const auto grid = grid_for_band_limit(24);
  const auto w = single(-0.5);
  MTFunctional f(grid, FunctionalParams{4 * kPi - 0.3, w});
  EnrichedFunctional ef(f, nullptr);
  std::mt19937_64 rng(3);
  const auto a = random_coefficients(24, 8, rng, 0.5);
  SHCoefficients g;
  FieldState ge;
  const double J = f.value_and_gradient(a, g).J;
  EXPECT_NEAR(ef.value_and_gradient(FieldState{a, {}}, &ge).J, J, 1e-13);
  EXPECT_NEAR(std::sqrt((ge.a - g).dot(ge.a - g)), 0.0, 1e-12);
}

TEST(EnrichedFunctional, GradientMatchesFiniteDifferences) {
  const auto grid = grid_for_band_limit(32);
  const SingularWeight w({{SpherePoint::north(), -0.5}, {SpherePoint::south(), -0.7}});
  MTFunctional f(grid, FunctionalParams{w.rho_bar() - 0.5, w});
  EnrichedFunctional ef(f, Enrichment::build(f.quadrature(), w));
  ASSERT_GE(ef.extra(), 2u);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  FieldState x{random_coefficients(32, 10, rng, 0.4), std::vector<double>(ef.extra())};
  for (double& s : x.s) s = n(rng);
  FieldState g;
  ef.value_and_gradient(x, &g);
  for (int trial = 0; trial < 5; ++trial) {
    FieldState v{random_coefficients(32, 10, rng, 1.0), std::vector<double>(ef.extra())};
    for (double& s : v.s) s = n(rng);
    const double h = 1e-5;
    const double fd = (ef.value_and_gradient(x + h * v, nullptr).J - ef.value_and_gradient(x - h * v, nullptr).J) / (2 * h);
    EXPECT_NEAR(fd, g.dot(v), 1e-5 * std::abs(g.dot(v)) + 1e-8);
  }
}

TEST(EnrichedFunctional, PreconditionerInvertsGram) {
  const auto grid = grid_for_band_limit(32);
  const auto w = single(-0.75);
  MTFunctional f(grid, FunctionalParams{w.rho_bar() - 0.5, w});
  EnrichedFunctional ef(f, Enrichment::build(f.quadrature(), w));
  ASSERT_GE(ef.extra(), 1u);
  std::mt19937_64 rng(9);
  FieldState g{random_coefficients(32, 32, rng, 1.0), std::vector<double>(ef.extra(), 0.7)};
  const FieldState d = ef.precondition(g);
  // Apply [[l(l+1), B], [B^T, M]] to d.
  FieldState back = ef.zero();
  for (int l = 1; l <= 32; ++l)
    for (int m = -l; m <= l; ++m) {
      double acc = l * (l + 1.0) * d.a(l, m);
      for (std::size_t k = 0; k < ef.extra(); ++k) acc += d.s[k] * ef.enrichment()->source(k)(l, m);
      back.a(l, m) = acc;
    }
  for (std::size_t k = 0; k < ef.extra(); ++k) {
    back.s[k] = d.a.dot(ef.enrichment()->source(k));
    for (std::size_t j = 0; j < ef.extra(); ++j) back.s[k] += ef.enrichment()->gram(k, j) * d.s[j];
  }
  g.a(0, 0) = 0.0;
  const FieldState diff = back - g;
  EXPECT_LT(std::sqrt(diff.dot(diff)), 1e-7 * std::sqrt(g.dot(g)));
}

// ---------------------------------------------------------------------------
// Minimization

TEST(Minimize, RoundSphereConvergesToConstants) {
  const auto grid = grid_for_band_limit(32);
  MTFunctional f(grid, FunctionalParams{8 * kPi - 1.0, SingularWeight{}});
  std::mt19937_64 rng(1);
  SolverConfig cfg;
  // Near 8 pi the l = 1 modes are weakly coercive; a tight tolerance pins the constant.
  cfg.tolerance = 1e-10;
  const auto s = minimize(f, cfg, random_coefficients(32, 6, rng, 0.5));
  ASSERT_TRUE(s.converged) << s.status;
  EXPECT_NEAR(s.J, 0.0, 1e-8);
  EXPECT_LT(h1_norm(s.coefficients), 1e-5);
  EXPECT_TRUE(s.enrichment.empty());
}

TEST(Minimize, NormalizationAndDescent) {
  const auto grid = grid_for_band_limit(48);
  const auto w = single(-0.5);
  MTFunctional f(grid, FunctionalParams{w.rho_bar() - 0.5, w});
  SolverConfig cfg;
  std::vector<double> Js;
  const auto s = minimize(f, cfg, initial_coefficients(f, cfg), [&](const TraceRecord& r) { Js.push_back(r.J); });
  ASSERT_TRUE(s.converged) << s.status;
  EXPECT_LT(s.normalization_error, 1e-8);
  ASSERT_FALSE(Js.empty());
  for (std::size_t i = 1; i < Js.size(); ++i) EXPECT_LE(Js[i], Js[i - 1] + 1e-12) << "step " << i;
  EXPECT_LE(s.residual, cfg.tolerance_for(f.rho()));
}

TEST(Minimize, SecondOrderOptimalityProbe) {
  const auto grid = grid_for_band_limit(48);
  const auto w = single(-0.5);
  MTFunctional f(grid, FunctionalParams{w.rho_bar() - 0.5, w});
  SolverConfig cfg;
  const auto s = minimize(f, cfg, initial_coefficients(f, cfg));
  ASSERT_TRUE(s.converged);
  EnrichedFunctional ef(f, s.basis);
  const double J0 = ef.value_and_gradient(s.field(), nullptr).J;
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    auto v = random_coefficients(48, 48, rng, 1.0);
    v *= 1.0 / h1_norm(v);
    for (double step : {1e-3, -1e-3}) {
      FieldState x = s.field();
      x.a += step * v;
      EXPECT_GE(ef.value_and_gradient(x, nullptr).J, J0 - 1e-6);
    }
  }
}

TEST(Minimize, FixedPointAndLbfgsAgree) {
  const auto grid = grid_for_band_limit(48);
  const auto w = single(-0.5);
  MTFunctional f(grid, FunctionalParams{w.rho_bar() - 0.5, w});
  SolverConfig fp, lb;
  lb.method = SolverMethod::lbfgs;
  const auto a = minimize(f, fp, initial_coefficients(f, fp));
  const auto b = minimize(f, lb, initial_coefficients(f, lb));
  ASSERT_TRUE(a.converged && b.converged);
  EXPECT_NEAR(a.J, b.J, 1e-8);
}

TEST(Minimize, EnrichmentTightensEnergyAcrossBandLimits) {
  // J of the eps = 0.2 minimizer at band limits 48 and 96, with and without
  // the radial potentials.
  const auto w = single(-0.5);
  auto solve = [&](int L, int terms) {
    MTFunctional f(grid_for_band_limit(L), FunctionalParams{w.rho_bar() - 0.2, w});
    SolverConfig cfg;
    cfg.method = SolverMethod::lbfgs;
    cfg.enrichment_terms = terms;
    return minimize(f, cfg, initial_coefficients(f, cfg)).J;
  };
  const double plain = std::abs(solve(48, 0) - solve(96, 0));
  const double enriched = std::abs(solve(48, 3) - solve(96, 3));
  EXPECT_LT(enriched, 0.2 * plain);
}

TEST(SolverConfigTest, Validation) {
  const double rb = 4 * kPi;
  SolverConfig c;
  EXPECT_NO_THROW(c.validate(rb));
  c.schedule = {0.1, 0.2};
  EXPECT_THROW(c.validate(rb), std::invalid_argument);
  c.schedule = {rb + 1};
  EXPECT_THROW(c.validate(rb), std::invalid_argument);
  c = SolverConfig{};
  c.damping = 0.0;
  EXPECT_THROW(c.validate(rb), std::invalid_argument);
  c = SolverConfig{};
  c.tolerance = -1.0;
  EXPECT_THROW(c.validate(rb), std::invalid_argument);
  c = SolverConfig{};
  c.enrichment_terms = -1;
  EXPECT_THROW(c.validate(rb), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Diagnostics

TEST(RichardsonFitTest, RecoversExactModel) {
  const std::vector<double> eps{0.5, 0.2, 0.1, 0.05};
  std::vector<double> J;
  for (double e : eps) J.push_back(-8.0 + 1.5 * e * std::log(e) - 0.7 * e);
  const auto fit = richardson_fit(eps, J);
  EXPECT_NEAR(fit.limit, -8.0, 1e-10);
  EXPECT_NEAR(fit.a, 1.5, 1e-9);
  EXPECT_NEAR(fit.b, -0.7, 1e-9);
  const auto two = richardson_fit({0.2, 0.1}, {-7.0 - 0.4, -7.0 - 0.2});
  EXPECT_NEAR(two.limit, -7.0, 1e-12);
  EXPECT_THROW(richardson_fit({0.1}, {1.0}), std::invalid_argument);
}

TEST(CapMass, WholeSphereCarriesRho) {
  const auto grid = grid_for_band_limit(48);
  const auto w = single(-0.5);
  MTFunctional f(grid, FunctionalParams{w.rho_bar() - 0.5, w});
  SolverConfig cfg;
  const auto s = minimize(f, cfg, initial_coefficients(f, cfg));
  const double total = cap_mass(s.evaluator(), w, f.rho(), SpherePoint::north(), kPi);
  EXPECT_NEAR(total / f.rho(), 1.0, 1e-6);
}

TEST(Diagnose, ShortSweepConcentrates) {
  const auto grid = grid_for_band_limit(64);
  const auto w = single(-0.5);
  SolverConfig cfg;
  cfg.method = SolverMethod::lbfgs;
  cfg.schedule = {0.5, 0.2, 0.1};
  const auto rep = epsilon_sweep(grid, w, cfg);
  EXPECT_TRUE(rep.all_converged);
  EXPECT_TRUE(rep.lambda_increasing);
  EXPECT_TRUE(rep.mean_decay_decreasing);
  EXPECT_TRUE(rep.profile_error_decreasing);
  for (const auto& e : rep.entries) {
    EXPECT_FALSE(e.diagnostics.under_resolved);
    EXPECT_LT(geodesic_distance(e.diagnostics.center, SpherePoint::north()), 1e-12);
    EXPECT_GT(e.diagnostics.grad_l15, 0.0);
  }
  EXPECT_NEAR(rep.target.inf_J, -4 * kPi * std::log(2.0), 1e-12);
}

TEST(Diagnose, RoundSphereStaysBounded) {
  const auto grid = grid_for_band_limit(32);
  SolverConfig cfg;
  cfg.schedule = {1.0, 0.5};
  cfg.tolerance = 1e-10;
  const auto rep = epsilon_sweep(grid, SingularWeight{}, cfg);
  ASSERT_TRUE(rep.all_converged);
  for (const auto& e : rep.entries) {
    EXPECT_NEAR(e.state.J, 0.0, 1e-8);
    EXPECT_LT(std::abs(e.diagnostics.lambda - std::log(1.0 / (4 * kPi))), 1e-6);
  }
}

TEST(GradientExponent, BoundedGradientRegime) {
  const auto grid = grid_for_band_limit(256);
  const auto w = single(-0.25);
  MTFunctional f(grid, FunctionalParams{w.rho_bar() - 3.0, w});
  SolverConfig cfg;
  cfg.method = SolverMethod::lbfgs;
  const auto s = minimize(f, cfg, initial_coefficients(f, cfg));
  ASSERT_TRUE(s.converged);
  const auto fit = gradient_singularity_exponent(s, w, SpherePoint::north());
  EXPECT_NEAR(fit.bound, 0.0, 1e-15);
  EXPECT_GE(fit.slope, -0.05);
}

TEST(GradientExponent, SingularGradientRegime) {
  // Far from concentration so that the fit annulus sees the leading term.
  const auto grid = grid_for_band_limit(256);
  const auto w = single(-0.75);
  MTFunctional f(grid, FunctionalParams{w.rho_bar() - 3.5, w});
  SolverConfig cfg;
  cfg.method = SolverMethod::lbfgs;
  const auto s = minimize(f, cfg, initial_coefficients(f, cfg));
  ASSERT_TRUE(s.converged);
  const auto fit = gradient_singularity_exponent(s, w, SpherePoint::north());
  EXPECT_NEAR(fit.bound, -0.5, 1e-15);
  EXPECT_GE(fit.slope, -0.7);
  EXPECT_LE(fit.slope, 0.0);
}

TEST(GradientExponent, Preconditions) {
  const auto grid = grid_for_band_limit(32);
  const auto w = single(-0.5);
  MTFunctional f(grid, FunctionalParams{w.rho_bar() - 1.0, w});
  SolverConfig cfg;
  const auto s = minimize(f, cfg, initial_coefficients(f, cfg));
  EXPECT_THROW(gradient_singularity_exponent(s, w, SpherePoint::north()), std::invalid_argument);
  EXPECT_THROW(gradient_singularity_exponent(s, w, SpherePoint::south()), std::invalid_argument);
  const auto pos = single(0.5);
  EXPECT_THROW(gradient_singularity_exponent(s, pos, SpherePoint::north()), std::invalid_argument);
}
