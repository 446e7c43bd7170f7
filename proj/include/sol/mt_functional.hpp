#pragma once

// The singular Moser-Trudinger functional
//   J(u) = 1/2 int |grad u|^2 + (rho / 4pi) int u - rho log((1/4pi) int h e^u)
// on spectral coefficients, its exact discrete gradient, and the
// Troyanov-type gap.

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "sol/quadrature.hpp"
#include "sol/singular_geometry.hpp"
#include "sol/sphere_grid.hpp"

namespace sol {

/// max u exceeded the configured ceiling: the field is not normalized or
/// has blown up beyond what the grid can represent.
class OverflowError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FunctionalParams {
  double rho = 8.0 * std::numbers::pi;
  SingularWeight weight;
  SingularCapRule rule{};
  double ceiling = 700.0;
};

inline const double kSqrtFourPi = std::sqrt(kFourPi);

class MTFunctional {
 public:
  struct Value {
    double J = 0.0;
    double dirichlet = 0.0;
    double mean = 0.0;
    double log_integral = 0.0;  // log int h e^u
    double max_u = 0.0;
  };

  MTFunctional(GridPtr grid, FunctionalParams params)
      : params_(std::move(params)),
        quad_(std::make_shared<const SingularQuadrature>(std::move(grid), params_.weight, params_.rule)) {
    if (!(params_.rho > 0.0) || !std::isfinite(params_.rho)) throw std::invalid_argument("MTFunctional: rho must be positive");
  }

  MTFunctional(std::shared_ptr<const SingularQuadrature> quad, FunctionalParams params)
      : params_(std::move(params)), quad_(std::move(quad)) {
    if (!(params_.rho > 0.0) || !std::isfinite(params_.rho)) throw std::invalid_argument("MTFunctional: rho must be positive");
  }

  /// Same weight and quadrature at a different rho.
  MTFunctional with_rho(double rho) const {
    FunctionalParams p = params_;
    p.rho = rho;
    return MTFunctional(quad_, std::move(p));
  }

  const FunctionalParams& params() const { return params_; }
  double rho() const { return params_.rho; }
  const SingularWeight& weight() const { return params_.weight; }
  const SingularQuadrature& quadrature() const { return *quad_; }
  const std::shared_ptr<const SingularQuadrature>& quadrature_ptr() const { return quad_; }
  const GridPtr& grid() const { return quad_->grid(); }
  int band_limit() const { return quad_->band_limit(); }

  SHCoefficients coefficients(const ScalarField& u) const {
    if (u.grid() != grid() && u.grid()->band_limit() < band_limit())
      throw std::invalid_argument("MTFunctional: field grid band limit is below the functional's");
    return sh_analysis(u, std::min(band_limit(), u.grid()->band_limit())).resized(band_limit());
  }

  /// log int h e^u, with the exponentials shifted by max u.
  double log_exp_integral(const SHCoefficients& a, double* max_u = nullptr) const {
    const auto u = quad_->synthesize(check(a));
    return log_exp_integral_values(u, max_u);
  }

  Value value(const SHCoefficients& a) const { return evaluate(a, nullptr); }

  /// J and its gradient with respect to the coefficients.
  Value value_and_gradient(const SHCoefficients& a, SHCoefficients& grad) const { return evaluate(a, &grad); }

  /// Shift a_00 so that int h e^u = 1.
  SHCoefficients normalized(const SHCoefficients& a) const {
    SHCoefficients out = check(a);
    out(0, 0) -= kSqrtFourPi * log_exp_integral(out);
    return out;
  }

 private:
  const SHCoefficients& check(const SHCoefficients& a) const {
    if (a.band_limit() != band_limit()) throw std::invalid_argument("MTFunctional: coefficient band limit mismatch");
    return a;
  }

  double log_exp_integral_values(const std::vector<double>& u, double* max_u) const {
    const double top = *std::max_element(u.begin(), u.end());
    if (!std::isfinite(top)) throw OverflowError("exp_integral: non-finite field values");
    if (top > params_.ceiling)
      throw OverflowError("exp_integral: max u = " + std::to_string(top) + " exceeds the ceiling " +
                          std::to_string(params_.ceiling));
    if (max_u) *max_u = top;
    const auto& hw = quad_->weighted_h();
    double acc = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) acc += hw[i] * std::exp(u[i] - top);
    return top + std::log(acc);
  }

  Value evaluate(const SHCoefficients& a, SHCoefficients* grad) const {
    check(a);
    const auto u = quad_->synthesize(a);
    Value v;
    v.log_integral = log_exp_integral_values(u, &v.max_u);
    v.dirichlet = dirichlet_energy(a);
    v.mean = a.mean();
    const double rho = params_.rho;
    v.J = 0.5 * v.dirichlet + rho * v.mean - rho * (v.log_integral - std::log(kFourPi));
    if (grad) {
      // Density h e^u / int h e^u at the nodes, weights folded in.
      const auto& hw = quad_->weighted_h();
      std::vector<double> dens(u.size());
      for (std::size_t i = 0; i < u.size(); ++i) dens[i] = hw[i] * std::exp(u[i] - v.log_integral);
      SHCoefficients g = quad_->adjoint(dens, band_limit());
      g *= -rho;
      for (int l = 1; l <= band_limit(); ++l)
        for (int m = -l; m <= l; ++m) g(l, m) += double(l) * (l + 1) * a(l, m);
      // The l = 0 part vanishes identically: rho/sqrt(4pi) - rho/sqrt(4pi).
      g(0, 0) = 0.0;
      *grad = std::move(g);
    }
    return v;
  }

  FunctionalParams params_;
  std::shared_ptr<const SingularQuadrature> quad_;
};

inline double exp_integral(const ScalarField& u, const SingularWeight& w, const SingularCapRule& rule = {},
                           double ceiling = 700.0) {
  MTFunctional f(u.grid(), FunctionalParams{8.0 * std::numbers::pi, w, rule, ceiling});
  return std::exp(f.log_exp_integral(f.coefficients(u)));
}

inline double eval_J(const ScalarField& u, const FunctionalParams& params) {
  MTFunctional f(u.grid(), params);
  return f.value(f.coefficients(u)).J;
}

struct ResidualReport {
  ScalarField field;
  double l2_norm = 0.0;
  double mean = 0.0;
};

/// Galerkin residual of -Lap u = rho (h e^u / int h e^u - 1/4pi): the band-L
/// projection of the pointwise residual, whose coefficients equal the
/// gradient of J. Its mean vanishes identically.
inline ResidualReport el_residual(const MTFunctional& f, const SHCoefficients& a) {
  SHCoefficients g;
  f.value_and_gradient(a, g);
  ResidualReport r;
  r.field = sh_synthesis(g, f.grid());
  r.l2_norm = std::sqrt(g.dot(g));
  r.mean = g.mean();
  return r;
}

inline ResidualReport el_residual(const ScalarField& u, const FunctionalParams& params) {
  MTFunctional f(u.grid(), params);
  return el_residual(f, f.coefficients(u));
}

/// [1/(16 pi (1+alpha))] int |grad u|^2 + C - log((1/4pi) int h e^{u - mean u});
/// equals J_{rho_bar}(u) / rho_bar + C.
inline double troyanov_gap(const MTFunctional& f, const SHCoefficients& a, double C) {
  const double rho_bar = f.weight().rho_bar();
  const double logQ = f.log_exp_integral(a);
  return dirichlet_energy(a) / (2.0 * rho_bar) + C - (logQ - a.mean() - std::log(kFourPi));
}

inline double troyanov_gap(const ScalarField& u, const SingularWeight& w, double C, const SingularCapRule& rule = {}) {
  MTFunctional f(u.grid(), FunctionalParams{w.rho_bar(), w, rule});
  return troyanov_gap(f, f.coefficients(u), C);
}

inline ScalarField normalize(const ScalarField& u, const SingularWeight& w, const SingularCapRule& rule = {}) {
  MTFunctional f(u.grid(), FunctionalParams{w.rho_bar(), w, rule});
  return sh_synthesis(f.normalized(f.coefficients(u)), u.grid());
}

}  // namespace sol
