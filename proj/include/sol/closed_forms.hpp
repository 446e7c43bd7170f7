#pragma once

// Closed-form families: stereographic projection, the extremal family
// u_{lambda,c}, conformal dilations, the planar singular Liouville bubble and
// the concentrating test functions phi_eps.

#include <algorithm>
#include <array>
#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sol/quadrature.hpp"
#include "sol/singular_geometry.hpp"
#include "sol/sphere_grid.hpp"

namespace sol {

using PlanePoint = std::array<double, 2>;

/// Stereographic projection from `pole`: x -> (x.e1, x.e2) / (1 - x.e3) in the
/// frame aligned with the pole. The antipode maps to 0, the equator to |y| = 1.
inline PlanePoint stereographic(const SpherePoint& pole, const SpherePoint& x) {
  const double q = one_minus_dot(pole, x);
  if (q < 1e-300) throw std::invalid_argument("stereographic: the pole has no image");
  const Frame f = Frame::aligned_with(pole);
  return {dot(x.vec(), f.e1) / q, dot(x.vec(), f.e2) / q};
}

inline SpherePoint inverse_stereographic(const SpherePoint& pole, const PlanePoint& y) {
  const Frame f = Frame::aligned_with(pole);
  const double r2 = y[0] * y[0] + y[1] * y[1];
  const double d = 1.0 + r2;
  return SpherePoint(f.to_world(2.0 * y[0] / d, 2.0 * y[1] / d, (r2 - 1.0) / d));
}

struct ExtremalParams {
  double lambda = 1.0;
  double c = 0.0;
  double alpha = -0.5;
  SpherePoint axis = SpherePoint::north();

  void validate() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("ExtremalParams: lambda must be positive");
    if (!(alpha > -1.0 && alpha < 0.0)) throw std::invalid_argument("ExtremalParams: alpha must lie in (-1, 0)");
    if (!std::isfinite(c)) throw std::invalid_argument("ExtremalParams: c must be finite");
  }
};

/// u_{lambda,c}(x) = 2 log((1+|y|^2)^{1+a} / (1 + lambda |y|^{2(1+a)})) + c, y the
/// projection of x from the axis. Written in q = 1 - <axis, x>, where
/// |y|^2 = (2-q)/q, the expression is finite at both poles:
/// 2(1+a) log 2 - 2 log(q^{1+a} + lambda (2-q)^{1+a}) + c.
inline double extremal_value(const ExtremalParams& p, const SpherePoint& x) {
  const double q = one_minus_dot(p.axis, x);
  const double k = 1.0 + p.alpha;
  return 2.0 * k * std::numbers::ln2 - 2.0 * std::log(std::pow(q, k) + p.lambda * std::pow(2.0 - q, k)) + p.c;
}

inline ScalarField extremal_u(const ExtremalParams& p, const GridPtr& grid) {
  p.validate();
  return ScalarField::sample(grid, [&](const SpherePoint& x) { return extremal_value(p, x); });
}

/// Band-limited coefficients of fn, integrated with caps of the given
/// radial order around points where fn has cone-type kinks. Plain grid
/// analysis aliases the kinks into the top degrees.
template <class Fn>
SHCoefficients project(const GridPtr& grid, Fn&& fn, const std::vector<SingularPoint>& kinks,
                       const SingularCapRule& rule = {}) {
  const SingularQuadrature q(grid, SingularWeight{}, rule, kinks);
  std::vector<double> v(q.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = q.weights()[i] * fn(q.nodes()[i]);
  return q.adjoint(v, grid->band_limit());
}

/// Coefficients of u_{lambda,c} on a grid aligned with the axis. Near either
/// pole u - u(pole) is a multiple of r^{2(1+a)}, so the caps use order a.
inline SHCoefficients extremal_coefficients(const ExtremalParams& p, const GridPtr& grid) {
  p.validate();
  const SpherePoint south(-1.0 * p.axis.vec());
  return project(grid, [&](const SpherePoint& x) { return extremal_value(p, x); }, {{p.axis, p.alpha}, {south, p.alpha}});
}

/// Image of x under the dilation phi_t, defined by pi(phi_t(pi^{-1}(y))) = t y.
inline SpherePoint dilate(const SpherePoint& axis, double t, const SpherePoint& x) {
  const Frame f = Frame::aligned_with(axis);
  const double q = one_minus_dot(axis, x);
  const double qn = 2.0 * q / (q + t * t * (2.0 - q));
  const double a = dot(x.vec(), f.e1), b = dot(x.vec(), f.e2);
  const double s = std::hypot(a, b), sn = std::sqrt(qn * (2.0 - qn));
  if (s == 0.0) return x;
  return SpherePoint(f.to_world(sn * a / s, sn * b / s, 1.0 - qn));
}

/// log |det d phi_t|(x) = 2 log t + 2 log(1+|y|^2) - 2 log(1+t^2|y|^2).
inline double log_det_dilation(const SpherePoint& axis, double t, const SpherePoint& x) {
  const double q = one_minus_dot(axis, x);
  return 2.0 * std::log(t) + 2.0 * std::log(2.0 / (q + t * t * (2.0 - q)));
}

/// u o phi_t + (1+a) log|det d phi_t|, with u resampled by spectral
/// interpolation. Dilations about the grid axis map rings to rings, so that
/// case is a single ring transform.
inline ScalarField conformal_pullback(const ScalarField& u, double t, double alpha, const SpherePoint& axis) {
  if (!(t > 0.0) || !std::isfinite(t)) throw std::invalid_argument("conformal_pullback: t must be positive");
  const GridPtr& grid = u.grid();
  const SHCoefficients c = sh_analysis(u);
  std::vector<double> out(grid->size());
  const bool aligned = geodesic_distance(grid->axis(), axis) < kPointTolerance;
  if (aligned) {
    const auto& tr = grid->transform();
    std::vector<double> ct(tr.rings()), st(tr.rings());
    for (std::size_t j = 0; j < tr.rings(); ++j) {
      const double q = 1.0 - tr.cos_theta(j);
      const double qn = 2.0 * q / (q + t * t * (2.0 - q));
      ct[j] = 1.0 - qn;
      st[j] = std::sqrt(qn * (2.0 - qn));
    }
    RingTransform moved(c.band_limit(), std::move(ct), std::move(st), grid->n_phi());
    moved.synthesize(c, out);
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = evaluate_at(c, grid->frame(), dilate(axis, t, grid->nodes()[i]));
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += (1.0 + alpha) * log_det_dilation(axis, t, grid->nodes()[i]);
  return ScalarField(grid, std::move(out));
}

// ---------------------------------------------------------------------------
// Planar bubble

/// phi_0(r) = -2 log(1 + (pi c / (1+a)) r^{2(1+a)}).
inline double planar_bubble(double r, double c_p, double alpha) {
  if (r < 0.0) throw std::invalid_argument("planar_bubble: r must be >= 0");
  return -2.0 * std::log1p(std::numbers::pi * c_p / (1.0 + alpha) * std::pow(r, 2.0 * (1.0 + alpha)));
}

/// int_{R^2} c |x|^{2a} e^{phi_0} dx by radial quadrature (exactly 1).
inline double planar_bubble_mass(double c_p, double alpha) {
  const double k = 2.0 * (1.0 + alpha);
  auto f = [&](double r) { return 2.0 * std::numbers::pi * c_p * std::pow(r, 2.0 * alpha + 1.0) * std::exp(planar_bubble(r, c_p, alpha)); };
  // Split where the two terms of 1 + (pi c/(1+a)) r^k balance.
  const double r_star = std::pow((1.0 + alpha) / (std::numbers::pi * c_p), 1.0 / k);
  boost::math::quadrature::tanh_sinh<double> ts;
  boost::math::quadrature::exp_sinh<double> es;
  return ts.integrate(f, 0.0, r_star) + es.integrate([&](double s) { return f(r_star + s); });
}

/// Relative residual of -Lap phi_0 = 8 pi (1+a) c r^{2a} e^{phi_0} with a
/// five-point radial stencil of step h = 1e-2 r.
inline double planar_liouville_residual(double r, double c_p, double alpha) {
  const double h = 1e-2 * r;
  auto phi = [&](double s) { return planar_bubble(s, c_p, alpha); };
  const double f2 = phi(r + 2 * h), f1 = phi(r + h), f0 = phi(r), m1 = phi(r - h), m2 = phi(r - 2 * h);
  const double d2 = (-f2 + 16 * f1 - 30 * f0 + 16 * m1 - m2) / (12 * h * h);
  const double d1 = (-f2 + 8 * f1 - 8 * m1 + m2) / (12 * h);
  const double lhs = -(d2 + d1 / r);
  const double rhs = 8.0 * std::numbers::pi * (1.0 + alpha) * c_p * std::pow(r, 2.0 * alpha) * std::exp(f0);
  return std::abs(lhs - rhs) / std::abs(rhs);
}

// ---------------------------------------------------------------------------
// Test functions

enum class GammaSchedule {
  // gamma = eps^{-1/(4(1+a))}: r_eps = eps^{1/(4(1+a))}, gamma^{2(1+a)} = eps^{-1/2}.
  power,
  // gamma = (-log eps)^{1/(2(1+a))}.
  log,
};

struct TestFunctionParams {
  double epsilon = 1e-3;
  SpherePoint p = SpherePoint::north();
  SingularWeight weight;
  GammaSchedule schedule = GammaSchedule::power;
};

/// Radial profile of phi_eps about p and its derived constants.
class TestFunction {
 public:
  explicit TestFunction(const TestFunctionParams& params) : params_(params) {
    const double eps = params.epsilon;
    if (!(eps > 0.0 && eps < 1.0)) throw std::invalid_argument("test_function: epsilon must lie in (0, 1)");
    const SingularWeight& w = params.weight;
    alpha_ = w.alpha();
    if (singularity_index(w, params.p) != alpha_)
      throw std::invalid_argument("test_function: p must carry the minimal order alpha");
    k_ = 2.0 * (1.0 + alpha_);
    rho_bar_ = w.rho_bar();
    Gamma_ = params.schedule == GammaSchedule::power ? 1.0 / std::sqrt(eps) : -std::log(eps);
    gamma_ = std::pow(Gamma_, 1.0 / k_);
    bubble_scale_ = std::pow(eps, 1.0 / k_);
    r_eps_ = gamma_ * bubble_scale_;
    C_eps_ = -2.0 * std::log((1.0 + Gamma_) / Gamma_) - rho_bar_ * kRegularPart;
    if (!(2.0 * r_eps_ < std::numbers::pi / 4))
      throw std::invalid_argument("test_function: epsilon too large (2 r_eps = " + std::to_string(2.0 * r_eps_) +
                                  " must stay below pi/4)");
    for (const auto& q : w.points()) {
      const double d = geodesic_distance(q.position, params.p);
      if (d > kPointTolerance && d <= 2.0 * r_eps_)
        throw std::invalid_argument("test_function: epsilon too large (the cutoff ball reaches another singular point)");
    }
    symmetric_ = !w.has_smooth_factor();
    for (const auto& q : w.points()) {
      const double d = geodesic_distance(q.position, params.p);
      if (d > kPointTolerance && std::abs(d - std::numbers::pi) > kPointTolerance) symmetric_ = false;
    }
    frame_ = Frame::aligned_with(params.p);
    index_ = w.find(params.p);
  }

  const TestFunctionParams& params() const { return params_; }
  double alpha() const { return alpha_; }
  double gamma() const { return gamma_; }
  double r_eps() const { return r_eps_; }
  double C_eps() const { return C_eps_; }
  double bubble_scale() const { return bubble_scale_; }

  /// phi_eps at geodesic distance r from p.
  double value(double r) const {
    const double eps = params_.epsilon;
    if (r <= r_eps_) return -2.0 * std::log(eps + std::pow(r, k_)) + std::log(eps);
    return rho_bar_ * (green_r(r) - eta(r) * sigma(r)) + C_eps_ + std::log(eps);
  }

  double derivative(double r) const {
    const double eps = params_.epsilon;
    if (r <= r_eps_) return -2.0 * k_ * std::pow(r, k_ - 1.0) / (eps + std::pow(r, k_));
    const double gp = green_prime(r);
    const double sp = gp + 1.0 / (2.0 * std::numbers::pi * r);
    return rho_bar_ * (gp - eta_prime(r) * sigma(r) - eta(r) * sp);
  }

  /// Inner branch minus outer branch at r_eps (zero by the choice of C_eps).
  double matching_gap() const {
    const double eps = params_.epsilon;
    const double inner = -2.0 * std::log(eps + std::pow(r_eps_, k_)) + std::log(eps);
    const double outer = rho_bar_ * (green_r(r_eps_) - sigma(r_eps_)) + C_eps_ + std::log(eps);
    return inner - outer;
  }

  double value_at(const SpherePoint& x) const { return value(geodesic_distance(params_.p, x)); }

  /// Mean of h over the circle of radius r about p. The factor of h carried
  /// by p itself is radial and applied in closed form.
  double angular_mean_h(double r) const {
    const double half = std::sin(0.5 * r);
    const double own = index_ ? alpha_ * (1.0 + 2.0 * std::log(half)) : 0.0;
    auto rest_at = [&](double psi) {
      const SpherePoint x(frame_.to_world(std::sin(r) * std::cos(psi), std::sin(r) * std::sin(psi), std::cos(r)));
      return std::exp(index_ ? params_.weight.log_weight_without(*index_, x) : params_.weight.log_weight(x));
    };
    double rest = 0.0;
    if (symmetric_) {
      rest = rest_at(0.0);
    } else {
      rest = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(rest_at, 0.0, 2.0 * std::numbers::pi, 12, 1e-12) /
             (2.0 * std::numbers::pi);
    }
    return std::exp(own) * rest;
  }

  /// Radius breakpoints for radial integration.
  std::vector<double> breakpoints() const {
    std::vector<double> b{0.0};
    for (double r = bubble_scale_; r < r_eps_; r *= 4.0) b.push_back(r);
    b.push_back(r_eps_);
    b.push_back(1.5 * r_eps_);
    b.push_back(2.0 * r_eps_);
    for (const auto& q : params_.weight.points()) {
      const double d = geodesic_distance(q.position, params_.p);
      if (d > 2.0 * r_eps_ && d < std::numbers::pi - kPointTolerance) b.push_back(d);
    }
    b.push_back(std::numbers::pi);
    std::sort(b.begin(), b.end());
    b.erase(std::unique(b.begin(), b.end()), b.end());
    return b;
  }

 private:
  // Green's function of p as a function of r = d(x, p).
  static double green_r(double r) {
    const double half = std::sin(0.5 * r);
    return -(std::log(2.0 * half * half) + 1.0 - std::numbers::ln2) / kFourPi;
  }
  static double green_prime(double r) { return -0.5 / (std::tan(0.5 * r) * 2.0 * std::numbers::pi); }
  // sigma = G_p + (1/2pi) log r - A = -(1/2pi) log(sin(r/2) / (r/2)).
  static double sigma(double r) {
    const double x = 0.5 * r;
    return -std::log(std::sin(x) / x) / (2.0 * std::numbers::pi);
  }
  // Cubic ramp from 1 at r_eps to 0 at 2 r_eps.
  double eta(double r) const {
    const double x = std::clamp((r - r_eps_) / r_eps_, 0.0, 1.0);
    return 1.0 - x * x * (3.0 - 2.0 * x);
  }
  double eta_prime(double r) const {
    const double x = (r - r_eps_) / r_eps_;
    if (x <= 0.0 || x >= 1.0) return 0.0;
    return -6.0 * x * (1.0 - x) / r_eps_;
  }

  TestFunctionParams params_;
  double alpha_ = 0.0, k_ = 2.0, rho_bar_ = 0.0;
  double Gamma_ = 0.0, gamma_ = 0.0, bubble_scale_ = 0.0, r_eps_ = 0.0, C_eps_ = 0.0;
  bool symmetric_ = true;
  Frame frame_;
  std::optional<std::size_t> index_;
};

inline ScalarField test_function(const TestFunctionParams& params, const GridPtr& grid) {
  const TestFunction tf(params);
  return ScalarField::sample(grid, [&](const SpherePoint& x) { return tf.value_at(x); });
}

struct TestFunctionEnergy {
  double dirichlet = 0.0;
  double mean = 0.0;
  double exp_integral = 0.0;
  double J = 0.0;  // at rho = rho_bar
  double limit_exp_integral = 0.0;  // pi c(p) / (1 + alpha)
  double matching_gap = 0.0;
};

/// J_{rho_bar}(phi_eps) from one-dimensional radial integrals in geodesic
/// polar coordinates about p.
inline TestFunctionEnergy test_function_energy(const TestFunctionParams& params) {
  const TestFunction tf(params);
  const auto b = tf.breakpoints();
  boost::math::quadrature::tanh_sinh<double> ts(15);
  auto radial = [&](auto&& f) {
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < b.size(); ++i) acc += ts.integrate(f, b[i], b[i + 1], 1e-13);
    return 2.0 * std::numbers::pi * acc;
  };
  TestFunctionEnergy e;
  e.dirichlet = radial([&](double r) {
    const double d = tf.derivative(r);
    return d * d * std::sin(r);
  });
  e.mean = radial([&](double r) { return tf.value(r) * std::sin(r); }) / kFourPi;
  e.exp_integral = radial([&](double r) { return tf.angular_mean_h(r) * std::exp(tf.value(r)) * std::sin(r); });
  const double rho_bar = params.weight.rho_bar();
  e.J = 0.5 * e.dirichlet + rho_bar * e.mean - rho_bar * std::log(e.exp_integral / kFourPi);
  e.limit_exp_integral = std::numbers::pi * bubble_constant(params.weight, params.p) / (1.0 + tf.alpha());
  e.matching_gap = tf.matching_gap();
  return e;
}

}  // namespace sol
