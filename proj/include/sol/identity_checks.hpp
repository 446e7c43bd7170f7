#pragma once

// Sharp constants of the singular Moser-Trudinger inequality, the
// Kazdan-Warner identity for antipodal pairs and the non-existence witness
// derived from it.

#include <algorithm>
#include <boost/math/tools/minima.hpp>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sol/mt_functional.hpp"
#include "sol/singular_geometry.hpp"
#include "sol/sphere_grid.hpp"

namespace sol {

/// Raised when no closed form is available for the requested configuration.
class NoClosedForm : public std::invalid_argument {
 public:
  explicit NoClosedForm(const std::string& why) : std::invalid_argument("no sharp closed form: " + why) {}
};

struct SharpConstantReport {
  std::string theorem;  // "1", "2", "3" or "4"
  std::string branch;   // "closed-form", "finite-max" or "grid-max"
  double alpha1 = 0.0;
  std::optional<double> alpha2;
  bool antipodal = false;
  double alpha = 0.0;
  double rho_bar = 0.0;
  double C = 0.0;
  double inf_J = 0.0;  // -rho_bar C
  bool attained = false;
  std::optional<SpherePoint> maximizer;
};

namespace detail {

// 1 + log(pi / |S^2|).
inline const double kSphereOffset = 1.0 + std::log(0.25);

// 4 pi A(p) + log h(p), the maximand of the alpha = 0 branch.
inline double regular_maximand(const SingularWeight& w, const SpherePoint& p) {
  return 4.0 * std::numbers::pi * regular_part(p) + w.log_weight(p);
}

inline SpherePoint tangent_step(const SpherePoint& p, const Vec3& dir, double s) {
  return SpherePoint(std::cos(s) * p.vec() + std::sin(s) * dir);
}

}  // namespace detail

/// The general sharp constant C with inf J_{rho_bar} = -rho_bar C. For alpha < 0
/// the maximum runs over the finite set of minimal-order points; otherwise
/// over grid nodes outside caps of radius `exclusion` around the singular
/// points, followed by alternating golden-section refinement along two
/// tangent directions.
inline SharpConstantReport theorem1_value(const SingularWeight& w, const GridPtr& grid, double exclusion = 0.1) {
  SharpConstantReport r;
  r.theorem = "1";
  r.alpha = w.alpha();
  r.rho_bar = w.rho_bar();
  if (!w.points().empty()) r.alpha1 = w.points()[0].order;
  if (w.size() > 1) r.alpha2 = w.points()[1].order;
  if (w.size() == 2)
    r.antipodal = geodesic_distance(w.points()[0].position, w.points()[1].position) > std::numbers::pi - 1e-9;

  double best = -std::numeric_limits<double>::infinity();
  if (r.alpha < 0.0) {
    r.branch = "finite-max";
    const double k = 1.0 + r.alpha;
    for (std::size_t i : minimal_order_points(w)) {
      const SpherePoint& p = w.points()[i].position;
      const double v = 4.0 * std::numbers::pi * regular_part(p) - std::log(k) + w.log_weight_without(i, p);
      if (v > best) best = v, r.maximizer = p;
    }
  } else {
    r.branch = "grid-max";
    for (const auto& x : grid->nodes()) {
      bool excluded = false;
      for (const auto& q : w.points()) excluded = excluded || geodesic_distance(q.position, x) < exclusion;
      if (excluded) continue;
      const double v = detail::regular_maximand(w, x);
      if (v > best) best = v, r.maximizer = x;
    }
    if (!r.maximizer) throw std::invalid_argument("theorem1_value: every grid node lies inside an excluded cap");
    SpherePoint p = *r.maximizer;
    const double span = 2.0 * grid->resolution();
    for (int sweep = 0; sweep < 4; ++sweep) {
      const Frame f = Frame::aligned_with(p);
      for (const Vec3& dir : {f.e1, f.e2}) {
        auto neg = [&](double s) { return -detail::regular_maximand(w, detail::tangent_step(p, dir, s)); };
        const auto [s, v] = boost::math::tools::brent_find_minima(neg, -span, span, 40);
        if (-v > best) best = -v, p = detail::tangent_step(p, dir, s);
      }
    }
    r.maximizer = p;
  }
  r.C = detail::kSphereOffset + best;
  r.inf_J = -r.rho_bar * r.C;
  return r;
}

/// Closed forms on the round sphere: one singular point, or an antipodal pair
/// with negative minimal order.
inline SharpConstantReport sphere_sharp_constant(double alpha1, std::optional<double> alpha2 = std::nullopt,
                                                 bool antipodal = false) {
  auto check = [](double a) {
    if (!std::isfinite(a) || a <= -1.0) throw std::invalid_argument("sphere_sharp_constant: order must exceed -1");
    if (a == 0.0) throw std::invalid_argument("sphere_sharp_constant: order must be nonzero");
  };
  check(alpha1);
  SharpConstantReport r;
  r.alpha1 = alpha1;
  r.alpha2 = alpha2;
  r.antipodal = antipodal;
  r.branch = "closed-form";
  if (!alpha2) {
    r.theorem = "2";
    r.alpha = std::min(0.0, alpha1);
    r.C = std::max(alpha1, -std::log1p(alpha1));
  } else {
    check(*alpha2);
    if (!antipodal) throw NoClosedForm("two singular points must be antipodal");
    if (alpha1 > *alpha2) throw NoClosedForm("alpha1 must be the smaller order");
    if (alpha1 >= 0.0) throw NoClosedForm("the smaller order must be negative");
    r.alpha = alpha1;
    if (alpha1 == *alpha2) {
      r.theorem = "4";
      r.C = alpha1 - std::log1p(alpha1);
      r.attained = true;
    } else {
      r.theorem = "3";
      r.C = *alpha2 - std::log1p(alpha1);
    }
  }
  r.rho_bar = 8.0 * std::numbers::pi * (1.0 + r.alpha);
  r.inf_J = -r.rho_bar * r.C;
  return r;
}

struct KazdanWarnerReport {
  double alpha1 = 0.0, alpha2 = 0.0;
  double moment = 0.0;     // int h e^u x3 / int h e^u
  double prefactor = 0.0;  // 2 - rho/4pi + alpha1 + alpha2
  double lhs = 0.0;        // alpha2 - alpha1
  double rhs = 0.0;        // prefactor * moment
  double residual = 0.0;   // lhs - rhs
  // int grad h . grad x3 e^u - (2 - rho/4pi) int h e^u x3, normalized by int h e^u.
  double vector_residual = 0.0;
};

namespace detail {

// Orders (alpha1, alpha2) about the axis p1, with alpha2 = 0 for one point.
inline std::pair<double, double> antipodal_orders(const SingularWeight& w, SpherePoint& axis) {
  if (w.size() == 1) {
    axis = w.points()[0].position;
    return {w.points()[0].order, 0.0};
  }
  if (w.size() == 2) {
    const auto& a = w.points()[0];
    const auto& b = w.points()[1];
    if (geodesic_distance(a.position, b.position) < std::numbers::pi - 1e-9)
      throw std::invalid_argument("the Kazdan-Warner identity needs an antipodal pair p2 = -p1");
    axis = a.position;
    return {a.order, b.order};
  }
  throw std::invalid_argument("the Kazdan-Warner identity needs one singular point or an antipodal pair");
}

}  // namespace detail

/// Both forms of the Kazdan-Warner identity for a field given by its values
/// at the nodes of `q`. The scalar form assumes K is constant.
inline KazdanWarnerReport kazdan_warner_residual(const SingularQuadrature& q, double rho, const SingularWeight& w,
                                                 const std::vector<double>& u) {
  SpherePoint axis;
  const auto [a1, a2] = detail::antipodal_orders(w, axis);
  if (u.size() != q.size()) throw std::invalid_argument("kazdan_warner_residual: value count does not match rule");
  const auto& hw = q.weighted_h();
  const double top = *std::max_element(u.begin(), u.end());
  double mass = 0.0, moment = 0.0, grad_term = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const SpherePoint& x = q.nodes()[i];
    const double d = hw[i] * std::exp(u[i] - top);
    if (d == 0.0) continue;
    const double x3 = dot(x.vec(), axis.vec());
    const Vec3 grad_x3 = axis.vec() - x3 * x.vec();
    mass += d;
    moment += d * x3;
    grad_term += d * dot(w.grad_log_weight(x), grad_x3);
  }
  moment /= mass;
  grad_term /= mass;
  KazdanWarnerReport r;
  r.alpha1 = a1;
  r.alpha2 = a2;
  r.moment = moment;
  r.prefactor = 2.0 - rho / kFourPi + a1 + a2;
  r.lhs = a2 - a1;
  r.rhs = r.prefactor * moment;
  r.residual = r.lhs - r.rhs;
  r.vector_residual = grad_term - (2.0 - rho / kFourPi) * moment;
  return r;
}

inline KazdanWarnerReport kazdan_warner_residual(const MTFunctional& f, const SHCoefficients& a) {
  return kazdan_warner_residual(f.quadrature(), f.rho(), f.weight(), f.quadrature().synthesize(a));
}

inline KazdanWarnerReport kazdan_warner_residual(const ScalarField& u, double rho, const SingularWeight& w,
                                                 const SingularCapRule& rule = {}) {
  MTFunctional f(u.grid(), FunctionalParams{rho, w, rule});
  return kazdan_warner_residual(f, f.coefficients(u));
}

struct NonexistenceReport {
  double forced_moment = 0.0;  // value of int h e^u x3 the identity forces at rho_bar
  double margin = 0.0;         // |forced_moment| - 1
  bool certified = false;      // no normalized solution can exist
  std::string message;
};

/// The moment int h e^u x3 forced by the Kazdan-Warner identity at rho_bar.
/// A positive normalized density has |moment| < 1, so margin >= 0 rules out
/// solutions; the boundary case |moment| = 1 is a contradiction as well.
inline NonexistenceReport nonexistence_witness(const SingularWeight& w) {
  SpherePoint axis;
  const auto [a1, a2] = detail::antipodal_orders(w, axis);
  const double alpha = w.alpha();
  const double prefactor = a1 + a2 - 2.0 * alpha;
  if (std::abs(prefactor) < 1e-14 || a1 == a2)
    throw std::invalid_argument("nonexistence_witness: equal orders, the identity gives no useful condition");
  NonexistenceReport r;
  r.forced_moment = (a2 - a1) / prefactor;
  r.margin = std::abs(r.forced_moment) - 1.0;
  r.certified = r.margin >= -1e-12;
  if (std::abs(r.margin) <= 1e-12)
    r.message = "forced |moment| = 1, impossible for nonconstant density";
  else if (r.margin > 0)
    r.message = "forced |moment| > 1, impossible for a probability density";
  else
    r.message = "forced moment lies inside (-1, 1); no contradiction";
  return r;
}

}  // namespace sol
