#pragma once

// Green's function of the round sphere, its regular part, and the singular
// weight h = K * prod (e/2)^{a_i} (1 - <p_i, x>)^{a_i}.

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sol/sphere_grid.hpp"

namespace sol {

/// Raised when a Green's function or weight is evaluated at its pole.
class SingularityError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

inline constexpr double kFourPi = 4.0 * std::numbers::pi;

/// Regular part A(p) of G_p; constant on the round sphere.
inline constexpr double kRegularPart = (2.0 * std::numbers::ln2 - 1.0) / kFourPi;

inline double regular_part(const SpherePoint&) { return kRegularPart; }

/// 1 - <p, x>, computed as |p - x|^2 / 2 so that it keeps relative precision
/// when x is close to p.
inline double one_minus_dot(const SpherePoint& p, const SpherePoint& x) {
  const Vec3 d = p.vec() - x.vec();
  return 0.5 * dot(d, d);
}

/// Mean-zero Green's function G_p(x) = -(1/4pi) log(1 - <p,x>) - (1/4pi) log(e/2).
inline double green(const SpherePoint& p, const SpherePoint& x) {
  const double q = one_minus_dot(p, x);
  if (q < 1e-14) throw SingularityError("green: x coincides with the pole p");
  return -(std::log(q) + 1.0 - std::numbers::ln2) / kFourPi;
}

struct SingularPoint {
  SpherePoint position;
  double order = 0.0;
};

/// Points closer than this are treated as the same point.
inline constexpr double kPointTolerance = 1e-12;

/// Weight h with conical singularities and an optional positive smooth factor
/// K given by real SH coefficients in the standard (north-pole) frame.
class SingularWeight {
 public:
  SingularWeight() = default;
  explicit SingularWeight(std::vector<SingularPoint> points, std::optional<SHCoefficients> K = std::nullopt)
      : points_(std::move(points)), K_(std::move(K)) {
    for (std::size_t i = 0; i < points_.size(); ++i) {
      const double a = points_[i].order;
      if (!std::isfinite(a)) throw std::invalid_argument("SingularWeight: order must be finite");
      if (!(a > -1.0)) throw std::invalid_argument("SingularWeight: order must exceed -1 (point " + std::to_string(i) + ")");
      if (a == 0.0) throw std::invalid_argument("SingularWeight: order must be nonzero (point " + std::to_string(i) + ")");
      for (std::size_t j = 0; j < i; ++j) {
        if (geodesic_distance(points_[i].position, points_[j].position) < kPointTolerance)
          throw std::invalid_argument("SingularWeight: singular points " + std::to_string(j) + " and " +
                                      std::to_string(i) + " coincide");
      }
    }
    alpha_ = 0.0;
    for (const auto& p : points_) alpha_ = std::min(alpha_, p.order);
    if (K_) check_K_positive();
  }

  const std::vector<SingularPoint>& points() const { return points_; }
  std::size_t size() const { return points_.size(); }
  bool has_smooth_factor() const { return K_.has_value(); }
  const std::optional<SHCoefficients>& smooth_factor() const { return K_; }

  /// alpha = min(0, min alpha_i).
  double alpha() const { return alpha_; }
  /// Critical parameter 8 pi (1 + alpha).
  double rho_bar() const { return 8.0 * std::numbers::pi * (1.0 + alpha_); }

  double K(const SpherePoint& x) const { return K_ ? evaluate_at(*K_, Frame{}, x) : 1.0; }
  Vec3 grad_K(const SpherePoint& x) const { return K_ ? gradient_at(*K_, Frame{}, x) : Vec3{0.0, 0.0, 0.0}; }

  /// Index of the singular point at q, if any.
  std::optional<std::size_t> find(const SpherePoint& q) const {
    for (std::size_t i = 0; i < points_.size(); ++i)
      if (geodesic_distance(points_[i].position, q) < kPointTolerance) return i;
    return std::nullopt;
  }

  /// log h(x). Returns -inf at a positive-order point; throws at a
  /// negative-order one.
  double log_weight(const SpherePoint& x) const {
    double acc = K_ ? std::log(K(x)) : 0.0;
    for (const auto& p : points_) {
      const double q = one_minus_dot(p.position, x);
      if (q < 1e-300) {
        if (p.order < 0.0) throw SingularityError("weight_at: evaluation at a negative-order singular point");
        return -std::numeric_limits<double>::infinity();
      }
      acc += p.order * (1.0 - std::numbers::ln2 + std::log(q));
    }
    return acc;
  }

  /// log of h without the factor belonging to point `skip`.
  double log_weight_without(std::size_t skip, const SpherePoint& x) const {
    double acc = K_ ? std::log(K(x)) : 0.0;
    for (std::size_t i = 0; i < points_.size(); ++i) {
      if (i == skip) continue;
      const double q = one_minus_dot(points_[i].position, x);
      if (q < 1e-300) {
        if (points_[i].order < 0.0) throw SingularityError("weight_at: evaluation at a negative-order singular point");
        return -std::numeric_limits<double>::infinity();
      }
      acc += points_[i].order * (1.0 - std::numbers::ln2 + std::log(q));
    }
    return acc;
  }

  /// grad(log h) at x, tangent vector in world coordinates.
  Vec3 grad_log_weight(const SpherePoint& x) const {
    Vec3 g{0.0, 0.0, 0.0};
    if (K_) g = (1.0 / K(x)) * grad_K(x);
    for (const auto& p : points_) {
      const double q = one_minus_dot(p.position, x);
      const double px = 1.0 - q;
      // grad <p,x> = p - <p,x> x
      const Vec3 tangent = p.position.vec() - px * x.vec();
      g = g + (-p.order / q) * tangent;
    }
    return g;
  }

 private:
  void check_K_positive() const {
    const int L = std::max(4, 2 * K_->band_limit());
    const auto grid = grid_for_band_limit(L);
    for (const auto& x : grid->nodes()) {
      if (!(K(x) > 0.0)) throw std::invalid_argument("SingularWeight: smooth factor K must be positive on the sphere");
    }
  }

  std::vector<SingularPoint> points_;
  std::optional<SHCoefficients> K_;
  double alpha_ = 0.0;
};

inline double weight_at(const SingularWeight& w, const SpherePoint& x) { return std::exp(w.log_weight(x)); }

/// beta(q): alpha_i at p_i, 0 elsewhere.
inline double singularity_index(const SingularWeight& w, const SpherePoint& q) {
  const auto i = w.find(q);
  return i ? w.points()[*i].order : 0.0;
}

/// Singular points whose order equals the minimal order alpha (< 0).
inline std::vector<std::size_t> minimal_order_points(const SingularWeight& w) {
  std::vector<std::size_t> out;
  if (w.alpha() >= 0.0) return out;
  for (std::size_t i = 0; i < w.size(); ++i)
    if (w.points()[i].order == w.alpha()) out.push_back(i);
  return out;
}

/// log c(p) with c(p) = K(p) e^{-4 pi alpha A} prod_{p_i != p} e^{-4 pi alpha_i G_{p_i}(p)}.
inline double log_bubble_constant(const SingularWeight& w, const SpherePoint& p) {
  const auto i = w.find(p);
  const double beta = i ? w.points()[*i].order : 0.0;
  if (beta != w.alpha())
    throw std::invalid_argument("bubble_constant: p must carry the minimal order alpha = " + std::to_string(w.alpha()));
  const double rest = i ? w.log_weight_without(*i, p) : w.log_weight(p);
  return rest - kFourPi * w.alpha() * kRegularPart;
}

inline double bubble_constant(const SingularWeight& w, const SpherePoint& p) {
  return std::exp(log_bubble_constant(w, p));
}

}  // namespace sol
