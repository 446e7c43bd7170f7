#pragma once

// Quadrature for integrands of the form h e^u with h ~ d^{2a} near singular
// points. Singular points on the grid axis get polar caps built as extra
// latitude rings, so the whole rule stays a ring transform. Off-axis points
// get caps of scattered nodes blended in with a smooth partition of unity.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sol/legendre.hpp"
#include "sol/parallel.hpp"
#include "sol/singular_geometry.hpp"
#include "sol/sphere_grid.hpp"

namespace sol {

struct SingularCapRule {
  double radius = 0.1;
  int radial_nodes = 32;
  int angular_nodes = 16;
  // Radial nodes are split over geometrically graded Gauss panels in
  // s = r^{2(1+a)}; s-panel boundaries are s_max * grading^k.
  int panels = 4;
  double grading = 0.15;
  // Oversampling of the smooth part relative to the grid.
  int extra_rings = 32;

  void validate() const {
    if (!(radius > 0.0 && radius <= 0.3)) throw std::invalid_argument("SingularCapRule: radius must lie in (0, 0.3]");
    if (radial_nodes < 1) throw std::invalid_argument("SingularCapRule: radial_nodes must be positive");
    if (angular_nodes < 1) throw std::invalid_argument("SingularCapRule: angular_nodes must be positive");
    if (panels < 1) throw std::invalid_argument("SingularCapRule: panels must be positive");
    if (!(grading > 0.0 && grading < 1.0)) throw std::invalid_argument("SingularCapRule: grading must lie in (0, 1)");
    if (extra_rings < 0) throw std::invalid_argument("SingularCapRule: extra_rings must be >= 0");
  }
};

namespace detail {

/// Composite Gauss rule on [0, s_max] with geometrically graded panels.
inline void graded_gauss(double s_max, int nodes, int panels, double grading, std::vector<double>& s,
                         std::vector<double>& w) {
  const int per = std::max(1, (nodes + panels - 1) / panels);
  const auto [x, wx] = gauss_legendre(per);
  s.clear();
  w.clear();
  double lo = 0.0;
  for (int k = panels - 1; k >= 0; --k) {
    const double hi = s_max * std::pow(grading, k);
    const double half = 0.5 * (hi - lo), mid = 0.5 * (hi + lo);
    for (int i = 0; i < per; ++i) {
      s.push_back(mid + half * x[i]);
      w.push_back(half * wx[i]);
    }
    lo = hi;
  }
}

/// C-infinity step: 0 for x <= 0, 1 for x >= 1, flat to all orders at both ends.
inline double smooth_step(double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double a = std::exp(-1.0 / x), b = std::exp(-1.0 / (1.0 - x));
  return a / (a + b);
}

}  // namespace detail

/// Integration rule adapted to a singular weight. The rule owns its nodes;
/// fields enter through SH coefficients in the grid frame.
class SingularQuadrature {
 public:
  SingularQuadrature(GridPtr grid, const SingularWeight& weight, const SingularCapRule& rule = {})
      : SingularQuadrature(std::move(grid), weight, rule, weight.points()) {}

  /// Caps at explicit points; the order of each cap only selects the radial
  /// substitution (order 0 suits logarithmic integrands).
  SingularQuadrature(GridPtr grid, const SingularWeight& weight, const SingularCapRule& rule,
                     const std::vector<SingularPoint>& caps)
      : grid_(std::move(grid)), rule_(rule), L_(grid_->band_limit()), frame_(grid_->frame()) {
    rule_.validate();
    const SpherePoint axis = grid_->axis();
    for (std::size_t i = 0; i < caps.size(); ++i) {
      for (std::size_t j = 0; j < i; ++j) {
        if (geodesic_distance(caps[i].position, caps[j].position) <= 2.0 * rule_.radius)
          throw std::invalid_argument("SingularQuadrature: caps around singular points " + std::to_string(j) + " and " +
                                      std::to_string(i) + " overlap; reduce the cap radius");
      }
    }
    std::optional<double> north, south;
    std::vector<SingularPoint> loose;
    for (SingularPoint p : caps) {
      // A positive-order kink without a matching weight factor keeps s = r^2;
      // s = r^{2(1+a)} would leave an r^{-2a} Jacobian in the integrand.
      if (p.order > 0.0 && !weight.find(p.position)) p.order = 0.0;
      if (geodesic_distance(p.position, axis) < kPointTolerance) {
        north = p.order;
      } else if (geodesic_distance(p.position, axis.antipode()) < kPointTolerance) {
        south = p.order;
      } else {
        loose.push_back(p);
      }
    }

    n_ang_ = std::max(grid_->n_phi(), 2 * L_ + 2) + rule_.extra_rings;
    const double dphi = 2.0 * std::numbers::pi / n_ang_;
    std::vector<double> t, s, ring_w;
    if (!north && !south) {
      const int n_mid = std::max(grid_->n_theta(), L_ + 1) + rule_.extra_rings;
      const auto [x, wx] = gauss_legendre(n_mid);
      for (int j = 0; j < n_mid; ++j) {
        t.push_back(x[j]);
        s.push_back(std::sqrt((1.0 - x[j]) * (1.0 + x[j])));
        ring_w.push_back(wx[j] * dphi);
      }
    } else {
      // Composite Gauss in theta. Panels double in width away from each cap
      // so the nearby singularity never limits convergence.
      const double th_lo = north ? rule_.radius : 0.0, th_hi = south ? std::numbers::pi - rule_.radius : std::numbers::pi;
      const double w_max = std::numbers::pi / 8;
      std::vector<double> lo_edges{th_lo}, hi_edges{th_hi};
      double w = rule_.radius;
      while (w < w_max && lo_edges.back() + w < hi_edges.back() - w) {
        if (north) lo_edges.push_back(lo_edges.back() + w);
        if (south) hi_edges.push_back(hi_edges.back() - w);
        w *= 2.0;
      }
      const double a = lo_edges.back(), b = hi_edges.back();
      const int n_uniform = std::max(1, int(std::ceil((b - a) / w_max)));
      std::vector<double> edges = lo_edges;
      for (int k = 1; k < n_uniform; ++k) edges.push_back(a + (b - a) * k / n_uniform);
      for (auto it = hi_edges.rbegin(); it != hi_edges.rend(); ++it) edges.push_back(*it);
      const double freq = L_ + rule_.extra_rings;
      for (std::size_t p = 0; p + 1 < edges.size(); ++p) {
        const double half = 0.5 * (edges[p + 1] - edges[p]), mid = 0.5 * (edges[p + 1] + edges[p]);
        const int n = std::max(12, int(std::ceil(freq * half)) + 12);
        const auto [x, wx] = gauss_legendre(n);
        for (int j = 0; j < n; ++j) {
          const double th = mid + half * x[j];
          t.push_back(std::cos(th));
          s.push_back(std::sin(th));
          ring_w.push_back(half * wx[j] * std::sin(th) * dphi);
        }
      }
    }
    std::vector<double> rs, rw;
    for (const auto& [order, sign] : {std::pair{north, 1.0}, std::pair{south, -1.0}}) {
      if (!order) continue;
      cap_radial(*order, rule_.radial_nodes, rs, rw);
      for (std::size_t k = 0; k < rs.size(); ++k) {
        t.push_back(sign * std::cos(rs[k]));
        s.push_back(std::sin(rs[k]));
        ring_w.push_back(rw[k] * dphi);
      }
    }
    rings_ = std::make_unique<RingTransform>(L_, t, s, n_ang_);

    const std::size_t n_ring_nodes = rings_->node_count();
    nodes_.reserve(n_ring_nodes);
    weights_.reserve(n_ring_nodes);
    for (std::size_t j = 0; j < rings_->rings(); ++j) {
      for (int k = 0; k < n_ang_; ++k) {
        const double phi = rings_->phi(k);
        nodes_.emplace_back(frame_.to_world(s[j] * std::cos(phi), s[j] * std::sin(phi), t[j]));
        weights_.push_back(ring_w[j]);
      }
    }

    // Off-axis caps: ring nodes keep the fraction step(d/delta) of their
    // weight; the cap nodes integrate the complement.
    for (const auto& p : loose) {
      for (std::size_t i = 0; i < n_ring_nodes; ++i) {
        const double d = geodesic_distance(p.position, nodes_[i]);
        if (d < rule_.radius) weights_[i] *= detail::smooth_step(d / rule_.radius);
      }
      const Frame f = Frame::aligned_with(p.position);
      const int n_loose_ang = std::max(rule_.angular_nodes,
                                       int(std::ceil(2.0 * std::numbers::e * L_ * rule_.radius)) + 8);
      cap_radial(p.order, 2 * rule_.radial_nodes, rs, rw);
      const double dpsi = 2.0 * std::numbers::pi / n_loose_ang;
      for (std::size_t k = 0; k < rs.size(); ++k) {
        const double chi = 1.0 - detail::smooth_step(rs[k] / rule_.radius);
        if (chi == 0.0) continue;
        for (int q = 0; q < n_loose_ang; ++q) {
          const double psi = dpsi * (q + 0.5);
          nodes_.emplace_back(f.to_world(std::sin(rs[k]) * std::cos(psi), std::sin(rs[k]) * std::sin(psi),
                                         std::cos(rs[k])));
          weights_.push_back(rw[k] * dpsi * chi);
        }
      }
    }
    loose_begin_ = n_ring_nodes;

    log_h_.resize(nodes_.size());
    hw_.resize(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      log_h_[i] = weight.log_weight(nodes_[i]);
      hw_[i] = weights_[i] * std::exp(log_h_[i]);
    }
  }

  const GridPtr& grid() const { return grid_; }
  const SingularCapRule& rule() const { return rule_; }
  int band_limit() const { return L_; }
  std::size_t size() const { return nodes_.size(); }
  std::size_t ring_node_count() const { return loose_begin_; }
  const std::vector<SpherePoint>& nodes() const { return nodes_; }
  /// Area weights (including Jacobians of the cap substitutions).
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<double>& log_h() const { return log_h_; }
  /// weights * h.
  const std::vector<double>& weighted_h() const { return hw_; }

  double integrate(std::span<const double> values) const {
    check(values.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) acc += weights_[i] * values[i];
    return acc;
  }

  /// Values of the expansion at every node.
  void synthesize(const SHCoefficients& c, std::span<double> out) const {
    check(out.size());
    if (c.band_limit() > L_) throw std::invalid_argument("SingularQuadrature: coefficients exceed band limit");
    rings_->synthesize(c, out.first(loose_begin_));
    const std::size_t n_loose = nodes_.size() - loose_begin_;
    if (n_loose == 0) return;
    parallel_chunks(n_loose, [&](std::size_t, std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) out[loose_begin_ + i] = evaluate_at(c, frame_, nodes_[loose_begin_ + i]);
    });
  }

  std::vector<double> synthesize(const SHCoefficients& c) const {
    std::vector<double> out(size());
    synthesize(c, out);
    return out;
  }

  /// out_{l,m} = sum_i values_i Y_{l,m}(x_i).
  SHCoefficients adjoint(std::span<const double> values, int band_limit) const {
    check(values.size());
    SHCoefficients acc = rings_->adjoint(values.first(loose_begin_), band_limit);
    const std::size_t n_loose = nodes_.size() - loose_begin_;
    if (n_loose == 0) return acc;
    const std::size_t chunks = chunk_count(n_loose);
    std::vector<SHCoefficients> partial(chunks, SHCoefficients(band_limit));
    parallel_chunks(n_loose, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
      LegendreRecurrence leg(band_limit);
      std::vector<double> P(leg.size());
      SHCoefficients& out = partial[chunk];
      for (std::size_t i = begin; i < end; ++i) {
        const double v = values[loose_begin_ + i];
        if (v == 0.0) continue;
        const auto loc = frame_.local(nodes_[loose_begin_ + i]);
        leg.evaluate(loc.t, loc.s, P.data());
        for (int m = 0; m <= band_limit; ++m) {
          const double* col = P.data() + leg.offset(m);
          const double cm = m == 0 ? v : std::numbers::sqrt2 * v * std::cos(m * loc.phi);
          const double sm = std::numbers::sqrt2 * v * std::sin(m * loc.phi);
          for (int l = m; l <= band_limit; ++l) {
            out(l, m) += col[l - m] * cm;
            if (m > 0) out(l, -m) += col[l - m] * sm;
          }
        }
      }
    });
    for (auto& p : partial) acc += p;
    return acc;
  }

 private:
  void cap_radial(double order, int count, std::vector<double>& r, std::vector<double>& w) const {
    const double k = 2.0 * (1.0 + order);
    std::vector<double> s, ws;
    detail::graded_gauss(std::pow(rule_.radius, k), count, rule_.panels, rule_.grading, s, ws);
    r.resize(s.size());
    w.resize(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      r[i] = std::pow(s[i], 1.0 / k);
      // dA = sin r dr dphi, ds = k r^{k-1} dr.
      w[i] = ws[i] * std::sin(r[i]) / (k * std::pow(r[i], k - 1.0));
    }
  }

  void check(std::size_t n) const {
    if (n != nodes_.size()) throw std::invalid_argument("SingularQuadrature: value count does not match rule");
  }

  GridPtr grid_;
  SingularCapRule rule_;
  int L_;
  Frame frame_;
  int n_ang_ = 0;
  std::unique_ptr<RingTransform> rings_;
  std::size_t loose_begin_ = 0;
  std::vector<SpherePoint> nodes_;
  std::vector<double> weights_, log_h_, hw_;
};

}  // namespace sol
