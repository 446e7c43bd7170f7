#pragma once

// Discretization of the unit sphere: Gauss-Legendre x uniform-longitude
// product grid, real spherical-harmonic transforms, spectral Dirichlet
// energy and geodesic utilities.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sol/legendre.hpp"
#include "sol/parallel.hpp"

namespace sol {

using Vec3 = std::array<double, 3>;

inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }

/// A point on the unit sphere. Construction normalizes the input.
class SpherePoint {
 public:
  SpherePoint() = default;
  SpherePoint(double x, double y, double z) : SpherePoint(Vec3{x, y, z}) {}
  explicit SpherePoint(const Vec3& v) {
    const double n = norm(v);
    if (!(n > 0.0) || !std::isfinite(n)) throw std::invalid_argument("SpherePoint: zero or non-finite vector");
    x_ = (1.0 / n) * v;
  }

  static SpherePoint north() { return {0.0, 0.0, 1.0}; }
  static SpherePoint south() { return {0.0, 0.0, -1.0}; }
  /// Colatitude theta in [0, pi], longitude phi.
  static SpherePoint from_angles(double theta, double phi) {
    return SpherePoint(Vec3{std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta)});
  }

  const Vec3& vec() const { return x_; }
  double operator[](int i) const { return x_[i]; }
  SpherePoint antipode() const { return SpherePoint(Vec3{-x_[0], -x_[1], -x_[2]}); }

 private:
  Vec3 x_{0.0, 0.0, 1.0};
};

/// Great-circle distance in [0, pi]. Computed from atan2(|p x q|, <p,q>),
/// which equals the clamped arccos but keeps full precision near 0 and pi.
inline double geodesic_distance(const SpherePoint& p, const SpherePoint& q) {
  const double c = std::clamp(dot(p.vec(), q.vec()), -1.0, 1.0);
  const double s = norm(cross(p.vec(), q.vec()));
  return std::atan2(s, c);
}

/// Orthonormal frame whose third axis is the grid pole.
struct Frame {
  Vec3 e1{1.0, 0.0, 0.0};
  Vec3 e2{0.0, 1.0, 0.0};
  Vec3 e3{0.0, 0.0, 1.0};

  static Frame aligned_with(const SpherePoint& axis) {
    Frame f;
    f.e3 = axis.vec();
    if (std::abs(f.e3[0]) < 1e-15 && std::abs(f.e3[1]) < 1e-15) {
      f.e1 = {1.0, 0.0, 0.0};
      f.e2 = cross(f.e3, f.e1);
      return f;
    }
    const Vec3 ref = std::abs(f.e3[2]) < 0.9 ? Vec3{0.0, 0.0, 1.0} : Vec3{1.0, 0.0, 0.0};
    Vec3 e1 = cross(ref, f.e3);
    f.e1 = (1.0 / norm(e1)) * e1;
    f.e2 = cross(f.e3, f.e1);
    return f;
  }

  Vec3 to_world(double x, double y, double z) const { return x * e1 + y * e2 + z * e3; }

  /// Local spherical coordinates: cos(theta), sin(theta), phi.
  struct Local {
    double t, s, phi;
  };
  Local local(const SpherePoint& p) const {
    const double x = dot(p.vec(), e1), y = dot(p.vec(), e2), z = dot(p.vec(), e3);
    const double s = std::hypot(x, y);
    return {std::clamp(z, -1.0, 1.0), s, std::atan2(y, x)};
  }
};

/// Real spherical-harmonic coefficients a_{l,m}, 0 <= l <= L, -l <= m <= l,
/// in the orthonormal real basis (see LegendreRecurrence).
class SHCoefficients {
 public:
  SHCoefficients() = default;
  explicit SHCoefficients(int band_limit) : L_(band_limit), a_(std::size_t(band_limit + 1) * (band_limit + 1), 0.0) {
    if (band_limit < 0) throw std::invalid_argument("SHCoefficients: negative band limit");
  }

  static std::size_t index(int l, int m) { return std::size_t(l) * l + l + m; }

  int band_limit() const { return L_; }
  std::size_t size() const { return a_.size(); }
  double& operator()(int l, int m) { return a_[index(l, m)]; }
  double operator()(int l, int m) const { return a_[index(l, m)]; }
  std::span<double> data() { return a_; }
  std::span<const double> data() const { return a_; }

  /// Mean value over the sphere of the synthesized field.
  double mean() const { return a_.empty() ? 0.0 : a_[0] / std::sqrt(4.0 * std::numbers::pi); }

  /// Copy truncated or zero-padded to another band limit.
  SHCoefficients resized(int band_limit) const {
    SHCoefficients out(band_limit);
    const int lmax = std::min(band_limit, L_);
    for (int l = 0; l <= lmax; ++l)
      for (int m = -l; m <= l; ++m) out(l, m) = (*this)(l, m);
    return out;
  }

  SHCoefficients& operator+=(const SHCoefficients& o) {
    check_same(o);
    for (std::size_t i = 0; i < a_.size(); ++i) a_[i] += o.a_[i];
    return *this;
  }
  SHCoefficients& operator-=(const SHCoefficients& o) {
    check_same(o);
    for (std::size_t i = 0; i < a_.size(); ++i) a_[i] -= o.a_[i];
    return *this;
  }
  SHCoefficients& operator*=(double s) {
    for (auto& v : a_) v *= s;
    return *this;
  }
  friend SHCoefficients operator+(SHCoefficients a, const SHCoefficients& b) { return a += b; }
  friend SHCoefficients operator-(SHCoefficients a, const SHCoefficients& b) { return a -= b; }
  friend SHCoefficients operator*(double s, SHCoefficients a) { return a *= s; }

  double dot(const SHCoefficients& o) const {
    check_same(o);
    double acc = 0.0;
    for (std::size_t i = 0; i < a_.size(); ++i) acc += a_[i] * o.a_[i];
    return acc;
  }

 private:
  void check_same(const SHCoefficients& o) const {
    if (o.L_ != L_) throw std::invalid_argument("SHCoefficients: band-limit mismatch");
  }
  int L_ = 0;
  std::vector<double> a_;
};

/// Sum over l, m of l(l+1) a_{l,m}^2, i.e. the integral of |grad u|^2.
inline double dirichlet_energy(const SHCoefficients& c) {
  double acc = 0.0;
  for (int l = 1; l <= c.band_limit(); ++l) {
    double ring = 0.0;
    for (int m = -l; m <= l; ++m) ring += c(l, m) * c(l, m);
    acc += double(l) * (l + 1) * ring;
  }
  return acc;
}

/// Spectral transforms between SH coefficients and values on a set of
/// latitude rings, each carrying n_ang equally spaced longitudes.
class RingTransform {
 public:
  RingTransform(int band_limit, std::vector<double> cos_theta, std::vector<double> sin_theta, int n_ang,
                std::size_t cache_budget_bytes = std::size_t(96) << 20)
      : L_(band_limit), t_(std::move(cos_theta)), s_(std::move(sin_theta)), n_ang_(n_ang), leg_(band_limit) {
    if (t_.size() != s_.size()) throw std::invalid_argument("RingTransform: ring arrays differ in size");
    if (n_ang_ < 1) throw std::invalid_argument("RingTransform: need at least one longitude");
    cos_.resize(n_ang_);
    sin_.resize(n_ang_);
    for (int k = 0; k < n_ang_; ++k) {
      const double phi = 2.0 * std::numbers::pi * k / n_ang_;
      cos_[k] = std::cos(phi);
      sin_[k] = std::sin(phi);
    }
    const std::size_t bytes = t_.size() * leg_.size() * sizeof(double);
    if (bytes <= cache_budget_bytes) {
      cache_.resize(t_.size() * leg_.size());
      for (std::size_t j = 0; j < t_.size(); ++j) leg_.evaluate(t_[j], s_[j], cache_.data() + j * leg_.size());
    }
  }

  int band_limit() const { return L_; }
  int n_ang() const { return n_ang_; }
  std::size_t rings() const { return t_.size(); }
  std::size_t node_count() const { return t_.size() * std::size_t(n_ang_); }
  double cos_theta(std::size_t j) const { return t_[j]; }
  double sin_theta(std::size_t j) const { return s_[j]; }
  double phi(int k) const { return 2.0 * std::numbers::pi * k / n_ang_; }

  /// Values of the expansion at all ring nodes (ring-major).
  void synthesize(const SHCoefficients& c, std::span<double> out) const {
    if (c.band_limit() > L_) throw std::invalid_argument("RingTransform: coefficients exceed band limit");
    if (out.size() != node_count()) throw std::invalid_argument("RingTransform: output size mismatch");
    const int Lc = c.band_limit();
    parallel_chunks(rings(), [&](std::size_t, std::size_t begin, std::size_t end) {
      std::vector<double> scratch(cache_.empty() ? leg_.size() : 0);
      std::vector<double> fc(Lc + 1), fs(Lc + 1);
      for (std::size_t j = begin; j < end; ++j) {
        const double* P = legendre(j, scratch);
        for (int m = 0; m <= Lc; ++m) {
          const double* col = P + leg_.offset(m);
          double ac = 0.0, as = 0.0;
          for (int l = m; l <= Lc; ++l) {
            ac += c(l, m) * col[l - m];
            if (m > 0) as += c(l, -m) * col[l - m];
          }
          const double scale = m == 0 ? 1.0 : std::numbers::sqrt2;
          fc[m] = scale * ac;
          fs[m] = scale * as;
        }
        double* row = out.data() + j * n_ang_;
        for (int k = 0; k < n_ang_; ++k) {
          double v = fc[0];
          std::size_t idx = 0;
          for (int m = 1; m <= Lc; ++m) {
            idx += k;
            if (idx >= std::size_t(n_ang_)) idx %= n_ang_;
            v += fc[m] * cos_[idx] + fs[m] * sin_[idx];
          }
          row[k] = v;
        }
      }
    });
  }

  /// out_{l,m} = sum over nodes of values_i Y_{l,m}(x_i). Callers fold
  /// quadrature weights into values to obtain the analysis transform.
  SHCoefficients adjoint(std::span<const double> values, int band_limit) const {
    if (band_limit > L_) throw std::invalid_argument("RingTransform: requested band limit exceeds transform");
    if (values.size() != node_count()) throw std::invalid_argument("RingTransform: input size mismatch");
    const std::size_t chunks = chunk_count(rings());
    std::vector<SHCoefficients> partial(chunks, SHCoefficients(band_limit));
    parallel_chunks(rings(), [&](std::size_t chunk, std::size_t begin, std::size_t end) {
      std::vector<double> scratch(cache_.empty() ? leg_.size() : 0);
      std::vector<double> gc(band_limit + 1), gs(band_limit + 1);
      SHCoefficients& acc = partial[chunk];
      for (std::size_t j = begin; j < end; ++j) {
        const double* row = values.data() + j * n_ang_;
        for (int m = 0; m <= band_limit; ++m) {
          double sc = 0.0, ss = 0.0;
          std::size_t idx = 0;
          for (int k = 0; k < n_ang_; ++k) {
            sc += row[k] * cos_[idx];
            ss += row[k] * sin_[idx];
            idx += m;
            if (idx >= std::size_t(n_ang_)) idx %= n_ang_;
          }
          const double scale = m == 0 ? 1.0 : std::numbers::sqrt2;
          gc[m] = scale * sc;
          gs[m] = scale * ss;
        }
        const double* P = legendre(j, scratch);
        for (int m = 0; m <= band_limit; ++m) {
          const double* col = P + leg_.offset(m);
          for (int l = m; l <= band_limit; ++l) {
            acc(l, m) += col[l - m] * gc[m];
            if (m > 0) acc(l, -m) += col[l - m] * gs[m];
          }
        }
      }
    });
    for (std::size_t c = 1; c < chunks; ++c) partial[0] += partial[c];
    return std::move(partial[0]);
  }

 private:
  const double* legendre(std::size_t j, std::vector<double>& scratch) const {
    if (!cache_.empty()) return cache_.data() + j * leg_.size();
    leg_.evaluate(t_[j], s_[j], scratch.data());
    return scratch.data();
  }

  int L_;
  std::vector<double> t_, s_;
  int n_ang_;
  LegendreRecurrence leg_;
  std::vector<double> cos_, sin_;
  std::vector<double> cache_;
};

/// Product quadrature grid: Gauss-Legendre nodes in cos(theta) times
/// uniform longitudes. Immutable after construction.
class SphereGrid {
 public:
  SphereGrid(int n_theta, int n_phi, const SpherePoint& axis = SpherePoint::north())
      : n_theta_(check_sizes(n_theta, n_phi)),
        n_phi_(n_phi),
        L_(std::min(n_theta - 1, (n_phi - 1) / 2)),
        frame_(Frame::aligned_with(axis)),
        transform_(make_transform(n_theta, n_phi, L_, gauss_)) {
    nodes_.reserve(std::size_t(n_theta_) * n_phi_);
    weights_.reserve(nodes_.capacity());
    for (int j = 0; j < n_theta_; ++j) {
      const double t = transform_.cos_theta(j), s = transform_.sin_theta(j);
      for (int k = 0; k < n_phi_; ++k) {
        const double phi = transform_.phi(k);
        nodes_.emplace_back(frame_.to_world(s * std::cos(phi), s * std::sin(phi), t));
        weights_.push_back(gauss_[j] * 2.0 * std::numbers::pi / n_phi_);
      }
    }
  }

  int n_theta() const { return n_theta_; }
  int n_phi() const { return n_phi_; }
  int band_limit() const { return L_; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<SpherePoint>& nodes() const { return nodes_; }
  const std::vector<double>& weights() const { return weights_; }
  const Frame& frame() const { return frame_; }
  const SpherePoint axis() const { return SpherePoint(frame_.e3); }
  const RingTransform& transform() const { return transform_; }
  /// Angular resolution pi / L used for resolvability checks.
  double resolution() const { return std::numbers::pi / L_; }

  double integrate(std::span<const double> values) const {
    check_size(values.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) acc += weights_[i] * values[i];
    return acc;
  }

  SHCoefficients analysis(std::span<const double> values, int band_limit) const {
    check_size(values.size());
    if (band_limit > L_) throw std::invalid_argument("sh_analysis: requested band limit exceeds grid band limit");
    std::vector<double> weighted(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) weighted[i] = weights_[i] * values[i];
    return transform_.adjoint(weighted, band_limit);
  }

  std::vector<double> synthesis(const SHCoefficients& c) const {
    if (c.band_limit() > L_) throw std::invalid_argument("sh_synthesis: coefficients exceed grid band limit");
    std::vector<double> out(size());
    transform_.synthesize(c, out);
    return out;
  }

 private:
  static int check_sizes(int n_theta, int n_phi) {
    if (n_theta < 2 || n_phi < 4)
      throw std::invalid_argument("build_grid: need n_theta >= 2 and n_phi >= 4 (got " + std::to_string(n_theta) +
                                  ", " + std::to_string(n_phi) + ")");
    return n_theta;
  }
  static RingTransform make_transform(int n_theta, int n_phi, int L, std::vector<double>& gauss) {
    auto [t, w] = gauss_legendre(n_theta);
    std::vector<double> s(t.size());
    for (std::size_t j = 0; j < t.size(); ++j) s[j] = std::sqrt((1.0 - t[j]) * (1.0 + t[j]));
    gauss = std::move(w);
    return RingTransform(L, std::move(t), std::move(s), n_phi);
  }
  void check_size(std::size_t n) const {
    if (n != nodes_.size()) throw std::invalid_argument("SphereGrid: field size does not match grid");
  }

  int n_theta_, n_phi_, L_;
  Frame frame_;
  std::vector<double> gauss_;
  RingTransform transform_;
  std::vector<SpherePoint> nodes_;
  std::vector<double> weights_;
};

using GridPtr = std::shared_ptr<const SphereGrid>;

inline GridPtr build_grid(int n_theta, int n_phi, const SpherePoint& axis = SpherePoint::north()) {
  return std::make_shared<const SphereGrid>(n_theta, n_phi, axis);
}

/// Smallest grid with band limit L: (L+1) x (2L+2).
inline GridPtr grid_for_band_limit(int L, const SpherePoint& axis = SpherePoint::north()) {
  if (L < 1) throw std::invalid_argument("grid_for_band_limit: L must be >= 1");
  return build_grid(L + 1, 2 * L + 2, axis);
}

/// Real function sampled at the nodes of a grid.
class ScalarField {
 public:
  ScalarField() = default;
  ScalarField(GridPtr grid, std::vector<double> values) : grid_(std::move(grid)), values_(std::move(values)) {
    if (!grid_) throw std::invalid_argument("ScalarField: null grid");
    if (values_.size() != grid_->size()) throw std::invalid_argument("ScalarField: value count does not match grid");
  }
  template <class Fn>
  static ScalarField sample(GridPtr grid, Fn&& fn) {
    std::vector<double> v(grid->size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = fn(grid->nodes()[i]);
    return ScalarField(std::move(grid), std::move(v));
  }
  static ScalarField constant(GridPtr grid, double c) {
    std::vector<double> v(grid->size(), c);
    return ScalarField(std::move(grid), std::move(v));
  }

  const GridPtr& grid() const { return grid_; }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }
  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }

  bool all_finite() const {
    for (double v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  GridPtr grid_;
  std::vector<double> values_;
};

inline double integrate(const ScalarField& f) { return f.grid()->integrate(f.values()); }

inline SHCoefficients sh_analysis(const ScalarField& f, int band_limit) {
  return f.grid()->analysis(f.values(), band_limit);
}
inline SHCoefficients sh_analysis(const ScalarField& f) { return sh_analysis(f, f.grid()->band_limit()); }

inline ScalarField sh_synthesis(const SHCoefficients& c, const GridPtr& grid) {
  return ScalarField(grid, grid->synthesis(c));
}

/// Value of a band-limited expansion (in the given frame) at any point.
inline double evaluate_at(const SHCoefficients& c, const Frame& frame, const SpherePoint& p) {
  const int L = c.band_limit();
  thread_local std::vector<double> P;
  thread_local int cached_L = -1;
  thread_local std::unique_ptr<LegendreRecurrence> leg;
  if (cached_L != L) {
    leg = std::make_unique<LegendreRecurrence>(L);
    P.assign(leg->size(), 0.0);
    cached_L = L;
  }
  const auto loc = frame.local(p);
  leg->evaluate(loc.t, loc.s, P.data());
  double acc = 0.0;
  for (int m = 0; m <= L; ++m) {
    const double* col = P.data() + leg->offset(m);
    double ac = 0.0, as = 0.0;
    for (int l = m; l <= L; ++l) {
      ac += c(l, m) * col[l - m];
      if (m > 0) as += c(l, -m) * col[l - m];
    }
    if (m == 0) {
      acc += ac;
    } else {
      acc += std::numbers::sqrt2 * (ac * std::cos(m * loc.phi) + as * std::sin(m * loc.phi));
    }
  }
  return acc;
}

/// Surface gradient (tangent vector in world coordinates) of a band-limited
/// expansion at p. Undefined exactly at the frame poles, where zero is returned
/// for the longitudinal part.
inline Vec3 gradient_at(const SHCoefficients& c, const Frame& frame, const SpherePoint& p) {
  const int L = c.band_limit();
  LegendreRecurrence leg(L);
  std::vector<double> P(leg.size()), dP(leg.size());
  const auto loc = frame.local(p);
  leg.evaluate_with_derivative(loc.t, loc.s, P.data(), dP.data());
  double d_theta = 0.0, d_phi = 0.0;
  for (int m = 0; m <= L; ++m) {
    const std::size_t base = leg.offset(m);
    for (int l = m; l <= L; ++l) {
      const double p = P[base + l - m], dp = dP[base + l - m];
      if (m == 0) {
        d_theta += c(l, 0) * dp;
      } else {
        const double cm = std::cos(m * loc.phi), sm = std::sin(m * loc.phi);
        d_theta += std::numbers::sqrt2 * dp * (c(l, m) * cm + c(l, -m) * sm);
        d_phi += std::numbers::sqrt2 * p * m * (-c(l, m) * sm + c(l, -m) * cm);
      }
    }
  }
  // Unit tangent vectors in the local frame.
  const double cp = std::cos(loc.phi), sp = std::sin(loc.phi);
  const Vec3 e_theta = frame.to_world(loc.t * cp, loc.t * sp, -loc.s);
  const Vec3 e_phi = frame.to_world(-sp, cp, 0.0);
  const double g_phi = loc.s > 1e-300 ? d_phi / loc.s : 0.0;
  return d_theta * e_theta + g_phi * e_phi;
}

}  // namespace sol
