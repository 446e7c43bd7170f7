#pragma once

// Singular enrichment of the band-limited discretization. Near a singular
// point of order a, solutions behave like u(p) + sum_k c_k d^{2k(1+a)} with
// non-smooth terms that spectral expansions resolve only to O(1/L). The
// radial potentials psi_k with -Lap psi_k = q^{b_k} - mean, q = 1 - <p, x>,
// b_k = k(1+a) - 1, carry exactly these terms; the solver works in
// span{Y_lm} + span{psi_k}.

#include <boost/math/quadrature/tanh_sinh.hpp>
#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "sol/closed_forms.hpp"
#include "sol/mt_functional.hpp"
#include "sol/quadrature.hpp"
#include "sol/singular_geometry.hpp"
#include "sol/sphere_grid.hpp"

namespace sol {

/// psi(x) = Psi(1 - <p, x>) with -Lap psi = q^beta - 2^beta/(1+beta) and zero mean.
class RadialPotential {
 public:
  RadialPotential(const SpherePoint& p, double beta) : p_(p), beta_(beta) {
    if (!(beta > -1.0)) throw std::invalid_argument("RadialPotential: exponent must exceed -1");
    scale_ = std::pow(2.0, beta) / (1.0 + beta);
    // int_0^2 Psi dq = 2^{beta+1} beta / (1+beta)^2 by parts, with Psi(0) = 0.
    mean_ = std::pow(2.0, beta) * beta / ((1.0 + beta) * (1.0 + beta));
  }

  const SpherePoint& center() const { return p_; }
  double beta() const { return beta_; }

  /// Psi(q) - mean, Psi(q) = 2^b/(1+b) int_0^{q/2} (1 - v^b)/(1 - v) dv.
  double profile(double q) const {
    const double x = std::clamp(0.5 * q, 0.0, 1.0);
    if (x == 0.0) return -mean_;
    auto f = [&](double v) {
      const double om = 1.0 - v;
      return om < 1e-8 ? beta_ : (1.0 - std::pow(v, beta_)) / om;
    };
    boost::math::quadrature::tanh_sinh<double> ts;
    return scale_ * ts.integrate(f, 0.0, x) - mean_;
  }

  /// dPsi/dq = (2^b - q^b) / ((1+b)(2-q)).
  double profile_derivative(double q) const {
    const double om = 2.0 - q;
    if (om < 1e-8) return beta_ * std::pow(2.0, beta_ - 1.0) / (1.0 + beta_);
    return (std::pow(2.0, beta_) - std::pow(q, beta_)) / ((1.0 + beta_) * om);
  }

  double value(const SpherePoint& x) const { return profile(one_minus_dot(p_, x)); }

  Vec3 gradient(const SpherePoint& x) const {
    // grad q = -(p - <p,x> x).
    const double q = one_minus_dot(p_, x);
    const double t = dot(p_.vec(), x.vec());
    return (-profile_derivative(q)) * (p_.vec() - t * x.vec());
  }

  double source(const SpherePoint& x) const { return std::pow(one_minus_dot(p_, x), beta_) - source_mean(); }
  double source_mean() const { return scale_; }
  /// Mean of the unshifted profile, Psi(0) = 0.
  double profile_mean() const { return mean_; }

 private:
  SpherePoint p_;
  double beta_ = 0.0;
  double scale_ = 0.0;
  double mean_ = 0.0;
};

/// The potentials used for one grid: their values at the quadrature nodes,
/// spectral source coefficients b_k (int grad Y_lm . grad psi_k) and Gram
/// matrix M_kj = int grad psi_k . grad psi_j.
class Enrichment {
 public:
  Enrichment() = default;

  /// Potentials for every singular point on the grid axis, `terms` exponents
  /// each. Exponents that are nonnegative integers give smooth potentials and
  /// are skipped, as are potentials whose energy beyond the band is below
  /// `prune` times their total energy.
  static std::shared_ptr<const Enrichment> build(const SingularQuadrature& q, const SingularWeight& w, int terms = 3,
                                                 double prune = 1e-7) {
    auto e = std::make_shared<Enrichment>();
    const SpherePoint axis = q.grid()->axis();
    std::vector<RadialPotential> candidates;
    for (const auto& sp : w.points()) {
      const double da = geodesic_distance(sp.position, axis);
      if (da > 1e-12 && da < std::numbers::pi - 1e-12) continue;
      for (int k = 1; k <= terms; ++k) {
        const double beta = k * (1.0 + sp.order) - 1.0;
        if (beta >= -1e-12 && std::abs(beta - std::round(beta)) < 1e-12) continue;
        candidates.emplace_back(sp.position, beta);
      }
    }
    const int L = q.band_limit();
    for (auto& c : candidates) {
      SHCoefficients b = project(q.grid(), [&](const SpherePoint& x) { return c.source(x); }, {{c.center(), c.beta()}},
                                 fine_rule(q.rule()));
      b(0, 0) = 0.0;
      // Energy beyond the band: M_kk - sum b^2 / l(l+1).
      const double mkk = gram(c, c);
      double captured = 0.0;
      for (int l = 1; l <= L; ++l)
        for (int m = -l; m <= l; ++m) captured += b(l, m) * b(l, m) / (double(l) * (l + 1));
      if (mkk - captured < prune * mkk) continue;
      e->potentials_.push_back(c);
      e->sources_.push_back(std::move(b));
    }
    const std::size_t n = e->potentials_.size();
    e->gram_.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j <= i; ++j) e->gram_[i * n + j] = e->gram_[j * n + i] = gram(e->potentials_[i], e->potentials_[j]);
    e->nodes_.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      auto& v = e->nodes_[k];
      v.resize(q.size());
      double last_q = -1.0, last_v = 0.0;
      for (std::size_t i = 0; i < q.size(); ++i) {
        const double qq = one_minus_dot(e->potentials_[k].center(), q.nodes()[i]);
        if (qq != last_q) last_q = qq, last_v = e->potentials_[k].profile(qq);
        v[i] = last_v;
      }
    }
    e->schur_ = schur(*e, L);
    return e;
  }

  std::size_t size() const { return potentials_.size(); }
  bool empty() const { return potentials_.empty(); }
  const std::vector<RadialPotential>& potentials() const { return potentials_; }
  const SHCoefficients& source(std::size_t k) const { return sources_[k]; }
  double gram(std::size_t i, std::size_t j) const { return gram_[i * size() + j]; }
  /// M - B^T P^{-1} B, the energy of the potentials beyond the band.
  double schur(std::size_t i, std::size_t j) const { return schur_[i * size() + j]; }
  const std::vector<double>& node_values(std::size_t k) const { return nodes_[k]; }

 private:
  static SingularCapRule fine_rule(SingularCapRule r) {
    r.panels = std::max(r.panels, 8);
    r.radial_nodes = std::max(r.radial_nodes, 48);
    return r;
  }

  // int grad psi_a . grad psi_b = int psi_a (q_b^{beta_b} - mean): one-dimensional
  // in q_a for coincident or antipodal centers.
  static double gram(const RadialPotential& a, const RadialPotential& b) {
    const double d = geodesic_distance(a.center(), b.center());
    const bool same = d < 1e-12;
    if (!same && d < std::numbers::pi - 1e-12)
      throw std::invalid_argument("Enrichment: centers must coincide or be antipodal");
    boost::math::quadrature::tanh_sinh<double> ts;
    if (same) {
      // By parts: int_0^2 (2^a - q^a)(2^{b+1} - q^{b+1}) / ((1+a)(1+b)(2-q)) dq.
      const double ba = a.beta(), bb = b.beta();
      auto f = [&](double q) {
        const double om = 2.0 - q;
        const double ratio = om < 1e-10 ? ba * std::pow(2.0, ba - 1.0) : (std::pow(2.0, ba) - std::pow(q, ba)) / om;
        return ratio * (std::pow(2.0, bb + 1.0) - std::pow(q, bb + 1.0)) / ((1.0 + ba) * (1.0 + bb));
      };
      const double shift = a.profile_mean() * std::pow(2.0, bb + 1.0) / (1.0 + bb);
      return 2.0 * std::numbers::pi * (ts.integrate(f, 0.0, 2.0) - shift);
    }
    auto f = [&](double q) { return a.profile(q) * (std::pow(2.0 - q, b.beta()) - b.source_mean()); };
    return 2.0 * std::numbers::pi * ts.integrate(f, 0.0, 2.0);
  }

  static std::vector<double> schur(const Enrichment& e, int L) {
    const std::size_t n = e.size();
    std::vector<double> s(n * n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int l = 1; l <= L; ++l)
          for (int m = -l; m <= l; ++m) acc += e.sources_[i](l, m) * e.sources_[j](l, m) / (double(l) * (l + 1));
        s[i * n + j] = e.gram(i, j) - acc;
      }
    return s;
  }

  std::vector<RadialPotential> potentials_;
  std::vector<SHCoefficients> sources_;
  std::vector<double> gram_, schur_;
  std::vector<std::vector<double>> nodes_;
};

/// A discrete field: band-limited part plus enrichment weights.
struct FieldState {
  SHCoefficients a;
  std::vector<double> s;

  FieldState& operator+=(const FieldState& o) {
    a += o.a;
    for (std::size_t k = 0; k < s.size(); ++k) s[k] += o.s[k];
    return *this;
  }
  FieldState& operator-=(const FieldState& o) {
    a -= o.a;
    for (std::size_t k = 0; k < s.size(); ++k) s[k] -= o.s[k];
    return *this;
  }
  FieldState& operator*=(double c) {
    a *= c;
    for (double& v : s) v *= c;
    return *this;
  }
  double dot(const FieldState& o) const {
    double acc = a.dot(o.a);
    for (std::size_t k = 0; k < s.size(); ++k) acc += s[k] * o.s[k];
    return acc;
  }
};

inline FieldState operator+(FieldState x, const FieldState& y) { return x += y; }
inline FieldState operator-(FieldState x, const FieldState& y) { return x -= y; }
inline FieldState operator*(double c, FieldState x) { return x *= c; }

/// Point evaluation of a field state.
class FieldEvaluator {
 public:
  FieldEvaluator(SHCoefficients a, std::vector<double> s, std::shared_ptr<const Enrichment> basis, Frame frame)
      : a_(std::move(a)), s_(std::move(s)), basis_(std::move(basis)), frame_(frame) {}

  double value(const SpherePoint& x) const {
    double v = evaluate_at(a_, frame_, x);
    for (std::size_t k = 0; k < s_.size(); ++k) v += s_[k] * basis_->potentials()[k].value(x);
    return v;
  }

  Vec3 gradient(const SpherePoint& x) const {
    Vec3 g = gradient_at(a_, frame_, x);
    for (std::size_t k = 0; k < s_.size(); ++k) g = g + s_[k] * basis_->potentials()[k].gradient(x);
    return g;
  }

  /// Values on the circle of radius r about `center`, n equally spaced angles.
  std::vector<double> ring(const SpherePoint& center, double r, int n) const {
    std::vector<double> out(std::size_t(n), 0.0);
    const Frame f = Frame::aligned_with(center);
    const double da = geodesic_distance(SpherePoint(frame_.e3), center);
    const bool axial = da < 1e-12 || da > std::numbers::pi - 1e-12;
    if (axial) {
      const double sgn = da < 1e-12 ? 1.0 : -1.0;
      RingTransform ring(a_.band_limit(), {sgn * std::cos(r)}, {std::sin(r)}, n);
      ring.synthesize(a_, out);
    }
    for (int k = 0; k < n; ++k) {
      const double psi = 2.0 * std::numbers::pi * k / n;
      const SpherePoint x(f.to_world(std::sin(r) * std::cos(psi), std::sin(r) * std::sin(psi), std::cos(r)));
      if (!axial) out[std::size_t(k)] = evaluate_at(a_, frame_, x);
      for (std::size_t j = 0; j < s_.size(); ++j) out[std::size_t(k)] += s_[j] * basis_->potentials()[j].value(x);
    }
    return out;
  }

  const SHCoefficients& coefficients() const { return a_; }
  const std::vector<double>& weights() const { return s_; }

 private:
  SHCoefficients a_;
  std::vector<double> s_;
  std::shared_ptr<const Enrichment> basis_;
  Frame frame_;
};

/// J_rho on span{Y_lm, l <= L} + span{psi_k}. With no potentials this is the
/// band-limited functional.
class EnrichedFunctional {
 public:
  EnrichedFunctional(const MTFunctional& f, std::shared_ptr<const Enrichment> e)
      : f_(&f), e_(e ? std::move(e) : std::make_shared<const Enrichment>()) {}

  const MTFunctional& base() const { return *f_; }
  const std::shared_ptr<const Enrichment>& enrichment() const { return e_; }
  std::size_t extra() const { return e_->size(); }

  FieldState zero() const { return {SHCoefficients(f_->band_limit()), std::vector<double>(extra(), 0.0)}; }

  std::vector<double> node_values(const FieldState& x) const {
    auto u = f_->quadrature().synthesize(x.a);
    for (std::size_t k = 0; k < extra(); ++k) {
      const auto& v = e_->node_values(k);
      for (std::size_t i = 0; i < u.size(); ++i) u[i] += x.s[k] * v[i];
    }
    return u;
  }

  double log_exp_integral(const FieldState& x, double* max_u = nullptr) const {
    return log_integral(node_values(x), max_u);
  }

  /// Shift a_00 so that int h e^u = 1.
  FieldState normalized(FieldState x) const {
    x.a(0, 0) -= kSqrtFourPi * log_exp_integral(x);
    return x;
  }

  double dirichlet(const FieldState& x) const {
    double d = dirichlet_energy(x.a);
    for (std::size_t k = 0; k < extra(); ++k) {
      d += 2.0 * x.s[k] * x.a.dot(e_->source(k));
      for (std::size_t j = 0; j < extra(); ++j) d += x.s[k] * x.s[j] * e_->gram(k, j);
    }
    return d;
  }

  MTFunctional::Value value_and_gradient(const FieldState& x, FieldState* grad) const {
    const auto u = node_values(x);
    MTFunctional::Value v;
    v.log_integral = log_integral(u, &v.max_u);
    v.dirichlet = dirichlet(x);
    v.mean = x.a.mean();
    const double rho = f_->rho();
    v.J = 0.5 * v.dirichlet + rho * v.mean - rho * (v.log_integral - std::log(kFourPi));
    if (grad) {
      const auto& hw = f_->quadrature().weighted_h();
      std::vector<double> dens(u.size());
      for (std::size_t i = 0; i < u.size(); ++i) dens[i] = hw[i] * std::exp(u[i] - v.log_integral);
      FieldState g{f_->quadrature().adjoint(dens, f_->band_limit()), std::vector<double>(extra(), 0.0)};
      g.a *= -rho;
      const int L = f_->band_limit();
      for (int l = 1; l <= L; ++l)
        for (int m = -l; m <= l; ++m) {
          double acc = double(l) * (l + 1) * x.a(l, m);
          for (std::size_t k = 0; k < extra(); ++k) acc += x.s[k] * e_->source(k)(l, m);
          g.a(l, m) += acc;
        }
      g.a(0, 0) = 0.0;
      for (std::size_t k = 0; k < extra(); ++k) {
        const auto& pv = e_->node_values(k);
        double acc = x.a.dot(e_->source(k));
        for (std::size_t j = 0; j < extra(); ++j) acc += x.s[j] * e_->gram(k, j);
        double proj = 0.0;
        for (std::size_t i = 0; i < u.size(); ++i) proj += dens[i] * pv[i];
        g.s[k] = acc - rho * proj;
      }
      *grad = std::move(g);
    }
    return v;
  }

  /// Inverse of the H1 Gram matrix [[l(l+1), B], [B^T, M]] on mean-free states.
  FieldState precondition(const FieldState& g) const {
    const int L = f_->band_limit();
    auto pinv = [&](SHCoefficients c) {
      c(0, 0) = 0.0;
      for (int l = 1; l <= L; ++l)
        for (int m = -l; m <= l; ++m) c(l, m) /= double(l) * (l + 1);
      return c;
    };
    FieldState d{pinv(g.a), std::vector<double>(extra(), 0.0)};
    const std::size_t n = extra();
    if (n == 0) return d;
    std::vector<double> S(n * n), rhs(n);
    for (std::size_t k = 0; k < n; ++k) {
      rhs[k] = g.s[k] - d.a.dot(e_->source(k));
      for (std::size_t j = 0; j < n; ++j) S[k * n + j] = e_->schur(k, j);
    }
    // Small dense solve with partial pivoting.
    for (std::size_t c = 0; c < n; ++c) {
      std::size_t piv = c;
      for (std::size_t r = c + 1; r < n; ++r)
        if (std::abs(S[r * n + c]) > std::abs(S[piv * n + c])) piv = r;
      for (std::size_t j = 0; j < n; ++j) std::swap(S[c * n + j], S[piv * n + j]);
      std::swap(rhs[c], rhs[piv]);
      for (std::size_t r = c + 1; r < n; ++r) {
        const double m = S[r * n + c] / S[c * n + c];
        for (std::size_t j = c; j < n; ++j) S[r * n + j] -= m * S[c * n + j];
        rhs[r] -= m * rhs[c];
      }
    }
    for (std::size_t c = n; c-- > 0;) {
      double acc = rhs[c];
      for (std::size_t j = c + 1; j < n; ++j) acc -= S[c * n + j] * d.s[j];
      d.s[c] = acc / S[c * n + c];
    }
    SHCoefficients corr(L);
    for (std::size_t k = 0; k < n; ++k) corr += d.s[k] * e_->source(k);
    d.a -= pinv(corr);
    return d;
  }

  FieldEvaluator evaluator(const FieldState& x) const { return {x.a, x.s, e_, f_->grid()->frame()}; }

 private:
  double log_integral(const std::vector<double>& u, double* max_u) const {
    const double top = *std::max_element(u.begin(), u.end());
    const double ceiling = f_->params().ceiling;
    if (!std::isfinite(top)) throw OverflowError("exp_integral: non-finite field values");
    if (top > ceiling)
      throw OverflowError("exp_integral: max u = " + std::to_string(top) + " exceeds the ceiling " +
                          std::to_string(ceiling));
    if (max_u) *max_u = top;
    const auto& hw = f_->quadrature().weighted_h();
    double acc = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) acc += hw[i] * std::exp(u[i] - top);
    return top + std::log(acc);
  }

  const MTFunctional* f_;
  std::shared_ptr<const Enrichment> e_;
};

}  // namespace sol
