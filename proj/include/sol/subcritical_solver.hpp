#pragma once

// Minimization of the subcritical functional J_{rho_bar - eps} and the
// blow-up diagnostics of its minimizers as eps -> 0.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>

#include "sol/closed_forms.hpp"
#include "sol/enrichment.hpp"
#include "sol/identity_checks.hpp"
#include "sol/mt_functional.hpp"

namespace sol {

enum class SolverMethod {
  // u <- u + tau (w - u), -Lap w = rho (h e^u / int h e^u - 1/4pi), with backtracking.
  fixed_point,
  // Limited-memory BFGS in the H1 metric, started from the same step.
  lbfgs,
};

enum class InitialField { zero, test_function, given };

struct SolverConfig {
  std::vector<double> schedule{0.5, 0.2, 0.1, 0.05};
  int max_iterations = 4000;
  double damping = 0.5;
  std::optional<double> tolerance;  // default 1e-6 rho
  InitialField init = InitialField::test_function;
  double init_epsilon = 0.01;
  SolverMethod method = SolverMethod::fixed_point;
  int memory = 8;
  // Radial potentials per axial singular point; 0 keeps the band-limited space.
  int enrichment_terms = 3;

  double tolerance_for(double rho) const { return tolerance ? *tolerance : 1e-6 * rho; }

  /// Throws on the first violated invariant; `rho_bar` bounds the schedule.
  void validate(double rho_bar) const {
    if (schedule.empty()) throw std::invalid_argument("SolverConfig: empty epsilon schedule");
    for (std::size_t i = 0; i < schedule.size(); ++i) {
      if (!(schedule[i] > 0.0 && schedule[i] < rho_bar))
        throw std::invalid_argument("SolverConfig: epsilon values must lie in (0, rho_bar)");
      if (i > 0 && !(schedule[i] < schedule[i - 1]))
        throw std::invalid_argument("SolverConfig: epsilon schedule must be strictly decreasing");
    }
    if (max_iterations < 1) throw std::invalid_argument("SolverConfig: max_iterations must be positive");
    if (!(damping > 0.0 && damping <= 1.0)) throw std::invalid_argument("SolverConfig: damping must lie in (0, 1]");
    if (tolerance && !(*tolerance > 0.0)) throw std::invalid_argument("SolverConfig: tolerance must be positive");
    if (memory < 1) throw std::invalid_argument("SolverConfig: memory must be positive");
    if (enrichment_terms < 0) throw std::invalid_argument("SolverConfig: enrichment_terms must be >= 0");
  }
};

struct TraceRecord {
  int iteration = 0;
  double J = 0.0;
  double residual = 0.0;
  double lambda = 0.0;
  double step = 0.0;
};

using TraceSink = std::function<void(const TraceRecord&)>;

struct MinimizerState {
  SHCoefficients coefficients;  // normalized: int h e^u = 1
  std::vector<double> enrichment;  // weights of the radial potentials
  std::shared_ptr<const Enrichment> basis;
  ScalarField u;                   // samples of the full field on the grid
  double epsilon = 0.0;
  double rho = 0.0;
  double J = 0.0;
  double residual = 0.0;
  double normalization_error = 0.0;  // |int h e^u - 1|
  int iterations = 0;
  bool converged = false;
  bool overflow = false;
  std::string status;

  FieldState field() const { return {coefficients, enrichment}; }
  FieldEvaluator evaluator() const {
    return {coefficients, enrichment, basis ? basis : std::make_shared<const Enrichment>(), u.grid()->frame()};
  }
};

/// Enrichment for `f` as configured.
inline std::shared_ptr<const Enrichment> enrichment_for(const MTFunctional& f, const SolverConfig& cfg) {
  if (cfg.enrichment_terms == 0) return std::make_shared<const Enrichment>();
  return Enrichment::build(f.quadrature(), f.weight(), cfg.enrichment_terms);
}

/// Minimizes J_rho over span{Y_lm} + span{psi_k} from `init`. J is invariant
/// under constants, so the iteration keeps the normalization int h e^u = 1.
inline MinimizerState minimize(const EnrichedFunctional& ef, const SolverConfig& cfg, FieldState x,
                               const TraceSink& trace = {}) {
  if (!(cfg.damping > 0.0 && cfg.damping <= 1.0)) throw std::invalid_argument("minimize: damping must lie in (0, 1]");
  const MTFunctional& f = ef.base();
  const double tol = cfg.tolerance_for(f.rho());
  MinimizerState s;
  s.rho = f.rho();
  s.epsilon = f.weight().rho_bar() - f.rho();
  s.basis = ef.enrichment();
  x.a = x.a.resized(f.band_limit());
  x.s.resize(ef.extra(), 0.0);
  FieldState g, x_new, g_new;
  try {
    x = ef.normalized(x);
    auto v = ef.value_and_gradient(x, &g);
    double res = std::sqrt(g.dot(g));
    std::deque<std::pair<FieldState, FieldState>> history;  // (step, gradient change)
    double tau = cfg.damping;
    double best_res = res;
    int stalled = 0;
    int it = 0;
    for (; it < cfg.max_iterations && res > tol; ++it) {
      FieldState d = ef.precondition(g);
      double scale = cfg.damping;
      if (cfg.method == SolverMethod::lbfgs && !history.empty()) {
        // Two-loop recursion with the H1 inverse as the initial Hessian.
        FieldState q = g;
        std::vector<double> alpha(history.size());
        for (std::size_t k = history.size(); k-- > 0;) {
          const auto& [sk, yk] = history[k];
          alpha[k] = sk.dot(q) / yk.dot(sk);
          q -= alpha[k] * yk;
        }
        d = ef.precondition(q);
        const auto& [sl, yl] = history.back();
        d *= sl.dot(yl) / yl.dot(ef.precondition(yl));
        for (std::size_t k = 0; k < history.size(); ++k) {
          const auto& [sk, yk] = history[k];
          const double beta = yk.dot(d) / yk.dot(sk);
          d += (alpha[k] - beta) * sk;
        }
        scale = 1.0;
      }
      d *= -1.0;
      const double slope = g.dot(d);
      if (!(slope < 0.0)) {
        if (history.empty()) {
          s.status = "no descent direction";
          break;
        }
        history.clear();
        continue;
      }
      tau = scale;
      bool accepted = false;
      for (int back = 0; back < 40; ++back) {
        x_new = x + tau * d;
        try {
          x_new = ef.normalized(x_new);
          const auto v_new = ef.value_and_gradient(x_new, &g_new);
          // Near convergence J changes drop below rounding; steps that keep J
          // within 1e-12 and reduce the residual are accepted as well.
          if (v_new.J <= v.J + 1e-4 * tau * slope || (v_new.J <= v.J + 1e-12 && g_new.dot(g_new) < g.dot(g))) {
            accepted = true;
            v = v_new;
            break;
          }
        } catch (const OverflowError&) {
        }
        tau *= 0.5;
      }
      if (!accepted) {
        if (!history.empty()) {
          history.clear();
          continue;
        }
        s.status = "line search failed";
        break;
      }
      if (cfg.method == SolverMethod::lbfgs) {
        FieldState sk = x_new - x, yk = g_new - g;
        sk.a(0, 0) = 0.0;
        if (sk.dot(yk) > 1e-14 * std::sqrt(sk.dot(sk) * yk.dot(yk))) {
          history.emplace_back(std::move(sk), std::move(yk));
          if (int(history.size()) > cfg.memory) history.pop_front();
        }
      }
      x = x_new;
      g = g_new;
      const double res_new = std::sqrt(g.dot(g));
      if (res_new < 0.99 * best_res) {
        best_res = res_new;
        stalled = 0;
      } else if (++stalled >= 50) {
        res = res_new;
        s.status = "stagnated";
        ++it;
        break;
      }
      res = res_new;
      if (trace) trace({it + 1, v.J, res, v.max_u, tau});
    }
    s.iterations = it;
    s.J = v.J;
    s.residual = res;
    s.converged = res <= tol;
    if (s.status.empty()) s.status = s.converged ? "converged" : "max iterations exceeded";
  } catch (const OverflowError& e) {
    s.overflow = true;
    s.status = e.what();
  }
  s.coefficients = x.a;
  s.enrichment = x.s;
  s.u = sh_synthesis(x.a, f.grid());
  for (std::size_t k = 0; k < x.s.size(); ++k) {
    const auto& pot = ef.enrichment()->potentials()[k];
    double last_q = -1.0, last_v = 0.0;
    for (std::size_t i = 0; i < f.grid()->size(); ++i) {
      const double q = one_minus_dot(pot.center(), f.grid()->nodes()[i]);
      if (q != last_q) last_q = q, last_v = pot.profile(q);
      s.u.values()[i] += x.s[k] * last_v;
    }
  }
  if (!s.overflow) s.normalization_error = std::abs(std::exp(ef.log_exp_integral(x)) - 1.0);
  return s;
}

inline MinimizerState minimize(const MTFunctional& f, const SolverConfig& cfg, const SHCoefficients& init,
                               const TraceSink& trace = {}) {
  const EnrichedFunctional ef(f, enrichment_for(f, cfg));
  return minimize(ef, cfg, FieldState{init, {}}, trace);
}

/// Kazdan-Warner residual of a solver state, integrated on the rule of `f`.
inline KazdanWarnerReport kazdan_warner_residual(const MTFunctional& f, const MinimizerState& state) {
  const EnrichedFunctional ef(f, state.basis);
  return kazdan_warner_residual(f.quadrature(), f.rho(), f.weight(), ef.node_values(state.field()));
}

/// Initial coefficients for a run.
inline SHCoefficients initial_coefficients(const MTFunctional& f, const SolverConfig& cfg) {
  if (cfg.init == InitialField::test_function) {
    const SingularWeight& w = f.weight();
    const auto mins = minimal_order_points(w);
    SpherePoint p = mins.empty() ? f.grid()->axis() : w.points()[mins.front()].position;
    if (w.alpha() == 0.0 && w.find(p)) p = SpherePoint(-1.0 * p.vec());
    if (w.alpha() < 0.0 || !w.find(p)) {
      TestFunctionParams tp{cfg.init_epsilon, p, w};
      return f.coefficients(test_function(tp, f.grid()));
    }
  }
  return SHCoefficients(f.band_limit());
}

// ---------------------------------------------------------------------------
// Diagnostics

struct BlowupDiagnostics {
  double lambda = 0.0;  // max u
  SpherePoint p_eps;
  SpherePoint center;   // scaling center
  double alpha_center = 0.0;
  double t = 0.0;       // e^{-lambda / (2(1 + alpha))}
  double mean = 0.0;
  double mean_decay = 0.0;  // t^2 mean u
  double cap_mass_10t = 0.0;  // rho int_{B_{10t}} h e^u
  double cap_mass_half = 0.0;  // radius 0.5
  double profile_error = 0.0;  // R = 5
  double farfield_error = 0.0;  // outside B_{0.5}
  double grad_l15 = 0.0;  // ||grad u||_{L^1.5}
  bool compact = false;
  bool under_resolved = false;
};

namespace detail {

inline SpherePoint on_ring(const SpherePoint& center, double r, double psi) {
  const Frame f = Frame::aligned_with(center);
  return SpherePoint(f.to_world(std::sin(r) * std::cos(psi), std::sin(r) * std::sin(psi), std::cos(r)));
}

}  // namespace detail

/// rho int_{B_r(center)} h e^u by Gauss rules in s = d^{2(1+a)}, a the order at
/// the center, and the trapezoid rule in the angle.
inline double cap_mass(const FieldEvaluator& u_at, const SingularWeight& w, double rho, const SpherePoint& center,
                       double r) {
  r = std::min(r, std::numbers::pi);
  const auto idx = w.find(center);
  const double a = idx ? w.points()[*idx].order : 0.0;
  const double k = 2.0 * (1.0 + a);
  const int n_ang = 2 * u_at.coefficients().band_limit() + 2;
  const int panels = 6;
  const double s_max = std::pow(r, k);
  double acc = 0.0;
  using Rule = boost::math::quadrature::gauss<double, 30>;
  for (int pnl = 0; pnl < panels; ++pnl) {
    // Panels graded geometrically toward the center.
    const double lo = pnl == 0 ? 0.0 : s_max * std::pow(0.25, panels - pnl);
    const double hi = s_max * std::pow(0.25, panels - pnl - 1);
    acc += Rule::integrate(
        [&](double s) {
          const double d = std::pow(s, 1.0 / k);
          if (d <= 0.0) return 0.0;
          const auto u = u_at.ring(center, d, n_ang);
          const double half = std::sin(0.5 * d);
          const double own = idx ? a * (1.0 + 2.0 * std::log(half)) : 0.0;
          double ring = 0.0;
          for (int j = 0; j < n_ang; ++j) {
            const SpherePoint x = detail::on_ring(center, d, 2.0 * std::numbers::pi * j / n_ang);
            const double lw = idx ? w.log_weight_without(*idx, x) + own : w.log_weight(x);
            ring += std::exp(lw + u[std::size_t(j)]);
          }
          ring *= 2.0 * std::numbers::pi / n_ang;
          // dA = sin d dd dpsi, dd = ds / (k d^{k-1}).
          return ring * std::sin(d) / (k * std::pow(d, k - 1.0));
        },
        lo, hi);
  }
  return rho * acc;
}

/// Blow-up diagnostics of a normalized state.
inline BlowupDiagnostics diagnose(const MinimizerState& state, const MTFunctional& f, double profile_radius = 5.0,
                                  double farfield_radius = 0.5) {
  const SingularWeight& w = f.weight();
  const auto& grid = *f.grid();
  const auto u_at = state.evaluator();
  BlowupDiagnostics d;
  const double alpha = w.alpha();

  // lambda over quadrature nodes and the singular points.
  const auto& q = f.quadrature();
  const auto u = EnrichedFunctional(f, state.basis).node_values(state.field());
  std::size_t arg = std::max_element(u.begin(), u.end()) - u.begin();
  d.lambda = u[arg];
  d.p_eps = q.nodes()[arg];
  for (const auto& p : w.points()) {
    const double v = u_at.value(p.position);
    if (v > d.lambda) d.lambda = v, d.p_eps = p.position;
  }

  // Center: nearest minimal-order point when alpha < 0, else p_eps.
  d.center = d.p_eps;
  if (alpha < 0.0) {
    double best = INFINITY;
    for (std::size_t i : minimal_order_points(w)) {
      const double dist = geodesic_distance(w.points()[i].position, d.p_eps);
      if (dist < best) best = dist, d.center = w.points()[i].position;
    }
    d.alpha_center = alpha;
  }
  d.t = std::exp(-d.lambda / (2.0 * (1.0 + alpha)));
  d.mean = state.coefficients.mean();
  d.mean_decay = d.t * d.t * d.mean;
  d.compact = d.t >= 0.5;
  d.under_resolved = d.t < 4.0 * grid.resolution();

  d.cap_mass_10t = cap_mass(u_at, w, f.rho(), d.center, 10.0 * d.t);
  d.cap_mass_half = cap_mass(u_at, w, f.rho(), d.center, 0.5);

  // Rescaled profile u(t x) - lambda against the planar bubble.
  const auto idx = w.find(d.center);
  double c_p = 0.0;
  if (idx || alpha == 0.0) {
    c_p = bubble_constant(w, d.center);
  } else {
    c_p = std::exp(w.log_weight(d.center));
  }
  const int n_rad = 25, n_ang = 16;
  for (int i = 1; i <= n_rad; ++i) {
    const double rho_x = profile_radius * i / n_rad;
    const double r = std::min(rho_x * d.t, std::numbers::pi);
    const auto vals = u_at.ring(d.center, r, n_ang);
    const double phi0 = planar_bubble(rho_x, c_p, alpha);
    for (double v : vals) d.profile_error = std::max(d.profile_error, std::abs(v - d.lambda - phi0));
  }
  d.profile_error = std::max(d.profile_error, std::abs(u_at.value(d.center) - d.lambda));

  // Far field: (u - mean) against rho_bar G_center on grid nodes.
  const double rho_bar = w.rho_bar();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const SpherePoint& x = grid.nodes()[i];
    if (geodesic_distance(x, d.center) < farfield_radius) continue;
    d.farfield_error = std::max(d.farfield_error, std::abs(state.u.values()[i] - d.mean - rho_bar * green(d.center, x)));
  }

  // ||grad u||_{L^1.5}, reported only, on a grid of band at most 48.
  const auto coarse = grid_for_band_limit(std::min(grid.band_limit(), 48), grid.axis());
  double acc = 0.0;
  for (std::size_t i = 0; i < coarse->size(); ++i)
    acc += coarse->weights()[i] * std::pow(norm(u_at.gradient(coarse->nodes()[i])), 1.5);
  d.grad_l15 = std::pow(acc, 1.0 / 1.5);
  return d;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepEntry {
  double epsilon = 0.0;
  MinimizerState state;
  BlowupDiagnostics diagnostics;
};

struct RichardsonFit {
  double limit = 0.0;  // J*
  double a = 0.0;      // eps log eps coefficient
  double b = 0.0;      // eps coefficient
};

/// Least-squares fit J = J* + a eps log eps + b eps; with fewer than three
/// points the eps log eps term is dropped.
inline RichardsonFit richardson_fit(const std::vector<double>& eps, const std::vector<double>& J) {
  if (eps.size() != J.size() || eps.size() < 2) throw std::invalid_argument("richardson_fit: need at least two points");
  const int n = eps.size() >= 3 ? 3 : 2;
  std::vector<std::vector<double>> A(n, std::vector<double>(n + 1, 0.0));
  for (std::size_t i = 0; i < eps.size(); ++i) {
    std::vector<double> row{1.0, eps[i]};
    if (n == 3) row.push_back(eps[i] * std::log(eps[i]));
    for (int r = 0; r < n; ++r) {
      for (int s = 0; s < n; ++s) A[r][s] += row[r] * row[s];
      A[r][n] += row[r] * J[i];
    }
  }
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r)
      if (std::abs(A[r][col]) > std::abs(A[piv][col])) piv = r;
    std::swap(A[col], A[piv]);
    for (int r = 0; r < n; ++r) {
      if (r == col) continue;
      const double m = A[r][col] / A[col][col];
      for (int s = col; s <= n; ++s) A[r][s] -= m * A[col][s];
    }
  }
  RichardsonFit fit;
  fit.limit = A[0][n] / A[0][0];
  fit.b = A[1][n] / A[1][1];
  if (n == 3) fit.a = A[2][n] / A[2][2];
  return fit;
}

struct SweepReport {
  std::vector<SweepEntry> entries;
  RichardsonFit fit;
  SharpConstantReport target;  // inf J_{rho_bar} = -rho_bar C
  bool all_converged = true;
  bool lambda_increasing = true;
  bool mean_decay_decreasing = true;
  bool profile_error_decreasing = true;  // within 0.02
  bool cap_mass_monotone = true;         // cap_mass(10t)/rho_bar -> 1, within 0.02
};

using SweepSink = std::function<void(const SweepEntry&)>;

/// Minimizes J_{rho_bar - eps} along the schedule with warm starts.
inline SweepReport epsilon_sweep(const GridPtr& grid, const SingularWeight& w, const SolverConfig& cfg,
                                 const SingularCapRule& rule = {}, const TraceSink& trace = {},
                                 const SweepSink& on_entry = {}) {
  cfg.validate(w.rho_bar());
  auto quad = std::make_shared<const SingularQuadrature>(grid, w, rule);
  const MTFunctional base(quad, FunctionalParams{w.rho_bar(), w, rule});
  const auto basis = enrichment_for(base, cfg);
  SweepReport rep;
  FieldState warm;
  std::vector<double> eps, J;
  for (std::size_t i = 0; i < cfg.schedule.size(); ++i) {
    const double e = cfg.schedule[i];
    const MTFunctional f(quad, FunctionalParams{w.rho_bar() - e, w, rule});
    const FieldState init = i == 0 ? FieldState{initial_coefficients(f, cfg), {}} : warm;
    SweepEntry entry;
    entry.epsilon = e;
    entry.state = minimize(EnrichedFunctional(f, basis), cfg, init, trace);
    entry.diagnostics = diagnose(entry.state, f);
    warm = entry.state.field();
    rep.all_converged = rep.all_converged && entry.state.converged;
    if (!rep.entries.empty()) {
      const auto& prev = rep.entries.back().diagnostics;
      const auto& cur = entry.diagnostics;
      rep.lambda_increasing = rep.lambda_increasing && cur.lambda > prev.lambda;
      rep.mean_decay_decreasing = rep.mean_decay_decreasing && std::abs(cur.mean_decay) < std::abs(prev.mean_decay);
      rep.profile_error_decreasing = rep.profile_error_decreasing && cur.profile_error < prev.profile_error + 0.02;
      const double rb = w.rho_bar();
      rep.cap_mass_monotone = rep.cap_mass_monotone &&
                              std::abs(cur.cap_mass_10t / rb - 1.0) < std::abs(prev.cap_mass_10t / rb - 1.0) + 0.02;
    }
    if (on_entry) on_entry(entry);
    eps.push_back(e);
    J.push_back(entry.state.J);
    rep.entries.push_back(std::move(entry));
  }
  if (eps.size() >= 2) rep.fit = richardson_fit(eps, J);
  else rep.fit.limit = J.front();
  rep.target = theorem1_value(w, grid);
  return rep;
}

struct GradientFit {
  double slope = 0.0;
  double bound = 0.0;  // min(2 alpha_i + 1, 0)
  double d_min = 0.0, d_max = 0.0;
  int samples = 0;
};

/// Least-squares slope of log |grad u| against log d(x, p) over
/// d in [cells * pi / L, d_max].
inline GradientFit gradient_singularity_exponent(const MinimizerState& state, const SingularWeight& w,
                                                 const SpherePoint& p, double cells = 5.0, double d_max = 0.1) {
  const auto idx = w.find(p);
  if (!idx) throw std::invalid_argument("gradient_singularity_exponent: p is not a singular point");
  const double a = w.points()[*idx].order;
  if (!(a < 0.0)) throw std::invalid_argument("gradient_singularity_exponent: the order at p must be negative");
  const auto& grid = *state.u.grid();
  const auto u_at = state.evaluator();
  GradientFit fit;
  fit.bound = std::min(2.0 * a + 1.0, 0.0);
  fit.d_min = cells * grid.resolution();
  fit.d_max = d_max;
  if (!(fit.d_min < d_max))
    throw std::invalid_argument("gradient_singularity_exponent: no nodes in the fit annulus (band limit " +
                                std::to_string(grid.band_limit()) + " too low)");
  const int n_rad = 12, n_ang = 8;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int i = 0; i < n_rad; ++i) {
    const double d = fit.d_min * std::pow(d_max / fit.d_min, i / double(n_rad - 1));
    for (int k = 0; k < n_ang; ++k) {
      const SpherePoint x = detail::on_ring(p, d, 2.0 * std::numbers::pi * (k + 0.5) / n_ang);
      const double g = norm(u_at.gradient(x));
      const double lx = std::log(d), ly = std::log(g);
      sx += lx, sy += ly, sxx += lx * lx, sxy += lx * ly;
      ++fit.samples;
    }
  }
  const double n = fit.samples;
  fit.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  return fit;
}

}  // namespace sol
