#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "sol/closed_forms.hpp"
#include "sol/identity_checks.hpp"
#include "sol/lab/config.hpp"
#include "sol/mt_functional.hpp"
#include "sol/parallel.hpp"
#include "sol/subcritical_solver.hpp"

namespace sol::lab {

// ---------------------------------------------------------------------------
// Logging

enum class LogLevel { quiet = 0, info = 1, debug = 2 };

/// SOL_LAB_LOG: quiet|info|debug or 0|1|2; default info.
inline LogLevel log_level_from_env() {
  const char* v = std::getenv("SOL_LAB_LOG");
  if (!v) return LogLevel::info;
  const std::string s(v);
  if (s == "quiet" || s == "0") return LogLevel::quiet;
  if (s == "debug" || s == "2") return LogLevel::debug;
  return LogLevel::info;
}

class Logger {
 public:
  explicit Logger(LogLevel level = LogLevel::quiet, std::ostream* out = &std::cerr) : level_(level), out_(out) {}
  bool enabled(LogLevel l) const { return out_ && level_ >= l; }
  void info(const std::string& s) const { write(LogLevel::info, s); }
  void debug(const std::string& s) const { write(LogLevel::debug, s); }

 private:
  void write(LogLevel l, const std::string& s) const {
    if (enabled(l)) *out_ << "[sol_lab] " << s << '\n';
  }
  LogLevel level_;
  std::ostream* out_;
};

// ---------------------------------------------------------------------------
// Report

/// Fixed column order; values print with 17 significant digits.
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  void add(std::vector<double> row) {
    if (row.size() != columns.size()) throw std::logic_error("CsvTable: row width does not match the header");
    rows.push_back(std::move(row));
  }

  std::string str() const {
    std::string out;
    for (std::size_t i = 0; i < columns.size(); ++i) out += (i ? "," : "") + columns[i];
    out += '\n';
    char buf[40];
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", r[i]);
        out += (i ? "," : "");
        out += buf;
      }
      out += '\n';
    }
    return out;
  }
};

struct Check {
  std::string name;
  double value = 0.0;
  std::optional<double> tolerance;
  bool pass = false;
};

enum class Status { pass = 0, tolerance_failure = 1, config_error = 2, numerical_failure = 3 };

inline std::string to_string(Status s) {
  switch (s) {
    case Status::pass: return "pass";
    case Status::tolerance_failure: return "tolerance-failure";
    case Status::config_error: return "config-error";
    case Status::numerical_failure: return "numerical-failure";
  }
  return "unknown";
}

struct RunReport {
  ExperimentConfig config;
  int threads = 1;
  json records = json::array();
  json summary = json::object();
  std::vector<Check> checks;
  bool numerical_failure = false;
  std::string failure;  // reason for a numerical failure
  double wall_seconds = 0.0;
  std::vector<std::pair<std::string, CsvTable>> csv;

  void check(std::string name, double value, double tol, bool pass) { checks.push_back({std::move(name), value, tol, pass}); }
  void check(std::string name, bool pass) { checks.push_back({std::move(name), pass ? 1.0 : 0.0, std::nullopt, pass}); }

  void fail_numerically(const std::string& why) {
    numerical_failure = true;
    if (failure.empty()) failure = why;
  }

  Status status() const {
    if (numerical_failure) return Status::numerical_failure;
    for (const auto& c : checks)
      if (!c.pass) return Status::tolerance_failure;
    return Status::pass;
  }
  int exit_code() const { return static_cast<int>(status()); }

  /// Everything except `timing` is a function of (config, seed, threads = 1).
  json to_json(bool with_timing = true) const {
    json j;
    j["schema_version"] = kSchemaVersion;
    j["kind"] = lab::to_string(config.kind);
    j["config"] = lab::to_json(config);
    j["threads"] = threads;
    j["records"] = records;
    j["summary"] = summary;
    json cs = json::array();
    for (const auto& c : checks) {
      json cj{{"name", c.name}, {"value", c.value}, {"pass", c.pass}};
      cj["tolerance"] = c.tolerance ? json(*c.tolerance) : json(nullptr);
      cs.push_back(cj);
    }
    j["checks"] = cs;
    j["status"] = lab::to_string(status());
    if (!failure.empty()) j["failure"] = failure;
    j["exit_code"] = exit_code();
    if (with_timing) j["timing"] = {{"wall_seconds", wall_seconds}};
    return j;
  }
};

/// A domain or numerical error raised while running, with experiment context.
class ExperimentError : public std::runtime_error {
 public:
  ExperimentError(const std::string& what, Status status) : std::runtime_error(what), status_(status) {}
  Status status() const { return status_; }
  int exit_code() const { return static_cast<int>(status_); }

 private:
  Status status_;
};

namespace detail {

inline json point_json(const SpherePoint& p) { return json::array({p[0], p[1], p[2]}); }

inline json state_json(const MinimizerState& s) {
  return {{"epsilon", s.epsilon},     {"rho", s.rho},
          {"J", s.J},                 {"residual", s.residual},
          {"iterations", s.iterations}, {"converged", s.converged},
          {"overflow", s.overflow},   {"status", s.status},
          {"normalization_error", s.normalization_error}};
}

inline json diagnostics_json(const BlowupDiagnostics& d) {
  return {{"lambda", d.lambda},
          {"p_eps", point_json(d.p_eps)},
          {"center", point_json(d.center)},
          {"alpha_center", d.alpha_center},
          {"t", d.t},
          {"mean", d.mean},
          {"mean_decay", d.mean_decay},
          {"cap_mass_10t", d.cap_mass_10t},
          {"cap_mass_half", d.cap_mass_half},
          {"profile_error", d.profile_error},
          {"farfield_error", d.farfield_error},
          {"grad_l15", d.grad_l15},
          {"compact", d.compact},
          {"under_resolved", d.under_resolved}};
}

inline json sharp_json(const SharpConstantReport& r) {
  json j{{"theorem", r.theorem}, {"branch", r.branch}, {"C", r.C}, {"inf_J", r.inf_J},
         {"alpha", r.alpha},     {"rho_bar", r.rho_bar}, {"attained", r.attained}, {"antipodal", r.antipodal}};
  if (r.maximizer) j["maximizer"] = point_json(*r.maximizer);
  return j;
}

inline CsvTable trace_table() { return {{"epsilon", "iteration", "J", "residual", "lambda", "step"}, {}}; }

struct Context {
  const ExperimentConfig& cfg;
  const Logger& log;
  RunReport& rep;
  GridPtr grid;
  SingularWeight w;
};

inline TraceSink trace_sink(Context& cx, CsvTable* table, double epsilon) {
  return [&cx, table, epsilon](const TraceRecord& t) {
    if (table) table->add({epsilon, double(t.iteration), t.J, t.residual, t.lambda, t.step});
    if (cx.log.enabled(LogLevel::debug))
      cx.log.debug("  it " + std::to_string(t.iteration) + " J " + std::to_string(t.J) + " res " +
                   std::to_string(t.residual));
  };
}

inline void note_state(Context& cx, const MinimizerState& s) {
  if (s.overflow) cx.rep.fail_numerically("overflow at epsilon " + std::to_string(s.epsilon));
  else if (!s.converged)
    cx.rep.fail_numerically("no convergence at epsilon " + std::to_string(s.epsilon) + ": " + s.status);
}

inline void run_constants(Context& cx) {
  const auto& pts = cx.cfg.points;
  const auto t1 = theorem1_value(cx.w, cx.grid);
  cx.rep.summary["theorem1"] = sharp_json(t1);
  std::optional<SharpConstantReport> closed;
  if (cx.cfg.K.empty() && pts.size() <= 2) {
    try {
      if (pts.size() == 1) {
        closed = sphere_sharp_constant(pts[0].order);
      } else {
        const double a1 = std::min(pts[0].order, pts[1].order), a2 = std::max(pts[0].order, pts[1].order);
        closed = sphere_sharp_constant(a1, a2, antipodal(pts[0], pts[1]));
      }
    } catch (const NoClosedForm&) {
    }
  }
  if (!closed) {
    cx.rep.summary["closed_form"] = nullptr;
    cx.log.info("no sharp closed form for this configuration; reporting the general value only");
    return;
  }
  cx.rep.summary["closed_form"] = sharp_json(*closed);
  const bool grid_branch = t1.branch == "grid-max";
  const double tol = cx.cfg.tolerance(grid_branch ? "grid_max" : "closed_form");
  const double err = std::abs(t1.C - closed->C);
  cx.rep.check(grid_branch ? "grid_max" : "closed_form", err, tol, err <= tol);
}

inline void run_verify_extremal(Context& cx) {
  const double a = cx.cfg.points[0].order;
  const SpherePoint axis(cx.cfg.points[0].position[0], cx.cfg.points[0].position[1], cx.cfg.points[0].position[2]);
  const MTFunctional f(cx.grid, FunctionalParams{cx.w.rho_bar(), cx.w});
  const double target = 8.0 * std::numbers::pi * (1.0 + a) * (std::log(1.0 + a) - a);
  std::vector<LambdaC> all{cx.cfg.extremal};
  all.insert(all.end(), cx.cfg.invariance.begin(), cx.cfg.invariance.end());
  std::vector<double> J;
  for (const auto& lc : all) {
    J.push_back(f.value(extremal_coefficients(ExtremalParams{lc.lambda, lc.c, a, axis}, cx.grid)).J);
    cx.rep.records.push_back({{"lambda", lc.lambda}, {"c", lc.c}, {"J", J.back()}});
    cx.log.info("lambda " + std::to_string(lc.lambda) + " c " + std::to_string(lc.c) + " J " + std::to_string(J.back()));
  }
  const double rel = std::abs(J[0] - target) / std::abs(target);
  cx.rep.summary["target"] = target;
  cx.rep.summary["J"] = J[0];
  cx.rep.summary["relative_error"] = rel;
  cx.rep.check("relative", rel, cx.cfg.tolerance("relative"), rel <= cx.cfg.tolerance("relative"));
  if (all.size() > 1) {
    double spread = 0.0;
    for (double v : J) spread = std::max(spread, std::abs(v - J[0]));
    cx.rep.summary["invariance_spread"] = spread;
    cx.rep.check("invariance", spread, cx.cfg.tolerance("invariance"), spread <= cx.cfg.tolerance("invariance"));
  }
}

/// Band-limited field with modes up to `lmax`, Dirichlet energy `h1` and a
/// random mean.
inline SHCoefficients random_field(int L, int lmax, double h1, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  SHCoefficients c(L);
  for (int l = 1; l <= std::min(L, lmax); ++l)
    for (int m = -l; m <= l; ++m) c(l, m) = g(rng) / (l * (l + 1.0));
  c *= h1 / std::sqrt(dirichlet_energy(c));
  c(0, 0) = g(rng);
  return c;
}

inline void run_inequality_sample(Context& cx) {
  const auto& cfg = cx.cfg;
  double C = 0.0;
  if (cfg.C) C = *cfg.C;
  else if (!cfg.points.empty()) C = theorem1_value(cx.w, cx.grid).C;
  cx.rep.summary["C"] = C;
  cx.rep.summary["m"] = cfg.points.size();
  const MTFunctional f(cx.grid, FunctionalParams{cx.w.rho_bar(), cx.w});
  std::mt19937_64 rng(cfg.seed);
  CsvTable table{{"sample", "h1", "gap"}, {}};
  double worst = std::numeric_limits<double>::infinity();
  for (int i = 0; i < cfg.samples; ++i) {
    const double h1 = cfg.samples == 1 ? cfg.h1_min : cfg.h1_min + (cfg.h1_max - cfg.h1_min) * i / (cfg.samples - 1);
    const double gap = troyanov_gap(f, random_field(cx.grid->band_limit(), cfg.lmax, h1, rng), C);
    worst = std::min(worst, gap);
    table.add({double(i), h1, gap});
    cx.rep.records.push_back({{"sample", i}, {"h1", h1}, {"gap", gap}});
  }
  cx.rep.summary["min_gap"] = worst;
  cx.log.info("min gap over " + std::to_string(cfg.samples) + " samples: " + std::to_string(worst));
  cx.rep.check("gap", worst, cfg.tolerance("gap"), worst >= -cfg.tolerance("gap"));
  if (!cfg.conformal.empty()) {
    double worst_eq = 0.0;
    json fam = json::array();
    const auto zero = ScalarField::constant(cx.grid, 0.0);
    for (double t : cfg.conformal) {
      const double gap = troyanov_gap(conformal_pullback(zero, t, 0.0, cx.grid->axis()), cx.w, 0.0);
      worst_eq = std::max(worst_eq, std::abs(gap));
      fam.push_back({{"t", t}, {"gap", gap}});
    }
    cx.rep.summary["conformal"] = fam;
    cx.rep.check("conformal", worst_eq, cfg.tolerance("conformal"), worst_eq <= cfg.tolerance("conformal"));
  }
  cx.rep.csv.emplace_back("samples", std::move(table));
}

inline void run_minimize(Context& cx) {
  const auto scfg = cx.cfg.solver_config();
  scfg.validate(cx.w.rho_bar());
  const MTFunctional f(cx.grid, FunctionalParams{cx.w.rho_bar() - cx.cfg.epsilon, cx.w});
  CsvTable trace = trace_table();
  const auto s = minimize(f, scfg, initial_coefficients(f, scfg), trace_sink(cx, &trace, cx.cfg.epsilon));
  note_state(cx, s);
  cx.rep.summary["state"] = state_json(s);
  cx.log.info("epsilon " + std::to_string(cx.cfg.epsilon) + ": " + s.status + " after " + std::to_string(s.iterations) +
              " iterations, J " + std::to_string(s.J));
  if (!s.overflow) {
    const auto d = diagnose(s, f);
    cx.rep.summary["diagnostics"] = diagnostics_json(d);
    cx.rep.check("normalization", s.normalization_error, cx.cfg.tolerance("normalization"),
                 s.normalization_error <= cx.cfg.tolerance("normalization"));
  }
  cx.rep.csv.emplace_back("trace", std::move(trace));
}

inline SweepReport sweep(Context& cx, CsvTable& trace) {
  const auto scfg = cx.cfg.solver_config();
  std::size_t step = 0;
  TraceSink sink = [&](const TraceRecord& t) { trace_sink(cx, &trace, cx.cfg.schedule[step])(t); };
  const auto rep = epsilon_sweep(cx.grid, cx.w, scfg, {}, sink, [&](const SweepEntry& e) {
    cx.log.info("epsilon " + std::to_string(e.epsilon) + ": " + e.state.status + " after " +
                std::to_string(e.state.iterations) + " iterations, J " + std::to_string(e.state.J) + ", lambda " +
                std::to_string(e.diagnostics.lambda));
    ++step;
  });
  for (const auto& e : rep.entries) {
    note_state(cx, e.state);
    cx.rep.records.push_back({{"epsilon", e.epsilon}, {"state", state_json(e.state)}, {"diagnostics", diagnostics_json(e.diagnostics)}});
  }
  CsvTable table{{"epsilon", "J", "lambda", "t", "mean_decay", "cap_mass_10t", "cap_mass_half", "profile_error",
                  "farfield_error", "iterations", "residual"},
                 {}};
  for (const auto& e : rep.entries) {
    const auto& d = e.diagnostics;
    table.add({e.epsilon, e.state.J, d.lambda, d.t, d.mean_decay, d.cap_mass_10t, d.cap_mass_half, d.profile_error,
               d.farfield_error, double(e.state.iterations), e.state.residual});
  }
  cx.rep.csv.emplace_back("entries", std::move(table));
  return rep;
}

inline void run_sweep(Context& cx) {
  CsvTable trace = trace_table();
  const auto rep = sweep(cx, trace);
  const double rb = cx.w.rho_bar();
  const double target = rep.target.inf_J;
  const double rel = std::abs(rep.fit.limit - target) / std::abs(target);
  const double cap = rep.entries.back().diagnostics.cap_mass_10t / rb;
  cx.rep.summary["target"] = sharp_json(rep.target);
  cx.rep.summary["fit"] = {{"limit", rep.fit.limit}, {"eps_log_eps", rep.fit.a}, {"eps", rep.fit.b}};
  cx.rep.summary["limit_relative_error"] = rel;
  cx.rep.summary["final_cap_mass_ratio"] = cap;
  cx.rep.check("lambda_increasing", rep.lambda_increasing);
  cx.rep.check("mean_decay_decreasing", rep.mean_decay_decreasing);
  cx.rep.check("cap_mass", std::abs(cap - 1.0), cx.cfg.tolerance("cap_mass"), std::abs(cap - 1.0) <= cx.cfg.tolerance("cap_mass"));
  cx.rep.check("limit", rel, cx.cfg.tolerance("limit"), rel <= cx.cfg.tolerance("limit"));
  cx.rep.csv.emplace_back("trace", std::move(trace));
}

inline void run_profile_collapse(Context& cx) {
  CsvTable trace = trace_table();
  const auto rep = sweep(cx, trace);
  const double noise = cx.cfg.tolerance("noise");
  const double alpha = cx.w.alpha();
  CsvTable radial{{"epsilon", "R", "rescaled_u", "bubble"}, {}};
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < rep.entries.size(); ++i) {
    const auto& e = rep.entries[i];
    const auto& d = e.diagnostics;
    if (i > 0) worst = std::max(worst, d.profile_error - rep.entries[i - 1].diagnostics.profile_error);
    const auto idx = cx.w.find(d.center);
    const double c_p = idx || alpha == 0.0 ? bubble_constant(cx.w, d.center) : std::exp(cx.w.log_weight(d.center));
    const auto u_at = e.state.evaluator();
    const int n_rad = 50, n_ang = 16;
    for (int k = 0; k <= n_rad; ++k) {
      const double R = cx.cfg.profile_radius * k / n_rad;
      const auto vals = u_at.ring(d.center, std::min(R * d.t, std::numbers::pi), n_ang);
      double mean = 0.0;
      for (double v : vals) mean += v;
      mean /= vals.size();
      radial.add({e.epsilon, R, mean - d.lambda, planar_bubble(R, c_p, alpha)});
    }
  }
  cx.rep.summary["max_profile_increase"] = rep.entries.size() > 1 ? json(worst) : json(nullptr);
  cx.rep.summary["final_profile_error"] = rep.entries.back().diagnostics.profile_error;
  if (rep.entries.size() > 1) cx.rep.check("profile_monotone", worst, noise, worst < noise);
  cx.rep.csv.emplace_back("profile", std::move(radial));
  cx.rep.csv.emplace_back("trace", std::move(trace));
}

inline json kw_json(const KazdanWarnerReport& r) {
  return {{"moment", r.moment}, {"prefactor", r.prefactor}, {"lhs", r.lhs}, {"rhs", r.rhs},
          {"residual", r.residual}, {"vector_residual", r.vector_residual}};
}

inline void run_kw_check(Context& cx) {
  const double tol = cx.cfg.tolerance("residual");
  KazdanWarnerReport kw;
  if (cx.cfg.source == "extremal") {
    const auto& p = cx.cfg.points[0];
    const MTFunctional f(cx.grid, FunctionalParams{cx.w.rho_bar(), cx.w});
    const ExtremalParams ep{cx.cfg.extremal.lambda, cx.cfg.extremal.c, p.order,
                            SpherePoint(p.position[0], p.position[1], p.position[2])};
    kw = kazdan_warner_residual(f, extremal_coefficients(ep, cx.grid));
    cx.rep.check("lhs", std::abs(kw.lhs), tol, std::abs(kw.lhs) <= tol);
    cx.rep.check("rhs", std::abs(kw.rhs), tol, std::abs(kw.rhs) <= tol);
  } else {
    const auto scfg = cx.cfg.solver_config();
    scfg.validate(cx.w.rho_bar());
    const MTFunctional f(cx.grid, FunctionalParams{cx.w.rho_bar() - cx.cfg.epsilon, cx.w});
    CsvTable trace = trace_table();
    const auto s = minimize(f, scfg, initial_coefficients(f, scfg), trace_sink(cx, &trace, cx.cfg.epsilon));
    note_state(cx, s);
    cx.rep.summary["state"] = state_json(s);
    cx.rep.csv.emplace_back("trace", std::move(trace));
    if (s.overflow) return;
    kw = kazdan_warner_residual(f, s);
  }
  cx.rep.summary["kazdan_warner"] = kw_json(kw);
  cx.log.info("Kazdan-Warner residual " + std::to_string(kw.residual));
  cx.rep.check("residual", std::abs(kw.residual), tol, std::abs(kw.residual) <= tol);
  try {
    const auto nw = nonexistence_witness(cx.w);
    cx.rep.summary["nonexistence"] = {
        {"forced_moment", nw.forced_moment}, {"margin", nw.margin}, {"certified", nw.certified}, {"message", nw.message}};
  } catch (const std::invalid_argument&) {
    cx.rep.summary["nonexistence"] = nullptr;
  }
}

inline void run_test_function_sweep(Context& cx) {
  const auto& cfg = cx.cfg;
  const auto minimal = minimal_order_points(cx.w);
  if (!cfg.center && minimal.empty())
    throw std::invalid_argument("no negative-order point to center at; set params.center explicitly");
  const std::size_t ci = cfg.center ? std::size_t(*cfg.center) : minimal.front();
  const SpherePoint p = cx.w.points()[ci].position;
  const auto t1 = theorem1_value(cx.w, cx.grid);
  const double target = t1.inf_J;
  CsvTable table{{"epsilon", "J", "dirichlet", "mean", "exp_integral", "limit_exp_integral", "matching_gap"}, {}};
  std::vector<TestFunctionEnergy> E;
  for (double eps : cfg.schedule) {
    E.push_back(test_function_energy(TestFunctionParams{eps, p, cx.w, cfg.gamma()}));
    const auto& e = E.back();
    if (!std::isfinite(e.J)) cx.rep.fail_numerically("non-finite energy at epsilon " + std::to_string(eps));
    table.add({eps, e.J, e.dirichlet, e.mean, e.exp_integral, e.limit_exp_integral, e.matching_gap});
    cx.rep.records.push_back({{"epsilon", eps}, {"J", e.J}, {"dirichlet", e.dirichlet}, {"mean", e.mean},
                              {"exp_integral", e.exp_integral}, {"limit_exp_integral", e.limit_exp_integral},
                              {"matching_gap", e.matching_gap}});
    cx.log.info("epsilon " + std::to_string(eps) + ": J " + std::to_string(e.J));
  }
  bool decreasing = true;
  for (std::size_t i = 1; i < E.size(); ++i) decreasing = decreasing && E[i].J < E[i - 1].J;
  const auto& last = E.back();
  const double excess = (last.J - target) / std::abs(target);
  const double mass = std::abs(last.exp_integral / last.limit_exp_integral - 1.0);
  cx.rep.summary["target"] = sharp_json(t1);
  cx.rep.summary["final_excess"] = excess;
  cx.rep.summary["final_exp_integral_error"] = mass;
  if (E.size() > 1) cx.rep.check("decreasing", decreasing);
  cx.rep.check("from_above", last.J > target);
  cx.rep.check("target", excess, cfg.tolerance("target"), excess < cfg.tolerance("target"));
  cx.rep.check("exp_integral", mass, cfg.tolerance("exp_integral"), mass <= cfg.tolerance("exp_integral"));
  cx.rep.csv.emplace_back("energies", std::move(table));
}

}  // namespace detail

/// Runs one experiment. Numerical trouble inside the solver is recorded in
/// the report; domain errors are rethrown as ExperimentError.
inline RunReport run(const ExperimentConfig& cfg, const Logger& log = Logger{}) {
  RunReport rep;
  rep.config = cfg;
  rep.threads = thread_count();
  const auto t0 = std::chrono::steady_clock::now();
  const std::string ctx = lab::to_string(cfg.kind) + ": ";
  try {
    detail::Context cx{cfg, log, rep, cfg.grid(), cfg.weight()};
    log.info(lab::to_string(cfg.kind) + " on a " + std::to_string(cfg.n_theta) + " x " + std::to_string(cfg.n_phi) +
             " grid (band limit " + std::to_string(cfg.band_limit()) + ")");
    switch (cfg.kind) {
      case Kind::constants: detail::run_constants(cx); break;
      case Kind::verify_extremal: detail::run_verify_extremal(cx); break;
      case Kind::inequality_sample: detail::run_inequality_sample(cx); break;
      case Kind::minimize: detail::run_minimize(cx); break;
      case Kind::sweep: detail::run_sweep(cx); break;
      case Kind::kw_check: detail::run_kw_check(cx); break;
      case Kind::profile_collapse: detail::run_profile_collapse(cx); break;
      case Kind::test_function_sweep: detail::run_test_function_sweep(cx); break;
    }
  } catch (const OverflowError& e) {
    throw ExperimentError(ctx + e.what(), Status::numerical_failure);
  } catch (const std::invalid_argument& e) {
    throw ExperimentError(ctx + e.what(), Status::config_error);
  } catch (const std::domain_error& e) {
    throw ExperimentError(ctx + e.what(), Status::config_error);
  } catch (const ExperimentError&) {
    throw;
  } catch (const std::exception& e) {
    throw ExperimentError(ctx + e.what(), Status::numerical_failure);
  }
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

/// Path of a CSV trace next to the report: out/x.json -> out/x.<name>.csv.
inline std::filesystem::path csv_path(const std::filesystem::path& report, const std::string& name) {
  auto p = report;
  p.replace_extension();
  p += "." + name + ".csv";
  return p;
}

/// Writes the JSON report and, if enabled, the CSV traces. Returns every
/// path written.
inline std::vector<std::filesystem::path> write_outputs(const RunReport& rep, const std::filesystem::path& report) {
  std::vector<std::filesystem::path> out;
  if (report.has_parent_path()) std::filesystem::create_directories(report.parent_path());
  auto write = [&](const std::filesystem::path& p, const std::string& body) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + p.string());
    f << body;
    out.push_back(p);
  };
  write(report, rep.to_json().dump(2) + "\n");
  if (rep.config.csv)
    for (const auto& [name, table] : rep.csv) write(csv_path(report, name), table.str());
  return out;
}

}  // namespace sol::lab
