#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sol/closed_forms.hpp"
#include "sol/singular_geometry.hpp"
#include "sol/subcritical_solver.hpp"

namespace sol::lab {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

enum class Kind {
  constants,
  verify_extremal,
  inequality_sample,
  minimize,
  sweep,
  kw_check,
  profile_collapse,
  test_function_sweep,
};

inline const std::vector<std::pair<Kind, std::string>>& kind_names() {
  static const std::vector<std::pair<Kind, std::string>> names{
      {Kind::constants, "constants"},
      {Kind::verify_extremal, "verify-extremal"},
      {Kind::inequality_sample, "inequality-sample"},
      {Kind::minimize, "minimize"},
      {Kind::sweep, "sweep"},
      {Kind::kw_check, "kw-check"},
      {Kind::profile_collapse, "profile-collapse"},
      {Kind::test_function_sweep, "test-function-sweep"},
  };
  return names;
}

inline std::string to_string(Kind k) {
  for (const auto& [kind, name] : kind_names())
    if (kind == k) return name;
  throw std::logic_error("unknown experiment kind");
}

inline std::optional<Kind> parse_kind(std::string_view s) {
  for (const auto& [kind, name] : kind_names())
    if (name == s) return kind;
  return std::nullopt;
}

struct PointSpec {
  std::array<double, 3> position{0.0, 0.0, 1.0};
  double order = 0.0;
  bool operator==(const PointSpec&) const = default;
};

struct KTerm {
  int l = 0;
  int m = 0;
  double value = 0.0;
  bool operator==(const KTerm&) const = default;
};

struct LambdaC {
  double lambda = 1.0;
  double c = 0.0;
  bool operator==(const LambdaC&) const = default;
};

struct SolverSpec {
  std::string method = "lbfgs";
  int max_iterations = 4000;
  double damping = 0.5;
  std::optional<double> tolerance;
  std::string init = "test_function";
  double init_epsilon = 0.01;
  int memory = 8;
  int enrichment_terms = 3;
  bool operator==(const SolverSpec&) const = default;
};

/// Validated experiment description. Fields a kind does not use stay at
/// their defaults.
struct ExperimentConfig {
  Kind kind = Kind::constants;
  int n_theta = 65;
  int n_phi = 130;
  std::vector<PointSpec> points;
  std::vector<KTerm> K;  // empty: K = 1
  std::uint64_t seed = 1;
  std::string report = "report.json";
  bool csv = true;

  // verify-extremal, kw-check (extremal source)
  LambdaC extremal;
  std::vector<LambdaC> invariance;
  // inequality-sample
  int samples = 20;
  int lmax = 12;
  double h1_min = 0.5;
  double h1_max = 5.0;
  std::optional<double> C;
  std::vector<double> conformal;
  // minimize, kw-check (subcritical source)
  double epsilon = 0.1;
  std::string source = "subcritical";
  // sweep, profile-collapse, test-function-sweep
  std::vector<double> schedule;
  double profile_radius = 5.0;
  std::string gamma_schedule = "power";
  std::optional<int> center;

  SolverSpec solver;
  std::map<std::string, double> tolerances;

  bool operator==(const ExperimentConfig&) const = default;

  int band_limit() const { return std::min(n_theta - 1, (n_phi - 1) / 2); }

  SingularWeight weight() const {
    std::vector<SingularPoint> pts;
    for (const auto& p : points) pts.push_back({SpherePoint(p.position[0], p.position[1], p.position[2]), p.order});
    if (K.empty()) return SingularWeight(std::move(pts));
    int L = 0;
    for (const auto& t : K) L = std::max(L, t.l);
    SHCoefficients k(L);
    for (const auto& t : K) k(t.l, t.m) = t.value;
    return SingularWeight(std::move(pts), std::move(k));
  }

  GridPtr grid() const { return build_grid(n_theta, n_phi); }

  SolverConfig solver_config() const {
    SolverConfig s;
    s.method = solver.method == "fixed_point" ? SolverMethod::fixed_point : SolverMethod::lbfgs;
    s.max_iterations = solver.max_iterations;
    s.damping = solver.damping;
    s.tolerance = solver.tolerance;
    s.init = solver.init == "zero" ? InitialField::zero : InitialField::test_function;
    s.init_epsilon = solver.init_epsilon;
    s.memory = solver.memory;
    s.enrichment_terms = solver.enrichment_terms;
    if (!schedule.empty()) s.schedule = schedule;
    return s;
  }

  GammaSchedule gamma() const { return gamma_schedule == "log" ? GammaSchedule::log : GammaSchedule::power; }

  double tolerance(const std::string& name) const { return tolerances.at(name); }
};

// ---------------------------------------------------------------------------
// Errors

struct ConfigIssue {
  int line = 0;  // 0 when unknown
  std::string pointer;
  std::string message;
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<ConfigIssue> issues) : std::runtime_error(format(issues)), issues_(std::move(issues)) {}
  const std::vector<ConfigIssue>& issues() const { return issues_; }

 private:
  static std::string format(const std::vector<ConfigIssue>& issues) {
    std::string out = std::to_string(issues.size()) + (issues.size() == 1 ? " config error" : " config errors");
    for (const auto& i : issues) {
      out += "\n  ";
      if (i.line > 0) out += "line " + std::to_string(i.line) + ": ";
      if (!i.pointer.empty()) out += i.pointer + ": ";
      out += i.message;
    }
    return out;
  }
  std::vector<ConfigIssue> issues_;
};

namespace detail {

/// Line of the first character of every value in `text`, keyed by JSON
/// pointer. Assumes `text` is valid JSON.
class LineIndex {
 public:
  explicit LineIndex(std::string_view text) : s_(text) {
    skip();
    if (i_ < s_.size()) value("");
  }

  int line_of(std::string pointer) const {
    for (;;) {
      if (auto it = lines_.find(pointer); it != lines_.end()) return it->second;
      if (pointer.empty()) return 0;
      pointer.erase(pointer.rfind('/'));
    }
  }

 private:
  void skip() {
    while (i_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[i_]))) {
      if (s_[i_] == '\n') ++line_;
      ++i_;
    }
  }
  std::string string() {
    std::string out;
    ++i_;
    while (i_ < s_.size() && s_[i_] != '"') {
      if (s_[i_] == '\\') out += s_[i_++];
      out += s_[i_++];
    }
    ++i_;
    return out;
  }
  static std::string escape(const std::string& key) {
    std::string out;
    for (char c : key) {
      if (c == '~') out += "~0";
      else if (c == '/') out += "~1";
      else out += c;
    }
    return out;
  }
  void value(const std::string& ptr) {
    lines_[ptr] = line_;
    const char c = s_[i_];
    if (c == '{') {
      ++i_;
      for (skip(); s_[i_] != '}'; skip()) {
        if (s_[i_] == ',') {
          ++i_;
          continue;
        }
        const std::string key = string();
        skip();
        ++i_;  // ':'
        skip();
        value(ptr + "/" + escape(key));
      }
      ++i_;
    } else if (c == '[') {
      ++i_;
      int idx = 0;
      for (skip(); s_[i_] != ']'; skip()) {
        if (s_[i_] == ',') {
          ++i_;
          continue;
        }
        value(ptr + "/" + std::to_string(idx++));
      }
      ++i_;
    } else if (c == '"') {
      string();
    } else {
      while (i_ < s_.size() && !std::isspace(static_cast<unsigned char>(s_[i_])) && s_[i_] != ',' && s_[i_] != '}' &&
             s_[i_] != ']')
        ++i_;
    }
  }

  std::string_view s_;
  std::size_t i_ = 0;
  int line_ = 1;
  std::map<std::string, int> lines_;
};

class Reader {
 public:
  Reader(const LineIndex& lines, std::vector<ConfigIssue>& issues) : lines_(lines), issues_(issues) {}

  void error(const std::string& ptr, const std::string& msg) { issues_.push_back({lines_.line_of(ptr), ptr, msg}); }

  /// Reports keys of `obj` outside `allowed`.
  void only(const json& obj, const std::string& ptr, std::initializer_list<std::string_view> allowed) {
    for (const auto& [key, _] : obj.items()) {
      bool ok = false;
      for (auto a : allowed) ok = ok || a == key;
      if (ok) continue;
      std::string list;
      for (auto a : allowed) list += (list.empty() ? "" : ", ") + std::string(a);
      error(ptr + "/" + key, "unknown key '" + key + "'" + (list.empty() ? "" : " (allowed: " + list + ")"));
    }
  }

  const json* object(const json& parent, const std::string& ptr, const char* key, bool required) {
    const json* v = find(parent, ptr, key, required);
    if (v && !v->is_object()) {
      error(ptr + "/" + key, "must be an object");
      return nullptr;
    }
    return v;
  }

  const json* array(const json& parent, const std::string& ptr, const char* key, bool required) {
    const json* v = find(parent, ptr, key, required);
    if (v && !v->is_array()) {
      error(ptr + "/" + key, "must be an array");
      return nullptr;
    }
    return v;
  }

  std::optional<double> number(const json& parent, const std::string& ptr, const char* key, bool required = false) {
    const json* v = find(parent, ptr, key, required);
    if (!v) return std::nullopt;
    return as_number(*v, ptr + "/" + key);
  }

  std::optional<double> as_number(const json& v, const std::string& ptr) {
    if (!v.is_number()) {
      error(ptr, "must be a number");
      return std::nullopt;
    }
    const double x = v.get<double>();
    if (!std::isfinite(x)) {
      error(ptr, "must be finite");
      return std::nullopt;
    }
    return x;
  }

  std::optional<long long> integer(const json& parent, const std::string& ptr, const char* key, bool required = false) {
    const json* v = find(parent, ptr, key, required);
    if (!v) return std::nullopt;
    if (!v->is_number_integer()) {
      error(ptr + "/" + key, "must be an integer");
      return std::nullopt;
    }
    return v->get<long long>();
  }

  std::optional<std::string> text(const json& parent, const std::string& ptr, const char* key, bool required = false) {
    const json* v = find(parent, ptr, key, required);
    if (!v) return std::nullopt;
    if (!v->is_string()) {
      error(ptr + "/" + key, "must be a string");
      return std::nullopt;
    }
    return v->get<std::string>();
  }

  std::optional<bool> boolean(const json& parent, const std::string& ptr, const char* key) {
    const json* v = find(parent, ptr, key, false);
    if (!v) return std::nullopt;
    if (!v->is_boolean()) {
      error(ptr + "/" + key, "must be true or false");
      return std::nullopt;
    }
    return v->get<bool>();
  }

  std::optional<std::vector<double>> numbers(const json& parent, const std::string& ptr, const char* key,
                                             bool required = false) {
    const json* v = array(parent, ptr, key, required);
    if (!v) return std::nullopt;
    std::vector<double> out;
    bool ok = true;
    for (std::size_t i = 0; i < v->size(); ++i) {
      const auto x = as_number((*v)[i], ptr + "/" + key + "/" + std::to_string(i));
      ok = ok && x.has_value();
      if (x) out.push_back(*x);
    }
    if (!ok) return std::nullopt;
    return out;
  }

 private:
  const json* find(const json& parent, const std::string& ptr, const char* key, bool required) {
    auto it = parent.find(key);
    if (it == parent.end()) {
      if (required) error(ptr, std::string("missing required key '") + key + "'");
      return nullptr;
    }
    return &*it;
  }

  const LineIndex& lines_;
  std::vector<ConfigIssue>& issues_;
};

inline const std::map<std::string, double>& default_tolerances(Kind k, const std::string& source) {
  static const std::map<Kind, std::map<std::string, double>> table{
      {Kind::constants, {{"closed_form", 1e-12}, {"grid_max", 1e-3}}},
      {Kind::verify_extremal, {{"relative", 5e-3}, {"invariance", 1e-3}}},
      {Kind::inequality_sample, {{"gap", 1e-6}, {"conformal", 1e-5}}},
      {Kind::minimize, {{"normalization", 1e-8}}},
      {Kind::sweep, {{"cap_mass", 0.15}, {"limit", 0.05}}},
      {Kind::profile_collapse, {{"noise", 0.02}}},
      {Kind::test_function_sweep, {{"target", 0.10}, {"exp_integral", 0.05}}},
  };
  static const std::map<std::string, double> kw_sub{{"residual", 1e-3}}, kw_ext{{"residual", 1e-6}};
  if (k == Kind::kw_check) return source == "extremal" ? kw_ext : kw_sub;
  return table.at(k);
}

inline bool uses_solver(const ExperimentConfig& c) {
  return c.kind == Kind::minimize || c.kind == Kind::sweep || c.kind == Kind::profile_collapse ||
         (c.kind == Kind::kw_check && c.source == "subcritical");
}

inline bool antipodal(const PointSpec& a, const PointSpec& b) {
  const SpherePoint p(a.position[0], a.position[1], a.position[2]), q(b.position[0], b.position[1], b.position[2]);
  return geodesic_distance(p, q.antipode()) < kPointTolerance;
}

inline void check_schedule(Reader& r, const std::vector<double>& s, const std::string& ptr, double hi,
                           const std::string& range, std::size_t min_size) {
  if (s.size() < min_size) r.error(ptr, "needs at least " + std::to_string(min_size) + " values");
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!(s[i] > 0.0 && s[i] < hi)) r.error(ptr + "/" + std::to_string(i), "must lie in " + range);
    if (i > 0 && !(s[i] < s[i - 1])) r.error(ptr + "/" + std::to_string(i), "schedule must be strictly decreasing");
  }
}

inline void read_lambda_c(Reader& r, const json& obj, const std::string& ptr, LambdaC& out) {
  if (auto v = r.number(obj, ptr, "lambda")) {
    out.lambda = *v;
    if (!(*v > 0.0)) r.error(ptr + "/lambda", "lambda must be positive");
  }
  if (auto v = r.number(obj, ptr, "c")) out.c = *v;
}

}  // namespace detail

/// Parses and validates a config; collects every issue before throwing.
/// When `expected` is set, the file's kind may be omitted but must match
/// if present.
inline ExperimentConfig validate(std::string_view text, std::optional<Kind> expected = std::nullopt) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    int line = 1;
    for (std::size_t i = 0; i < std::min<std::size_t>(e.byte, text.size()); ++i) line += text[i] == '\n';
    throw ConfigError({{line, "", std::string("JSON syntax error: ") + e.what()}});
  }
  const detail::LineIndex lines(text);
  std::vector<ConfigIssue> issues;
  detail::Reader r(lines, issues);
  ExperimentConfig c;
  if (!root.is_object()) throw ConfigError({{1, "", "top level must be an object"}});

  r.only(root, "", {"schema_version", "kind", "seed", "grid", "weight", "params", "solver", "tolerances", "output"});
  if (auto v = r.integer(root, "", "schema_version", true); v && *v != kSchemaVersion)
    r.error("/schema_version", "unsupported schema_version " + std::to_string(*v) + " (expected " +
                                   std::to_string(kSchemaVersion) + ")");

  bool kind_ok = false;
  if (auto k = r.text(root, "", "kind", !expected)) {
    if (auto kind = parse_kind(*k)) {
      c.kind = *kind;
      kind_ok = true;
      if (expected && *expected != *kind)
        r.error("/kind", "config is for '" + *k + "' but the subcommand is '" + to_string(*expected) + "'");
    } else {
      std::string list;
      for (const auto& [_, name] : kind_names()) list += (list.empty() ? "" : ", ") + name;
      r.error("/kind", "unknown kind '" + *k + "' (one of: " + list + ")");
    }
  } else if (expected) {
    c.kind = *expected;
    kind_ok = true;
  }

  if (auto it = root.find("seed"); it != root.end()) {
    if (it->is_number_unsigned()) c.seed = it->get<std::uint64_t>();
    else r.error("/seed", "seed must be an integer in [0, 2^64)");
  }

  if (const json* g = r.object(root, "", "grid", true)) {
    r.only(*g, "/grid", {"n_theta", "n_phi"});
    if (auto v = r.integer(*g, "/grid", "n_theta", true)) {
      c.n_theta = int(*v);
      if (*v < 2 || *v > 4097) r.error("/grid/n_theta", "n_theta must lie in [2, 4097]");
    }
    if (auto v = r.integer(*g, "/grid", "n_phi", true)) {
      c.n_phi = int(*v);
      if (*v < 4 || *v > 8194) r.error("/grid/n_phi", "n_phi must lie in [4, 8194]");
    }
  }

  bool weight_ok = true;
  if (const json* w = r.object(root, "", "weight", false)) {
    r.only(*w, "/weight", {"points", "K"});
    if (const json* pts = r.array(*w, "/weight", "points", false)) {
      for (std::size_t i = 0; i < pts->size(); ++i) {
        const std::string ptr = "/weight/points/" + std::to_string(i);
        const json& pj = (*pts)[i];
        if (!pj.is_object()) {
          r.error(ptr, "must be an object {position, order}");
          weight_ok = false;
          continue;
        }
        r.only(pj, ptr, {"position", "order"});
        PointSpec p;
        const auto pos = r.numbers(pj, ptr, "position", true);
        if (pos && pos->size() != 3) r.error(ptr + "/position", "position must have 3 components");
        if (pos && pos->size() == 3) {
          std::copy(pos->begin(), pos->end(), p.position.begin());
          const double n = std::hypot(p.position[0], p.position[1], p.position[2]);
          if (std::abs(n - 1.0) > 1e-9) r.error(ptr + "/position", "position must be a unit vector (norm " + std::to_string(n) + ")");
        } else {
          weight_ok = false;
        }
        if (auto a = r.number(pj, ptr, "order", true)) {
          p.order = *a;
          if (!(*a > -1.0)) r.error(ptr + "/order", "order must exceed -1");
          else if (*a == 0.0) r.error(ptr + "/order", "order must be nonzero (a zero order is no singularity)");
        } else {
          weight_ok = false;
        }
        for (std::size_t j = 0; j < c.points.size() && pos && pos->size() == 3; ++j) {
          const auto& q = c.points[j].position;
          if (std::hypot(q[0] - p.position[0], q[1] - p.position[1], q[2] - p.position[2]) < 1e-9)
            r.error(ptr + "/position", "coincides with singular point " + std::to_string(j));
        }
        c.points.push_back(p);
      }
    }
    if (const json* K = r.object(*w, "/weight", "K", false)) {
      r.only(*K, "/weight/K", {"coefficients"});
      if (const json* terms = r.array(*K, "/weight/K", "coefficients", true)) {
        for (std::size_t i = 0; i < terms->size(); ++i) {
          const std::string ptr = "/weight/K/coefficients/" + std::to_string(i);
          const json& tj = (*terms)[i];
          if (!tj.is_object()) {
            r.error(ptr, "must be an object {l, m, value}");
            continue;
          }
          r.only(tj, ptr, {"l", "m", "value"});
          KTerm t;
          const auto l = r.integer(tj, ptr, "l", true), m = r.integer(tj, ptr, "m", true);
          const auto v = r.number(tj, ptr, "value", true);
          if (!l || !m || !v) continue;
          if (*l < 0 || *l > 64) r.error(ptr + "/l", "l must lie in [0, 64]");
          else if (std::abs(*m) > *l) r.error(ptr + "/m", "|m| must not exceed l");
          t.l = int(*l), t.m = int(*m), t.value = *v;
          c.K.push_back(t);
        }
        if (c.K.empty()) r.error("/weight/K/coefficients", "needs at least one term");
      }
    }
  }

  // Positivity of K needs a constructed weight.
  double rho_bar = 8.0 * std::numbers::pi;
  if (issues.empty() && weight_ok) {
    try {
      rho_bar = c.weight().rho_bar();
    } catch (const std::exception& e) {
      r.error(c.K.empty() ? "/weight" : "/weight/K", e.what());
    }
  } else {
    double a = 0.0;
    for (const auto& p : c.points) a = std::min(a, p.order);
    if (a > -1.0) rho_bar = 8.0 * std::numbers::pi * (1.0 + a);
  }

  const json empty = json::object();
  const json* params = r.object(root, "", "params", false);
  if (!params) params = &empty;
  const std::string P = "/params";
  const std::string rb = "(0, rho_bar = " + std::to_string(rho_bar) + ")";
  if (kind_ok) {
    switch (c.kind) {
      case Kind::constants:
        r.only(*params, P, {});
        if (c.points.empty()) r.error("/weight/points", "constants needs at least one singular point");
        break;
      case Kind::verify_extremal: {
        r.only(*params, P, {"lambda", "c", "invariance"});
        detail::read_lambda_c(r, *params, P, c.extremal);
        if (const json* inv = r.array(*params, P, "invariance", false)) {
          for (std::size_t i = 0; i < inv->size(); ++i) {
            const std::string ptr = P + "/invariance/" + std::to_string(i);
            if (!(*inv)[i].is_object()) {
              r.error(ptr, "must be an object {lambda, c}");
              continue;
            }
            r.only((*inv)[i], ptr, {"lambda", "c"});
            LambdaC lc;
            detail::read_lambda_c(r, (*inv)[i], ptr, lc);
            c.invariance.push_back(lc);
          }
        }
        if (c.points.size() != 2 || !detail::antipodal(c.points[0], c.points[1]) ||
            c.points[0].order != c.points[1].order || !(c.points[0].order < 0.0))
          r.error("/weight/points",
                  "verify-extremal needs two antipodal singular points of equal negative order (p2 = -p1, a1 = a2 < 0)");
        break;
      }
      case Kind::inequality_sample: {
        r.only(*params, P, {"samples", "lmax", "h1_min", "h1_max", "C", "conformal"});
        if (auto v = r.integer(*params, P, "samples")) {
          c.samples = int(*v);
          if (*v < 1 || *v > 10000) r.error(P + "/samples", "samples must lie in [1, 10000]");
        }
        if (auto v = r.integer(*params, P, "lmax")) {
          c.lmax = int(*v);
          if (*v < 1) r.error(P + "/lmax", "lmax must be >= 1");
        }
        if (auto v = r.number(*params, P, "h1_min")) c.h1_min = *v;
        if (auto v = r.number(*params, P, "h1_max")) c.h1_max = *v;
        if (!(c.h1_min > 0.0 && c.h1_min <= c.h1_max)) r.error(P, "need 0 < h1_min <= h1_max");
        if (auto v = r.number(*params, P, "C")) c.C = *v;
        if (auto v = r.numbers(*params, P, "conformal")) {
          c.conformal = *v;
          for (std::size_t i = 0; i < v->size(); ++i)
            if (!((*v)[i] > 0.0)) r.error(P + "/conformal/" + std::to_string(i), "dilation t must be positive");
          if (!c.points.empty() && !v->empty())
            r.error(P + "/conformal", "the conformal equality family applies only without singular points");
        } else if (c.points.empty() && c.K.empty()) {
          c.conformal = {1.0, 2.0, 4.0};
        }
        if (!c.C && !c.points.empty() && c.points.size() > 2)
          r.error(P + "/C", "give C explicitly: no sharp constant is available for more than two points");
        break;
      }
      case Kind::minimize:
        r.only(*params, P, {"epsilon"});
        if (auto v = r.number(*params, P, "epsilon", true)) {
          c.epsilon = *v;
          if (!(*v > 0.0 && *v < rho_bar)) r.error(P + "/epsilon", "epsilon must lie in " + rb);
        }
        break;
      case Kind::sweep:
      case Kind::profile_collapse: {
        r.only(*params, P, {"schedule", "profile_radius"});
        c.schedule = {0.5, 0.2, 0.1, 0.05};
        if (auto v = r.numbers(*params, P, "schedule")) c.schedule = *v;
        detail::check_schedule(r, c.schedule, P + "/schedule", rho_bar, rb, c.kind == Kind::sweep ? 2 : 1);
        if (auto v = r.number(*params, P, "profile_radius")) {
          c.profile_radius = *v;
          if (!(*v > 0.0)) r.error(P + "/profile_radius", "profile_radius must be positive");
        }
        if (c.points.empty()) r.error("/weight/points", to_string(c.kind) + " needs a singular point to concentrate at");
        break;
      }
      case Kind::kw_check: {
        r.only(*params, P, {"source", "epsilon", "lambda", "c"});
        if (auto v = r.text(*params, P, "source")) {
          c.source = *v;
          if (*v != "subcritical" && *v != "extremal")
            r.error(P + "/source", "source must be 'subcritical' or 'extremal'");
        }
        if (c.source == "extremal") {
          if (params->contains("epsilon")) r.error(P + "/epsilon", "epsilon is not used with source 'extremal'");
          detail::read_lambda_c(r, *params, P, c.extremal);
        } else {
          if (params->contains("lambda") || params->contains("c"))
            r.error(P, "lambda and c are used only with source 'extremal'");
          if (auto v = r.number(*params, P, "epsilon", true)) {
            c.epsilon = *v;
            if (!(*v > 0.0 && *v < rho_bar)) r.error(P + "/epsilon", "epsilon must lie in " + rb);
          }
        }
        if (c.points.empty() || c.points.size() > 2 ||
            (c.points.size() == 2 && !detail::antipodal(c.points[0], c.points[1])))
          r.error("/weight/points",
                  "kw-check needs one singular point or two antipodal points (p2 = -p1); the identity holds only "
                  "for the antipodal configuration");
        else if (!c.K.empty())
          r.error("/weight/K", "kw-check needs K = 1");
        else if (c.source == "extremal" &&
                 (c.points.size() != 2 || c.points[0].order != c.points[1].order || !(c.points[0].order < 0.0)))
          r.error("/weight/points", "the extremal source needs two antipodal points of equal negative order");
        break;
      }
      case Kind::test_function_sweep: {
        r.only(*params, P, {"schedule", "gamma_schedule", "center"});
        c.schedule = {1e-2, 1e-3, 1e-4};
        if (auto v = r.numbers(*params, P, "schedule")) c.schedule = *v;
        detail::check_schedule(r, c.schedule, P + "/schedule", 1.0, "(0, 1)", 1);
        if (auto v = r.text(*params, P, "gamma_schedule")) {
          c.gamma_schedule = *v;
          if (*v != "power" && *v != "log") r.error(P + "/gamma_schedule", "gamma_schedule must be 'power' or 'log'");
        }
        if (auto v = r.integer(*params, P, "center")) {
          c.center = int(*v);
          if (*v < 0 || *v >= static_cast<long long>(c.points.size()))
            r.error(P + "/center", "center must index a singular point");
        }
        if (c.points.empty()) r.error("/weight/points", "test-function-sweep needs a singular point");
        break;
      }
    }
  }

  if (const json* s = r.object(root, "", "solver", false)) {
    if (kind_ok && !detail::uses_solver(c)) {
      r.error("/solver", "solver settings are not used by kind '" + to_string(c.kind) + "'");
    } else {
      const std::string S = "/solver";
      r.only(*s, S, {"method", "max_iterations", "damping", "tolerance", "init", "init_epsilon", "memory", "enrichment_terms"});
      auto& sv = c.solver;
      if (auto v = r.text(*s, S, "method")) {
        sv.method = *v;
        if (*v != "lbfgs" && *v != "fixed_point") r.error(S + "/method", "method must be 'lbfgs' or 'fixed_point'");
      }
      if (auto v = r.integer(*s, S, "max_iterations")) {
        sv.max_iterations = int(*v);
        if (*v < 1) r.error(S + "/max_iterations", "max_iterations must be positive");
      }
      if (auto v = r.number(*s, S, "damping")) {
        sv.damping = *v;
        if (!(*v > 0.0 && *v <= 1.0)) r.error(S + "/damping", "damping must lie in (0, 1]");
      }
      if (auto v = r.number(*s, S, "tolerance")) {
        sv.tolerance = *v;
        if (!(*v > 0.0)) r.error(S + "/tolerance", "tolerance must be positive");
      }
      if (auto v = r.text(*s, S, "init")) {
        sv.init = *v;
        if (*v != "zero" && *v != "test_function") r.error(S + "/init", "init must be 'zero' or 'test_function'");
      }
      if (auto v = r.number(*s, S, "init_epsilon")) {
        sv.init_epsilon = *v;
        if (!(*v > 0.0 && *v < 1.0)) r.error(S + "/init_epsilon", "init_epsilon must lie in (0, 1)");
      }
      if (auto v = r.integer(*s, S, "memory")) {
        sv.memory = int(*v);
        if (*v < 1) r.error(S + "/memory", "memory must be positive");
      }
      if (auto v = r.integer(*s, S, "enrichment_terms")) {
        sv.enrichment_terms = int(*v);
        if (*v < 0) r.error(S + "/enrichment_terms", "enrichment_terms must be >= 0");
      }
    }
  }

  if (kind_ok) {
    c.tolerances = detail::default_tolerances(c.kind, c.source);
    if (const json* t = r.object(root, "", "tolerances", false)) {
      for (const auto& [key, val] : t->items()) {
        const std::string ptr = "/tolerances/" + key;
        if (!c.tolerances.count(key)) {
          std::string list;
          for (const auto& [name, _] : c.tolerances) list += (list.empty() ? "" : ", ") + name;
          r.error(ptr, "unknown tolerance '" + key + "' for kind '" + to_string(c.kind) + "' (allowed: " + list + ")");
          continue;
        }
        if (auto x = r.as_number(val, ptr)) {
          if (!(*x > 0.0)) r.error(ptr, "tolerance must be positive");
          c.tolerances[key] = *x;
        }
      }
    }
  }

  if (const json* o = r.object(root, "", "output", false)) {
    r.only(*o, "/output", {"report", "csv"});
    if (auto v = r.text(*o, "/output", "report")) {
      c.report = *v;
      if (v->empty()) r.error("/output/report", "report path must not be empty");
    }
    if (auto v = r.boolean(*o, "/output", "csv")) c.csv = *v;
  }

  if (!issues.empty()) throw ConfigError(std::move(issues));
  return c;
}

/// Inverse of validate for validated configs: validate(serialize(c)) == c.
inline json to_json(const ExperimentConfig& c) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = to_string(c.kind);
  j["seed"] = c.seed;
  j["grid"] = {{"n_theta", c.n_theta}, {"n_phi", c.n_phi}};
  json pts = json::array();
  for (const auto& p : c.points) pts.push_back({{"position", p.position}, {"order", p.order}});
  j["weight"]["points"] = pts;
  if (!c.K.empty()) {
    json terms = json::array();
    for (const auto& t : c.K) terms.push_back({{"l", t.l}, {"m", t.m}, {"value", t.value}});
    j["weight"]["K"]["coefficients"] = terms;
  }
  json p = json::object();
  auto lc = [](const LambdaC& x) { return json{{"lambda", x.lambda}, {"c", x.c}}; };
  switch (c.kind) {
    case Kind::constants:
      break;
    case Kind::verify_extremal: {
      p = lc(c.extremal);
      json inv = json::array();
      for (const auto& x : c.invariance) inv.push_back(lc(x));
      p["invariance"] = inv;
      break;
    }
    case Kind::inequality_sample:
      p = {{"samples", c.samples}, {"lmax", c.lmax}, {"h1_min", c.h1_min}, {"h1_max", c.h1_max}, {"conformal", c.conformal}};
      if (c.C) p["C"] = *c.C;
      break;
    case Kind::minimize:
      p = {{"epsilon", c.epsilon}};
      break;
    case Kind::sweep:
    case Kind::profile_collapse:
      p = {{"schedule", c.schedule}, {"profile_radius", c.profile_radius}};
      break;
    case Kind::kw_check:
      p = {{"source", c.source}};
      if (c.source == "extremal") p.update(lc(c.extremal));
      else p["epsilon"] = c.epsilon;
      break;
    case Kind::test_function_sweep:
      p = {{"schedule", c.schedule}, {"gamma_schedule", c.gamma_schedule}};
      if (c.center) p["center"] = *c.center;
      break;
  }
  j["params"] = p;
  if (detail::uses_solver(c)) {
    const auto& s = c.solver;
    json sj = {{"method", s.method}, {"max_iterations", s.max_iterations}, {"damping", s.damping}, {"init", s.init},
               {"init_epsilon", s.init_epsilon}, {"memory", s.memory}, {"enrichment_terms", s.enrichment_terms}};
    if (s.tolerance) sj["tolerance"] = *s.tolerance;
    j["solver"] = sj;
  }
  j["tolerances"] = c.tolerances;
  j["output"] = {{"report", c.report}, {"csv", c.csv}};
  return j;
}

inline std::string serialize(const ExperimentConfig& c) { return to_json(c).dump(2) + "\n"; }

}  // namespace sol::lab
