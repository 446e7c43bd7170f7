#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "sol/lab/config.hpp"
#include "sol/lab/run.hpp"

using namespace sol;
using namespace sol::lab;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<ConfigIssue> issues_of(const std::string& text, std::optional<Kind> kind = std::nullopt) {
  try {
    validate(text, kind);
  } catch (const ConfigError& e) {
    return e.issues();
  }
  return {};
}

bool mentions(const std::vector<ConfigIssue>& issues, const std::string& needle) {
  for (const auto& i : issues)
    if (i.message.find(needle) != std::string::npos) return true;
  return false;
}

const char* kSingle = R"({
  "schema_version": 1,
  "kind": "constants",
  "grid": {"n_theta": 17, "n_phi": 34},
  "weight": {"points": [{"position": [0, 0, 1], "order": -0.5}]}
})";

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SOL_LAB_EXE) + " " + args + " >/dev/null 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "sol_lab_tests";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Validate, AcceptsMinimalConfigAndFillsDefaults) {
  const auto c = validate(kSingle);
  EXPECT_EQ(c.kind, Kind::constants);
  EXPECT_EQ(c.band_limit(), 16);
  ASSERT_EQ(c.points.size(), 1u);
  EXPECT_EQ(c.points[0].order, -0.5);
  EXPECT_EQ(c.tolerance("closed_form"), 1e-12);
  EXPECT_EQ(c.report, "report.json");
}

TEST(Validate, OrderBelowMinusOneIsRejectedWithItsLine) {
  const std::string text = R"({
  "schema_version": 1,
  "kind": "constants",
  "grid": {"n_theta": 17, "n_phi": 34},
  "weight": {"points": [
    {"position": [0, 0, 1],
     "order": -1.2}
  ]}
})";
  const auto is = issues_of(text);
  ASSERT_EQ(is.size(), 1u);
  EXPECT_EQ(is[0].message, "order must exceed -1");
  EXPECT_EQ(is[0].pointer, "/weight/points/0/order");
  EXPECT_EQ(is[0].line, 7);
}

TEST(Validate, CoincidentPointsAreRejected) {
  const auto is = issues_of(R"({"schema_version": 1, "kind": "constants", "grid": {"n_theta": 9, "n_phi": 18},
    "weight": {"points": [{"position": [1, 0, 0], "order": 0.5}, {"position": [1, 0, 0], "order": -0.3}]}})");
  ASSERT_EQ(is.size(), 1u);
  EXPECT_TRUE(mentions(is, "coincides with singular point 0"));
}

TEST(Validate, KazdanWarnerRequiresAntipodalPair) {
  const auto is = issues_of(R"({"schema_version": 1, "kind": "kw-check", "grid": {"n_theta": 9, "n_phi": 18},
    "weight": {"points": [{"position": [0, 0, 1], "order": -0.5}, {"position": [1, 0, 0], "order": 0.3}]},
    "params": {"epsilon": 0.1}})");
  ASSERT_EQ(is.size(), 1u);
  EXPECT_TRUE(mentions(is, "antipodal"));
  EXPECT_TRUE(mentions(is, "p2 = -p1"));
}

TEST(Validate, AggregatesEveryIssue) {
  const std::string text = R"({
  "schema_version": 2,
  "kind": "sweep",
  "grid": {"n_theta": 1, "n_phi": 18},
  "weight": {"points": [{"position": [0, 0, 2], "order": 0}]},
  "params": {"schedule": [0.1, 0.2], "bogus": 1},
  "solver": {"method": "newton"},
  "tolerances": {"limit": -1}
})";
  const auto is = issues_of(text);
  EXPECT_GE(is.size(), 8u);
  EXPECT_TRUE(mentions(is, "unsupported schema_version 2"));
  EXPECT_TRUE(mentions(is, "n_theta must lie in"));
  EXPECT_TRUE(mentions(is, "unit vector"));
  EXPECT_TRUE(mentions(is, "order must be nonzero"));
  EXPECT_TRUE(mentions(is, "strictly decreasing"));
  EXPECT_TRUE(mentions(is, "unknown key 'bogus'"));
  EXPECT_TRUE(mentions(is, "method must be"));
  EXPECT_TRUE(mentions(is, "tolerance must be positive"));
  for (const auto& i : is) EXPECT_GT(i.line, 0) << i.pointer << ": " << i.message;
  // The message lists every issue with its line.
  try {
    validate(text);
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 6: /params/bogus"), std::string::npos) << e.what();
  }
}

TEST(Validate, SyntaxErrorsReportTheLine) {
  const auto is = issues_of("{\n  \"schema_version\": 1,\n  \"kind\": \"constants\",,\n}");
  ASSERT_EQ(is.size(), 1u);
  EXPECT_EQ(is[0].line, 3);
  EXPECT_TRUE(mentions(is, "JSON syntax error"));
}

TEST(Validate, KindMustMatchSubcommand) {
  EXPECT_TRUE(mentions(issues_of(kSingle, Kind::sweep), "subcommand is 'sweep'"));
  // Without a kind in the file the subcommand supplies it.
  const auto c = validate(R"({"schema_version": 1, "grid": {"n_theta": 9, "n_phi": 18}})", Kind::inequality_sample);
  EXPECT_EQ(c.kind, Kind::inequality_sample);
  EXPECT_EQ(c.conformal, (std::vector<double>{1.0, 2.0, 4.0}));
  EXPECT_TRUE(mentions(issues_of(R"({"schema_version": 1, "grid": {"n_theta": 9, "n_phi": 18}})"), "'kind'"));
}

TEST(Validate, EpsilonMustStayBelowRhoBar) {
  const auto is = issues_of(R"({"schema_version": 1, "kind": "minimize", "grid": {"n_theta": 9, "n_phi": 18},
    "weight": {"points": [{"position": [0, 0, 1], "order": -0.5}]}, "params": {"epsilon": 13.0}})");
  ASSERT_EQ(is.size(), 1u);
  EXPECT_TRUE(mentions(is, "epsilon must lie in (0, rho_bar = 12.566"));
}

TEST(Validate, SolverSettingsOnlyWhereUsed) {
  EXPECT_TRUE(mentions(issues_of(R"({"schema_version": 1, "kind": "constants", "grid": {"n_theta": 9, "n_phi": 18},
    "weight": {"points": [{"position": [0, 0, 1], "order": -0.5}]}, "solver": {"method": "lbfgs"}})"),
                       "not used by kind 'constants'"));
}

TEST(Validate, NonPositiveSmoothFactorIsRejected) {
  const auto is = issues_of(R"({"schema_version": 1, "kind": "constants", "grid": {"n_theta": 9, "n_phi": 18},
    "weight": {"points": [{"position": [0, 0, 1], "order": -0.5}],
               "K": {"coefficients": [{"l": 0, "m": 0, "value": 1.0}, {"l": 1, "m": 0, "value": 2.0}]}}})");
  ASSERT_EQ(is.size(), 1u);
  EXPECT_EQ(is[0].pointer, "/weight/K");
}

TEST(Serialize, ShippedConfigsRoundTrip) {
  int seen = 0;
  for (const auto& entry : fs::directory_iterator(SOL_CONFIG_DIR)) {
    if (entry.path().extension() != ".json") continue;
    const auto c = validate(slurp(entry.path()));
    EXPECT_EQ(validate(serialize(c)), c) << entry.path();
    ++seen;
  }
  EXPECT_GE(seen, 8);
}

TEST(Serialize, RandomConfigsRoundTrip) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> U(-1.0, 1.0), A(-0.95, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    ExperimentConfig c;
    c.kind = kind_names()[trial % kind_names().size()].first;
    c.n_theta = 8 + trial % 40;
    c.n_phi = 2 * c.n_theta;
    c.seed = rng();
    const Vec3 v{U(rng), U(rng), U(rng)};
    const SpherePoint p{v};
    const double a = A(rng);
    c.points = {{{p[0], p[1], p[2]}, -0.01 - 0.9 * std::abs(a) / 2.0}};
    switch (c.kind) {
      case Kind::verify_extremal:
        c.points.push_back({{-p[0], -p[1], -p[2]}, c.points[0].order});
        c.extremal = {0.1 + std::abs(U(rng)), U(rng)};
        c.invariance = {{2.0, U(rng)}};
        break;
      case Kind::inequality_sample:
        c.samples = 1 + trial % 7;
        c.C = U(rng);
        break;
      case Kind::minimize:
        c.epsilon = 0.01 + std::abs(U(rng));
        c.solver.method = trial % 2 ? "fixed_point" : "lbfgs";
        c.solver.tolerance = 1e-7 * (1 + trial);
        break;
      case Kind::sweep:
      case Kind::profile_collapse:
        c.schedule = {0.7 * std::abs(a) + 0.3, 0.11, 0.01 * (1 + std::abs(U(rng)))};
        c.profile_radius = 1 + std::abs(U(rng));
        break;
      case Kind::kw_check:
        c.source = trial % 2 ? "extremal" : "subcritical";
        c.points.push_back({{-p[0], -p[1], -p[2]}, c.source == "extremal" ? c.points[0].order : 0.4});
        if (c.source == "extremal") c.extremal = {1.5, U(rng)};
        else c.epsilon = 0.3;
        break;
      case Kind::test_function_sweep:
        c.schedule = {0.5, 1e-3 * (1 + std::abs(U(rng)))};
        c.gamma_schedule = trial % 2 ? "log" : "power";
        c.center = 0;
        break;
      case Kind::constants:
        break;
    }
    try {
      c.tolerances = validate(serialize(c)).tolerances;  // defaults for the kind
    } catch (const ConfigError& e) {
      ADD_FAILURE() << e.what() << "\n" << serialize(c);
      continue;
    }
    c.tolerances.begin()->second = 1e-3 * (1 + std::abs(U(rng)));
    c.report = "out/r" + std::to_string(trial) + ".json";
    c.csv = trial % 3 != 0;
    EXPECT_EQ(validate(serialize(c)), c) << serialize(c);
  }
}

TEST(Csv, SeventeenDigitsRoundTripExactly) {
  CsvTable t{{"a", "b"}, {}};
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(-1e3, 1e3);
  std::vector<double> values;
  for (int i = 0; i < 50; ++i) {
    values.push_back(U(rng) * std::pow(10.0, i % 20 - 10));
    values.push_back(std::nextafter(values.back(), 1e300));
    t.add({values[values.size() - 2], values.back()});
  }
  std::istringstream in(t.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "a,b");
  std::size_t k = 0;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    EXPECT_EQ(std::stod(line.substr(0, comma)), values[k++]);
    EXPECT_EQ(std::stod(line.substr(comma + 1)), values[k++]);
  }
  EXPECT_EQ(k, values.size());
  EXPECT_THROW(t.add({1.0}), std::logic_error);
}

TEST(Run, ConstantsReproduceLogTwo) {
  const auto rep = run(validate(kSingle));
  EXPECT_NEAR(rep.summary["theorem1"]["C"].get<double>(), std::log(2.0), 1e-12);
  EXPECT_NEAR(rep.summary["closed_form"]["C"].get<double>(), std::log(2.0), 1e-15);
  EXPECT_EQ(rep.status(), Status::pass);
}

TEST(Run, VerifyExtremalMatchesAttainedMinimum) {
  auto c = validate(slurp(fs::path(SOL_CONFIG_DIR) / "verify_extremal.json"));
  const auto rep = run(c);
  const double target = 8 * std::numbers::pi * 0.5 * (std::log(0.5) + 0.5);
  EXPECT_NEAR(target, -2.42716, 1e-5);
  EXPECT_LT(std::abs(rep.summary["J"].get<double>() - target), 5e-3 * std::abs(target));
  EXPECT_EQ(rep.exit_code(), 0);
}

TEST(Run, OnofriSamplesStayAboveTheBound) {
  const auto rep = run(validate(slurp(fs::path(SOL_CONFIG_DIR) / "onofri.json")));
  ASSERT_EQ(rep.records.size(), 20u);
  for (const auto& r : rep.records) EXPECT_GE(r["gap"].get<double>(), -1e-6);
  for (const auto& r : rep.summary["conformal"]) EXPECT_LT(std::abs(r["gap"].get<double>()), 1e-5);
  EXPECT_EQ(rep.status(), Status::pass);
}

TEST(Run, TighterToleranceFailsWithExitCodeOne) {
  auto c = validate(slurp(fs::path(SOL_CONFIG_DIR) / "verify_extremal.json"));
  c.tolerances["relative"] = 1e-9;
  const auto rep = run(c);
  EXPECT_EQ(rep.status(), Status::tolerance_failure);
  EXPECT_EQ(rep.exit_code(), 1);
}

TEST(Run, NonConvergenceIsANumericalFailure) {
  auto c = validate(R"({"schema_version": 1, "kind": "minimize", "grid": {"n_theta": 17, "n_phi": 34},
    "weight": {"points": [{"position": [0, 0, 1], "order": -0.5}]}, "params": {"epsilon": 0.5},
    "solver": {"max_iterations": 1}})");
  const auto rep = run(c);
  EXPECT_EQ(rep.status(), Status::numerical_failure);
  EXPECT_EQ(rep.exit_code(), 3);
  EXPECT_NE(rep.failure.find("no convergence"), std::string::npos);
}

TEST(Run, ReportsAreDeterministic) {
  for (const char* text : {R"({"schema_version": 1, "kind": "minimize", "grid": {"n_theta": 33, "n_phi": 66},
        "weight": {"points": [{"position": [0, 0, 1], "order": -0.5}]}, "params": {"epsilon": 0.3}})",
                           R"({"schema_version": 1, "kind": "inequality-sample", "seed": 99, "grid": {"n_theta": 33,
        "n_phi": 66}, "weight": {"points": [{"position": [0, 0, 1], "order": -0.3}]}, "params": {"samples": 5}})"}) {
    const auto c = validate(text);
    const auto a = run(c), b = run(c);
    EXPECT_EQ(a.to_json(false).dump(), b.to_json(false).dump());
    ASSERT_EQ(a.csv.size(), b.csv.size());
    for (std::size_t i = 0; i < a.csv.size(); ++i) EXPECT_EQ(a.csv[i].second.str(), b.csv[i].second.str());
  }
}

TEST(Run, SeedChangesInequalitySamples) {
  auto c = validate(R"({"schema_version": 1, "kind": "inequality-sample", "grid": {"n_theta": 17, "n_phi": 34},
    "params": {"samples": 3}})");
  const auto a = run(c);
  c.seed = 2;
  const auto b = run(c);
  EXPECT_NE(a.records[0]["gap"].get<double>(), b.records[0]["gap"].get<double>());
}

TEST(Run, WritesReportAndTraces) {
  auto c = validate(R"({"schema_version": 1, "kind": "minimize", "grid": {"n_theta": 17, "n_phi": 34},
    "weight": {"points": [{"position": [0, 0, 1], "order": -0.5}]}, "params": {"epsilon": 0.5}})");
  const auto path = scratch("written/minimize.json");
  fs::remove_all(path.parent_path());
  const auto written = write_outputs(run(c), path);
  ASSERT_EQ(written.size(), 2u);
  const auto report = json::parse(slurp(path));
  EXPECT_EQ(report["kind"], "minimize");
  EXPECT_EQ(report["status"], "pass");
  EXPECT_TRUE(report.contains("timing"));
  EXPECT_EQ(validate(report["config"].dump()), c);
  const auto trace = slurp(csv_path(path, "trace"));
  EXPECT_EQ(trace.substr(0, trace.find('\n')), "epsilon,iteration,J,residual,lambda,step");
}

TEST(Cli, ExitCodes) {
  const std::string dir = SOL_CONFIG_DIR;
  EXPECT_EQ(run_cli("validate --config " + dir + "/sweep.json"), 0);
  EXPECT_EQ(run_cli("constants --config " + dir + "/constants.json --out " + scratch("c.json").string()), 0);
  EXPECT_EQ(run_cli("sweep --config " + dir + "/constants.json"), 2);  // kind mismatch
  const auto bad = scratch("bad.json");
  std::ofstream(bad) << R"({"schema_version": 1, "kind": "constants", "grid": {"n_theta": 9, "n_phi": 18},
    "weight": {"points": [{"position": [0, 0, 1], "order": -1.2}]}})";
  EXPECT_EQ(run_cli("validate --config " + bad.string()), 2);
  EXPECT_EQ(run_cli("no-such-kind --config " + bad.string()), 2);
  const auto tight = scratch("tight.json");
  std::ofstream(tight) << R"({"schema_version": 1, "kind": "verify-extremal", "grid": {"n_theta": 33, "n_phi": 66},
    "weight": {"points": [{"position": [0, 0, 1], "order": -0.5}, {"position": [0, 0, -1], "order": -0.5}]},
    "tolerances": {"relative": 1e-12}})";
  EXPECT_EQ(run_cli("verify-extremal --config " + tight.string() + " --out " + scratch("t.json").string()), 1);
  const auto stuck = scratch("stuck.json");
  std::ofstream(stuck) << R"({"schema_version": 1, "kind": "minimize", "grid": {"n_theta": 17, "n_phi": 34},
    "weight": {"points": [{"position": [0, 0, 1], "order": -0.5}]}, "params": {"epsilon": 0.5},
    "solver": {"max_iterations": 1}})";
  EXPECT_EQ(run_cli("minimize --config " + stuck.string() + " --out " + scratch("s.json").string()), 3);
}

TEST(Cli, SeedAndThreadsFlags) {
  const auto cfg = scratch("seeded.json");
  std::ofstream(cfg) << R"({"schema_version": 1, "kind": "inequality-sample", "grid": {"n_theta": 17, "n_phi": 34},
    "params": {"samples": 2}})";
  const auto out = scratch("seeded_out.json");
  ASSERT_EQ(run_cli("inequality-sample --config " + cfg.string() + " --out " + out.string() + " --seed 42 --threads 2"), 0);
  const auto report = json::parse(slurp(out));
  EXPECT_EQ(report["config"]["seed"], 42);
  EXPECT_EQ(report["threads"], 2);
  EXPECT_EQ(run_cli("inequality-sample --config " + cfg.string() + " --threads 0"), 2);
}
