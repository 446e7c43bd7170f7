// sol_lab: runs one experiment from a JSON config and writes a JSON report
// plus CSV traces.
//
//   sol_lab <kind> --config cfg.json [--out report.json] [--threads n] [--seed n]
//   sol_lab validate --config cfg.json
//
// Exit codes: 0 pass, 1 tolerance failure, 2 config error, 3 numerical failure.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "sol/lab/config.hpp"
#include "sol/lab/run.hpp"

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read config file '" + path + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Options {
  std::string config;
  std::string out;
  int threads = 1;
  std::optional<std::uint64_t> seed;
};

int execute(std::optional<sol::lab::Kind> kind, const Options& opt) {
  using namespace sol::lab;
  const Logger log(log_level_from_env());
  ExperimentConfig cfg;
  try {
    cfg = validate(slurp(opt.config), kind);
  } catch (const ConfigError& e) {
    std::cerr << opt.config << ": " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << e.what() << '\n';
    return 2;
  }
  if (!kind) {
    std::cout << opt.config << ": valid " << to_string(cfg.kind) << " config\n";
    return 0;
  }
  if (!opt.out.empty()) cfg.report = opt.out;
  if (opt.seed) cfg.seed = *opt.seed;
  sol::set_thread_count(opt.threads);
  try {
    const auto rep = run(cfg, log);
    for (const auto& p : write_outputs(rep, cfg.report)) log.info("wrote " + p.string());
    for (const auto& c : rep.checks) {
      std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << " value=" << c.value;
      if (c.tolerance) std::cout << " tol=" << *c.tolerance;
      std::cout << '\n';
    }
    if (!rep.failure.empty()) std::cout << "numerical failure: " << rep.failure << '\n';
    std::cout << to_string(rep.status()) << '\n';
    return rep.exit_code();
  } catch (const ExperimentError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Singular Moser-Trudinger laboratory on the sphere"};
  app.require_subcommand(1);
  Options opt;
  std::optional<sol::lab::Kind> chosen;
  bool validate_only = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config, "JSON experiment config")->required()->check(CLI::ExistingFile);
  };
  for (const auto& [kind, name] : sol::lab::kind_names()) {
    auto* sub = app.add_subcommand(name, "run a " + name + " experiment");
    add_common(sub);
    sub->add_option("--out", opt.out, "report path (overrides output.report)");
    sub->add_option("--threads", opt.threads, "worker threads; 1 is the reproducible reference")
        ->check(CLI::Range(1, 256));
    sub->add_option("--seed", opt.seed, "RNG seed (overrides the config)");
    sub->callback([&chosen, kind = kind] { chosen = kind; });
  }
  auto* val = app.add_subcommand("validate", "check a config and list every problem");
  add_common(val);
  val->callback([&] { validate_only = true; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  return execute(validate_only ? std::nullopt : chosen, opt);
}
