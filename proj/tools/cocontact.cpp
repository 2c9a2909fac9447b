// cocontact derive|simulate|check <config.toml | built-in name> [options]

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cocontact/app/commands.hpp"

namespace app = cocontact::app;

namespace {

struct Options {
  std::string config;
  bool plots = false;
  std::string out_dir;
  std::optional<double> gamma;
  std::string sweep;
};

app::Model load(const Options& o) {
  auto cfg = app::resolve_config(o.config);
  if (o.gamma) {
    if (!cfg.parameters.count("gamma")) throw app::ConfigError(cfg.source + ": --gamma given but the system has no parameter 'gamma'");
    cfg.parameters["gamma"] = *o.gamma;
  }
  return app::build_model(cfg);
}

app::SimulateOptions simulate_options(const Options& o) {
  app::SimulateOptions s;
  if (!o.out_dir.empty()) s.out_dir = o.out_dir;
  s.plots = o.plots;
  return s;
}

int run_derive(const Options& o) {
  auto m = load(o);
  auto d = app::derive(m);
  std::cout << d.report;
  return d.code;
}

int run_check(const Options& o) {
  auto m = load(o);
  auto r = app::check(m);
  std::cout << r.report;
  return r.code;
}

int run_simulate(const Options& o) {
  if (!o.sweep.empty()) {
    auto cfg = app::resolve_config(o.config);
    if (o.gamma) cfg.parameters["gamma"] = *o.gamma;
    auto sweep = app::parse_sweep(o.sweep);
    auto runs = app::run_sweep(cfg, sweep, simulate_options(o));
    int code = app::exit_ok;
    for (const auto& r : runs) {
      std::cout << "== " << sweep.parameter << " = " << app::sweep_label(r.value) << " ==\n" << r.text;
      if (code == app::exit_ok) code = r.code;
    }
    return code;
  }
  auto m = load(o);
  auto d = app::derive(m);
  if (d.code != app::exit_ok) {
    std::cout << d.report;
    return d.code;
  }
  auto r = app::simulate(m, d, simulate_options(o));
  std::cout << r.summary;
  return r.code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Cocontact Hamiltonian and Lagrangian systems: derivation, constraint analysis and simulation"};
  cli.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("config", o.config, "system definition (TOML file) or built-in example name")->required();
    sub->add_option("--gamma", o.gamma, "override the friction parameter gamma");
  };
  auto* derive = cli.add_subcommand("derive", "derive the dynamics and print a report");
  add_common(derive);
  auto* check = cli.add_subcommand("check", "verify the geometric structure");
  add_common(check);
  auto* simulate = cli.add_subcommand("simulate", "integrate and write CSV (and a gnuplot script)");
  add_common(simulate);
  simulate->add_flag("--plots", o.plots, "also write a gnuplot script");
  simulate->add_option("--out", o.out_dir, "output directory (default: [output] directory)");
  simulate->add_option("--sweep", o.sweep, "parameter sweep name=start:stop:step, run in parallel");

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = cli.exit(e);
    return code == 0 ? 0 : app::exit_config;
  }

  try {
    if (*derive) return run_derive(o);
    if (*check) return run_check(o);
    return run_simulate(o);
  } catch (const app::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return app::exit_config;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return app::exit_config;
  }
}
