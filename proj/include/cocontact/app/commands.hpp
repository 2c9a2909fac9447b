#pragma once

// derive / simulate / check on a loaded system definition.

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "cocontact/app/builtins.hpp"
#include "cocontact/app/config.hpp"
#include "cocontact/dynamics.hpp"

namespace cocontact::app {

enum ExitCode : int { exit_ok = 0, exit_config = 2, exit_inconsistent = 3, exit_max_stages = 4, exit_integration = 5 };

/// A path to a TOML file, or the name of a built-in example.
inline SystemConfig resolve_config(const std::string& arg) {
  if (std::filesystem::exists(arg)) return load_config(arg);
  const auto& b = builtin_configs();
  if (auto it = b.find(arg); it != b.end()) return parse_config(it->second, "builtin:" + arg);
  std::string names;
  for (const auto& [n, text] : b) names += (names.empty() ? "" : ", ") + n;
  throw ConfigError(arg + ": no such file or built-in example (built-ins: " + names + ")");
}

// ---------------------------------------------------------------------------
// Model

struct Model {
  SystemConfig cfg;
  Environment env;
  std::set<std::string> params, externals;
  ChartPtr chart;  // final chart (with multipliers when constrained)
  std::optional<LagrangianSystem> lagrangian;
  std::optional<HolonomicSystem> holonomic;
  std::optional<DifferentialForm> tau, eta;  // Hamiltonian side
  Expr hamiltonian;
  std::optional<Expr> mechanical;
  std::vector<Expr> positive;

  [[noreturn]] void fail(const std::string& where, const std::string& what) const {
    throw ConfigError(located(cfg.source, cfg.locations, where, what));
  }

  Expr parse(const std::string& text, const std::string& where, const exterior::Chart& on) const {
    try {
      return exterior::parse(text, on, params, externals);
    } catch (const Error& e) {
      fail(where, e.what());
    }
  }
  Expr parse(const std::string& text, const std::string& where) const { return parse(text, where, *chart); }

  /// Number-valued expression in the parameters only.
  double constant(const std::string& text, const std::string& where) const {
    symlang::SymbolTable table;
    table.parameters = params;
    try {
      return symlang::evaluate(symlang::parse(text, table), env);
    } catch (const Error& e) {
      fail(where, e.what());
    }
  }

  /// 1-form text such as "ds - p*dq": dX stands for the differential of coordinate X.
  DifferentialForm one_form(const std::string& text, const std::string& where) const {
    const auto& c = *chart;
    symlang::SymbolTable table;
    table.parameters = params;
    table.externals = externals;
    std::vector<std::string> ds;
    for (const auto& n : c.names()) {
      table.coordinates.insert(n);
      std::string d = "d" + n;
      if (c.contains(d) || params.count(d)) fail(where, "'" + d + "' is ambiguous (a coordinate or parameter has that name)");
      table.coordinates.insert(d);
      ds.push_back(d);
    }
    Expr e;
    try {
      e = symlang::parse(text, table);
    } catch (const Error& ex) {
      fail(where, ex.what());
    }
    symlang::Substitution zero;
    for (const auto& d : ds) zero[d] = Expr(0.0);
    if (!symlang::is_identically_zero(symlang::substitute(e, zero))) fail(where, "has a term without a differential");
    std::vector<Expr> comps;
    for (const auto& d : ds) {
      Expr a = tidy(symlang::differentiate(e, d));
      for (const auto& other : ds)
        if (symlang::depends_on(a, other)) fail(where, "is not linear in the differentials");
      comps.push_back(a);
    }
    return DifferentialForm::one_form(chart, comps);
  }
};

inline Model build_model(const SystemConfig& cfg) {
  Model m;
  m.cfg = cfg;
  for (const auto& [name, v] : cfg.parameters) {
    m.params.insert(name);
    m.env.set(name, v);
  }
  for (const auto& [name, e] : cfg.externals) {
    m.externals.insert(name);
    try {
      m.env.set_external(name, make_time_function(e, cfg.parameters));
    } catch (const Error& ex) {
      m.fail("[externals] " + name, ex.what());
    }
  }

  auto check_names = [&](const exterior::Chart& c) {
    for (const auto& n : c.names()) {
      if (m.params.count(n)) m.fail("[parameters] " + n, "clashes with a coordinate");
      if (m.externals.count(n)) m.fail("[externals] " + n, "clashes with a coordinate");
    }
  };

  try {
    if (cfg.lagrangian()) {
      auto base = exterior::tangent_chart(cfg.positions, cfg.velocities, cfg.action);
      check_names(*base);
      Expr L = m.parse(cfg.generator, "[system] lagrangian", *base);
      if (cfg.holonomic.empty()) {
        m.chart = base;
        m.lagrangian.emplace(base, L, m.env);
      } else {
        std::vector<Expr> f;
        for (std::size_t i = 0; i < cfg.holonomic.size(); ++i)
          f.push_back(m.parse(cfg.holonomic[i], "[constraints] holonomic[" + std::to_string(i) + "]", *base));
        m.holonomic = holonomic_augment(base, L, f, m.env, cfg.multipliers);
        m.chart = m.holonomic->system.chart();
        check_names(*m.chart);
        m.lagrangian.emplace(m.holonomic->system);
      }
    } else {
      std::vector<exterior::Coordinate> coords{{"t", Role::time}};
      for (const auto& q : cfg.positions) coords.push_back({q, Role::position});
      for (const auto& p : cfg.momenta) coords.push_back({p, Role::momentum});
      coords.push_back({cfg.action, Role::action});
      for (const auto& u : cfg.spectators) coords.push_back({u, Role::spectator});
      m.chart = std::make_shared<const exterior::Chart>(std::move(coords));
      check_names(*m.chart);
      m.hamiltonian = m.parse(cfg.generator, "[system] hamiltonian");
      if (cfg.tau) {
        m.tau = m.one_form(*cfg.tau, "[system] tau");
        m.eta = m.one_form(*cfg.eta, "[system] eta");
      } else {
        m.tau = DifferentialForm::differential(m.chart, "t");
        DifferentialForm eta = DifferentialForm::differential(m.chart, cfg.action);
        for (std::size_t i = 0; i < cfg.positions.size(); ++i)
          eta = eta - symlang::sym(cfg.momenta[i]) * DifferentialForm::differential(m.chart, cfg.positions[i]);
        m.eta = eta;
      }
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    m.fail("[system]", e.what());
  }

  if (cfg.kinetic)
    m.mechanical = m.parse(*cfg.kinetic, "[system] kinetic") + m.parse(*cfg.potential, "[system] potential");
  for (const auto& g : cfg.positive) m.positive.push_back(m.parse(g, "[system] positive"));
  for (const auto& [name, text] : cfg.integrator.initial)
    if (!m.chart->contains(name)) m.fail("[integrator.initial] " + name, "not a coordinate of the chart");
  return m;
}

// ---------------------------------------------------------------------------
// derive

struct Derivation {
  int code = exit_ok;
  std::string report;
  std::optional<FieldSpec> field;
  std::optional<ConstraintLedger> ledger;
  std::vector<std::string> free;  // undetermined coefficients (set to 0 when integrating)
  DiagnosticSpec diag;
  bool lagrangian_residual = false;
  std::optional<CocontactSystem> darboux;  // for hamilton_residual
};

namespace detail {

inline std::string field_lines(const VectorFieldExpr& X, const std::string& indent = "  ") {
  std::string out;
  const auto& c = *X.chart();
  for (std::size_t i = 0; i < c.dim(); ++i) out += indent + "X[" + c.name(i) + "] = " + symlang::to_string(X[i]) + "\n";
  return out;
}

inline std::string matrix_lines(const ExprMatrix& W, const std::string& indent = "  ") {
  std::string out;
  for (const auto& row : W) {
    out += indent + "[";
    for (std::size_t j = 0; j < row.size(); ++j) out += (j ? ", " : "") + symlang::to_string(row[j]);
    out += "]\n";
  }
  return out;
}

inline std::string basis_names(const std::vector<VectorFieldExpr>& basis) {
  std::string out;
  for (const auto& Y : basis) out += (out.empty() ? "" : ", ") + Y.to_string();
  return out;
}

inline int code_of(const ConstraintLedger& l) {
  switch (l.status) {
    case ConstraintLedger::Status::finalized: return exit_ok;
    case ConstraintLedger::Status::inconsistent: return exit_inconsistent;
    case ConstraintLedger::Status::max_iterations: return exit_max_stages;
  }
  return exit_ok;
}

/// Fixes the undetermined coefficients X[...] to 0 (a gauge choice).
inline VectorFieldExpr fix_gauge(const VectorFieldExpr& X, const std::vector<std::string>& free) {
  symlang::Substitution zero;
  for (const auto& f : free) zero[f] = Expr(0.0);
  return X.map([&](const Expr& e) { return tidy(symlang::substitute(e, zero)); });
}

inline std::string admissibility(const StructureVerdict& v) {
  if (v.reason.find("is odd") != std::string::npos) return "not admissible: class is odd (class " + std::to_string(v.cls) + ")";
  return "not admissible: " + v.reason;
}

inline void run_ledger(const PrecocontactSystem& pre, const AlgorithmOptions& opt, Derivation& d, std::ostream& os,
                       const std::string& field_name) {
  os << "structure: " << pre.verdict().to_string() << "\n";
  if (!pre.characteristic_basis().empty())
    os << "characteristic distribution: spanned by " << basis_names(pre.characteristic_basis()) << "\n";
  os << "Reeb fields:\n  R_t = " << pre.reeb_time().to_string() << "\n  R_s = " << pre.reeb_action().to_string() << "\n";
  auto prim = primary_constraints(pre);
  if (!prim.empty()) {
    os << "primary constraints:\n";
    for (const auto& p : prim) os << "  " << p << "\n";
  }
  auto res = constraint_algorithm(pre, opt);
  os << res.ledger.report();
  d.code = code_of(res.ledger);
  d.ledger = res.ledger;
  d.free = res.free;
  if (d.code == exit_ok) {
    os << field_name << " on the final constraint submanifold:\n" << field_lines(res.field);
    if (!res.free.empty()) {
      os << "undetermined coefficients (set to 0 for integration):";
      for (const auto& f : res.free) os << " " << f;
      os << "\n";
    }
    d.field = FieldSpec(fix_gauge(res.field, res.free));
  }
}

}  // namespace detail

inline Derivation derive(const Model& m) {
  Derivation d;
  std::ostringstream os;
  const auto& cfg = m.cfg;
  os << "system: " << cfg.name << " (" << (cfg.lagrangian() ? "lagrangian" : "hamiltonian") << ")\n";
  os << "chart: (";
  for (std::size_t i = 0; i < m.chart->dim(); ++i) os << (i ? ", " : "") << m.chart->name(i);
  os << ")\n";

  try {
    if (cfg.lagrangian()) {
      const auto& L = *m.lagrangian;
      os << "L = " << L.lagrangian() << "\n";
      os << "E_L = " << L.energy() << "\n";
      os << "theta_L = " << L.theta().to_string() << "\n";
      os << "eta_L = " << L.eta().to_string() << "\n";
      os << "d(eta_L) = " << L.d_eta().to_string() << "\n";
      os << "W =\n" << detail::matrix_lines(L.hessian_matrix());
      Regularity reg;
      try {
        reg = L.regularity();
      } catch (const RegularityError& e) {
        os << e.what() << "\n";
        d.code = exit_config;
        d.report = os.str();
        return d;
      }
      os << "regularity: " << reg.to_string() << "\n";
      d.lagrangian_residual = true;
      if (reg.regular) {
        auto [Rt, Rs] = lagrangian_reeb_specs(L);
        os << "Reeb fields:\n";
        if (Rt.implicit) {
          os << "  solved pointwise from the Hessian (no closed-form inverse)\n";
        } else {
          os << "  R_t = " << Rt.field.to_string() << "\n  R_s = " << Rs.field.to_string() << "\n";
        }
        auto G = herglotz_field_spec(L);
        if (G.implicit) {
          os << "regular; Γ_L = " << G.field.to_string() << "\n  accelerations solved pointwise from W G = b\n";
        } else {
          os << "regular; Γ_L = " << G.field.to_string() << "\n" << detail::field_lines(G.field);
        }
        d.field = G;
        d.diag = diagnostic_spec(L, G.implicit ? std::nullopt : std::optional<VectorFieldExpr>(G.field));
      } else {
        auto verdict = verify_cocontact(Structure(L.tau(), L.eta()), m.env);
        if (verdict.kind == StructureVerdict::Kind::invalid) {
          os << "structure: " << verdict.to_string() << "\n" << detail::admissibility(verdict) << "\n";
          d.code = exit_config;
          d.report = os.str();
          return d;
        }
        auto pre = PrecocontactSystem::from_lagrangian(L);
        if (m.holonomic) {
          os << "equations with multipliers:\n";
          for (const auto& r : multiplier_dynamics(*m.holonomic))
            os << "  [" << r.label << "] " << r.lhs << " = " << r.rhs << "\n";
        }
        detail::run_ledger(pre, cfg.algorithm, d, os, "Γ_L");
        d.diag = diagnostic_spec(L, d.field ? std::optional<VectorFieldExpr>(d.field->field) : std::nullopt);
      }
    } else {
      os << "H = " << m.hamiltonian << "\n";
      os << "tau = " << m.tau->to_string() << "\n";
      os << "eta = " << m.eta->to_string() << "\n";
      auto verdict = verify_cocontact(Structure(*m.tau, *m.eta), m.env);
      if (verdict.kind == StructureVerdict::Kind::invalid) {
        os << "structure: " << verdict.to_string() << "\n";
        d.code = exit_config;
        d.report = os.str();
        return d;
      }
      d.diag.energy_name = "H";
      d.diag.energy = m.hamiltonian;
      std::optional<CocontactSystem> sys;
      if (verdict.kind == StructureVerdict::Kind::cocontact) {
        sys.emplace(*m.tau, *m.eta, m.hamiltonian, m.env);
        if (!sys->is_darboux()) sys.reset();
      }
      if (sys) {
        os << "structure: " << verdict.to_string() << "\n";
        os << "Reeb fields:\n  R_t = " << sys->reeb_time().to_string() << "\n  R_s = " << sys->reeb_action().to_string() << "\n";
        auto X = hamiltonian_vector_field(*sys);
        os << "X_H = " << X.to_string() << "\n" << detail::field_lines(X);
        d.field = FieldSpec(X);
        d.diag = diagnostic_spec(*sys);
        d.darboux = sys;
      } else {
        PrecocontactSystem pre(*m.tau, *m.eta, m.hamiltonian, m.env);
        AlgorithmOptions opt = cfg.algorithm;
        opt.enforce_sode = false;
        detail::run_ledger(pre, opt, d, os, "X_H");
        if (d.field) {
          d.diag.action_rate = d.field->field[m.chart->action_name()];
          d.diag.field = d.field->field;
        }
      }
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    os << "error: " << e.what() << "\n";
    d.code = exit_config;
    d.field.reset();
  }
  if (m.mechanical) d.diag.mechanical = m.mechanical;
  d.report = os.str();
  return d;
}

// ---------------------------------------------------------------------------
// check

struct CheckResult {
  int code = exit_ok;
  std::string report;
};

inline CheckResult check(const Model& m) {
  CheckResult r;
  std::ostringstream os;
  const auto& cfg = m.cfg;
  os << "system: " << cfg.name << " (" << (cfg.lagrangian() ? "lagrangian" : "hamiltonian") << ")\n";
  DifferentialForm tau = cfg.lagrangian() ? m.lagrangian->tau() : *m.tau;
  DifferentialForm eta = cfg.lagrangian() ? m.lagrangian->eta() : *m.eta;
  os << "tau = " << tau.to_string() << "\neta = " << eta.to_string() << "\n";
  try {
    auto verdict = verify_cocontact(Structure(tau, eta), m.env);
    os << "structure: " << verdict.to_string() << "\n";
    if (verdict.kind == StructureVerdict::Kind::invalid) {
      if (cfg.lagrangian()) os << detail::admissibility(verdict) << "\n";
      r.code = exit_config;
      r.report = os.str();
      return r;
    }
    if (verdict.kind == StructureVerdict::Kind::precocontact) {
      PrecocontactSystem pre = cfg.lagrangian() ? PrecocontactSystem::from_lagrangian(*m.lagrangian)
                                                : PrecocontactSystem(tau, eta, m.hamiltonian, m.env);
      os << "characteristic distribution: spanned by " << detail::basis_names(pre.characteristic_basis()) << "\n";
      os << "Reeb fields (representatives):\n  R_t = " << pre.reeb_time().to_string()
         << "\n  R_s = " << pre.reeb_action().to_string() << "\n";
      r.report = os.str();
      return r;
    }
    CocontactSystem sys(tau, eta, cfg.lagrangian() ? m.lagrangian->energy() : m.hamiltonian, m.env);
    os << "Reeb fields:\n  R_t = " << sys.reeb_time().to_string() << "\n  R_s = " << sys.reeb_action().to_string() << "\n";
    if (sys.is_darboux()) {
      auto names = cocontact::detail::darboux_names(sys);
      os << "brackets:\n";
      auto br = [&](const std::string& a, const std::string& b) {
        os << "  {" << a << "," << b << "} = " << tidy(jacobi_bracket(sys, symlang::sym(a), symlang::sym(b))) << "\n";
      };
      for (const auto& q : names.q)
        for (const auto& p : names.p) br(q, p);
      for (const auto& q : names.q) br(q, names.s);
      for (const auto& p : names.p) br(p, names.s);
    } else {
      os << "brackets: shown in Darboux coordinates only\n";
    }
    if (cfg.submanifold) {
      const auto& sm = *cfg.submanifold;
      SubmanifoldSpec spec;
      if (!sm.constraints.empty()) {
        for (std::size_t i = 0; i < sm.constraints.size(); ++i)
          spec.constraints.push_back(m.parse(sm.constraints[i], "[submanifold] constraints[" + std::to_string(i) + "]"));
      } else {
        spec.parametric = true;
        spec.parameters = sm.parameters;
        symlang::SymbolTable table;
        table.coordinates.insert(sm.parameters.begin(), sm.parameters.end());
        table.parameters = m.params;
        table.externals = m.externals;
        for (const auto& [coord, text] : sm.embedding) {
          if (!m.chart->contains(coord)) m.fail("[submanifold] embedding " + coord, "not a coordinate");
          try {
            spec.embedding[coord] = symlang::parse(text, table);
          } catch (const Error& e) {
            m.fail("[submanifold] embedding " + coord, e.what());
          }
        }
      }
      os << "submanifold: " << to_string(classify_submanifold(sys, spec)) << "\n";
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    os << "error: " << e.what() << "\n";
    r.code = exit_config;
  }
  r.report = os.str();
  return r;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOptions {
  std::optional<std::string> out_dir;
  bool plots = false;
  std::string stem;  // file stem; defaults to the system name
};

struct SimulationResult {
  int code = exit_ok;
  std::string summary;
  Trajectory trajectory;
  std::optional<DriftTable> drift;
  double action_residual = 0.0;
  std::optional<double> equation_residual;
  std::filesystem::path csv, cartesian_csv, script;
};

namespace detail {

inline std::string csv_number(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.12e", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

inline void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
                      const std::vector<const std::vector<double>*>& columns) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (std::size_t j = 0; j < header.size(); ++j) out << (j ? "," : "") << csv_field(header[j]);
  out << "\r\n";
  std::size_t rows = columns.empty() ? 0 : columns.front()->size();
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < columns.size(); ++j) out << (j ? "," : "") << csv_number((*columns[j])[i]);
    out << "\r\n";
  }
}

inline std::string gp_quote(const std::string& s) { return "\"" + s + "\""; }

inline std::string plot_script(const Model& m, const std::string& stem, const std::vector<std::string>& energies,
                               bool cartesian) {
  const auto& cfg = m.cfg;
  std::string csv = stem + "_trajectory.csv";
  std::ostringstream gp;
  gp << "# gnuplot script for " << cfg.name << "; run from this directory: gnuplot " << stem << ".gp\n";
  gp << "set datafile separator comma\n";
  gp << "set terminal pngcairo size 900,600\n";
  gp << "set grid\n";
  gp << "data = " << gp_quote(csv) << "\n\n";

  std::vector<std::string> states = cfg.positions;
  const auto& second = cfg.lagrangian() ? cfg.velocities : cfg.momenta;
  gp << "set output " << gp_quote(stem + "_state.png") << "\n";
  gp << "set xlabel \"t\"\nset title \"state\"\n";
  gp << "plot ";
  std::vector<std::string> all = states;
  all.insert(all.end(), second.begin(), second.end());
  for (std::size_t i = 0; i < all.size(); ++i)
    gp << (i ? ", \\\n     " : "") << "data using \"t\":" << gp_quote(all[i]) << " with lines title " << gp_quote(all[i]);
  gp << "\n\n";

  for (std::size_t i = 0; i < cfg.positions.size(); ++i) {
    const auto& q = cfg.positions[i];
    const auto& v = second[i];
    gp << "set output " << gp_quote(stem + "_phase_" + q + ".png") << "\n";
    gp << "set xlabel " << gp_quote(q) << "\nset ylabel " << gp_quote(v) << "\nset title \"phase portrait\"\n";
    gp << "plot data using " << gp_quote(q) << ":" << gp_quote(v) << " with lines notitle\n\n";
  }

  if (!energies.empty()) {
    gp << "set output " << gp_quote(stem + "_energy.png") << "\n";
    gp << "set xlabel \"t\"\nset ylabel \"energy\"\nset title \"energy\"\nplot ";
    for (std::size_t i = 0; i < energies.size(); ++i)
      gp << (i ? ", \\\n     " : "") << "data using \"t\":" << gp_quote(energies[i]) << " with lines title "
         << gp_quote(energies[i]);
    gp << "\n\n";
  }

  if (cartesian) {
    gp << "set output " << gp_quote(stem + "_cartesian.png") << "\n";
    gp << "set xlabel \"x\"\nset ylabel \"y\"\nset title \"trajectory in the plane\"\nset size ratio -1\n";
    gp << "plot " << gp_quote(stem + "_cartesian.csv") << " using \"x\":\"y\" with lines notitle\n";
    gp << "set size noratio\n\n";
  }

  for (const auto& [x, y] : cfg.output.panels) {
    gp << "set output " << gp_quote(stem + "_" + y + "_vs_" + x + ".png") << "\n";
    gp << "set xlabel " << gp_quote(x) << "\nset ylabel " << gp_quote(y) << "\nset title \"\"\n";
    gp << "plot data using " << gp_quote(x) << ":" << gp_quote(y) << " with lines notitle\n\n";
  }
  return gp.str();
}

}  // namespace detail

inline Point initial_state(const Model& m, const Derivation& d) {
  const auto& g = m.cfg.integrator;
  std::map<std::string, double> given;
  for (const auto& [name, text] : g.initial) given[name] = m.constant(text, "[integrator.initial] " + name);
  given.erase("t");
  if (d.ledger) return consistent_initial_state(*d.ledger, given, m.env, g.t0);
  Point x(m.chart->dim(), 0.0);
  for (const auto& [name, v] : given) x[m.chart->index(name)] = v;
  x[m.chart->time_index()] = g.t0;
  return x;
}

inline SimulationResult simulate(const Model& m, const Derivation& d, const SimulateOptions& opt = {}) {
  SimulationResult r;
  std::ostringstream os;
  if (d.code != exit_ok || !d.field) {
    r.code = d.code == exit_ok ? exit_config : d.code;
    r.summary = "derivation did not produce a vector field; nothing to integrate\n";
    return r;
  }
  const auto& cfg = m.cfg;
  IntegratorConfig ic;
  ic.method = cfg.integrator.method;
  ic.dt = cfg.integrator.dt;
  ic.t0 = cfg.integrator.t0;
  ic.t1 = cfg.integrator.t1;
  ic.atol = cfg.integrator.atol;
  ic.rtol = cfg.integrator.rtol;
  ic.positive = m.positive;
  ic.initial = initial_state(m, d);

  r.trajectory = integrate(*d.field, ic, m.env);
  auto& tr = r.trajectory;
  diagnostics(tr, d.diag, m.env);
  if (tr.has_diagnostic("action_residual")) r.action_residual = max_abs({tr.diagnostic("action_residual")});
  if (d.ledger) r.drift = constraint_drift(tr, *d.ledger, m.env);
  if (tr.size() >= 3) {
    if (d.lagrangian_residual) r.equation_residual = max_abs(herglotz_residual(*m.lagrangian, tr));
    else if (d.darboux) r.equation_residual = max_abs(hamilton_residual(*d.darboux, tr));
  }

  std::filesystem::path dir = opt.out_dir.value_or(cfg.output.directory);
  std::filesystem::create_directories(dir);
  std::string stem = opt.stem.empty() ? cfg.name : opt.stem;

  const auto& chart = *tr.chart;
  std::vector<std::vector<double>> coord_cols;
  std::vector<std::string> header{"t"};
  coord_cols.push_back(tr.times);
  for (std::size_t i = 0; i < chart.dim(); ++i) {
    if (i == chart.time_index()) continue;
    header.push_back(chart.name(i));
    coord_cols.push_back(tr.column(chart.name(i)));
  }
  std::vector<const std::vector<double>*> cols;
  for (const auto& c : coord_cols) cols.push_back(&c);
  std::vector<std::string> energies;
  for (std::size_t k = 0; k < tr.diagnostic_names.size(); ++k) {
    const auto& n = tr.diagnostic_names[k];
    if (n == "action_residual") continue;
    header.push_back(n);
    cols.push_back(&tr.diagnostics[k]);
    if (n == d.diag.energy_name || n == "E_m") energies.push_back(n);
  }
  r.csv = dir / (stem + "_trajectory.csv");
  detail::write_csv(r.csv, header, cols);

  if (cfg.output.cartesian_map) {
    CompiledScalar X(m.parse(cfg.output.cartesian_map->first, "[output] cartesian_map x"), chart, m.env);
    CompiledScalar Y(m.parse(cfg.output.cartesian_map->second, "[output] cartesian_map y"), chart, m.env);
    std::vector<double> xs, ys;
    for (const auto& x : tr.states) {
      xs.push_back(X(x));
      ys.push_back(Y(x));
    }
    r.cartesian_csv = dir / (stem + "_cartesian.csv");
    detail::write_csv(r.cartesian_csv, {"t", "x", "y"}, {&tr.times, &xs, &ys});
  }
  for (const auto& [x, y] : cfg.output.panels)
    for (const auto& n : {x, y})
      if (std::find(header.begin(), header.end(), n) == header.end()) m.fail("[output] panels", "no CSV column '" + n + "'");
  if (opt.plots || cfg.output.plots) {
    r.script = dir / (stem + ".gp");
    std::ofstream gp(r.script, std::ios::binary);
    gp << detail::plot_script(m, stem, energies, cfg.output.cartesian_map.has_value());
  }

  os << "integrated " << to_string(ic.method) << " over [" << format_double(ic.t0) << ", " << format_double(tr.times.back())
     << "], " << tr.size() << " samples: " << tr.status << "\n";
  os << "max action residual |s - s0 - int L dt|: " << detail::csv_number(r.action_residual) << "\n";
  if (r.equation_residual) os << "max equation residual: " << detail::csv_number(*r.equation_residual) << "\n";
  if (r.drift) {
    for (std::size_t k = 0; k < r.drift->names.size(); ++k)
      os << "drift " << r.drift->names[k] << ": " << detail::csv_number(r.drift->max_abs[k]) << "\n";
    os << "constraint drift: " << (r.drift->pass() ? "pass" : "FAIL") << " (tolerance "
       << detail::csv_number(r.drift->tolerance) << ")\n";
  }
  os << "wrote " << r.csv.string() << "\n";
  if (!r.cartesian_csv.empty()) os << "wrote " << r.cartesian_csv.string() << "\n";
  if (!r.script.empty()) os << "wrote " << r.script.string() << "\n";
  if (!tr.ok()) r.code = exit_integration;
  r.summary = os.str();
  return r;
}

// ---------------------------------------------------------------------------
// parameter sweeps

struct Sweep {
  std::string parameter;
  std::vector<double> values;
};

/// "name=a:b:step", inclusive of b up to rounding.
inline Sweep parse_sweep(const std::string& spec) {
  auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--sweep: expected name=start:stop:step");
  Sweep s{spec.substr(0, eq), {}};
  std::vector<double> v;
  std::string rest = spec.substr(eq + 1);
  std::size_t pos = 0, next = 0;
  for (int i = 0; i < 3; ++i) {
    next = rest.find(':', pos);
    std::string part = rest.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
    double x = 0.0;
    auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), x);
    if (ec != std::errc() || p != part.data() + part.size()) throw ConfigError("--sweep: bad number '" + part + "'");
    v.push_back(x);
    if (next == std::string::npos && i < 2) throw ConfigError("--sweep: expected name=start:stop:step");
    pos = next + 1;
  }
  if (next != std::string::npos) throw ConfigError("--sweep: expected name=start:stop:step");
  if (!(v[2] > 0.0) || v[1] < v[0]) throw ConfigError("--sweep: need start <= stop and step > 0");
  auto n = static_cast<std::size_t>(std::floor((v[1] - v[0]) / v[2] + 1e-9));
  for (std::size_t k = 0; k <= n; ++k) s.values.push_back(v[0] + static_cast<double>(k) * v[2]);
  return s;
}

inline std::string sweep_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

struct SweepRun {
  double value = 0.0;
  int code = exit_ok;
  std::string text;
};

/// One derive + simulate per value, fanned out over worker threads.
inline std::vector<SweepRun> run_sweep(const SystemConfig& base, const Sweep& sw, const SimulateOptions& opt,
                                       unsigned threads = std::thread::hardware_concurrency()) {
  if (!base.parameters.count(sw.parameter)) throw ConfigError("--sweep: unknown parameter '" + sw.parameter + "'");
  std::vector<SweepRun> out(sw.values.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next++) < out.size();) {
      auto& run = out[i];
      run.value = sw.values[i];
      try {
        SystemConfig cfg = base;
        cfg.parameters[sw.parameter] = run.value;
        Model m = build_model(cfg);
        Derivation d = derive(m);
        SimulateOptions o = opt;
        o.stem = cfg.name + "_" + sw.parameter + sweep_label(run.value);
        auto r = simulate(m, d, o);
        run.code = d.code != exit_ok ? d.code : r.code;
        run.text = d.code != exit_ok ? d.report : r.summary;
      } catch (const Error& e) {
        run.code = exit_config;
        run.text = std::string(e.what()) + "\n";
      }
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(out.size())));
  std::vector<std::jthread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(work);
  work();
  pool.clear();
  return out;
}

}  // namespace cocontact::app
