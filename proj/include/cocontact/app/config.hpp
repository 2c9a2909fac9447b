#pragma once

// System definition files (TOML).
//
//   [system]       name, formalism, positions, velocities | momenta, generator, ...
//   [parameters]   name = number
//   [externals]    name = "expression in t" | { type = "smooth_pulse" | "sin_pulse" | "const" | "expression", ... }
//   [constraints]  holonomic, multipliers, enforce_sode, max_stages, reeb_tangency
//   [integrator]   method, dt, t0, t1, atol, rtol, [integrator.initial]
//   [output]       directory, plots, cartesian_map, panels
//   [submanifold]  constraints | parameters + embedding   (used by `check`)

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <toml.hpp>

#include "cocontact/dynamics.hpp"
#include "cocontact/functions.hpp"

namespace cocontact::app {

class ConfigError : public Error {
 public:
  using Error::Error;
};

struct ExternalSpec {
  std::string type = "expression";  // expression | smooth_pulse | sin_pulse | const
  std::string expr;
  double amplitude = 1.0, center = 1.0, width = 0.25, value = 0.0;
};

struct SystemConfig {
  enum class Formalism { lagrangian, hamiltonian };

  std::string name = "system";
  std::string source;  // file path or "builtin:<name>"
  Formalism formalism = Formalism::lagrangian;
  std::vector<std::string> positions, velocities, momenta, spectators;
  std::string action = "s";
  std::string generator;  // L or H
  std::optional<std::string> kinetic, potential;
  std::optional<std::string> tau, eta;  // 1-forms, Hamiltonian side only
  std::vector<std::string> positive;    // domain guards

  std::map<std::string, double> parameters;
  std::map<std::string, ExternalSpec> externals;

  std::vector<std::string> holonomic, multipliers;
  AlgorithmOptions algorithm;

  struct Integrator {
    IntegratorConfig::Method method = IntegratorConfig::Method::rk4;
    double dt = 1e-3, t0 = 0.0, t1 = 10.0, atol = 1e-9, rtol = 1e-7;
    std::vector<std::pair<std::string, std::string>> initial;  // coordinate -> expression
  } integrator;

  struct Output {
    std::string directory = ".";
    bool plots = false;
    std::optional<std::pair<std::string, std::string>> cartesian_map;  // x(state), y(state)
    std::vector<std::pair<std::string, std::string>> panels;           // extra (x, y) plots
  } output;

  struct Submanifold {
    std::vector<std::string> constraints;
    std::vector<std::string> parameters;
    std::map<std::string, std::string> embedding;
  };
  std::optional<Submanifold> submanifold;

  std::map<std::string, std::string> locations;  // "[section] key" -> "line:column"

  bool lagrangian() const { return formalism == Formalism::lagrangian; }
};

inline std::string format_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

/// "source:line:col: where: what", with the position of `where` (or of the
/// key it indexes, for labels like "holonomic[2]") when it is known.
inline std::string located(const std::string& source, const std::map<std::string, std::string>& locations,
                           const std::string& where, const std::string& what) {
  auto it = locations.find(where);
  if (it == locations.end() && !where.empty() && where.back() == ']')
    if (auto b = where.rfind('['); b != std::string::npos && b > 0) it = locations.find(where.substr(0, b));
  std::string at = it == locations.end() ? "" : ":" + it->second;
  return source + at + ": " + where + ": " + what;
}

namespace detail {

class Reader {
 public:
  Reader(std::string source, std::map<std::string, std::string>& locations)
      : source_(std::move(source)), loc_(locations) {}

  [[noreturn]] void fail(const std::string& where, const std::string& what) const {
    throw ConfigError(located(source_, loc_, where, what));
  }

  void mark(const std::string& where, const toml::node& n) const {
    const auto& b = n.source().begin;
    if (b.line > 0) loc_.emplace(where, std::to_string(b.line) + ":" + std::to_string(b.column));
  }

  void only(const toml::table& t, const std::string& where, std::set<std::string> allowed) const {
    for (const auto& [k, v] : t)
      if (!allowed.count(std::string(k.str()))) {
        std::string label = where + " " + std::string(k.str());
        mark(label, v);
        fail(label, "unknown key");
      }
  }

  const toml::table* table(const toml::table& t, const std::string& key, bool required = false) const {
    const toml::node* n = t.get(key);
    if (!n) {
      if (required) fail("[" + key + "]", "missing section");
      return nullptr;
    }
    mark("[" + key + "]", *n);
    if (!n->is_table()) fail("[" + key + "]", "expected a table");
    return n->as_table();
  }

  const toml::node* get(const toml::table& t, const std::string& where, const std::string& key) const {
    const toml::node* n = t.get(key);
    if (n) mark(where + " " + key, *n);
    return n;
  }

  std::optional<std::string> str(const toml::table& t, const std::string& where, const std::string& key) const {
    const toml::node* n = get(t, where, key);
    if (!n) return std::nullopt;
    if (!n->is_string()) fail(where + " " + key, "expected a string");
    return n->value<std::string>();
  }

  std::optional<double> num(const toml::table& t, const std::string& where, const std::string& key) const {
    const toml::node* n = get(t, where, key);
    if (!n) return std::nullopt;
    if (!n->is_number()) fail(where + " " + key, "expected a number");
    return n->value<double>();
  }

  std::optional<bool> boolean(const toml::table& t, const std::string& where, const std::string& key) const {
    const toml::node* n = get(t, where, key);
    if (!n) return std::nullopt;
    if (!n->is_boolean()) fail(where + " " + key, "expected true or false");
    return n->value<bool>();
  }

  std::vector<std::string> strings(const toml::table& t, const std::string& where, const std::string& key) const {
    std::vector<std::string> out;
    const toml::node* n = get(t, where, key);
    if (!n) return out;
    const toml::array* a = n->as_array();
    if (!a) fail(where + " " + key, "expected an array of strings");
    for (const auto& e : *a) {
      if (!e.is_string()) fail(where + " " + key, "expected an array of strings");
      out.push_back(*e.value<std::string>());
    }
    return out;
  }

  // number or string expression, kept as text
  std::string scalar_text(const toml::node& n, const std::string& where) const {
    mark(where, n);
    if (n.is_number()) return format_double(*n.value<double>());
    if (n.is_string()) return *n.value<std::string>();
    fail(where, "expected a number or an expression string");
  }

 private:
  std::string source_;
  std::map<std::string, std::string>& loc_;
};

}  // namespace detail

inline SystemConfig parse_config(std::string_view text, const std::string& source) {
  SystemConfig c;
  c.source = source;
  detail::Reader rd(source, c.locations);
  toml::table root;
  try {
    root = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    const auto& b = e.source().begin;
    throw ConfigError(source + ":" + std::to_string(b.line) + ":" + std::to_string(b.column) + ": " +
                      std::string(e.description()));
  }
  rd.only(root, "top level", {"system", "parameters", "externals", "constraints", "integrator", "output", "submanifold"});

  const auto* sys = rd.table(root, "system", true);
  const std::string S = "[system]";
  rd.only(*sys, S, {"name", "formalism", "positions", "velocities", "momenta", "spectators", "action", "lagrangian",
                    "hamiltonian", "kinetic", "potential", "tau", "eta", "positive"});
  if (auto v = rd.str(*sys, S, "name")) c.name = *v;
  if (c.name.empty() || c.name.find_first_of("/\\ \t") != std::string::npos) rd.fail(S + " name", "must be a plain file-name stem");
  std::string formalism = rd.str(*sys, S, "formalism").value_or("lagrangian");
  if (formalism == "lagrangian") c.formalism = SystemConfig::Formalism::lagrangian;
  else if (formalism == "hamiltonian") c.formalism = SystemConfig::Formalism::hamiltonian;
  else rd.fail(S + " formalism", "expected \"lagrangian\" or \"hamiltonian\"");
  c.positions = rd.strings(*sys, S, "positions");
  c.velocities = rd.strings(*sys, S, "velocities");
  c.momenta = rd.strings(*sys, S, "momenta");
  c.spectators = rd.strings(*sys, S, "spectators");
  c.positive = rd.strings(*sys, S, "positive");
  if (auto v = rd.str(*sys, S, "action")) c.action = *v;
  c.kinetic = rd.str(*sys, S, "kinetic");
  c.potential = rd.str(*sys, S, "potential");
  c.tau = rd.str(*sys, S, "tau");
  c.eta = rd.str(*sys, S, "eta");
  if (c.kinetic.has_value() != c.potential.has_value()) rd.fail(S, "kinetic and potential go together");

  auto L = rd.str(*sys, S, "lagrangian");
  auto H = rd.str(*sys, S, "hamiltonian");
  if (c.lagrangian()) {
    if (!L) rd.fail(S, "missing 'lagrangian'");
    if (H) rd.fail(S + " hamiltonian", "not allowed with formalism = \"lagrangian\"");
    if (!c.momenta.empty()) rd.fail(S + " momenta", "a Lagrangian system has velocities");
    if (c.tau || c.eta) rd.fail(S, "tau/eta are derived from the Lagrangian");
    if (!c.spectators.empty()) rd.fail(S + " spectators", "only for Hamiltonian systems");
    if (c.velocities.empty())
      for (const auto& q : c.positions) c.velocities.push_back("v_" + q);
    if (c.velocities.size() != c.positions.size()) rd.fail(S + " velocities", "one velocity per position");
    c.generator = *L;
  } else {
    if (!H) rd.fail(S, "missing 'hamiltonian'");
    if (L) rd.fail(S + " lagrangian", "not allowed with formalism = \"hamiltonian\"");
    if (!c.velocities.empty()) rd.fail(S + " velocities", "a Hamiltonian system has momenta");
    if (c.momenta.empty())
      for (const auto& q : c.positions) c.momenta.push_back("p_" + q);
    if (c.momenta.size() != c.positions.size()) rd.fail(S + " momenta", "one momentum per position");
    if (c.tau.has_value() != c.eta.has_value()) rd.fail(S, "tau and eta go together");
    c.generator = *H;
  }

  if (const auto* p = rd.table(root, "parameters")) {
    for (const auto& [k, v] : *p) {
      rd.mark("[parameters] " + std::string(k.str()), v);
      if (!v.is_number()) rd.fail("[parameters] " + std::string(k.str()), "expected a number");
      c.parameters[std::string(k.str())] = *v.value<double>();
    }
  }

  if (const auto* ex = rd.table(root, "externals")) {
    for (const auto& [k, v] : *ex) {
      std::string where = "[externals] " + std::string(k.str());
      rd.mark(where, v);
      ExternalSpec e;
      if (v.is_string()) {
        e.expr = *v.value<std::string>();
      } else if (const auto* t = v.as_table()) {
        rd.only(*t, where, {"type", "expr", "amplitude", "center", "start", "width", "value"});
        e.type = rd.str(*t, where, "type").value_or("expression");
        if (e.type == "expression") {
          auto x = rd.str(*t, where, "expr");
          if (!x) rd.fail(where, "missing 'expr'");
          e.expr = *x;
        } else if (e.type == "const") {
          auto x = rd.num(*t, where, "value");
          if (!x) rd.fail(where, "missing 'value'");
          e.value = *x;
        } else if (e.type == "smooth_pulse" || e.type == "sin_pulse") {
          e.amplitude = rd.num(*t, where, "amplitude").value_or(1.0);
          e.center = rd.num(*t, where, e.type == "sin_pulse" ? "start" : "center").value_or(1.0);
          e.width = rd.num(*t, where, "width").value_or(e.type == "sin_pulse" ? 1.0 : 0.25);
          if (!(e.width > 0.0)) rd.fail(where + " width", "must be positive");
        } else {
          rd.fail(where + " type", "expected expression, smooth_pulse, sin_pulse or const");
        }
      } else {
        rd.fail(where, "expected an expression string or a table");
      }
      c.externals[std::string(k.str())] = e;
    }
  }

  if (const auto* k = rd.table(root, "constraints")) {
    const std::string W = "[constraints]";
    rd.only(*k, W, {"holonomic", "multipliers", "enforce_sode", "max_stages", "reeb_tangency"});
    c.holonomic = rd.strings(*k, W, "holonomic");
    c.multipliers = rd.strings(*k, W, "multipliers");
    if (!c.multipliers.empty() && c.multipliers.size() != c.holonomic.size())
      rd.fail(W + " multipliers", "one name per holonomic constraint");
    if (!c.holonomic.empty() && !c.lagrangian()) rd.fail(W + " holonomic", "only for Lagrangian systems");
    if (auto v = rd.boolean(*k, W, "enforce_sode")) c.algorithm.enforce_sode = *v;
    if (auto v = rd.boolean(*k, W, "reeb_tangency")) c.algorithm.reeb_tangency = *v;
    if (auto v = rd.num(*k, W, "max_stages")) {
      if (*v < 1 || *v != std::floor(*v)) rd.fail(W + " max_stages", "expected a positive integer");
      c.algorithm.max_stages = static_cast<int>(*v);
    }
  }

  if (const auto* in = rd.table(root, "integrator")) {
    const std::string I = "[integrator]";
    rd.only(*in, I, {"method", "dt", "t0", "t1", "atol", "rtol", "initial"});
    auto& g = c.integrator;
    std::string m = rd.str(*in, I, "method").value_or("rk4");
    if (m == "rk4") g.method = IntegratorConfig::Method::rk4;
    else if (m == "rk45") g.method = IntegratorConfig::Method::rk45;
    else rd.fail(I + " method", "expected \"rk4\" or \"rk45\"");
    g.dt = rd.num(*in, I, "dt").value_or(g.dt);
    g.t0 = rd.num(*in, I, "t0").value_or(g.t0);
    g.t1 = rd.num(*in, I, "t1").value_or(g.t1);
    g.atol = rd.num(*in, I, "atol").value_or(g.atol);
    g.rtol = rd.num(*in, I, "rtol").value_or(g.rtol);
    if (!(g.dt > 0.0)) rd.fail(I + " dt", "must be positive");
    if (!(g.t1 > g.t0)) rd.fail(I, "t1 must exceed t0");
    if (!(g.atol > 0.0) || !(g.rtol > 0.0)) rd.fail(I, "tolerances must be positive");
    if (const auto* x0 = rd.table(*in, "initial"))
      for (const auto& [k, v] : *x0) g.initial.emplace_back(std::string(k.str()), rd.scalar_text(v, "[integrator.initial] " + std::string(k.str())));
  }

  if (const auto* out = rd.table(root, "output")) {
    const std::string O = "[output]";
    rd.only(*out, O, {"directory", "plots", "cartesian_map", "panels"});
    if (auto v = rd.str(*out, O, "directory")) c.output.directory = *v;
    if (auto v = rd.boolean(*out, O, "plots")) c.output.plots = *v;
    if (const auto* m = rd.table(*out, "cartesian_map")) {
      rd.only(*m, O + " cartesian_map", {"x", "y"});
      auto x = rd.str(*m, O + " cartesian_map", "x"), y = rd.str(*m, O + " cartesian_map", "y");
      if (!x || !y) rd.fail(O + " cartesian_map", "needs both x and y");
      c.output.cartesian_map = std::pair{*x, *y};
    }
    if (const toml::node* n = rd.get(*out, O, "panels")) {
      const toml::array* a = n->as_array();
      if (!a) rd.fail(O + " panels", "expected an array of [x, y] pairs");
      for (const auto& e : *a) {
        const toml::array* pr = e.as_array();
        if (!pr || pr->size() != 2 || !(*pr)[0].is_string() || !(*pr)[1].is_string())
          rd.fail(O + " panels", "expected an array of [x, y] pairs");
        c.output.panels.emplace_back(*(*pr)[0].value<std::string>(), *(*pr)[1].value<std::string>());
      }
    }
  }

  if (const auto* sm = rd.table(root, "submanifold")) {
    const std::string M = "[submanifold]";
    rd.only(*sm, M, {"constraints", "parameters", "embedding"});
    SystemConfig::Submanifold s;
    s.constraints = rd.strings(*sm, M, "constraints");
    s.parameters = rd.strings(*sm, M, "parameters");
    if (const auto* e = rd.table(*sm, "embedding"))
      for (const auto& [k, v] : *e) {
        rd.mark(M + " embedding " + std::string(k.str()), v);
        if (!v.is_string()) rd.fail(M + " embedding " + std::string(k.str()), "expected an expression string");
        s.embedding[std::string(k.str())] = *v.value<std::string>();
      }
    if (s.constraints.empty() == s.embedding.empty()) rd.fail(M, "give either constraints or parameters + embedding");
    c.submanifold = std::move(s);
  }
  return c;
}

inline SystemConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path + ": cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

inline symlang::TimeFunction make_time_function(const ExternalSpec& e, const std::map<std::string, double>& params) {
  if (e.type == "const") return functions::constant(e.value);
  if (e.type == "smooth_pulse") return functions::smooth_pulse(e.amplitude, e.center, e.width);
  if (e.type == "sin_pulse") return functions::sin_pulse(e.amplitude, e.center, e.width);
  return functions::expression(e.expr, params);
}

}  // namespace cocontact::app
