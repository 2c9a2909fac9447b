#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "cocontact/dynamics.hpp"
#include "cocontact/functions.hpp"

using namespace cocontact;
using exterior::Chart;

namespace {

Expr P(std::string_view text, const Chart& c, const std::set<std::string>& params = {}, const std::set<std::string>& ext = {}) {
  return exterior::parse(text, c, params, ext);
}

struct Oscillator {
  LagrangianSystem sys;
  Environment env;
};

Oscillator oscillator(double gamma, symlang::TimeFunction f) {
  auto c = exterior::tangent_chart({"q"}, {"v"});
  std::set<std::string> params{"m", "k", "gamma"};
  Expr L = P("(1/2)*m*v^2 - (k/2)*q^2 + q*f(t) - (gamma/m)*s", *c, params, {"f"});
  Environment env;
  env.set("m", 1.0).set("k", 1.0).set("gamma", gamma).set_external("f", std::move(f));
  LagrangianSystem sys(c, L, env, P("(1/2)*m*v^2", *c, params), P("(k/2)*q^2", *c, params));
  return {sys, env};
}

IntegratorConfig config(const Chart& c, std::map<std::string, double> x0, double dt, double T) {
  IntegratorConfig cfg;
  cfg.dt = dt;
  cfg.t1 = T;
  cfg.initial.assign(c.dim(), 0.0);
  for (const auto& [n, v] : x0) cfg.initial[c.index(n)] = v;
  return cfg;
}

double max_cos_error(const Trajectory& tr) {
  double err = 0.0;
  std::size_t iq = tr.chart->index("q");
  for (std::size_t k = 0; k < tr.size(); ++k) err = std::max(err, std::abs(tr.states[k][iq] - std::cos(tr.times[k])));
  return err;
}

double peak(const std::vector<double>& col) {
  double m = 0.0;
  for (double v : col) m = std::max(m, std::abs(v));
  return m;
}

double peak(const std::vector<std::vector<double>>& rows) {
  double m = 0.0;
  for (const auto& r : rows) m = std::max(m, peak(r));
  return m;
}

const std::vector<double>& column(const Trajectory& tr, const std::string& name) { return tr.diagnostic(name); }

}  // namespace

TEST_CASE("time functions", "[dynamics][functions]") {
  auto c = functions::constant(2.5);
  CHECK(c(3.0, 0) == 2.5);
  CHECK(c(3.0, 2) == 0.0);

  auto g = functions::smooth_pulse(2.0, 1.0, 0.3);
  auto h = 1e-4;
  for (double t : {0.4, 1.0, 1.37}) {
    CHECK(g(t, 0) == Catch::Approx(2.0 * std::exp(-0.5 * std::pow((t - 1.0) / 0.3, 2))));
    for (int n = 0; n < 4; ++n)
      CHECK(g(t, n + 1) == Catch::Approx((g(t + h, n) - g(t - h, n)) / (2 * h)).epsilon(1e-5).margin(1e-6));
  }

  auto s = functions::sin_pulse(1.5, 1.0, 0.5);
  CHECK(s(0.9, 0) == 0.0);
  CHECK(s(1.25, 0) == Catch::Approx(1.5));
  CHECK(s(1.0, 1) == Catch::Approx(1.5 * std::numbers::pi / 0.5));

  auto e = functions::expression("a + 0.1*sin(2*pi*t)", {{"a", 1.0}});
  CHECK(e(0.3, 0) == Catch::Approx(1.0 + 0.1 * std::sin(0.6 * std::numbers::pi)));
  CHECK(e(0.3, 3) == Catch::Approx(-0.1 * std::pow(2 * std::numbers::pi, 3) * std::cos(0.6 * std::numbers::pi)));
  CHECK_THROWS(functions::expression("q + t"));
}

TEST_CASE("conservative oscillator oracle", "[dynamics][rk4]") {
  auto o = oscillator(0.0, functions::constant(0.0));
  auto X = herglotz_field(o.sys);
  const auto& c = *o.sys.chart();
  auto tr = integrate(X, config(c, {{"q", 1.0}, {"v", 0.0}}, 1e-3, 10.0), o.env);
  REQUIRE(tr.ok());
  CHECK(tr.times.back() == 10.0);
  CHECK(tr.size() == 10001);
  CHECK(max_cos_error(tr) <= 1e-8);

  diagnostics(tr, diagnostic_spec(o.sys, X), o.env);
  const auto& E = column(tr, "E_L");
  double spread = *std::max_element(E.begin(), E.end()) - *std::min_element(E.begin(), E.end());
  CHECK(spread <= 1e-8);
  CHECK(E.front() == Catch::Approx(0.5));
  CHECK(peak(column(tr, "action_residual")) <= 1e-6);
  CHECK(peak(herglotz_residual(o.sys, tr)) <= 1e-5);

  // order 4: halving dt divides the error by about 16
  auto coarse = integrate(X, config(c, {{"q", 1.0}}, 0.1, 10.0), o.env);
  auto fine = integrate(X, config(c, {{"q", 1.0}}, 0.05, 10.0), o.env);
  double ratio = max_cos_error(coarse) / max_cos_error(fine);
  CHECK(ratio >= 14.0);
  CHECK(ratio <= 18.0);

  // a step that does not divide the span is shortened at the end
  auto odd = integrate(X, config(c, {{"q", 1.0}}, 0.3, 1.0), o.env);
  CHECK(odd.times.back() == 1.0);
  CHECK(odd.size() == 5);
}

TEST_CASE("rk45 adaptive", "[dynamics][rk45]") {
  auto o = oscillator(0.0, functions::constant(0.0));
  auto X = herglotz_field(o.sys);
  auto cfg = config(*o.sys.chart(), {{"q", 1.0}}, 0.01, 10.0);
  cfg.method = IntegratorConfig::Method::rk45;
  cfg.atol = 1e-11;
  cfg.rtol = 1e-11;
  auto tr = integrate(X, cfg, o.env);
  REQUIRE(tr.ok());
  CHECK(tr.times.back() == 10.0);
  CHECK(tr.size() < 5000);
  CHECK(max_cos_error(tr) <= 1e-8);
  for (std::size_t k = 1; k < tr.size(); ++k) CHECK(tr.times[k] > tr.times[k - 1]);
}

TEST_CASE("integrator configuration errors", "[dynamics]") {
  auto o = oscillator(0.0, functions::constant(0.0));
  auto X = herglotz_field(o.sys);
  auto cfg = config(*o.sys.chart(), {{"q", 1.0}}, 0.0, 1.0);
  CHECK_THROWS_AS(integrate(X, cfg, o.env), IntegrationError);
  cfg.dt = 0.1;
  cfg.t1 = 0.0;
  CHECK_THROWS_AS(integrate(X, cfg, o.env), IntegrationError);
  cfg.t1 = 1.0;
  cfg.initial.pop_back();
  CHECK_THROWS_AS(integrate(X, cfg, o.env), IntegrationError);

  // a field whose t-component is not 1 is caught by the tracking check
  auto bad = X;
  bad.set("t", Expr(2.0));
  auto tr = integrate(bad, config(*o.sys.chart(), {{"q", 1.0}}, 0.1, 1.0), o.env);
  CHECK_FALSE(tr.ok());
  CHECK(tr.status.find("track") != std::string::npos);
}

TEST_CASE("damped forced oscillator", "[dynamics][diagnostics]") {
  auto o = oscillator(0.3, functions::smooth_pulse(1.0, 1.0, 0.25));
  auto X = herglotz_field(o.sys);
  const auto& c = *o.sys.chart();
  auto tr = integrate(X, config(c, {}, 1e-3, 20.0), o.env);
  REQUIRE(tr.ok());
  diagnostics(tr, diagnostic_spec(o.sys, X), o.env);
  CHECK(tr.diagnostic_names == std::vector<std::string>{"E_L", "E_m", "action_residual"});
  CHECK(peak(column(tr, "action_residual")) <= 1e-6);
  CHECK(peak(herglotz_residual(o.sys, tr)) <= 1e-5);

  const auto& E = column(tr, "E_L");
  const auto& Em = column(tr, "E_m");
  int changes = 0;
  for (std::size_t k = 1; k < tr.size(); ++k)
    if ((Em[k] - E[k]) * (Em[k - 1] - E[k - 1]) < 0.0) ++changes;
  CHECK(changes >= 10);
  // after the pulse dE_L/dt = -(gamma/m) E_L: exponential decay
  std::size_t k2 = 3000, k10 = 10000;
  CHECK(E[k10] == Catch::Approx(E[k2] * std::exp(-0.3 * 7.0)).epsilon(1e-4));
  for (std::size_t k = k2 + 1; k < tr.size(); ++k) REQUIRE(E[k] < E[k - 1]);
}

TEST_CASE("Hamiltonian side integrates to the Legendre image", "[dynamics][hamiltonian]") {
  auto o = oscillator(0.3, functions::smooth_pulse(1.0, 1.0, 0.25));
  auto c = exterior::darboux_chart(1);
  std::set<std::string> params{"m", "k", "gamma"};
  CocontactSystem H = canonical_system(1, P("p^2/(2*m) + (k/2)*q^2 - q*f(t) + (gamma/m)*s", *c, params, {"f"}), o.env);
  auto Xh = hamiltonian_vector_field(H);
  auto th = integrate(Xh, config(*H.chart(), {{"q", 1.0}}, 1e-3, 10.0), o.env);
  auto tl = integrate(herglotz_field(o.sys), config(*o.sys.chart(), {{"q", 1.0}}, 1e-3, 10.0), o.env);
  REQUIRE(th.ok());
  REQUIRE(tl.ok());
  CHECK(peak(hamilton_residual(H, th)) <= 1e-5);
  double worst = 0.0;
  for (std::size_t k = 0; k < th.size(); ++k) {
    auto img = legendre_map(o.sys, tl.states[k]);
    worst = std::max(worst, std::abs(img.p[0] - th.states[k][H.chart()->index("p")]));
    worst = std::max(worst, std::abs(img.s - th.states[k][H.chart()->action_index()]));
  }
  CHECK(worst <= 1e-9);
  diagnostics(th, diagnostic_spec(H), o.env);
  CHECK(th.diagnostic_names == std::vector<std::string>{"H", "action_residual"});
  CHECK(peak(column(th, "action_residual")) <= 1e-6);
}

TEST_CASE("Kepler problem with variable mass", "[dynamics][kepler]") {
  auto c = exterior::tangent_chart({"r", "phi"}, {"v_r", "v_phi"});
  std::set<std::string> params{"k", "gamma"};
  Expr L = P("(1/2)*M(t)*(v_r^2 + r^2*v_phi^2) - k/r - gamma*s", *c, params, {"M"});
  for (double gamma : {0.1, 0.5}) {
    Environment env;
    env.set("k", 1.0).set("gamma", gamma).set_external("M", functions::expression("1 + 0.2*sin(t)"));
    LagrangianSystem sys(c, L, env);
    auto X = herglotz_field(sys);
    auto tr = integrate(X, config(*c, {{"r", 1.0}, {"v_phi", 1.1}}, 1e-3, 10.0), env);
    REQUIRE(tr.ok());
    double p0 = legendre_map(sys, tr.states[0]).p[1];
    double worst = 0.0;
    for (std::size_t k = 0; k < tr.size(); ++k)
      worst = std::max(worst, std::abs(legendre_map(sys, tr.states[k]).p[1] - p0 * std::exp(-gamma * tr.times[k])));
    CHECK(worst <= 1e-6);
    CHECK(peak(herglotz_residual(sys, tr)) <= 1e-5);
  }

  // a collision orbit hits r = 0 and stops with the last good state
  Environment env;
  env.set("k", -1.0).set("gamma", 0.0).set_external("M", functions::constant(1.0));
  LagrangianSystem sys(c, L, env);
  auto cfg = config(*c, {{"r", 1.0}}, 1e-3, 10.0);
  cfg.positive = {symlang::sym("r")};
  auto tr = integrate(herglotz_field(sys), cfg, env);
  CHECK_FALSE(tr.ok());
  CHECK(tr.status.find("domain error") != std::string::npos);
  CHECK(tr.states.back()[c->index("r")] > 0.0);
  CHECK(tr.times.back() < 10.0);
  for (double v : tr.states.back()) CHECK(std::isfinite(v));
}

namespace {

struct PendulumRun {
  HolonomicSystem hs;
  ConstraintResult res;
  Environment env;
};

PendulumRun pendulum(double gamma, const std::string& length = "1 + 0.1*sin(2*pi*t)") {
  auto base = exterior::tangent_chart({"r", "theta"}, {"v_r", "v_theta"});
  std::set<std::string> params{"m", "g", "gamma"};
  Expr Lp = P("(1/2)*m*(v_r^2 + r^2*v_theta^2) - m*g*r*(1 - cos(theta)) - gamma*s", *base, params);
  auto hs = holonomic_augment(base, Lp, {P("r - l(t)", *base, {}, {"l"})});
  auto res = constraint_algorithm(PrecocontactSystem::from_lagrangian(hs.system));
  Environment env;
  env.set("m", 1.0).set("g", 1.0).set("gamma", gamma).set_external("l", functions::expression(length));
  return {hs, res, env};
}

DiagnosticSpec pendulum_spec(const PendulumRun& p) {
  const auto& c = *p.hs.system.chart();
  std::set<std::string> params{"m", "g", "gamma"};
  auto spec = diagnostic_spec(p.hs.system, p.res.field);
  spec.mechanical = P("(1/2)*m*(v_r^2 + r^2*v_theta^2) + m*g*r*(1 - cos(theta))", c, params);
  return spec;
}

}  // namespace

TEST_CASE("pendulum with variable length", "[dynamics][pendulum]") {
  for (double gamma : {0.5, 0.75}) {
    auto p = pendulum(gamma);
    REQUIRE(p.res.ledger.status_string() == "finalized(dim 4)");
    REQUIRE(p.res.free.empty());
    auto x0 = consistent_initial_state(p.res.ledger, {{"theta", std::numbers::pi / 4}}, p.env, 0.0);
    const auto& c = *p.hs.system.chart();
    CHECK(x0[c.index("r")] == Catch::Approx(1.0));
    CHECK(x0[c.index("v_r")] == Catch::Approx(0.2 * std::numbers::pi));

    IntegratorConfig cfg;
    cfg.t1 = 20.0;
    cfg.initial = x0;
    auto tr = integrate(p.res.field, cfg, p.env);
    REQUIRE(tr.ok());
    diagnostics(tr, pendulum_spec(p), p.env);
    auto drift = constraint_drift(tr, p.res.ledger, p.env);
    CHECK(drift.names == std::vector<std::string>{"xi1", "xi2", "xi3", "xi4"});
    CHECK(drift.pass());
    CHECK(peak(column(tr, "action_residual")) <= 1e-6);

    std::size_t ith = c.index("theta"), q = tr.size() / 4;
    double first = 0.0, last = 0.0, em_min = 1e300;
    const auto& Em = column(tr, "E_m");
    for (std::size_t k = 0; k < tr.size(); ++k) {
      if (k <= q) first = std::max(first, std::abs(tr.states[k][ith]));
      if (k >= tr.size() - q) {
        last = std::max(last, std::abs(tr.states[k][ith]));
        em_min = std::min(em_min, Em[k]);
      }
    }
    CHECK(last < 0.25 * first);
    CHECK(em_min > 0.0);
  }
}

TEST_CASE("constraint drift detects inconsistent data", "[dynamics][drift]") {
  auto p = pendulum(0.5);
  auto x0 = consistent_initial_state(p.res.ledger, {{"theta", std::numbers::pi / 4}, {"r", 1.1}}, p.env, 0.0);
  IntegratorConfig cfg;
  cfg.t1 = 1.0;
  cfg.initial = x0;
  auto tr = integrate(p.res.field, cfg, p.env);
  REQUIRE(tr.ok());
  auto drift = constraint_drift(tr, p.res.ledger, p.env);
  CHECK_FALSE(drift.pass());
  CHECK(drift.max_abs[0] == Catch::Approx(0.1).margin(1e-9));
  CHECK(std::abs(column(tr, "xi1").front() - 0.1) < 1e-12);

  // nothing to measure without constraints
  auto o = oscillator(0.0, functions::constant(0.0));
  auto res = constraint_algorithm(PrecocontactSystem::from_lagrangian(o.sys));
  auto t2 = integrate(herglotz_field(o.sys), config(*o.sys.chart(), {{"q", 1.0}}, 0.1, 1.0), o.env);
  auto d2 = constraint_drift(t2, res.ledger, o.env);
  CHECK(d2.names.empty());
  CHECK(d2.pass());
}

TEST_CASE("integration is deterministic", "[dynamics]") {
  auto p = pendulum(0.5);
  auto x0 = consistent_initial_state(p.res.ledger, {{"theta", std::numbers::pi / 4}}, p.env, 0.0);
  IntegratorConfig cfg;
  cfg.t1 = 2.0;
  cfg.initial = x0;
  auto a = integrate(p.res.field, cfg, p.env);
  auto b = integrate(p.res.field, cfg, p.env);
  CHECK(a.states == b.states);
}
