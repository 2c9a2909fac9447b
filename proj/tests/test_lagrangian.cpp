#include <catch_amalgamated.hpp>

#include <cmath>

#include "cocontact/lagrangian.hpp"
#include "random_expr.hpp"

using namespace cocontact;
using exterior::Chart;
using exterior::Coordinate;
using symlang::differentiate;
using symlang::is_identically_zero;
using symlang::sym;

namespace {

Expr P(std::string_view text, const Chart& c, const std::set<std::string>& params = {},
           const std::set<std::string>& externals = {}) {
  return exterior::parse(text, c, params, externals);
}

ChartPtr tq() { return exterior::tangent_chart({"q"}, {"v"}); }

LagrangianSystem oscillator(Environment env = {}) {
  auto c = tq();
  return LagrangianSystem(c, P("(1/2)*m*v^2 - (k/2)*q^2 + q*f(t) - (gamma/m)*s", *c, {"m", "k", "gamma"}, {"f"}),
                          std::move(env));
}

ChartPtr pendulum_chart() {
  return std::make_shared<const Chart>(std::vector<Coordinate>{
      {"t", Role::time}, {"r", Role::position}, {"theta", Role::position}, {"lambda", Role::multiplier},
      {"v_r", Role::velocity}, {"v_theta", Role::velocity}, {"v_lambda", Role::multiplier_velocity}, {"s", Role::action}});
}

LagrangianSystem pendulum() {
  auto c = pendulum_chart();
  return LagrangianSystem(c, P("(1/2)*m*(v_r^2 + r^2*v_theta^2) - m*g*r*(1 - cos(theta)) + lambda*(r - l(t)) - gamma*s",
                                             *c, {"m", "g", "gamma"}, {"l"}));
}

LagrangianSystem kepler() {
  auto c = exterior::tangent_chart({"r", "phi"}, {"v_r", "v_phi"});
  return LagrangianSystem(c, P("(1/2)*M(t)*(v_r^2 + r^2*v_phi^2) - k/r - gamma*s", *c, {"k", "gamma"}, {"M"}));
}

Environment unit_oscillator_env() {
  Environment env;
  env.set("m", 1.0);
  env.set("k", 1.0);
  env.set("gamma", 0.0);
  env.set_external("f", [](double, int) { return 0.0; });
  return env;
}

bool zero(const Expr& e) { return is_identically_zero(e); }

}  // namespace

TEST_CASE("Cartan forms", "[lagrangian][forms]") {
  auto osc = oscillator();
  auto forms = lagrangian_forms(osc);
  auto c = osc.chart();
  Expr m = sym("m"), v = sym("v");
  CHECK(zero(forms.theta.coefficient_of({"q"}) - m * v));
  CHECK(forms.theta.terms().size() == 1);
  CHECK(zero(forms.eta.coefficient_of({"s"}) - Expr(1.0)));
  CHECK(zero(forms.eta.coefficient_of({"q"}) + m * v));
  CHECK(zero(forms.energy - P("(1/2)*m*v^2 + (k/2)*q^2 - q*f(t) + (gamma/m)*s", *c, {"m", "k", "gamma"}, {"f"})));
  CHECK((forms.d_eta - exterior::exterior_derivative(forms.eta)).is_identically_zero());

  auto pend = pendulum();
  const auto& eta = pend.eta();
  CHECK(zero(eta.coefficient_of({"r"}) + sym("m") * sym("v_r")));
  CHECK(zero(eta.coefficient_of({"theta"}) + sym("m") * sym("r") * sym("r") * sym("v_theta")));
  CHECK(eta.coefficient_of({"lambda"}).is_zero());
  CHECK(eta.terms().size() == 3);

  auto c1 = tq();
  LagrangianSystem free(c1, P("(1/2)*v^2", *c1));
  CHECK(zero(free.energy() - P("(1/2)*v^2", *c1)));
  CHECK_THROWS_AS(LagrangianSystem(exterior::darboux_chart(1), sym("p")), exterior::ChartError);
}

TEST_CASE("Hessian and regularity", "[lagrangian][hessian]") {
  auto [W, verdict] = hessian(oscillator());
  CHECK(W.size() == 1);
  CHECK(W[0][0] == sym("m"));
  CHECK(verdict.regular);
  CHECK(verdict.to_string() == "regular");

  auto pend = pendulum();
  auto [Wp, vp] = hessian(pend);
  CHECK(zero(Wp[0][0] - sym("m")));
  CHECK(zero(Wp[1][1] - sym("m") * sym("r") * sym("r")));
  CHECK(Wp[2][2].is_zero());
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (i != j) CHECK(Wp[i][j].is_zero());
  CHECK_FALSE(vp.regular);
  CHECK(vp.rank == 2);

  auto c = tq();
  LagrangianSystem vs(c, sym("v") * sym("s"));
  auto [Wv, vv] = hessian(vs);
  CHECK(Wv[0][0].is_zero());
  CHECK_FALSE(vv.regular);
  CHECK(vv.rank == 0);
  CHECK(vv.to_string() == "singular(rank 0 of 1)");

  // rank drops where q = 0
  LagrangianSystem degenerate(c, P("(1/2)*q*v^2", *c));
  CHECK_THROWS_WITH(degenerate.regularity({{0, 1, 1, 0}, {0, 0, 1, 0}}), "not admissible: non-constant rank");

  // symmetry on random Lagrangians
  testgen::ExprGenerator gen({"t", "q", "v", "s"}, 5);
  for (int k = 0; k < 10; ++k) {
    auto c2 = exterior::tangent_chart({"q1", "q2"}, {"v1", "v2"});
    testgen::ExprGenerator g2({"t", "q1", "q2", "v1", "v2", "s"}, 100 + k);
    LagrangianSystem L(c2, g2.smooth(3));
    CHECK(zero(L.hessian_matrix()[0][1] - L.hessian_matrix()[1][0]));
  }
}

TEST_CASE("Legendre map", "[lagrangian][legendre]") {
  auto osc = oscillator();
  double m = osc.environment().at("m");
  auto y = legendre_map(osc, {0.3, 1.2, -0.7, 0.4});
  CHECK(y.t == 0.3);
  CHECK(y.q == std::vector<double>{1.2});
  CHECK_THAT(y.p[0], Catch::Matchers::WithinAbs(-0.7 * m, 1e-15));
  CHECK(y.s == 0.4);
  CHECK(legendre_pullback_check(osc));
  CHECK(legendre_pullback_check(pendulum()));
  CHECK(legendre_pullback_check(kepler()));

  auto c = tq();
  LagrangianSystem free(c, P("(1/2)*v^2", *c));
  auto f = legendre_map(free, {0, 1, 2, 0});
  CHECK(f.t == 0.0);
  CHECK(f.q[0] == 1.0);
  CHECK(f.p[0] == 2.0);
  CHECK(f.s == 0.0);
}

TEST_CASE("Lagrangian Reeb fields", "[lagrangian][reeb]") {
  auto osc = oscillator();
  auto [Rt, Rs] = lagrangian_reeb_fields(osc);
  CHECK(Rt.to_string() == VectorFieldExpr::coordinate(osc.chart(), "t").to_string());
  CHECK(Rs.to_string() == VectorFieldExpr::coordinate(osc.chart(), "s").to_string());

  auto c = tq();
  LagrangianSystem tv(c, P("(1/2)*v^2 + t*v", *c));
  auto [Rt2, Rs2] = lagrangian_reeb_fields(tv);
  CHECK(Rt2["t"] == Expr(1.0));
  CHECK(zero(Rt2["v"] + Expr(1.0)));
  CHECK(Rs2["v"].is_zero());

  LagrangianSystem sv(c, P("(1/2)*w*v^2 - gamma*s*v", *c, {"w", "gamma"}));
  auto [Rt3, Rs3] = lagrangian_reeb_fields(sv);
  CHECK(zero(Rs3["v"] - sym("gamma") / sym("w")));
  CHECK(Rs3["s"] == Expr(1.0));

  CHECK_THROWS_AS(lagrangian_reeb_fields(pendulum()), RegularityError);

  // the Reeb fields of (dt, eta_L) agree with the closed form
  for (const auto* L : {&osc, &tv, &sv}) {
    CocontactSystem cs(L->tau(), L->eta(), L->energy(), L->environment());
    auto [A, B] = lagrangian_reeb_fields(*L);
    for (std::size_t i = 0; i < c->dim(); ++i) {
      CHECK(zero(A[i] - cs.reeb_time()[i]));
      CHECK(zero(B[i] - cs.reeb_action()[i]));
    }
  }
}

TEST_CASE("Reeb derivatives of the energy", "[lagrangian][reeb][property]") {
  std::vector<LagrangianSystem> systems{oscillator(), kepler()};
  auto c = tq();
  systems.emplace_back(c, P("(1/2)*v^2 + t*v - s*v + sin(q)*s", *c));
  systems.emplace_back(c, P("(1/2)*exp(t)*v^2 + q*v*s - s^2", *c));
  for (const auto& L : systems) {
    auto [Rt, Rs] = lagrangian_reeb_fields(L);
    const Expr& E = L.energy();
    CHECK(zero(exterior::lie_derivative(Rt, E) + differentiate(L.lagrangian(), "t")));
    CHECK(zero(exterior::lie_derivative(Rs, E) + differentiate(L.lagrangian(), "s")));
  }
}

TEST_CASE("Herglotz field", "[lagrangian][herglotz]") {
  auto osc = oscillator();
  auto X = herglotz_field(osc);
  auto c = osc.chart();
  Expr G = P("-(k/m)*q + f(t)/m - (gamma/m)*v", *c, {"m", "k", "gamma"}, {"f"});
  CHECK(zero(X["v"] - G));
  CHECK(zero(X["s"] - osc.lagrangian()));
  CHECK(X["q"] == sym("v"));
  CHECK(X["t"] == Expr(1.0));

  LagrangianSystem free(c, P("(1/2)*v^2", *c));
  auto Xf = herglotz_field(free);
  CHECK(Xf["v"].is_zero());
  CHECK(zero(Xf["s"] - P("(1/2)*v^2", *c)));

  CHECK_THROWS_AS(herglotz_field(pendulum()), RegularityError);

  // d/dt(M r^2 phi') = -gamma M r^2 phi' along the Kepler field
  auto kep = kepler();
  auto Xk = herglotz_field(kep);
  Expr pphi = kep.momenta()[1];
  CHECK(zero(exterior::lie_derivative(Xk, pphi) + sym("gamma") * pphi));
}

TEST_CASE("Herglotz field properties", "[lagrangian][herglotz][property]") {
  std::vector<LagrangianSystem> systems{oscillator(), kepler()};
  auto c = tq();
  systems.emplace_back(c, P("(1/2)*v^2 + t*v - s*v + sin(q)*s", *c));
  systems.emplace_back(c, P("(1/2)*exp(t)*v^2 + q*v*s - s^2", *c));
  auto c2 = exterior::tangent_chart({"x", "y"}, {"u", "w"});
  systems.emplace_back(c2, P("(1/2)*(u^2 + w^2) + (1/4)*u*w - x*y - s*(u + 2*w)", *c2));
  for (const auto& L : systems) {
    auto X = herglotz_field(L);
    for (const auto& [qi, vi] : L.pairs()) CHECK(X[qi] == sym(L.name_of(vi)));
    for (const auto& eq : el_field_equations(L, X)) CHECK(zero(eq));
    CHECK(zero(exterior::interior_product(X, L.eta()).scalar() + L.energy()));
    CHECK(zero(exterior::interior_product(X, L.tau()).scalar() - Expr(1.0)));
  }
}

TEST_CASE("numeric Hessian inversion for n > 2", "[lagrangian][herglotz]") {
  auto c = exterior::tangent_chart({"x", "y", "z"}, {"u", "v", "w"});
  LagrangianSystem L(c, P("(1/2)*(2*u^2 + v^2 + w^2) + u*v + v*w - x^2 - s*(u + v)", *c));
  CHECK_THROWS_AS(herglotz_field(L), RegularityError);
  auto spec = herglotz_field_spec(L);
  REQUIRE(spec.implicit.has_value());
  CHECK(spec.implicit->targets.size() == 3);
  auto [Rt, Rs] = lagrangian_reeb_specs(L);
  CHECK(Rt.implicit.has_value());
  CHECK(Rs.implicit.has_value());
}

TEST_CASE("Hamiltonian and Lagrangian descriptions agree", "[lagrangian][equivalence]") {
  auto osc = oscillator();
  const auto& env = osc.environment();
  auto hsys = canonical_system(1, P("p^2/(2*m) + (k/2)*q^2 - q*f(t) + (gamma/m)*s",
                                                              *exterior::darboux_chart(1), {"m", "k", "gamma"}, {"f"}),
                                            env);
  auto XH = hamiltonian_vector_field(hsys);
  auto XL = herglotz_field(osc);
  Expr pv = osc.momenta()[0];
  for (const auto& x : exterior::probe_points(*osc.chart(), 20)) {
    auto bl = exterior::bind_point(*osc.chart(), x, env);
    auto y = legendre_map(osc, x);
    Point yp{y.t, y.q[0], y.p[0], y.s};
    auto bh = exterior::bind_point(*hsys.chart(), yp, hsys.environment());
    // push forward: (1, v, d/dt(dL/dv), L)
    double pushed_p = symlang::evaluate(exterior::lie_derivative(XL, pv), bl);
    std::vector<double> pushed{symlang::evaluate(XL["t"], bl), symlang::evaluate(XL["q"], bl), pushed_p,
                               symlang::evaluate(XL["s"], bl)};
    for (std::size_t i = 0; i < 4; ++i) CHECK_THAT(pushed[i], Catch::Matchers::WithinAbs(symlang::evaluate(XH[i], bh), 1e-9));
  }
}

TEST_CASE("cocontact iff regular", "[lagrangian][structure]") {
  auto c = tq();
  std::vector<LagrangianSystem> systems{oscillator(), kepler(), pendulum(), LagrangianSystem(c, sym("v") * sym("s")),
                                        LagrangianSystem(c, P("(1/2)*v^2 - s", *c))};
  for (const auto& L : systems) {
    bool regular = L.regularity().regular;
    auto verdict = verify_cocontact(L.structure(), L.environment());
    CHECK(regular == (verdict.kind == StructureVerdict::Kind::cocontact));
  }
}

TEST_CASE("Herglotz residuals", "[lagrangian][residual]") {
  auto osc = oscillator(unit_oscillator_env());
  Trajectory traj{osc.chart()};
  double dt = 1e-3;
  for (int k = 0; k <= 2000; ++k) {
    double t = k * dt;
    traj.times.push_back(t);
    traj.states.push_back({t, std::cos(t), -std::sin(t), -0.25 * std::sin(2 * t)});
  }
  double worst = 0.0;
  for (const auto& row : herglotz_residual(osc, traj))
    for (double r : row) worst = std::max(worst, std::abs(r));
  CHECK(worst <= 1e-5);

  Trajectory rest{osc.chart()};
  for (int k = 0; k < 5; ++k) {
    rest.times.push_back(k * 0.1);
    rest.states.push_back({k * 0.1, 1.0, 0.0, -0.5 * k * 0.1});
  }
  for (const auto& row : herglotz_residual(osc, rest)) {
    CHECK_THAT(row[0], Catch::Matchers::WithinAbs(1.0, 1e-12));
    CHECK_THAT(row[1], Catch::Matchers::WithinAbs(0.0, 1e-12));
  }

  Trajectory short_traj{osc.chart(), {0.0, 1.0}, {{0, 0, 0, 0}, {1, 0, 0, 0}}};
  CHECK_THROWS_AS(herglotz_residual(osc, short_traj), TrajectoryError);
}
