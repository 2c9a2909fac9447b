#include <catch_amalgamated.hpp>

#include "cocontact/cocontact.hpp"
#include "random_expr.hpp"

using namespace cocontact;
using exterior::Chart;
using exterior::Coordinate;
using symlang::is_identically_zero;
using symlang::sym;

namespace {

DifferentialForm d(const ChartPtr& c, const std::string& n) { return DifferentialForm::differential(c, n); }

ChartPtr pendulum_chart() {
  return std::make_shared<const Chart>(std::vector<Coordinate>{
      {"t", Role::time}, {"r", Role::position}, {"theta", Role::position}, {"lambda", Role::multiplier},
      {"v_r", Role::velocity}, {"v_theta", Role::velocity}, {"v_lambda", Role::multiplier_velocity}, {"s", Role::action}});
}

Expr H_oscillator(const Chart& c) {
  return exterior::parse("p^2/(2*m) + (k/2)*q^2 - q*f(t) + (gamma/m)*s", c, {"m", "k", "gamma"}, {"f"});
}

}  // namespace

TEST_CASE("verify_cocontact verdicts", "[cocontact][verify]") {
  for (int n = 1; n <= 3; ++n) {
    auto sys = canonical_system(n);
    CHECK(sys.verdict().kind == StructureVerdict::Kind::cocontact);
    CHECK(sys.verdict().cls == 2 * n + 2);
  }

  auto tv = exterior::tangent_chart({"q"}, {"v"});
  Structure vs(d(tv, "t"), d(tv, "s") - sym("s") * d(tv, "q"));
  auto bad = verify_cocontact(vs);
  CHECK(bad.kind == StructureVerdict::Kind::invalid);
  CHECK(bad.cls == 3);
  CHECK(bad.reason == "class 3 is odd");
  CHECK(bad.witness.has_value());

  auto pc = pendulum_chart();
  auto etaL = d(pc, "s") - sym("m") * sym("v_r") * d(pc, "r") - sym("m") * sym("r") * sym("r") * sym("v_theta") * d(pc, "theta");
  auto pend = verify_cocontact(Structure(d(pc, "t"), etaL));
  CHECK(pend.kind == StructureVerdict::Kind::precocontact);
  CHECK(pend.cls == 6);

  auto c = exterior::darboux_chart(1);
  auto not_closed = verify_cocontact(Structure(sym("q") * d(c, "t"), d(c, "s") - sym("p") * d(c, "q")));
  CHECK(not_closed.kind == StructureVerdict::Kind::invalid);
  CHECK(not_closed.reason == "τ not closed");

  CHECK_THROWS_AS(CocontactSystem(d(pc, "t"), etaL, Expr(0.0)), StructureError);
}

TEST_CASE("Reeb fields", "[cocontact][reeb]") {
  for (int n = 1; n <= 3; ++n) {
    auto sys = canonical_system(n);
    auto [Rt, Rs] = reeb_fields(sys);
    CHECK((Rt - VectorFieldExpr::coordinate(sys.chart(), "t")).is_identically_zero());
    CHECK((Rs - VectorFieldExpr::coordinate(sys.chart(), "s")).is_identically_zero());
  }

  // L = v^2/2 + t v: eta_L = ds - (v + t) dq; R_t = d/dt - d/dv
  auto tv = exterior::tangent_chart({"q"}, {"v"});
  CocontactSystem lag(d(tv, "t"), d(tv, "s") - (sym("v") + sym("t")) * d(tv, "q"), Expr(0.0));
  auto expected = VectorFieldExpr::coordinate(tv, "t") - VectorFieldExpr::coordinate(tv, "v");
  CHECK((lag.reeb_time() - expected).is_identically_zero());
  CHECK((lag.reeb_action() - VectorFieldExpr::coordinate(tv, "s")).is_identically_zero());

  // oscillator eta_L = ds - m v dq
  CocontactSystem osc(d(tv, "t"), d(tv, "s") - sym("m") * sym("v") * d(tv, "q"), Expr(0.0));
  CHECK((osc.reeb_time() - VectorFieldExpr::coordinate(tv, "t")).is_identically_zero());
  CHECK((osc.reeb_action() - VectorFieldExpr::coordinate(tv, "s")).is_identically_zero());

  // the six contraction identities
  for (const auto* sys : {&lag, &osc}) {
    const auto& st = sys->structure();
    auto Rt = sys->reeb_time(), Rs = sys->reeb_action();
    CHECK(is_identically_zero(exterior::interior_product(Rt, st.tau()).scalar() - Expr(1.0)));
    CHECK(is_identically_zero(exterior::interior_product(Rt, st.eta()).scalar()));
    CHECK(exterior::interior_product(Rt, st.d_eta()).is_identically_zero());
    CHECK(is_identically_zero(exterior::interior_product(Rs, st.tau()).scalar()));
    CHECK(is_identically_zero(exterior::interior_product(Rs, st.eta()).scalar() - Expr(1.0)));
    CHECK(exterior::interior_product(Rs, st.d_eta()).is_identically_zero());
  }
}

TEST_CASE("flat and sharp", "[cocontact][flat]") {
  auto sys = canonical_system(1);
  auto c = sys.chart();
  auto fq = flat_map(sys, VectorFieldExpr::coordinate(c, "q"));
  Expr p = sym("p");
  auto expected = d(c, "p") - p * d(c, "s") + p * p * d(c, "q");
  CHECK((fq - expected).is_identically_zero());

  for (const auto& x : exterior::probe_points(*c, 5)) {
    auto v = sharp_map(sys, d(c, "q"), x);
    Eigen::VectorXd want = Eigen::VectorXd::Zero(4);
    want(2) = -1.0;
    CHECK((v - want).norm() < 1e-12);
  }

  testgen::ExprGenerator gen({"t", "q1", "q2", "p1", "p2", "s"}, 31);
  auto sys2 = canonical_system(2);
  auto points = exterior::probe_points(*sys2.chart(), 20, 77);
  for (const auto& x : points) {
    VectorFieldExpr X(sys2.chart());
    for (std::size_t i = 0; i < 6; ++i) X.set(i, gen.polynomial(2, 2));
    auto back = sharp_map(sys2, flat_map(sys2, X), x);
    auto want = exterior::evaluate_vector(X.components(), *sys2.chart(), x, {});
    CHECK((back - want).norm() < 1e-9 * std::max(1.0, want.norm()));
  }

  auto pc = pendulum_chart();
  Structure pend(d(pc, "t"), d(pc, "s") - sym("m") * sym("v_r") * d(pc, "r"));
  exterior::Environment env;
  env.set("m", 1.0);
  CHECK_THROWS_AS(sharp_map(pend, pend.tau().components(), exterior::Point(8, 0.5), env), StructureError);
}

TEST_CASE("Jacobi bracket", "[cocontact][bracket]") {
  auto sys = canonical_system(1);
  Expr q = sym("q"), p = sym("p"), s = sym("s");
  CHECK(is_identically_zero(jacobi_bracket(sys, q, p) - Expr(1.0)));
  CHECK(is_identically_zero(jacobi_bracket(sys, q, s) + q));
  CHECK(is_identically_zero(jacobi_bracket(sys, p, s) + Expr(2.0) * p));
  CHECK(is_identically_zero(jacobi_bracket(sys, q, q)));

  auto sys2 = canonical_system(2);
  CHECK(is_identically_zero(jacobi_bracket(sys2, sym("q1"), sym("p2"))));
  CHECK(is_identically_zero(jacobi_bracket(sys2, sym("q2"), sym("p2")) - Expr(1.0)));

  testgen::ExprGenerator gen({"t", "q", "p", "s"}, 2024, false);
  for (int k = 0; k < 15; ++k) {
    Expr f = gen.polynomial(3, 2), g = gen.polynomial(3, 2), h = gen.polynomial(3, 2);
    CHECK(jacobi_bracket(sys, f, f).is_zero());
    CHECK(is_identically_zero(jacobi_bracket(sys, f, g) + jacobi_bracket(sys, g, f)));
    auto sb = [&](const Expr& a, const Expr& b) { return structure_bracket(sys, a, b); };
    CHECK(is_identically_zero(sb(f, sb(g, h)) + sb(g, sb(h, f)) + sb(h, sb(f, g))));
    // deviation from Leibniz is carried by E = -R_s: {fg,h} - f{g,h} - g{f,h} = fg dh/ds
    Expr dev = jacobi_bracket(sys, f * g, h) - f * jacobi_bracket(sys, g, h) - g * jacobi_bracket(sys, f, h) -
               f * g * symlang::differentiate(h, "s");
    CHECK(is_identically_zero(dev));
  }

  auto tv = exterior::tangent_chart({"q"}, {"v"});
  CocontactSystem lag(d(tv, "t"), d(tv, "s") - sym("v") * d(tv, "q"), Expr(0.0));
  CHECK_THROWS_AS(jacobi_bracket(lag, sym("q"), sym("v")), StructureError);
}

TEST_CASE("the coordinate bracket formula is not a Jacobi bracket", "[cocontact][bracket]") {
  // {q,{p,s}} + {p,{s,q}} + {s,{q,p}} = {q,-2p} + {p,q} + {s,1} = -2 - 1 + 1
  auto sys = canonical_system(1);
  Expr q = sym("q"), p = sym("p"), s = sym("s");
  auto jb = [&](const Expr& a, const Expr& b) { return jacobi_bracket(sys, a, b); };
  Expr jac = jb(q, jb(p, s)) + jb(p, jb(s, q)) + jb(s, jb(q, p));
  CHECK(is_identically_zero(jac + Expr(2.0)));

  // the structure bracket agrees with it up to the sign of the Lambda part
  CHECK(is_identically_zero(structure_bracket(sys, q, p) + Expr(1.0)));
  CHECK(is_identically_zero(structure_bracket(sys, q, s) + q));
  CHECK(is_identically_zero(structure_bracket(sys, p, s)));
  testgen::ExprGenerator gen({"t", "q", "p", "s"}, 11, false);
  for (int k = 0; k < 10; ++k) {
    Expr f = gen.polynomial(3, 2), g = gen.polynomial(3, 2);
    Expr e_part = -f * symlang::differentiate(g, "s") + g * symlang::differentiate(f, "s");
    CHECK(is_identically_zero(jacobi_bracket(sys, f, g) + structure_bracket(sys, f, g) - Expr(2.0) * e_part));
  }
}

TEST_CASE("Hamiltonian vector field", "[cocontact][hamiltonian]") {
  auto zero = canonical_system(1);
  CHECK((hamiltonian_vector_field(zero) - VectorFieldExpr::coordinate(zero.chart(), "t")).is_identically_zero());

  auto osc = canonical_system(1).with_hamiltonian(H_oscillator(*exterior::darboux_chart(1)));
  auto X = hamiltonian_vector_field(osc);
  Expr expected_p = symlang::parse_unchecked("-k*q + f(t) - (p/m)*gamma");
  CHECK(is_identically_zero(X["p"] - expected_p));
  CHECK(is_identically_zero(X["q"] - sym("p") / sym("m")));

  auto kc = std::make_shared<const Chart>(std::vector<Coordinate>{{"t", Role::time}, {"r", Role::position}, {"phi", Role::position},
                                                                   {"p_r", Role::momentum}, {"p_phi", Role::momentum}, {"s", Role::action}});
  Expr Hk = exterior::parse("p_r^2/(2*M(t)) + p_phi^2/(2*M(t)*r^2) + k/r + gamma*s", *kc, {"k", "gamma"}, {"M"});
  auto eta = d(kc, "s") - sym("p_r") * d(kc, "r") - sym("p_phi") * d(kc, "phi");
  CocontactSystem kepler(d(kc, "t"), eta, Hk);
  auto XK = hamiltonian_vector_field(kepler);
  CHECK(is_identically_zero(XK["p_phi"] + sym("gamma") * sym("p_phi")));
  Expr pr_dot = exterior::parse("p_phi^2/(M(t)*r^3) + k/r^2 - gamma*p_r", *kc, {"k", "gamma"}, {"M"});
  CHECK(is_identically_zero(XK["p_r"] - pr_dot));

  for (const auto* sys : {&osc, &kepler}) {
    auto Xh = hamiltonian_vector_field(*sys);
    CHECK(is_identically_zero(exterior::interior_product(Xh, sys->eta()).scalar() + sys->hamiltonian()));
    CHECK(is_identically_zero(exterior::interior_product(Xh, sys->tau()).scalar() - Expr(1.0)));
    auto gamma = gamma_form(sys->structure(), sys->hamiltonian(), sys->reeb_time(), sys->reeb_action());
    CHECK((flat_map(*sys, Xh) - gamma).is_identically_zero());
  }
}

TEST_CASE("X_H - R_t equals the Jacobi Hamiltonian field", "[cocontact][jacobi]") {
  testgen::ExprGenerator gen({"t", "q", "p", "s"}, 5, true);
  auto base = canonical_system(1);
  for (int k = 0; k < 10; ++k) {
    auto sys = base.with_hamiltonian(gen.smooth(3));
    const Expr& H = sys.hamiltonian();
    auto dH = exterior::exterior_derivative(DifferentialForm::function(sys.chart(), H));
    auto jac = lambda_hat(sys, dH) - H * sys.reeb_action();  // E = -R_s
    CHECK((hamiltonian_vector_field(sys) - sys.reeb_time() - jac).is_identically_zero());
  }
}

TEST_CASE("kernel of flat is trivial on cocontact systems", "[cocontact][kernel]") {
  for (int n = 1; n <= 3; ++n) {
    auto sys = canonical_system(n);
    for (const auto& x : exterior::probe_points(*sys.chart())) {
      auto M = exterior::evaluate_matrix(sys.structure().flat(), *sys.chart(), x, sys.environment());
      CHECK(exterior::nullspace(M).cols() == 0);
    }
  }
}

TEST_CASE("submanifold classification", "[cocontact][submanifold]") {
  auto sys = canonical_system(1);
  SubmanifoldSpec leg;
  leg.constraints = {sym("t"), sym("s"), sym("p")};
  CHECK(classify_submanifold(sys, leg) == SubmanifoldKind::legendrian);

  SubmanifoldSpec qp;
  qp.constraints = {sym("q"), sym("p")};
  CHECK(classify_submanifold(sys, qp) == SubmanifoldKind::none);

  SubmanifoldSpec point;
  point.parametric = true;
  point.embedding = {{"q", Expr(0.5)}, {"p", Expr(1.0)}};
  CHECK(classify_submanifold(sys, point) == SubmanifoldKind::isotropic);

  SubmanifoldSpec leg_param;
  leg_param.parametric = true;
  leg_param.parameters = {"u"};
  leg_param.embedding = {{"q", sym("u")}};
  CHECK(classify_submanifold(sys, leg_param) == SubmanifoldKind::legendrian);

  // {q = 0}: Lambda-hat(dq) = -d/dp is tangent
  SubmanifoldSpec hyper;
  hyper.constraints = {sym("q")};
  CHECK(classify_submanifold(sys, hyper) == SubmanifoldKind::coisotropic);

  SubmanifoldSpec wrong;
  wrong.constraints = {sym("q")};
  wrong.probes = {{0.0, 0.3, 0.1, 0.0}};
  CHECK_THROWS_AS(classify_submanifold(sys, wrong), SubmanifoldError);
}

TEST_CASE("Hamilton residual", "[cocontact][residual]") {
  auto sys = canonical_system(1);
  Trajectory traj{sys.chart(), {}, {}, {}, {}, "ok"};
  for (int k = 0; k < 11; ++k) {
    double t = 0.1 * k;
    traj.times.push_back(t);
    traj.states.push_back({t, 0.3, -0.7, 0.2});
  }
  CHECK(max_abs(hamilton_residual(sys, traj)) <= 1e-12);

  // constant state, H = p^2/2: s-residual is -(p H_p - H) = -p^2/2
  auto moving = sys.with_hamiltonian(sym("p") * sym("p") / Expr(2.0));
  Trajectory frozen = traj;
  for (auto& x : frozen.states) x[0] = 0.0;
  auto res = hamilton_residual(moving, frozen);
  CHECK_THAT(res[0][3], Catch::Matchers::WithinAbs(-0.245, 1e-12));
  CHECK_THAT(res[0][0], Catch::Matchers::WithinAbs(-1.0, 1e-12));

  Trajectory tiny = traj;
  tiny.times.resize(2);
  tiny.states.resize(2);
  CHECK_THROWS_AS(hamilton_residual(sys, tiny), TrajectoryError);
}
