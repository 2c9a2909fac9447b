#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "cocontact/symlang.hpp"
#include "random_expr.hpp"

using namespace cocontact::symlang;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

SymbolTable oscillator_table() {
  SymbolTable t;
  t.coordinates = {"t", "q", "v", "s"};
  t.parameters = {"m", "k", "gamma"};
  t.externals = {"f"};
  return t;
}

SymbolTable pendulum_table() {
  SymbolTable t;
  t.coordinates = {"t", "r", "theta", "lambda", "v_r", "v_theta", "v_lambda", "s"};
  t.parameters = {"m", "g", "gamma"};
  t.externals = {"l"};
  return t;
}

}  // namespace

TEST_CASE("parse builds trees and validates symbols", "[symlang][parse]") {
  auto table = oscillator_table();
  CHECK(parse("t", table) == sym("t"));

  Expr L = parse("(1/2)*m*v^2 - (k/2)*q^2 + q*f(t) - (gamma/m)*s", table);
  Expr m = sym("m"), v = sym("v"), k = sym("k"), q = sym("q"), s = sym("s"), gamma = sym("gamma");
  Expr expected = Expr(0.5) * m * pow(v, 2) - k / Expr(2) * pow(q, 2) + q * Expr::external("f") - gamma / m * s;
  CHECK(L == expected);

  try {
    parse("q*(", table);
    FAIL("expected a syntax error");
  } catch (const SyntaxError& e) {
    CHECK(e.offset() == 3);
  }

  try {
    parse("q + w", table);
    FAIL("expected an unknown-symbol error");
  } catch (const UnknownSymbolError& e) {
    CHECK(e.symbol() == "w");
  }

  CHECK_THROWS_AS(parse("q^v", table), SyntaxError);
  CHECK_THROWS_AS(parse("g(t)", table), UnknownSymbolError);
  CHECK_THROWS_AS(parse("f(q)", table), SyntaxError);
  CHECK(parse("f''(t)", table) == Expr::external("f", 2));
  CHECK(parse("2.5e-1*pi", table).is_constant());
  CHECK_THAT(parse("2.5e-1*pi", table).value(), WithinRel(std::numbers::pi / 4, 1e-15));
  CHECK(parse("-q^2", table) == -pow(q, 2));
}

TEST_CASE("differentiate follows the calculus rules", "[symlang][diff]") {
  auto table = oscillator_table();
  CHECK(differentiate(parse("(1/2)*m*v^2", table), "v") == sym("m") * sym("v"));

  Expr L = parse("(1/2)*m*v^2 - (k/2)*q^2 + q*f(t) - (gamma/m)*s", table);
  CHECK(differentiate(L, "s") == -sym("gamma") / sym("m"));
  CHECK(differentiate(L, "t") == sym("q") * Expr::external("f", 1));

  Expr c = parse("lambda*(r - l(t))", pendulum_table());
  CHECK(is_identically_zero(differentiate(c, "t") + sym("lambda") * Expr::external("l", 1)));
  CHECK(differentiate(c, "theta").is_zero());
}

TEST_CASE("substitute is simultaneous and simplifies", "[symlang][subst]") {
  auto table = pendulum_table();
  Expr xi2 = parse("v_r - l'(t)", table);
  CHECK(substitute(xi2, {{"v_r", Expr::external("l", 1)}}).is_zero());

  Expr q = sym("q");
  CHECK(substitute(q, {}) == q);

  Expr e = sym("p") / sym("m");
  CHECK(substitute(e, {{"p", sym("m") * sym("v")}}) == sym("v"));

  // simultaneous: x -> y, y -> x swaps
  Expr swapped = substitute(sym("x") - Expr(2) * sym("y"), {{"x", sym("y")}, {"y", sym("x")}});
  CHECK(swapped == sym("y") - Expr(2) * sym("x"));
}

TEST_CASE("evaluate binds values and external functions", "[symlang][eval]") {
  Bindings b;
  b.set("m", 1).set("v", 2);
  CHECK(evaluate(parse_unchecked("(1/2)*m*v^2"), b) == 2.0);

  Bindings lb;
  lb.set("t", 0.25);
  lb.set_external("l", [](double t, int order) {
    double w = 2.0 * std::numbers::pi;
    if (order == 0) return 1.0 + 0.1 * std::sin(w * t);
    return 0.1 * std::pow(w, order) * std::sin(w * t + order * std::numbers::pi / 2);
  });
  CHECK_THAT(evaluate(Expr::external("l"), lb), WithinAbs(1.1, 1e-15));

  Bindings zero;
  zero.set("q", 0.0);
  CHECK_THROWS_AS(evaluate(parse_unchecked("1/q"), zero), DomainError);
  CHECK_THROWS_AS(evaluate(parse_unchecked("log(q)"), zero), DomainError);
  CHECK_THROWS_AS(evaluate(parse_unchecked("q + w"), zero), UnboundSymbolError);

  // compiled evaluation agrees with tree evaluation
  Expr e = parse_unchecked("sin(q)*exp(w) + l'(t)/w^2 - log(w)");
  Bindings full = lb;
  full.set("q", 0.3).set("w", 1.7);
  CompiledExpr compiled(e, {"t", "q", "w"}, 0, full.externals);
  std::vector<double> slots{0.25, 0.3, 1.7};
  CHECK_THAT(compiled(slots), WithinRel(evaluate(e, full), 1e-14));
  slots[2] = 0.0;
  CHECK_THROWS_AS(compiled(slots), DomainError);
}

TEST_CASE("is_identically_zero separates identities from constraints", "[symlang][zero]") {
  auto table = pendulum_table();
  CHECK(is_identically_zero(parse("v_r - v_r", table)));
  CHECK_FALSE(is_identically_zero(parse("r - l(t)", table)));

  // d/dv_lambda of the pendulum's Lagrangian energy vanishes: v_lambda never enters L
  Expr EL = parse("(1/2)*m*(v_r^2 + r^2*v_theta^2) + m*g*r*(1 - cos(theta)) - lambda*(r - l(t)) + gamma*s", table);
  CHECK(is_identically_zero(differentiate(EL, "v_lambda")));

  // identities that need more than syntactic cancellation
  CHECK(is_identically_zero(parse_unchecked("sin(x)^2 + cos(x)^2 - 1")));
  CHECK(is_identically_zero(parse_unchecked("(a+b)^3 - a^3 - 3*a^2*b - 3*a*b^2 - b^3")));
  CHECK(is_identically_zero(parse_unchecked("exp(a+b) - exp(a)*exp(b)")));
  CHECK_FALSE(is_identically_zero(parse_unchecked("1e-6*x")));
  CHECK_FALSE(is_identically_zero(Expr(1e-12)));
}

TEST_CASE("differentiation properties on random expressions", "[symlang][property]") {
  testgen::ExprGenerator gen({"x", "y", "z"}, 1234);
  for (int trial = 0; trial < 60; ++trial) {
    Expr e1 = gen.smooth(3), e2 = gen.smooth(3);
    double a = gen.uniform(-3, 3);

    // linearity
    Expr lhs = differentiate(Expr(a) * e1 + e2, "x");
    Expr rhs = Expr(a) * differentiate(e1, "x") + differentiate(e2, "x");
    CHECK(is_identically_zero(lhs - rhs));

    // mixed partials commute
    CHECK(is_identically_zero(differentiate(differentiate(e1, "x"), "y") - differentiate(differentiate(e1, "y"), "x")));

    // central finite differences (step 1e-5, relative 1e-6)
    Bindings b;
    b.set("x", gen.uniform(-1, 1)).set("y", gen.uniform(-1, 1)).set("z", gen.uniform(-1, 1));
    double h = 1e-5, x0 = b.values["x"];
    Bindings bp = b, bm = b;
    bp.set("x", x0 + h);
    bm.set("x", x0 - h);
    double fd = (evaluate(e1, bp) - evaluate(e1, bm)) / (2 * h);
    double exact = evaluate(differentiate(e1, "x"), b);
    double scale = std::max({1.0, std::fabs(exact), std::fabs(evaluate(e1, b))});
    CHECK(std::fabs(fd - exact) <= 1e-6 * scale);

    // substitute-then-evaluate equals evaluate with composed bindings
    Expr inner = gen.smooth(2);
    Expr composed = substitute(e1, {{"x", inner}});
    Bindings bc = b;
    bc.set("x", evaluate(inner, b));
    CHECK_THAT(evaluate(composed, b), WithinAbs(evaluate(e1, bc), 1e-9 * std::max(1.0, std::fabs(evaluate(e1, bc)))));

    // printing round-trips through the parser
    Expr reparsed = parse_unchecked(to_string(e1));
    CHECK(is_identically_zero(reparsed - e1));
  }
}

TEST_CASE("external substitution differentiates the replacement", "[symlang][subst]") {
  Expr e = Expr::external("l", 0) + Expr::external("l", 2) * sym("x");
  Expr constant = substitute_external(e, "l", sym("l0"));
  CHECK(constant == sym("l0"));
  Expr sinusoid = substitute_external(e, "l", parse_unchecked("1 + 0.1*sin(2*pi*t)"));
  Bindings b;
  b.set("t", 0.3).set("x", 2.0);
  double w = 2 * std::numbers::pi;
  double expected = 1 + 0.1 * std::sin(w * 0.3) - 2.0 * 0.1 * w * w * std::sin(w * 0.3);
  CHECK_THAT(evaluate(sinusoid, b), WithinAbs(expected, 1e-12));
}

TEST_CASE("compiled externals may themselves be compiled expressions", "[symlang][compile]") {
  SymbolTable inner_table;
  inner_table.coordinates = {"t"};
  auto inner = std::make_shared<CompiledExpr>(parse("1 + 0.5*t^2", inner_table), std::vector<std::string>{"t"}, 0,
                                              std::unordered_map<std::string, TimeFunction>{});
  TimeFunction l = [inner](double t, int) { return (*inner)(&t); };
  SymbolTable outer;
  outer.coordinates = {"t", "r"};
  outer.externals = {"l"};
  CompiledExpr f(parse("r*3 - l(t) + 2*r", outer), {"t", "r"}, 0, {{"l", l}});
  double x[] = {2.0, 1.5};
  CHECK(f(x) == Catch::Approx(5 * 1.5 - 3.0));
}
