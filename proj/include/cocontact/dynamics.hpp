#pragma once

// Integration of derived vector fields and trajectory diagnostics.

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cocontact/precocontact.hpp"
#include "cocontact/trajectory.hpp"

namespace cocontact {

class IntegrationError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Compiled evaluation

namespace detail {

inline std::vector<std::string> evaluation_slots(const exterior::Chart& chart, const Environment& env) {
  std::vector<std::string> slots = chart.names();
  for (const auto& [name, v] : env.values)
    if (!chart.contains(name)) slots.push_back(name);
  return slots;
}

}  // namespace detail

/// Scalar expression bound to a chart and an environment.
class CompiledScalar {
 public:
  CompiledScalar(const Expr& e, const exterior::Chart& chart, const Environment& env)
      : slots_(detail::evaluation_slots(chart, env)), dim_(chart.dim()),
        f_(e, slots_, chart.time_index(), env.externals) {
    params_.resize(slots_.size() - dim_);
    for (std::size_t i = dim_; i < slots_.size(); ++i) params_[i - dim_] = env.at(slots_[i]);
  }

  double operator()(const Point& x) const {
    thread_local std::vector<double> buf;
    buf.assign(x.begin(), x.end());
    buf.insert(buf.end(), params_.begin(), params_.end());
    return f_(buf.data());
  }

 private:
  std::vector<std::string> slots_;
  std::size_t dim_;
  std::vector<double> params_;
  symlang::CompiledExpr f_;
};

/// Right-hand side x' = X(x) of a FieldSpec.
class CompiledField {
 public:
  CompiledField(const FieldSpec& spec, const Environment& env) : chart_(spec.field.chart()) {
    const auto& c = *chart_;
    slots_ = detail::evaluation_slots(c, env);
    for (std::size_t i = c.dim(); i < slots_.size(); ++i) params_.push_back(env.at(slots_[i]));
    auto compile = [&](const Expr& e) { return symlang::CompiledExpr(e, slots_, c.time_index(), env.externals); };
    for (std::size_t i = 0; i < c.dim(); ++i) comps_.push_back(compile(spec.field[i]));
    if (spec.implicit) {
      targets_ = spec.implicit->targets;
      for (const auto& row : spec.implicit->W)
        for (const auto& e : row) W_.push_back(compile(e));
      for (const auto& e : spec.implicit->rhs) rhs_.push_back(compile(e));
    }
  }

  const ChartPtr& chart() const { return chart_; }

  void operator()(const Point& x, Point& dx) const {
    thread_local std::vector<double> buf;
    buf.assign(x.begin(), x.end());
    buf.insert(buf.end(), params_.begin(), params_.end());
    dx.resize(x.size());
    for (std::size_t i = 0; i < comps_.size(); ++i) dx[i] = comps_[i](buf.data());
    if (targets_.empty()) return;
    auto n = static_cast<Eigen::Index>(targets_.size());
    Eigen::MatrixXd A(n, n);
    Eigen::VectorXd b(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      b[i] = rhs_[static_cast<std::size_t>(i)](buf.data());
      for (Eigen::Index j = 0; j < n; ++j) A(i, j) = W_[static_cast<std::size_t>(i * n + j)](buf.data());
    }
    Eigen::VectorXd G = exterior::lu_solve(A, b);
    for (Eigen::Index i = 0; i < n; ++i) dx[targets_[static_cast<std::size_t>(i)]] = G[i];
  }

 private:
  ChartPtr chart_;
  std::vector<std::string> slots_;
  std::vector<double> params_;
  std::vector<symlang::CompiledExpr> comps_, W_, rhs_;
  std::vector<std::size_t> targets_;
};

// ---------------------------------------------------------------------------
// Integrators

struct IntegratorConfig {
  enum class Method { rk4, rk45 };
  Method method = Method::rk4;
  double dt = 1e-3;  // fixed step, or initial step for rk45
  double atol = 1e-9, rtol = 1e-7;
  double t0 = 0.0, t1 = 10.0;
  Point initial;  // full state; its t entry is overwritten by t0
  std::vector<Expr> positive;  // domain guards: each must stay > 0 (e.g. a radius)
  std::size_t max_steps = 50'000'000;

  void validate() const {
    if (!(dt > 0.0)) throw IntegrationError("step must be positive");
    if (!(t1 > t0)) throw IntegrationError("time span is empty");
    if (!(atol > 0.0) || !(rtol > 0.0)) throw IntegrationError("tolerances must be positive");
  }
};

inline const char* to_string(IntegratorConfig::Method m) { return m == IntegratorConfig::Method::rk4 ? "rk4" : "rk45"; }

namespace detail {

inline void axpy(Point& out, const Point& x, double h, const std::vector<const Point*>& ks, const std::vector<double>& w) {
  out = x;
  for (std::size_t j = 0; j < ks.size(); ++j)
    if (w[j] != 0.0)
      for (std::size_t i = 0; i < x.size(); ++i) out[i] += h * w[j] * (*ks[j])[i];
}

}  // namespace detail

/// Integral curve of `spec` from cfg.initial. Domain or singular-matrix
/// failures stop the run and are reported in Trajectory::status.
inline Trajectory integrate(const FieldSpec& spec, const IntegratorConfig& cfg, const Environment& env) {
  cfg.validate();
  CompiledField X(spec, env);
  const auto& chart = *X.chart();
  if (cfg.initial.size() != chart.dim()) throw IntegrationError("initial state has the wrong dimension");
  std::size_t it = chart.time_index();

  Trajectory traj{X.chart()};
  Point x = cfg.initial;
  x[it] = cfg.t0;
  double t = cfg.t0;
  traj.times.push_back(t);
  traj.states.push_back(x);

  auto fail = [&](const std::string& why) {
    traj.status = why;
    return traj;
  };
  std::vector<CompiledScalar> guards;
  for (const auto& g : cfg.positive) guards.emplace_back(g, chart, env);
  auto outside = [&](const Point& xk) -> std::optional<std::string> {
    for (std::size_t i = 0; i < guards.size(); ++i)
      if (!(guards[i](xk) > 0.0)) return symlang::to_string(cfg.positive[i]) + " > 0";
    return std::nullopt;
  };
  auto track = [&](double tk, const Point& xk) {
    return std::abs(xk[it] - tk) <= 1e-12 * std::max(1.0, std::abs(tk));
  };

  if (auto g = outside(x)) return fail("domain error: initial state violates " + *g);

  std::size_t dim = chart.dim();
  Point k1(dim), k2(dim), k3(dim), k4(dim), k5(dim), k6(dim), k7(dim), y(dim);
  try {
    if (cfg.method == IntegratorConfig::Method::rk4) {
      auto steps = static_cast<std::size_t>(std::ceil((cfg.t1 - cfg.t0) / cfg.dt - 1e-9));
      if (steps > cfg.max_steps) throw IntegrationError("too many steps");
      for (std::size_t k = 1; k <= steps; ++k) {
        double tn = k == steps ? cfg.t1 : cfg.t0 + static_cast<double>(k) * cfg.dt;
        double h = tn - t;
        X(x, k1);
        detail::axpy(y, x, h, {&k1}, {0.5});
        X(y, k2);
        detail::axpy(y, x, h, {&k2}, {0.5});
        X(y, k3);
        detail::axpy(y, x, h, {&k3}, {1.0});
        X(y, k4);
        detail::axpy(y, x, h, {&k1, &k2, &k3, &k4}, {1.0 / 6, 1.0 / 3, 1.0 / 3, 1.0 / 6});
        for (double v : y)
          if (!std::isfinite(v)) return fail("non-finite state at t=" + std::to_string(tn));
        if (!track(tn, y)) return fail("time coordinate does not track t (is dt/dt = 1?)");
        if (auto g = outside(y)) return fail("domain error: " + *g + " violated at t=" + std::to_string(tn));
        x = y;
        t = tn;
        traj.times.push_back(t);
        traj.states.push_back(x);
      }
      return traj;
    }

    // Dormand-Prince 5(4)
    static const std::vector<double> a2{1.0 / 5}, a3{3.0 / 40, 9.0 / 40}, a4{44.0 / 45, -56.0 / 15, 32.0 / 9},
        a5{19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
        a6{9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
        b5{35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
        e{71.0 / 57600, 0.0, -71.0 / 16695, 71.0 / 1920, -17253.0 / 339200, 22.0 / 525, -1.0 / 40};
    double h = std::min(cfg.dt, cfg.t1 - cfg.t0);
    std::size_t steps = 0;
    X(x, k1);
    while (t < cfg.t1) {
      if (++steps > cfg.max_steps) throw IntegrationError("too many steps");
      bool last = t + h >= cfg.t1;
      if (last) h = cfg.t1 - t;
      if (h < 1e-14 * std::max(1.0, std::abs(t))) return fail("step underflow at t=" + std::to_string(t));
      detail::axpy(y, x, h, {&k1}, a2);
      X(y, k2);
      detail::axpy(y, x, h, {&k1, &k2}, a3);
      X(y, k3);
      detail::axpy(y, x, h, {&k1, &k2, &k3}, a4);
      X(y, k4);
      detail::axpy(y, x, h, {&k1, &k2, &k3, &k4}, a5);
      X(y, k5);
      detail::axpy(y, x, h, {&k1, &k2, &k3, &k4, &k5}, a6);
      X(y, k6);
      Point x5;
      detail::axpy(x5, x, h, {&k1, &k2, &k3, &k4, &k5, &k6}, b5);
      X(x5, k7);
      double err = 0.0;
      for (std::size_t i = 0; i < dim; ++i) {
        double ei = h * (e[0] * k1[i] + e[2] * k3[i] + e[3] * k4[i] + e[4] * k5[i] + e[5] * k6[i] + e[6] * k7[i]);
        double sc = cfg.atol + cfg.rtol * std::max(std::abs(x[i]), std::abs(x5[i]));
        err = std::max(err, std::abs(ei) / sc);
      }
      if (!std::isfinite(err)) err = 1e10;
      if (err <= 1.0) {
        double tn = last ? cfg.t1 : t + h;
        if (!track(tn, x5)) return fail("time coordinate does not track t (is dt/dt = 1?)");
        if (auto g = outside(x5)) return fail("domain error: " + *g + " violated at t=" + std::to_string(tn));
        x = x5;
        t = tn;
        k1 = k7;
        traj.times.push_back(t);
        traj.states.push_back(x);
      }
      double factor = err == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0);
      h *= factor;
    }
    return traj;
  } catch (const symlang::DomainError& ex) {
    return fail(std::string("domain error: ") + ex.what());
  } catch (const exterior::SingularMatrixError& ex) {
    return fail(std::string("singular Hessian: ") + ex.what());
  }
}

// ---------------------------------------------------------------------------
// Diagnostics

/// What `diagnostics` should tabulate.
struct DiagnosticSpec {
  std::string energy_name = "E";
  std::optional<Expr> energy;
  std::optional<Expr> mechanical;   // E_m column when present
  std::optional<Expr> action_rate;  // s' along solutions (L, or the field's s-component)
  std::optional<VectorFieldExpr> field;  // enables the end-point corrected quadrature
};

inline DiagnosticSpec diagnostic_spec(const LagrangianSystem& L, std::optional<VectorFieldExpr> field = std::nullopt) {
  return {"E_L", L.energy(), L.mechanical_energy(), L.lagrangian(), std::move(field)};
}

inline DiagnosticSpec diagnostic_spec(const CocontactSystem& sys) {
  auto X = hamiltonian_vector_field(sys);
  return {"H", sys.hamiltonian(), std::nullopt, X[sys.chart()->action_name()], X};
}

/// Adds E (E_L or H), E_m when declared, and action_residual = |s - s0 - int rate|
/// to the trajectory's diagnostics. The integral is the trapezoid rule with the
/// Euler-Maclaurin end-point correction when the field is known.
inline void diagnostics(Trajectory& traj, const DiagnosticSpec& spec, const Environment& env) {
  const auto& chart = *traj.chart;
  auto column = [&](const Expr& e) {
    CompiledScalar f(e, chart, env);
    std::vector<double> out;
    out.reserve(traj.size());
    for (const auto& x : traj.states) out.push_back(f(x));
    return out;
  };
  if (spec.energy) traj.add_diagnostic(spec.energy_name, column(*spec.energy));
  if (spec.mechanical) traj.add_diagnostic("E_m", column(*spec.mechanical));
  if (spec.action_rate && traj.size() > 0) {
    auto rate = column(*spec.action_rate);
    std::vector<double> rate_dot;
    if (spec.field) rate_dot = column(exterior::lie_derivative(*spec.field, *spec.action_rate));
    std::size_t is = chart.action_index();
    std::vector<double> res(traj.size(), 0.0);
    double integral = 0.0;
    for (std::size_t k = 1; k < traj.size(); ++k) {
      double h = traj.times[k] - traj.times[k - 1];
      integral += 0.5 * h * (rate[k] + rate[k - 1]);
      if (!rate_dot.empty()) integral -= h * h / 12.0 * (rate_dot[k] - rate_dot[k - 1]);
      res[k] = std::abs(traj.states[k][is] - traj.states[0][is] - integral);
    }
    traj.add_diagnostic("action_residual", std::move(res));
  }
}

struct DriftTable {
  std::vector<std::string> names;  // xi1, xi2, ...
  std::vector<double> max_abs;
  double tolerance = 1e-6;

  bool pass() const {
    for (double d : max_abs)
      if (!(d <= tolerance)) return false;
    return true;
  }
};

/// Max |xi_k| over the samples; also appends one diagnostic column per constraint.
inline DriftTable constraint_drift(Trajectory& traj, const ConstraintLedger& ledger, const Environment& env,
                                   double tolerance = 1e-6) {
  DriftTable out;
  out.tolerance = tolerance;
  for (std::size_t k = 0; k < ledger.entries.size(); ++k) {
    CompiledScalar f(ledger.entries[k].xi, *traj.chart, env);
    std::vector<double> col;
    double worst = 0.0;
    for (const auto& x : traj.states) {
      col.push_back(f(x));
      worst = std::max(worst, std::abs(col.back()));
    }
    out.names.push_back("xi" + std::to_string(k + 1));
    out.max_abs.push_back(worst);
    traj.add_diagnostic(out.names.back(), std::move(col));
  }
  return out;
}

/// Full initial state from the given coordinates: omitted coordinates default
/// to 0 (s = 0 is the action gauge), then omitted eliminated coordinates are
/// computed from the ledger's rules.
inline Point consistent_initial_state(const ConstraintLedger& ledger, const std::map<std::string, double>& given,
                                      const Environment& env, double t0) {
  const auto& chart = *ledger.chart;
  Point x(chart.dim(), 0.0);
  for (const auto& [name, v] : given) x[chart.index(name)] = v;
  x[chart.time_index()] = t0;
  auto b = exterior::bind_point(chart, x, env);
  for (const auto& e : ledger.entries)
    if (!given.count(e.eliminates)) x[chart.index(e.eliminates)] = symlang::evaluate(e.rule, b);
  return x;
}

}  // namespace cocontact
