#pragma once

// Singular systems: characteristic distribution, holonomic constraints via
// Lagrange multipliers, and the consistency/tangency constraint algorithm.

#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cocontact/lagrangian.hpp"

namespace cocontact {

class PrecocontactError : public Error {
 public:
  using Error::Error;
};

class ConstraintRankError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Characteristic distribution

/// Numeric basis (columns) of ker(flat) at x.
inline Eigen::MatrixXd characteristic_basis_at(const Structure& st, const Point& x, const Environment& env) {
  return exterior::nullspace(exterior::evaluate_matrix(st.flat(), *st.chart(), x, env));
}

/// Coordinate fields spanning ker(flat). Throws when the kernel rank varies
/// across probes or is not spanned by coordinate directions.
inline std::vector<VectorFieldExpr> characteristic_distribution(const Structure& st, const Environment& env_in = {},
                                                                std::vector<Point> probes = {}) {
  const auto& chart = *st.chart();
  std::vector<Expr> all;
  for (const auto& row : st.flat()) all.insert(all.end(), row.begin(), row.end());
  Environment env = exterior::complete_environment(chart, all, env_in);
  if (probes.empty()) probes = exterior::valid_probe_points(chart, all, env);
  long rank = -1;
  for (const auto& x : probes) {
    long k = characteristic_basis_at(st, x, env).cols();
    if (rank >= 0 && k != rank) throw PrecocontactError("characteristic distribution has non-constant rank");
    rank = k;
  }
  std::vector<VectorFieldExpr> basis;
  for (std::size_t b = 0; b < chart.dim(); ++b) {
    bool zero_column = true;
    for (std::size_t a = 0; a < chart.dim() && zero_column; ++a) zero_column = symlang::is_identically_zero(st.flat()[a][b]);
    if (zero_column) basis.push_back(VectorFieldExpr::coordinate(st.chart(), chart.name(b)));
  }
  if (static_cast<long>(basis.size()) != std::max(rank, 0L))
    throw PrecocontactError("characteristic distribution is not coordinate-aligned in this chart (rank " + std::to_string(rank) +
                            ", " + std::to_string(basis.size()) + " coordinate directions)");
  return basis;
}

/// A particular solution of flat(R) = alpha with free directions set to zero.
inline VectorFieldExpr reeb_representative(const Structure& st, const std::vector<Expr>& alpha) {
  const auto& chart = st.chart();
  std::size_t n = chart->dim();
  std::vector<std::string> unknowns;
  for (std::size_t i = 0; i < n; ++i) unknowns.push_back("X[" + chart->name(i) + "]");
  std::vector<Expr> eqs;
  for (std::size_t a = 0; a < n; ++a) {
    std::vector<Expr> terms{-alpha[a]};
    for (std::size_t b = 0; b < n; ++b)
      if (!st.flat()[a][b].is_zero()) terms.push_back(st.flat()[a][b] * symlang::sym(unknowns[b]));
    eqs.push_back(symlang::add(std::move(terms)));
  }
  auto sol = exterior::solve_affine(eqs, unknowns);
  for (const auto& r : sol.residuals)
    if (!symlang::is_identically_zero(r)) throw PrecocontactError("no Reeb field exists: the class is odd");
  symlang::Substitution zero;
  for (const auto& u : sol.free) zero[u] = Expr(0.0);
  VectorFieldExpr out(chart);
  for (const auto& [u, value] : sol.solved) out.set(u.substr(2, u.size() - 3), tidy(symlang::substitute(value, zero)));
  return out;
}

// ---------------------------------------------------------------------------
// Systems

class PrecocontactSystem {
 public:
  /// `sode` lists (position-like, velocity-like) index pairs whose
  /// second-order condition may be imposed by the constraint algorithm.
  PrecocontactSystem(DifferentialForm tau, DifferentialForm eta, Expr H, Environment env = {},
                     std::optional<VectorFieldExpr> Rt = std::nullopt, std::optional<VectorFieldExpr> Rs = std::nullopt,
                     std::vector<std::pair<std::size_t, std::size_t>> sode = {})
      : st_(std::move(tau), std::move(eta)), H_(std::move(H)), sode_(std::move(sode)) {
    std::vector<Expr> all = st_.all_coefficients();
    all.push_back(H_);
    env_ = exterior::complete_environment(*st_.chart(), all, std::move(env));
    verdict_ = verify_cocontact(st_, env_);
    if (verdict_.kind == StructureVerdict::Kind::invalid) throw PrecocontactError("not precocontact: " + verdict_.reason);
    basis_ = characteristic_distribution(st_, env_);
    Rt_ = Rt ? checked_reeb(*Rt, st_.tau(), "time") : reeb_representative(st_, st_.tau().components());
    Rs_ = Rs ? checked_reeb(*Rs, st_.eta(), "contact") : reeb_representative(st_, st_.eta().components());
  }

  /// (dt, eta_L, E_L) with the SODE pairs of the Lagrangian chart.
  static PrecocontactSystem from_lagrangian(const LagrangianSystem& L, std::optional<VectorFieldExpr> Rt = std::nullopt,
                                            std::optional<VectorFieldExpr> Rs = std::nullopt) {
    L.regularity();  // rejects non-constant rank
    return PrecocontactSystem(L.tau(), L.eta(), L.energy(), L.environment(), std::move(Rt), std::move(Rs), L.pairs());
  }

  PrecocontactSystem with_reeb(VectorFieldExpr Rt, VectorFieldExpr Rs) const {
    PrecocontactSystem out = *this;
    out.Rt_ = checked_reeb(Rt, st_.tau(), "time");
    out.Rs_ = checked_reeb(Rs, st_.eta(), "contact");
    return out;
  }

  const Structure& structure() const { return st_; }
  const ChartPtr& chart() const { return st_.chart(); }
  const Expr& generator() const { return H_; }
  const Environment& environment() const { return env_; }
  const StructureVerdict& verdict() const { return verdict_; }
  int cls() const { return verdict_.cls; }
  const std::vector<VectorFieldExpr>& characteristic_basis() const { return basis_; }
  const VectorFieldExpr& reeb_time() const { return *Rt_; }
  const VectorFieldExpr& reeb_action() const { return *Rs_; }
  const std::vector<std::pair<std::size_t, std::size_t>>& sode_pairs() const { return sode_; }

  DifferentialForm gamma() const { return gamma_form(st_, H_, *Rt_, *Rs_); }

 private:
  VectorFieldExpr checked_reeb(const VectorFieldExpr& R, const DifferentialForm& target, const char* which) const {
    if (!(flat_map(st_, R) - target).is_identically_zero())
      throw PrecocontactError(std::string("supplied field is not a ") + which + " Reeb field");
    return R;
  }

  Structure st_;
  Expr H_;
  Environment env_;
  StructureVerdict verdict_;
  std::vector<VectorFieldExpr> basis_;
  std::optional<VectorFieldExpr> Rt_, Rs_;
  std::vector<std::pair<std::size_t, std::size_t>> sode_;
};

/// {L_Y H : Y in the characteristic basis}, zeros dropped.
inline std::vector<Expr> primary_constraints(const PrecocontactSystem& sys) {
  std::vector<Expr> out;
  for (const auto& Y : sys.characteristic_basis()) {
    Expr e = tidy(exterior::lie_derivative(Y, sys.generator()));
    if (!symlang::is_identically_zero(e)) out.push_back(e);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Holonomic constraints

struct HolonomicSystem {
  LagrangianSystem system;
  Expr base_lagrangian;
  std::vector<Expr> constraints;
  std::vector<std::string> multipliers;
};

/// L = L' + lambda_a f^a on the chart (t, q, lambda, v, v_lambda, s).
inline HolonomicSystem holonomic_augment(const ChartPtr& base, const Expr& Lprime, const std::vector<Expr>& f,
                                         Environment env = {}, std::vector<std::string> names = {}) {
  const auto& c = *base;
  if (!c.indices(Role::multiplier).empty()) throw exterior::ChartError("base chart already has multipliers");
  std::size_t d = f.size();
  if (names.empty())
    for (std::size_t a = 0; a < d; ++a) names.push_back(d == 1 ? "lambda" : "lambda" + std::to_string(a + 1));
  if (names.size() != d) throw exterior::ChartError("one multiplier name per constraint");
  for (const auto& fa : f)
    for (auto vi : c.indices(Role::velocity))
      if (symlang::depends_on(fa, c.name(vi)))
        throw ConstraintRankError("constraint depends on velocity '" + c.name(vi) + "': nonholonomic constraints are not supported");

  auto positions = c.indices(Role::position);
  ExprMatrix J(d, std::vector<Expr>(positions.size()));
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t i = 0; i < positions.size(); ++i) J[a][i] = symlang::differentiate(f[a], c.name(positions[i]));
  std::vector<Expr> all(f);
  all.push_back(Lprime);
  Environment full = exterior::complete_environment(c, all, env);
  for (const auto& x : exterior::valid_probe_points(c, all, full)) {
    Eigen::MatrixXd A = exterior::evaluate_matrix(J, c, x, full);
    if (exterior::numeric_rank(A) == static_cast<int>(d)) continue;
    Eigen::MatrixXd N = exterior::nullspace(A.transpose());
    std::ostringstream msg;
    msg << "constraints are not independent: rank(df/dq) < " << d << "; degenerate combination";
    Eigen::VectorXd w = N.col(0) / N.col(0).cwiseAbs().maxCoeff();
    for (std::size_t a = 0; a < d; ++a)
      if (std::abs(w[static_cast<Eigen::Index>(a)]) > 1e-9) msg << ' ' << (w[static_cast<Eigen::Index>(a)] >= 0 ? "+" : "") << w[static_cast<Eigen::Index>(a)] << "*f" << a + 1;
    throw ConstraintRankError(msg.str());
  }

  std::vector<exterior::Coordinate> coords{{"t", Role::time}};
  for (auto i : positions) coords.push_back({c.name(i), Role::position});
  for (const auto& n : names) coords.push_back({n, Role::multiplier});
  for (auto i : c.indices(Role::velocity)) coords.push_back({c.name(i), Role::velocity});
  for (const auto& n : names) coords.push_back({"v_" + n, Role::multiplier_velocity});
  coords.push_back({c.action_name(), Role::action});
  auto chart = std::make_shared<const exterior::Chart>(std::move(coords));

  std::vector<Expr> terms{Lprime};
  for (std::size_t a = 0; a < d; ++a) terms.push_back(symlang::sym(names[a]) * f[a]);
  return {LagrangianSystem(chart, symlang::add(std::move(terms)), std::move(env)), Lprime, f, names};
}

struct EquationRecord {
  std::string label;
  Expr lhs, rhs;
};

/// Coordinate equations of a holonomic field with multiplier source terms;
/// accelerations appear as the symbols X[v].
inline std::vector<EquationRecord> multiplier_dynamics(const HolonomicSystem& hs) {
  const auto& sys = hs.system;
  const auto& c = *sys.chart();
  const std::string& s = c.action_name();
  const Expr& Lp = hs.base_lagrangian;
  std::vector<EquationRecord> out;
  out.push_back({"time", symlang::sym("X[t]"), Expr(1.0)});
  out.push_back({"action", symlang::sym("X[" + s + "]"), sys.lagrangian()});
  for (std::size_t a = 0; a < hs.constraints.size(); ++a) out.push_back({"constraint " + hs.multipliers[a], hs.constraints[a], Expr(0.0)});
  auto q = c.indices(Role::position), v = c.indices(Role::velocity);
  Expr Ls = symlang::differentiate(Lp, s);
  for (std::size_t i = 0; i < q.size(); ++i) {
    Expr Lvi = symlang::differentiate(Lp, c.name(v[i]));
    std::vector<Expr> lhs{symlang::differentiate(Lvi, "t"), Lp * symlang::differentiate(Lvi, s),
                          -symlang::differentiate(Lp, c.name(q[i]))};
    for (std::size_t j = 0; j < q.size(); ++j) {
      lhs.push_back(symlang::sym(c.name(v[j])) * symlang::differentiate(Lvi, c.name(q[j])));
      lhs.push_back(symlang::sym("X[" + c.name(v[j]) + "]") * symlang::differentiate(Lvi, c.name(v[j])));
    }
    std::vector<Expr> rhs{Ls * Lvi};
    for (std::size_t a = 0; a < hs.constraints.size(); ++a) {
      const Expr& fa = hs.constraints[a];
      Expr src = tidy(symlang::differentiate(fa, c.name(q[i])) + symlang::differentiate(fa, s) * Lvi);
      if (!src.is_zero()) rhs.push_back(symlang::sym(hs.multipliers[a]) * src);
    }
    out.push_back({"Euler-Lagrange " + c.name(q[i]), tidy(symlang::add(std::move(lhs))), tidy(symlang::add(std::move(rhs)))});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Constraint algorithm

enum class Origin { consistency, tangency, sode, holonomic_rank, reeb };

inline const char* to_string(Origin o) {
  switch (o) {
    case Origin::consistency: return "consistency";
    case Origin::tangency: return "tangency";
    case Origin::sode: return "sode";
    case Origin::holonomic_rank: return "holonomic-rank";
    case Origin::reeb: return "reeb";
  }
  return "?";
}

struct LedgerEntry {
  Expr xi;
  int stage = 0;
  Origin origin = Origin::consistency;
  std::string eliminates;  // coordinate solved for by this constraint
  Expr rule;               // eliminates -> rule on the zero set
};

struct SolvedCoefficient {
  std::string name;  // X[coordinate]
  Expr value;
  int stage = 0;
  Origin origin = Origin::tangency;
};

struct ConstraintLedger {
  enum class Status { finalized, inconsistent, max_iterations };

  ChartPtr chart;
  std::vector<LedgerEntry> entries;
  std::vector<SolvedCoefficient> solved;
  Status status = Status::finalized;
  int final_stage = 0;
  std::string reason;

  std::size_t final_dimension() const { return chart->dim() - entries.size(); }

  std::string status_string() const {
    switch (status) {
      case Status::finalized: return "finalized(dim " + std::to_string(final_dimension()) + ")";
      case Status::inconsistent: return "inconsistent";
      case Status::max_iterations: return "max-iterations";
    }
    return "?";
  }

  symlang::Substitution rules() const {
    symlang::Substitution out;
    for (const auto& e : entries) out[e.eliminates] = e.rule;
    return out;
  }

  /// Rewrites eliminated coordinates; rules are kept mutually reduced, so one
  /// pass suffices.
  Expr reduce(const Expr& e) const { return tidy(symlang::substitute(e, rules())); }

  bool vanishes_on_zero_set(const Expr& e) const { return symlang::is_identically_zero(reduce(e)); }

  /// Overwrites eliminated coordinates of x so that every constraint holds.
  Point consistent_state(Point x, const Environment& env) const {
    auto b = exterior::bind_point(*chart, x, env);
    for (const auto& e : entries) x[chart->index(e.eliminates)] = symlang::evaluate(e.rule, b);
    return x;
  }

  std::vector<Point> zero_set_points(const Environment& env, int count = 16, std::uint64_t seed = 0x5EEDu) const {
    std::vector<Expr> exprs;
    for (const auto& e : entries) exprs.push_back(e.rule);
    std::vector<Point> out;
    for (const auto& x : exterior::valid_probe_points(*chart, exprs, env, count, seed)) out.push_back(consistent_state(x, env));
    return out;
  }

  std::string report() const {
    std::ostringstream os;
    os << "constraints:\n";
    for (std::size_t k = 0; k < entries.size(); ++k) {
      const auto& e = entries[k];
      os << "  stage " << e.stage << "  " << to_string(e.origin) << "  xi" << k + 1 << " = " << e.xi << "    [" << e.eliminates
         << " -> " << e.rule << "]\n";
    }
    if (entries.empty()) os << "  (none)\n";
    os << "solved coefficients:\n";
    for (const auto& s : solved) os << "  stage " << s.stage << "  " << to_string(s.origin) << "  " << s.name << " = " << s.value << '\n';
    if (solved.empty()) os << "  (none)\n";
    os << "status: " << status_string();
    if (!reason.empty()) os << " (" << reason << ')';
    os << '\n';
    return os.str();
  }
};

struct AlgorithmOptions {
  bool enforce_sode = true;
  int max_stages = 12;
  bool reeb_tangency = false;
};

struct ConstraintResult {
  ConstraintLedger ledger;
  VectorFieldExpr field;             // reduced modulo the ledger; free coefficients stay as X[...]
  std::vector<std::string> free;     // undetermined coefficients
};

namespace detail {

class ConstraintRun {
 public:
  ConstraintRun(const PrecocontactSystem& sys, const AlgorithmOptions& opt) : sys_(sys), opt_(opt), X_(sys.chart()) {
    ledger_.chart = sys.chart();
    const auto& c = *sys.chart();
    for (std::size_t i = 0; i < c.dim(); ++i) unknowns_.push_back("X[" + c.name(i) + "]");
  }

  ConstraintResult run() {
    const auto& c = *sys_.chart();
    // stage 0: general solution of flat(X) = gamma_H plus consistency
    auto gamma = sys_.gamma().components();
    std::vector<Expr> eqs;
    for (std::size_t a = 0; a < c.dim(); ++a) {
      std::vector<Expr> terms{-gamma[a]};
      for (std::size_t b = 0; b < c.dim(); ++b)
        if (!sys_.structure().flat()[a][b].is_zero()) terms.push_back(sys_.structure().flat()[a][b] * symlang::sym(unknowns_[b]));
      eqs.push_back(symlang::add(std::move(terms)));
    }
    auto sol = exterior::solve_affine(eqs, unknowns_);
    for (std::size_t i = 0; i < c.dim(); ++i) X_.set(i, symlang::sym(unknowns_[i]));
    for (const auto& [u, value] : sol.solved) X_.set(c.index(u.substr(2, u.size() - 3)), tidy(value));

    for (const auto& xi : primary_constraints(sys_))
      if (!process(xi, 0, Origin::consistency)) return finish();
    for (const auto& r : sol.residuals)
      if (!process(r, 0, Origin::consistency)) return finish();
    if (opt_.enforce_sode)
      for (const auto& [qi, vi] : sys_.sode_pairs())
        if (!process(X_[qi] - symlang::sym(c.name(vi)), 0, Origin::sode)) return finish();

    int stage = 0;
    std::size_t fresh_begin = 0;
    while (ledger_.entries.size() > fresh_begin) {
      if (++stage > opt_.max_stages) {
        ledger_.status = ConstraintLedger::Status::max_iterations;
        ledger_.reason = "no fixed point after " + std::to_string(opt_.max_stages) + " stages";
        return finish(stage - 1);
      }
      std::size_t fresh_end = ledger_.entries.size();
      for (std::size_t k = fresh_begin; k < fresh_end; ++k) {
        Expr xi = ledger_.entries[k].xi;
        if (!process(exterior::lie_derivative(X_, xi), stage, Origin::tangency)) return finish(stage);
        if (opt_.reeb_tangency) {
          if (!process(exterior::lie_derivative(sys_.reeb_time(), xi), stage, Origin::reeb)) return finish(stage);
          if (!process(exterior::lie_derivative(sys_.reeb_action(), xi), stage, Origin::reeb)) return finish(stage);
        }
      }
      fresh_begin = fresh_end;
    }
    return finish(stage);
  }

 private:
  Expr reduce(const Expr& e) const { return ledger_.reduce(symlang::substitute(e, values_)); }

  std::vector<std::string> unknowns_in(const Expr& e) const { return exterior::detail::unknowns_in(e, unknowns_); }

  bool involves_state(const Expr& e) const {
    const auto& c = *sys_.chart();
    for (std::size_t i = 0; i < c.dim(); ++i)
      if (i != c.time_index() && symlang::depends_on(e, c.name(i))) return true;
    return false;
  }

  /// Handles one relation that must vanish on the zero set. Returns false
  /// when the system turned out inconsistent.
  bool process(const Expr& raw, int stage, Origin origin) {
    Expr e = reduce(raw);
    if (symlang::is_identically_zero(e)) return true;
    if (!unknowns_in(e).empty()) {
      auto sol = exterior::solve_affine({e}, unknowns_);
      for (const auto& [u, value] : sol.solved) assign(u, value, stage, origin);
      for (const auto& r : sol.residuals)
        if (!process(r, stage, origin)) return false;
      return true;
    }
    if (!involves_state(e)) {
      ledger_.status = ConstraintLedger::Status::inconsistent;
      ledger_.reason = std::string(to_string(origin)) + " at stage " + std::to_string(stage) + " requires " +
                       symlang::to_string(e) + " = 0";
      return false;
    }
    add_constraint(e, stage, origin);
    return true;
  }

  void assign(const std::string& u, const Expr& value, int stage, Origin origin) {
    Expr v = tidy(value);
    for (auto& [name, w] : values_) w = tidy(symlang::substitute(w, {{u, v}}));
    values_[u] = v;
    ledger_.solved.push_back({u, v, stage, origin});
  }

  /// Orients xi as a rewrite rule for one coordinate: the last coordinate (in
  /// chart order) in which xi is affine with a state-free coefficient, else
  /// any affine coordinate.
  void add_constraint(const Expr& xi, int stage, Origin origin) {
    const auto& c = *sys_.chart();
    std::optional<std::size_t> pick, fallback;
    Expr pick_coef, fallback_coef;
    for (std::size_t i = 0; i < c.dim(); ++i) {
      if (i == c.time_index() || !symlang::depends_on(xi, c.name(i))) continue;
      Expr coef = tidy(symlang::differentiate(xi, c.name(i)));
      if (symlang::depends_on(coef, c.name(i)) && !symlang::is_identically_zero(symlang::differentiate(coef, c.name(i)))) continue;
      if (symlang::is_identically_zero(coef)) continue;
      if (!involves_state(coef)) {
        pick = i;
        pick_coef = coef;
      } else if (!fallback) {
        fallback = i;
        fallback_coef = coef;
      }
    }
    bool normalise = pick.has_value();
    if (!pick) pick = fallback, pick_coef = fallback_coef;
    if (!pick) throw PrecocontactError("cannot solve constraint " + symlang::to_string(xi) + " for any coordinate");
    const std::string& x = c.name(*pick);
    Expr rest = symlang::substitute(xi, {{x, Expr(0.0)}});
    Expr rule = tidy(-rest / pick_coef);
    Expr stored = normalise ? tidy(symlang::expand(xi / pick_coef)) : xi;
    for (auto& e : ledger_.entries) e.rule = tidy(symlang::substitute(e.rule, {{x, rule}}));
    ledger_.entries.push_back({stored, stage, origin, x, rule});
  }

  ConstraintResult finish(int stage = 0) {
    ledger_.final_stage = stage;
    ConstraintResult out{ledger_, VectorFieldExpr(sys_.chart()), {}};
    for (std::size_t i = 0; i < sys_.chart()->dim(); ++i) out.field.set(i, reduce(X_[i]));
    for (auto& s : out.ledger.solved) s.value = ledger_.reduce(symlang::substitute(s.value, values_));
    for (const auto& u : unknowns_)
      for (std::size_t i = 0; i < out.field.chart()->dim(); ++i)
        if (symlang::depends_on(out.field[i], u)) {
          out.free.push_back(u);
          break;
        }
    return out;
  }

  const PrecocontactSystem& sys_;
  AlgorithmOptions opt_;
  VectorFieldExpr X_;
  std::vector<std::string> unknowns_;
  symlang::Substitution values_;
  ConstraintLedger ledger_;
};

}  // namespace detail

inline ConstraintResult constraint_algorithm(const PrecocontactSystem& sys, const AlgorithmOptions& opt = {}) {
  return detail::ConstraintRun(sys, opt).run();
}

}  // namespace cocontact
