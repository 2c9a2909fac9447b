#pragma once

// Lagrangian side on R x TQ x R: energy, Cartan forms, Hessian, Legendre map,
// Lagrangian Reeb fields and the Herglotz-Euler-Lagrange field.

#include <optional>
#include <string>
#include <vector>

#include "cocontact/cocontact.hpp"

namespace cocontact {

class RegularityError : public Error {
 public:
  using Error::Error;
};

struct Regularity {
  bool regular = false;
  int rank = 0;
  int size = 0;

  std::string to_string() const {
    return regular ? "regular" : "singular(rank " + std::to_string(rank) + " of " + std::to_string(size) + ")";
  }
};

/// Right-hand side that is only known through W x = rhs for the `targets`
/// components; used when W is too large to invert symbolically.
struct ImplicitBlock {
  std::vector<std::size_t> targets;
  ExprMatrix W;
  std::vector<Expr> rhs;
};

/// A vector field whose components are symbolic, except for an optional
/// block solved point-wise.
struct FieldSpec {
  VectorFieldExpr field;
  std::optional<ImplicitBlock> implicit;

  FieldSpec(VectorFieldExpr f) : field(std::move(f)) {}  // NOLINT: implicit by design
  FieldSpec(VectorFieldExpr f, ImplicitBlock b) : field(std::move(f)), implicit(std::move(b)) {}
};

struct LegendreImagePoint {
  double t = 0.0;
  std::vector<double> q, p;
  double s = 0.0;
};

class LagrangianSystem {
 public:
  /// `chart` has roles time, position, velocity, [multiplier,
  /// multiplier-velocity,] action. `kinetic` + `potential`, when given,
  /// define the mechanical energy.
  LagrangianSystem(ChartPtr chart, Expr L, Environment env = {}, std::optional<Expr> kinetic = std::nullopt,
                   std::optional<Expr> potential = std::nullopt)
      : chart_(std::move(chart)), L_(std::move(L)) {
    if (!chart_->indices(Role::momentum).empty()) throw exterior::ChartError("a Lagrangian chart has velocities, not momenta");
    auto q = chart_->indices(Role::position), v = chart_->indices(Role::velocity);
    auto l = chart_->indices(Role::multiplier), w = chart_->indices(Role::multiplier_velocity);
    for (std::size_t i = 0; i < q.size(); ++i) pairs_.emplace_back(q[i], v[i]);
    for (std::size_t i = 0; i < l.size(); ++i) pairs_.emplace_back(l[i], w[i]);
    if (kinetic && potential) mechanical_ = *kinetic + *potential;

    const std::string& s = chart_->action_name();
    std::vector<Expr> e_terms{-L_};
    DifferentialForm theta(chart_, 1);
    for (const auto& [qi, vi] : pairs_) {
      Expr Lv = symlang::differentiate(L_, chart_->name(vi));
      momenta_.push_back(Lv);
      e_terms.push_back(symlang::sym(chart_->name(vi)) * Lv);
      theta.add_term({static_cast<int>(qi)}, Lv);
    }
    E_ = symlang::add(std::move(e_terms));
    theta_ = theta;
    eta_ = DifferentialForm::differential(chart_, s) - theta;
    tau_ = DifferentialForm::differential(chart_, "t");
    d_eta_ = exterior::exterior_derivative(*eta_);

    std::size_t n = pairs_.size();
    W_.assign(n, std::vector<Expr>(n, Expr(0.0)));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) W_[i][j] = symlang::differentiate(momenta_[i], chart_->name(pairs_[j].second));

    std::vector<Expr> all{L_, E_};
    for (const auto& row : W_) all.insert(all.end(), row.begin(), row.end());
    if (mechanical_) all.push_back(*mechanical_);
    env_ = exterior::complete_environment(*chart_, all, std::move(env));
  }

  const ChartPtr& chart() const { return chart_; }
  const Expr& lagrangian() const { return L_; }
  const Environment& environment() const { return env_; }
  /// (position-like index, velocity-like index) pairs, multipliers last.
  const std::vector<std::pair<std::size_t, std::size_t>>& pairs() const { return pairs_; }
  std::size_t n() const { return pairs_.size(); }

  const Expr& energy() const { return E_; }
  const DifferentialForm& theta() const { return *theta_; }
  const DifferentialForm& tau() const { return *tau_; }
  const DifferentialForm& eta() const { return *eta_; }
  const DifferentialForm& d_eta() const { return *d_eta_; }
  /// dL/dv^i in pair order.
  const std::vector<Expr>& momenta() const { return momenta_; }
  const ExprMatrix& hessian_matrix() const { return W_; }
  const std::optional<Expr>& mechanical_energy() const { return mechanical_; }

  Structure structure() const { return Structure(tau(), eta()); }

  /// Rank of W at probe points; throws when it varies.
  Regularity regularity(std::vector<Point> probes = {}) const {
    if (probes.empty()) {
      std::vector<Expr> all;
      for (const auto& row : W_) all.insert(all.end(), row.begin(), row.end());
      all.push_back(L_);
      probes = exterior::valid_probe_points(*chart_, all, env_);
    }
    Regularity r;
    r.size = static_cast<int>(n());
    int rank = -1;
    for (const auto& x : probes) {
      int k = exterior::numeric_rank(exterior::evaluate_matrix(W_, *chart_, x, env_));
      if (rank >= 0 && k != rank) throw RegularityError("not admissible: non-constant rank");
      rank = k;
    }
    r.rank = std::max(rank, 0);
    r.regular = r.rank == r.size;
    return r;
  }

  const std::string& name_of(std::size_t i) const { return chart_->name(i); }

  LagrangianSystem with_environment(Environment env) const {
    LagrangianSystem out = *this;
    std::vector<Expr> all{L_, E_};
    if (mechanical_) all.push_back(*mechanical_);
    out.env_ = exterior::complete_environment(*chart_, all, std::move(env));
    return out;
  }

 private:
  ChartPtr chart_;
  Expr L_;
  Environment env_;
  std::vector<std::pair<std::size_t, std::size_t>> pairs_;
  std::vector<Expr> momenta_;
  Expr E_;
  std::optional<DifferentialForm> theta_, tau_, eta_, d_eta_;
  ExprMatrix W_;
  std::optional<Expr> mechanical_;
};

/// (E_L, theta_L, eta_L, d eta_L).
struct LagrangianForms {
  Expr energy;
  DifferentialForm theta, eta, d_eta;
};

inline LagrangianForms lagrangian_forms(const LagrangianSystem& sys) { return {sys.energy(), sys.theta(), sys.eta(), sys.d_eta()}; }

inline std::pair<ExprMatrix, Regularity> hessian(const LagrangianSystem& sys, std::vector<Point> probes = {}) {
  return {sys.hessian_matrix(), sys.regularity(std::move(probes))};
}

// ---------------------------------------------------------------------------
// Legendre map

inline LegendreImagePoint legendre_map(const LagrangianSystem& sys, const Point& x) {
  auto b = exterior::bind_point(*sys.chart(), x, sys.environment());
  LegendreImagePoint out;
  out.t = x[sys.chart()->time_index()];
  out.s = x[sys.chart()->action_index()];
  for (std::size_t i = 0; i < sys.n(); ++i) {
    out.q.push_back(x[sys.pairs()[i].first]);
    out.p.push_back(symlang::evaluate(sys.momenta()[i], b));
  }
  return out;
}

/// Darboux chart (t, q..., p_q..., s) matching the Lagrangian chart's positions.
inline ChartPtr phase_chart(const LagrangianSystem& sys) {
  std::vector<exterior::Coordinate> c{{"t", Role::time}};
  for (const auto& [qi, vi] : sys.pairs()) c.push_back({sys.name_of(qi), Role::position});
  for (const auto& [qi, vi] : sys.pairs()) c.push_back({"p_" + sys.name_of(qi), Role::momentum});
  c.push_back({sys.chart()->action_name(), Role::action});
  return std::make_shared<const exterior::Chart>(std::move(c));
}

/// FL^*(ds - p_i dq^i) == eta_L, coefficient by coefficient.
inline bool legendre_pullback_check(const LagrangianSystem& sys) {
  auto pc = phase_chart(sys);
  auto eta0 = DifferentialForm::differential(pc, pc->action_name());
  symlang::Substitution phi;
  for (std::size_t i = 0; i < sys.n(); ++i) {
    const std::string& q = sys.name_of(sys.pairs()[i].first);
    eta0 = eta0 - symlang::sym("p_" + q) * DifferentialForm::differential(pc, q);
    phi["p_" + q] = sys.momenta()[i];
  }
  auto pulled = exterior::pullback_one_form(eta0, phi, sys.chart()->names());
  auto want = sys.eta().components();
  for (std::size_t i = 0; i < want.size(); ++i)
    if (!symlang::is_identically_zero(pulled[i] - want[i])) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Reeb fields and the Herglotz-Euler-Lagrange field

namespace detail {

inline bool is_diagonal(const ExprMatrix& W) {
  for (std::size_t i = 0; i < W.size(); ++i)
    for (std::size_t j = 0; j < W.size(); ++j)
      if (i != j && !symlang::is_identically_zero(W[i][j])) return false;
  return true;
}

/// Closed-form inverse for n <= 2 or diagonal W; nullopt otherwise.
inline std::optional<ExprMatrix> symbolic_inverse(const ExprMatrix& W) {
  std::size_t n = W.size();
  if (n == 0) return ExprMatrix{};
  if (is_diagonal(W)) {
    ExprMatrix inv(n, std::vector<Expr>(n, Expr(0.0)));
    for (std::size_t i = 0; i < n; ++i) inv[i][i] = symlang::pow(W[i][i], -1.0);
    return inv;
  }
  if (n == 2) {
    Expr det = W[0][0] * W[1][1] - W[0][1] * W[1][0];
    Expr r = symlang::pow(det, -1.0);
    return ExprMatrix{{W[1][1] * r, -W[0][1] * r}, {-W[1][0] * r, W[0][0] * r}};
  }
  return std::nullopt;
}

inline void require_regular(const LagrangianSystem& sys, const char* what) {
  if (!sys.regularity().regular)
    throw RegularityError(std::string(what) + " needs a regular Lagrangian; singular systems go through the precocontact module");
}

inline std::vector<Expr> mat_vec(const ExprMatrix& A, const std::vector<Expr>& x) {
  std::vector<Expr> out;
  for (const auto& row : A) {
    std::vector<Expr> terms;
    for (std::size_t j = 0; j < x.size(); ++j)
      if (!row[j].is_zero() && !x[j].is_zero()) terms.push_back(row[j] * x[j]);
    out.push_back(tidy(symlang::add(std::move(terms))));
  }
  return out;
}

/// R = d/dx - W^{ij} d^2L/(dx dv^j) d/dv^i for x in {t, s}.
inline FieldSpec reeb_spec(const LagrangianSystem& sys, const std::string& x) {
  VectorFieldExpr R = VectorFieldExpr::coordinate(sys.chart(), x);
  std::vector<Expr> b;
  for (const auto& m : sys.momenta()) b.push_back(-symlang::differentiate(m, x));
  std::vector<std::size_t> targets;
  for (const auto& pr : sys.pairs()) targets.push_back(pr.second);
  if (auto inv = symbolic_inverse(sys.hessian_matrix())) {
    auto comps = mat_vec(*inv, b);
    for (std::size_t i = 0; i < comps.size(); ++i) R.set(targets[i], comps[i]);
    return R;
  }
  return FieldSpec(R, ImplicitBlock{targets, sys.hessian_matrix(), b});
}

}  // namespace detail

/// (R_t^L, R_s^L); components along the velocities solved point-wise when W
/// is not invertible in closed form.
inline std::pair<FieldSpec, FieldSpec> lagrangian_reeb_specs(const LagrangianSystem& sys) {
  detail::require_regular(sys, "lagrangian_reeb_fields");
  return {detail::reeb_spec(sys, "t"), detail::reeb_spec(sys, sys.chart()->action_name())};
}

inline std::pair<VectorFieldExpr, VectorFieldExpr> lagrangian_reeb_fields(const LagrangianSystem& sys) {
  auto [Rt, Rs] = lagrangian_reeb_specs(sys);
  if (Rt.implicit || Rs.implicit) throw RegularityError("Hessian too large for a closed-form inverse; use lagrangian_reeb_specs");
  return {Rt.field, Rs.field};
}

/// Right-hand sides b_j of W_ji G^i = b_j.
inline std::vector<Expr> herglotz_forces(const LagrangianSystem& sys) {
  const auto& c = *sys.chart();
  const std::string& s = c.action_name();
  const Expr& L = sys.lagrangian();
  Expr Ls = symlang::differentiate(L, s);
  std::vector<Expr> b;
  for (std::size_t j = 0; j < sys.n(); ++j) {
    const Expr& Lv = sys.momenta()[j];
    std::vector<Expr> terms{symlang::differentiate(L, c.name(sys.pairs()[j].first)), -symlang::differentiate(Lv, "t"),
                            -L * symlang::differentiate(Lv, s), Ls * Lv};
    for (const auto& [qk, vk] : sys.pairs()) terms.push_back(-symlang::sym(c.name(vk)) * symlang::differentiate(Lv, c.name(qk)));
    b.push_back(symlang::add(std::move(terms)));
  }
  return b;
}

/// Gamma_L = d/dt + v d/dq + G d/dv + L d/ds.
inline FieldSpec herglotz_field_spec(const LagrangianSystem& sys) {
  detail::require_regular(sys, "herglotz_field");
  const auto& c = *sys.chart();
  VectorFieldExpr X(sys.chart());
  X.set("t", Expr(1.0));
  X.set(c.action_name(), sys.lagrangian());
  std::vector<std::size_t> targets;
  for (const auto& [qi, vi] : sys.pairs()) {
    X.set(qi, symlang::sym(c.name(vi)));
    targets.push_back(vi);
  }
  auto b = herglotz_forces(sys);
  if (auto inv = detail::symbolic_inverse(sys.hessian_matrix())) {
    auto G = detail::mat_vec(*inv, b);
    for (std::size_t i = 0; i < G.size(); ++i) X.set(targets[i], G[i]);
    return X;
  }
  return FieldSpec(X, ImplicitBlock{targets, sys.hessian_matrix(), b});
}

inline VectorFieldExpr herglotz_field(const LagrangianSystem& sys) {
  auto spec = herglotz_field_spec(sys);
  if (spec.implicit) throw RegularityError("Hessian too large for a closed-form inverse; use herglotz_field_spec");
  return spec.field;
}

/// Left-hand minus right-hand sides of the six coordinate equations a field
/// X = f d/dt + F d/dq + G d/dv + g d/ds must satisfy, in the order
/// [(1), (2)_i..., (3)_i..., (4), (5), (6)].
inline std::vector<Expr> el_field_equations(const LagrangianSystem& sys, const VectorFieldExpr& X) {
  const auto& c = *sys.chart();
  const std::string& s = c.action_name();
  const Expr& L = sys.lagrangian();
  Expr f = X["t"], g = X[s];
  std::vector<Expr> dF;  // F^j - v^j
  for (const auto& [qj, vj] : sys.pairs()) dF.push_back(X[qj] - symlang::sym(c.name(vj)));
  auto contract = [&](auto coeff) {
    std::vector<Expr> terms;
    for (std::size_t j = 0; j < sys.n(); ++j) terms.push_back(dF[j] * coeff(j));
    return symlang::add(std::move(terms));
  };
  std::vector<Expr> out;
  out.push_back(contract([&](std::size_t j) { return symlang::differentiate(sys.momenta()[j], "t"); }));
  for (std::size_t i = 0; i < sys.n(); ++i) {
    const Expr& Li = sys.momenta()[i];
    std::vector<Expr> terms{f * symlang::differentiate(Li, "t"), g * symlang::differentiate(Li, s),
                            -symlang::differentiate(L, c.name(sys.pairs()[i].first)),
                            -symlang::differentiate(L, s) * Li};
    for (std::size_t j = 0; j < sys.n(); ++j) {
      const auto& [qj, vj] = sys.pairs()[j];
      terms.push_back(X[qj] * symlang::differentiate(Li, c.name(qj)));
      terms.push_back(X[vj] * sys.hessian_matrix()[j][i]);
      terms.push_back(-dF[j] * symlang::differentiate(symlang::differentiate(L, c.name(sys.pairs()[i].first)), c.name(vj)));
    }
    out.push_back(symlang::add(std::move(terms)));
  }
  for (std::size_t i = 0; i < sys.n(); ++i) out.push_back(contract([&](std::size_t j) { return sys.hessian_matrix()[i][j]; }));
  out.push_back(contract([&](std::size_t j) { return symlang::differentiate(sys.momenta()[j], s); }));
  out.push_back(L + contract([&](std::size_t j) { return sys.momenta()[j]; }) - g);
  out.push_back(f - Expr(1.0));
  return out;
}

/// Residuals of d/dt(dL/dv^i) - dL/dq^i - (dL/ds)(dL/dv^i), s' - L and t' - 1
/// at interior samples; one row [EL_1..EL_n, action, time] per sample.
inline std::vector<std::vector<double>> herglotz_residual(const LagrangianSystem& sys, const Trajectory& traj) {
  if (traj.size() < 3) throw TrajectoryError("finite differences need at least 3 samples");
  const auto& c = *sys.chart();
  const std::string& s = c.action_name();
  Expr Ls = symlang::differentiate(sys.lagrangian(), s);
  std::vector<Expr> Lq;
  for (const auto& pr : sys.pairs()) Lq.push_back(symlang::differentiate(sys.lagrangian(), c.name(pr.first)));
  std::vector<std::vector<double>> momenta(traj.size());
  for (std::size_t k = 0; k < traj.size(); ++k) {
    auto b = exterior::bind_point(c, traj.states[k], sys.environment());
    for (const auto& m : sys.momenta()) momenta[k].push_back(symlang::evaluate(m, b));
  }
  std::vector<std::vector<double>> out;
  std::size_t is = c.action_index(), it = c.time_index();
  for (std::size_t k = 1; k + 1 < traj.size(); ++k) {
    auto b = exterior::bind_point(c, traj.states[k], sys.environment());
    double ls = symlang::evaluate(Ls, b);
    std::vector<double> row;
    for (std::size_t i = 0; i < sys.n(); ++i) {
      double dp = sample_derivative(traj.times, k, [&](std::size_t j) { return momenta[j][i]; });
      row.push_back(dp - symlang::evaluate(Lq[i], b) - ls * momenta[k][i]);
    }
    row.push_back(sample_derivative(traj.times, k, [&](std::size_t j) { return traj.states[j][is]; }) -
                  symlang::evaluate(sys.lagrangian(), b));
    row.push_back(sample_derivative(traj.times, k, [&](std::size_t j) { return traj.states[j][it]; }) - 1.0);
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace cocontact
