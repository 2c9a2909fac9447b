#pragma once

// Cocontact structures (tau, eta) and their Hamiltonian dynamics.

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "cocontact/exterior.hpp"
#include "cocontact/trajectory.hpp"

namespace cocontact {

using exterior::ChartPtr;
using exterior::DifferentialForm;
using exterior::Environment;
using exterior::ExprMatrix;
using exterior::Point;
using exterior::Role;
using exterior::VectorFieldExpr;
using symlang::Expr;

class StructureError : public Error {
 public:
  using Error::Error;
};

/// Symbolic tidy-up: keep the expanded form only when it is no larger.
inline Expr tidy(const Expr& e) {
  Expr x = symlang::expand(e);
  return x.size() <= e.size() ? x : e;
}

/// The pair (tau, eta) with d(eta) and the flat matrix cached.
class Structure {
 public:
  Structure(DifferentialForm tau, DifferentialForm eta)
      : tau_(std::move(tau)), eta_(std::move(eta)), d_eta_(exterior::exterior_derivative(eta_)),
        flat_(exterior::flat_matrix(tau_, eta_)) {}

  const ChartPtr& chart() const { return tau_.chart(); }
  const DifferentialForm& tau() const { return tau_; }
  const DifferentialForm& eta() const { return eta_; }
  const DifferentialForm& d_eta() const { return d_eta_; }
  const ExprMatrix& flat() const { return flat_; }

  /// Rows tau, eta and i_(.) d(eta): the kernel of this stack is the
  /// characteristic distribution.
  ExprMatrix characteristic_rows() const {
    std::size_t n = chart()->dim();
    ExprMatrix rows;
    rows.push_back(tau_.components());
    rows.push_back(eta_.components());
    for (std::size_t a = 0; a < n; ++a) {
      std::vector<Expr> row(n, Expr(0.0));
      for (std::size_t b = 0; b < n; ++b)
        row[b] = d_eta_.coefficient(DifferentialForm::Index{static_cast<int>(b), static_cast<int>(a)});
      rows.push_back(std::move(row));
    }
    return rows;
  }

  /// Coefficient of dt^dq1^...^ds in tau ^ eta ^ (d eta)^n; zero for odd dimension.
  Expr top_form() const {
    std::size_t dim = chart()->dim();
    if (dim % 2) return Expr(0.0);
    DifferentialForm vol = exterior::wedge(tau_, eta_);
    for (std::size_t k = 0; k + 2 < dim; k += 2) vol = exterior::wedge(vol, d_eta_);
    DifferentialForm::Index all;
    for (std::size_t i = 0; i < dim; ++i) all.push_back(static_cast<int>(i));
    return vol.coefficient(all);
  }

  std::vector<Expr> all_coefficients() const {
    std::vector<Expr> out;
    for (const auto& row : flat_)
      for (const auto& e : row) out.push_back(e);
    for (const auto& e : tau_.components()) out.push_back(e);
    return out;
  }

 private:
  DifferentialForm tau_, eta_, d_eta_;
  ExprMatrix flat_;
};

// ---------------------------------------------------------------------------
// Verification

struct StructureVerdict {
  enum class Kind { cocontact, precocontact, invalid };
  Kind kind = Kind::invalid;
  int cls = 0;  // class 2r+2; dim for cocontact
  std::string reason;
  std::optional<Point> witness;

  std::string to_string() const {
    switch (kind) {
      case Kind::cocontact:
        return "cocontact, class " + std::to_string(cls);
      case Kind::precocontact:
        return "precocontact, class " + std::to_string(cls);
      case Kind::invalid:
        return "invalid: " + reason;
    }
    return "?";
  }
};

namespace detail {

inline constexpr double kVolumeThreshold = 1e-10;

}  // namespace detail

/// Rank of the characteristic stack at one point, i.e. the class.
inline int class_at(const Structure& st, const Point& x, const Environment& env) {
  return exterior::numeric_rank(exterior::evaluate_matrix(st.characteristic_rows(), *st.chart(), x, env));
}

inline StructureVerdict verify_cocontact(const Structure& st, const Environment& env_in = {},
                                         std::vector<Point> probes = {}) {
  StructureVerdict v;
  const auto& chart = *st.chart();
  if (!exterior::exterior_derivative(st.tau()).is_identically_zero()) {
    v.reason = "τ not closed";
    return v;
  }
  Expr top = st.top_form();
  auto coeffs = st.all_coefficients();
  coeffs.push_back(top);
  Environment env = exterior::complete_environment(chart, coeffs, env_in);
  if (probes.empty()) probes = exterior::valid_probe_points(chart, coeffs, env);

  bool volume_everywhere = chart.dim() % 2 == 0 && !top.is_zero();
  for (const auto& x : probes) {
    if (!volume_everywhere) break;
    double val = symlang::evaluate(top, exterior::bind_point(chart, x, env));
    if (!(std::fabs(val) > detail::kVolumeThreshold)) volume_everywhere = false;
  }
  if (volume_everywhere) {
    v.kind = StructureVerdict::Kind::cocontact;
    v.cls = static_cast<int>(chart.dim());
    return v;
  }

  int cls = -1;
  for (const auto& x : probes) {
    int c = class_at(st, x, env);
    if (cls >= 0 && c != cls) {
      v.reason = "non-constant class (" + std::to_string(cls) + " vs " + std::to_string(c) + ")";
      v.witness = x;
      return v;
    }
    cls = c;
    if (c % 2 || c < 2) {
      v.cls = c;
      v.reason = "class " + std::to_string(c) + (c % 2 ? " is odd" : " is below 2");
      v.witness = x;
      return v;
    }
  }
  v.kind = StructureVerdict::Kind::precocontact;
  v.cls = cls;
  return v;
}

// ---------------------------------------------------------------------------
// Flat / sharp

inline DifferentialForm flat_map(const Structure& st, const VectorFieldExpr& X) { return exterior::apply_flat(st.flat(), X); }

/// Components of sharp(alpha) at a point.
inline Eigen::VectorXd sharp_map(const Structure& st, const std::vector<Expr>& alpha, const Point& x, const Environment& env) {
  auto M = exterior::evaluate_matrix(st.flat(), *st.chart(), x, env);
  auto b = exterior::evaluate_vector(alpha, *st.chart(), x, env);
  try {
    return exterior::lu_solve(M, b);
  } catch (const exterior::SingularMatrixError&) {
    throw StructureError("sharp map undefined: the flat map is degenerate here (precocontact structure?); "
                         "use the precocontact module");
  }
}

/// Symbolic sharp(alpha) via the affine solver.
inline VectorFieldExpr sharp_symbolic(const Structure& st, const std::vector<Expr>& alpha) {
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
  if (!sol.free.empty()) throw StructureError("sharp map undefined: flat matrix is singular; use the precocontact module");
  VectorFieldExpr out(chart);
  for (const auto& [u, value] : sol.solved) out.set(u.substr(2, u.size() - 3), tidy(value));
  return out;
}

/// gamma_H = dH - (R_s H + H) eta + (1 - R_t H) tau.
inline DifferentialForm gamma_form(const Structure& st, const Expr& H, const VectorFieldExpr& Rt, const VectorFieldExpr& Rs) {
  DifferentialForm dH = exterior::exterior_derivative(DifferentialForm::function(st.chart(), H));
  return dH - (exterior::lie_derivative(Rs, H) + H) * st.eta() + (Expr(1.0) - exterior::lie_derivative(Rt, H)) * st.tau();
}

// ---------------------------------------------------------------------------
// Cocontact Hamiltonian systems

class CocontactSystem {
 public:
  CocontactSystem(DifferentialForm tau, DifferentialForm eta, Expr H, Environment env = {})
      : st_(std::move(tau), std::move(eta)), H_(std::move(H)) {
    auto coeffs = st_.all_coefficients();
    coeffs.push_back(H_);
    coeffs.push_back(st_.top_form());
    env_ = exterior::complete_environment(*st_.chart(), coeffs, std::move(env));
    verdict_ = verify_cocontact(st_, env_);
    if (verdict_.kind != StructureVerdict::Kind::cocontact)
      throw StructureError("not a cocontact structure (" + verdict_.to_string() + "); use the precocontact module");
    Rt_ = sharp_symbolic(st_, st_.tau().components());
    Rs_ = sharp_symbolic(st_, st_.eta().components());
  }

  const Structure& structure() const { return st_; }
  const ChartPtr& chart() const { return st_.chart(); }
  const DifferentialForm& tau() const { return st_.tau(); }
  const DifferentialForm& eta() const { return st_.eta(); }
  const Expr& hamiltonian() const { return H_; }
  const Environment& environment() const { return env_; }
  const StructureVerdict& verdict() const { return verdict_; }
  const VectorFieldExpr& reeb_time() const { return *Rt_; }
  const VectorFieldExpr& reeb_action() const { return *Rs_; }

  CocontactSystem with_hamiltonian(Expr H) const {
    CocontactSystem out = *this;
    out.H_ = std::move(H);
    out.env_ = exterior::complete_environment(*chart(), {out.H_}, env_);
    return out;
  }

  /// tau = dt and eta = ds - sum p_i dq_i with positions paired to momenta in order.
  bool is_darboux() const {
    const auto& c = *chart();
    for (std::size_t i = 0; i < c.dim(); ++i) {
      Role r = c.role(i);
      if (r != Role::time && r != Role::position && r != Role::momentum && r != Role::action) return false;
    }
    auto q = c.indices(Role::position), p = c.indices(Role::momentum);
    if (q.size() != p.size()) return false;
    std::vector<Expr> tau_expected(c.dim(), Expr(0.0)), eta_expected(c.dim(), Expr(0.0));
    tau_expected[c.time_index()] = Expr(1.0);
    eta_expected[c.action_index()] = Expr(1.0);
    for (std::size_t i = 0; i < q.size(); ++i) eta_expected[q[i]] = -symlang::sym(c.name(p[i]));
    auto t = tau().components(), e = eta().components();
    for (std::size_t i = 0; i < c.dim(); ++i)
      if (!symlang::is_identically_zero(t[i] - tau_expected[i]) || !symlang::is_identically_zero(e[i] - eta_expected[i]))
        return false;
    return true;
  }

  void require_darboux(const char* what) const {
    if (!is_darboux()) throw StructureError(std::string(what) + " needs Darboux coordinates (tau = dt, eta = ds - p dq)");
  }

 private:
  Structure st_;
  Expr H_;
  Environment env_;
  StructureVerdict verdict_;
  std::optional<VectorFieldExpr> Rt_, Rs_;
};

/// (dt, ds - p_i dq^i) on the canonical chart of dimension 2n+2.
inline CocontactSystem canonical_system(int n, Expr H = Expr(0.0), Environment env = {}) {
  auto chart = exterior::darboux_chart(n);
  auto tau = DifferentialForm::differential(chart, "t");
  auto eta = DifferentialForm::differential(chart, "s");
  for (auto qi : chart->indices(Role::position)) {
    std::size_t pi = qi + static_cast<std::size_t>(n);
    eta = eta - symlang::sym(chart->name(pi)) * DifferentialForm::differential(chart, chart->name(qi));
  }
  return CocontactSystem(std::move(tau), std::move(eta), std::move(H), std::move(env));
}

inline std::pair<VectorFieldExpr, VectorFieldExpr> reeb_fields(const CocontactSystem& sys) {
  return {sys.reeb_time(), sys.reeb_action()};
}

inline DifferentialForm flat_map(const CocontactSystem& sys, const VectorFieldExpr& X) { return flat_map(sys.structure(), X); }

inline Eigen::VectorXd sharp_map(const CocontactSystem& sys, const DifferentialForm& alpha, const Point& x) {
  return sharp_map(sys.structure(), alpha.components(), x, sys.environment());
}

// ---------------------------------------------------------------------------
// Darboux-coordinate formulas

namespace detail {

struct DarbouxNames {
  std::vector<std::string> q, p;
  std::string s;
};

inline DarbouxNames darboux_names(const CocontactSystem& sys) {
  const auto& c = *sys.chart();
  return {c.names(Role::position), c.names(Role::momentum), c.action_name()};
}

}  // namespace detail

/// {f,g} = f_q g_p - g_q f_p - p (f_p g_s - g_p f_s) - f g_s + g f_s, summed over pairs.
inline Expr jacobi_bracket(const CocontactSystem& sys, const Expr& f, const Expr& g) {
  sys.require_darboux("jacobi_bracket");
  auto names = detail::darboux_names(sys);
  using symlang::differentiate;
  Expr fs = differentiate(f, names.s), gs = differentiate(g, names.s);
  std::vector<Expr> terms{-f * gs, g * fs};
  for (std::size_t i = 0; i < names.q.size(); ++i) {
    Expr fq = differentiate(f, names.q[i]), fp = differentiate(f, names.p[i]);
    Expr gq = differentiate(g, names.q[i]), gp = differentiate(g, names.p[i]);
    Expr p = symlang::sym(names.p[i]);
    terms.push_back(fq * gp - gq * fp - p * (fp * gs - gp * fs));
  }
  return symlang::add(std::move(terms));
}

/// Bracket built from the structure itself: Lambda(df, dg) + f E(g) - g E(f)
/// with Lambda(a, b) = -d(eta)(sharp a, sharp b) and E = -R_s. Works in any
/// chart. In Darboux coordinates it differs from jacobi_bracket in the sign
/// of the Lambda part, and unlike that formula it satisfies the Jacobi
/// identity.
inline Expr structure_bracket(const CocontactSystem& sys, const Expr& f, const Expr& g) {
  auto df = exterior::exterior_derivative(DifferentialForm::function(sys.chart(), f));
  auto dg = exterior::exterior_derivative(DifferentialForm::function(sys.chart(), g));
  auto sf = sharp_symbolic(sys.structure(), df.components());
  auto sg = sharp_symbolic(sys.structure(), dg.components());
  Expr lambda = -exterior::interior_product(sg, exterior::interior_product(sf, sys.structure().d_eta())).scalar();
  Expr Ef = -exterior::lie_derivative(sys.reeb_action(), f);
  Expr Eg = -exterior::lie_derivative(sys.reeb_action(), g);
  return lambda + f * Eg - g * Ef;
}

/// X_H = d/dt + H_p d/dq - (H_q + p H_s) d/dp + (p H_p - H) d/ds.
inline VectorFieldExpr hamiltonian_vector_field(const CocontactSystem& sys) {
  sys.require_darboux("hamiltonian_vector_field");
  auto names = detail::darboux_names(sys);
  const Expr& H = sys.hamiltonian();
  using symlang::differentiate;
  VectorFieldExpr X(sys.chart());
  X.set("t", Expr(1.0));
  Expr Hs = differentiate(H, names.s);
  std::vector<Expr> s_terms{-H};
  for (std::size_t i = 0; i < names.q.size(); ++i) {
    Expr p = symlang::sym(names.p[i]);
    Expr Hp = differentiate(H, names.p[i]);
    X.set(names.q[i], Hp);
    X.set(names.p[i], -(differentiate(H, names.q[i]) + p * Hs));
    s_terms.push_back(p * Hp);
  }
  X.set(names.s, symlang::add(std::move(s_terms)));
  return X;
}

/// Lambda-hat(alpha) = sharp(alpha) - alpha(R_s) R_s - alpha(R_t) R_t, symbolically.
inline VectorFieldExpr lambda_hat(const CocontactSystem& sys, const DifferentialForm& alpha) {
  VectorFieldExpr sharp = sharp_symbolic(sys.structure(), alpha.components());
  Expr a_s = exterior::interior_product(sys.reeb_action(), alpha).scalar();
  Expr a_t = exterior::interior_product(sys.reeb_time(), alpha).scalar();
  return sharp - a_s * sys.reeb_action() - a_t * sys.reeb_time();
}

inline std::vector<std::vector<double>> hamilton_residual(const CocontactSystem& sys, const Trajectory& traj) {
  return field_residual(hamiltonian_vector_field(sys), traj, sys.environment());
}

// ---------------------------------------------------------------------------
// Submanifolds

class SubmanifoldError : public Error {
 public:
  using Error::Error;
};

struct SubmanifoldSpec {
  /// Implicit description: zero set of these functions.
  std::vector<Expr> constraints;
  /// Parametric description: chart coordinate -> expression in `parameters`
  /// (coordinates left out are held at 0).
  std::vector<std::string> parameters;
  symlang::Substitution embedding;
  bool parametric = false;
  /// Chart points (implicit) or parameter values (parametric). Generated
  /// when empty.
  std::vector<Point> probes;
};

enum class SubmanifoldKind { legendrian, isotropic, coisotropic, none };

inline const char* to_string(SubmanifoldKind k) {
  switch (k) {
    case SubmanifoldKind::legendrian: return "Legendrian";
    case SubmanifoldKind::isotropic: return "isotropic";
    case SubmanifoldKind::coisotropic: return "coisotropic";
    case SubmanifoldKind::none: return "none";
  }
  return "?";
}

namespace detail {

inline constexpr double kSubmanifoldTolerance = 1e-9;

/// Gauss-Newton projection of x onto {f = 0}.
inline Point project_to_zero_set(const std::vector<Expr>& f, const ExprMatrix& J, const exterior::Chart& chart, Point x,
                                 const Environment& env) {
  for (int it = 0; it < 50; ++it) {
    auto r = exterior::evaluate_vector(f, chart, x, env);
    if (r.norm() < 1e-13) break;
    auto A = exterior::evaluate_matrix(J, chart, x, env);
    Eigen::VectorXd dx = A.completeOrthogonalDecomposition().solve(r);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] -= dx(static_cast<Eigen::Index>(i));
  }
  return x;
}

inline bool coisotropic_at(const CocontactSystem& sys, const Eigen::MatrixXd& tangent, const Point& x) {
  // annihilator of T_pN: left nullspace of the tangent basis
  const auto& st = sys.structure();
  Eigen::Index dim = static_cast<Eigen::Index>(sys.chart()->dim());
  Eigen::MatrixXd ann = tangent.cols() ? exterior::nullspace(tangent.transpose()) : Eigen::MatrixXd::Identity(dim, dim);
  auto Rt = exterior::evaluate_vector(sys.reeb_time().components(), *sys.chart(), x, sys.environment());
  auto Rs = exterior::evaluate_vector(sys.reeb_action().components(), *sys.chart(), x, sys.environment());
  auto M = exterior::evaluate_matrix(st.flat(), *sys.chart(), x, sys.environment());
  Eigen::MatrixXd proj = tangent.cols() ? Eigen::MatrixXd(tangent * tangent.completeOrthogonalDecomposition().pseudoInverse())
                                         : Eigen::MatrixXd::Zero(dim, dim);
  for (Eigen::Index k = 0; k < ann.cols(); ++k) {
    Eigen::VectorXd alpha = ann.col(k);
    Eigen::VectorXd v = exterior::lu_solve(M, alpha) - alpha.dot(Rs) * Rs - alpha.dot(Rt) * Rt;
    if ((v - proj * v).norm() > kSubmanifoldTolerance * std::max(1.0, v.norm())) return false;
  }
  return true;
}

}  // namespace detail

/// Legendrian if tau and eta pull back to zero and dim N = n; isotropic if
/// only the pullbacks vanish; coisotropic if Lambda-hat maps the annihilator
/// of TN into TN; none otherwise.
inline SubmanifoldKind classify_submanifold(const CocontactSystem& sys, const SubmanifoldSpec& N) {
  const auto& chart = *sys.chart();
  std::size_t dim = chart.dim();
  int n = static_cast<int>(dim - 2) / 2;
  const Environment& env = sys.environment();
  auto tau = sys.tau().components(), eta = sys.eta().components();

  std::vector<Point> points;         // chart points on N
  std::vector<Eigen::MatrixXd> tangents;  // columns span T_pN
  bool isotropic = true;

  if (N.parametric) {
    symlang::Substitution embed;
    for (std::size_t i = 0; i < dim; ++i) {
      auto it = N.embedding.find(chart.name(i));
      embed[chart.name(i)] = it == N.embedding.end() ? Expr(0.0) : it->second;
    }
    auto pt = exterior::pullback_one_form(sys.tau(), embed, N.parameters);
    auto pe = exterior::pullback_one_form(sys.eta(), embed, N.parameters);
    for (const auto& c : pt) isotropic = isotropic && symlang::is_identically_zero(c);
    for (const auto& c : pe) isotropic = isotropic && symlang::is_identically_zero(c);
    std::vector<Point> params = N.probes;
    if (params.empty()) {
      std::vector<exterior::Coordinate> dummy{{"t", Role::time}, {"s", Role::action}};
      for (const auto& u : N.parameters) dummy.push_back({u, Role::spectator});
      for (const auto& x : exterior::probe_points(exterior::Chart(dummy), 8)) params.emplace_back(x.begin() + 2, x.end());
    }
    for (const auto& u : params) {
      symlang::Bindings b = env;
      for (std::size_t k = 0; k < N.parameters.size(); ++k) b.set(N.parameters[k], u.at(k));
      if (!b.values.count("t")) b.set("t", 0.0);
      Point x(dim);
      Eigen::MatrixXd T(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(N.parameters.size()));
      for (std::size_t i = 0; i < dim; ++i) {
        const Expr& yi = embed[chart.name(i)];
        x[i] = symlang::evaluate(yi, b);
        for (std::size_t k = 0; k < N.parameters.size(); ++k)
          T(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = symlang::evaluate(symlang::differentiate(yi, N.parameters[k]), b);
      }
      points.push_back(std::move(x));
      tangents.push_back(std::move(T));
    }
  } else {
    ExprMatrix J;
    for (const auto& f : N.constraints) {
      std::vector<Expr> row;
      for (std::size_t i = 0; i < dim; ++i) row.push_back(symlang::differentiate(f, chart.name(i)));
      J.push_back(std::move(row));
    }
    if (N.probes.empty()) {
      for (auto x : exterior::probe_points(chart, 8)) points.push_back(detail::project_to_zero_set(N.constraints, J, chart, std::move(x), env));
    } else {
      points = N.probes;
    }
    for (const auto& x : points) {
      auto r = exterior::evaluate_vector(N.constraints, chart, x, env);
      if (r.size() && r.cwiseAbs().maxCoeff() > 1e-9) throw SubmanifoldError("probe point does not satisfy the defining constraints");
      auto A = exterior::evaluate_matrix(J, chart, x, env);
      if (exterior::numeric_rank(A) != static_cast<int>(N.constraints.size()))
        throw SubmanifoldError("defining functions are not independent at a probe point");
      tangents.push_back(N.constraints.empty() ? Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim))
                                               : exterior::nullspace(A));
    }
  }

  int dimN = -1;
  for (std::size_t k = 0; k < points.size(); ++k) {
    const auto& T = tangents[k];
    int d = T.cols() ? exterior::numeric_rank(T) : 0;
    if (dimN >= 0 && d != dimN) throw SubmanifoldError("submanifold dimension varies across probes");
    dimN = d;
    if (!N.parametric && T.cols()) {
      auto tv = exterior::evaluate_vector(tau, chart, points[k], env);
      auto ev = exterior::evaluate_vector(eta, chart, points[k], env);
      double scale = std::max(1.0, std::max(tv.norm(), ev.norm()));
      if ((T.transpose() * tv).norm() > detail::kSubmanifoldTolerance * scale ||
          (T.transpose() * ev).norm() > detail::kSubmanifoldTolerance * scale)
        isotropic = false;
    }
  }
  if (isotropic) return dimN == n ? SubmanifoldKind::legendrian : SubmanifoldKind::isotropic;
  for (std::size_t k = 0; k < points.size(); ++k)
    if (!detail::coisotropic_at(sys, tangents[k], points[k])) return SubmanifoldKind::none;
  return SubmanifoldKind::coisotropic;
}

}  // namespace cocontact
