#pragma once

// Exterior calculus over a fixed coordinate chart: forms with symbolic
// coefficients, wedge, d, contraction, scalar Lie derivative and the matrix
// of the flat map. Point-wise numeric linear algebra lives at the bottom.

#include <Eigen/Dense>

#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cocontact/symlang.hpp"

namespace cocontact::exterior {

using symlang::Expr;

class DegreeError : public Error {
 public:
  using Error::Error;
};

class ChartError : public Error {
 public:
  using Error::Error;
};

enum class Role { time, position, velocity, momentum, multiplier, multiplier_velocity, action, spectator };

inline const char* role_name(Role r) {
  switch (r) {
    case Role::time: return "time";
    case Role::position: return "position";
    case Role::velocity: return "velocity";
    case Role::momentum: return "momentum";
    case Role::multiplier: return "multiplier";
    case Role::multiplier_velocity: return "multiplier-velocity";
    case Role::action: return "action";
    case Role::spectator: return "spectator";
  }
  return "?";
}

struct Coordinate {
  std::string name;
  Role role;
};

class Chart {
 public:
  explicit Chart(std::vector<Coordinate> coords) : coords_(std::move(coords)) {
    std::set<std::string> seen;
    int count[8] = {};
    for (const auto& c : coords_) {
      if (!seen.insert(c.name).second) throw ChartError("duplicate coordinate '" + c.name + "'");
      ++count[static_cast<int>(c.role)];
    }
    auto n = [&](Role r) { return count[static_cast<int>(r)]; };
    if (n(Role::time) != 1) throw ChartError("chart needs exactly one time coordinate");
    if (n(Role::action) != 1) throw ChartError("chart needs exactly one action coordinate");
    if (name(time_index()) != "t") throw ChartError("the time coordinate must be named 't'");
    if (n(Role::velocity) && n(Role::momentum)) throw ChartError("chart mixes velocities and momenta");
    if (n(Role::position) != n(Role::velocity) + n(Role::momentum))
      throw ChartError("position and velocity/momentum blocks differ in length");
    if (n(Role::multiplier) != n(Role::multiplier_velocity))
      throw ChartError("multiplier and multiplier-velocity blocks differ in length");
  }

  std::size_t dim() const { return coords_.size(); }
  const std::vector<Coordinate>& coordinates() const { return coords_; }
  const std::string& name(std::size_t i) const { return coords_.at(i).name; }
  Role role(std::size_t i) const { return coords_.at(i).role; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& c : coords_) out.push_back(c.name);
    return out;
  }

  std::optional<std::size_t> find(const std::string& n) const {
    for (std::size_t i = 0; i < coords_.size(); ++i)
      if (coords_[i].name == n) return i;
    return std::nullopt;
  }
  std::size_t index(const std::string& n) const {
    if (auto i = find(n)) return *i;
    throw ChartError("'" + n + "' is not a chart coordinate");
  }
  bool contains(const std::string& n) const { return find(n).has_value(); }

  std::vector<std::size_t> indices(Role r) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < coords_.size(); ++i)
      if (coords_[i].role == r) out.push_back(i);
    return out;
  }
  std::vector<std::string> names(Role r) const {
    std::vector<std::string> out;
    for (auto i : indices(r)) out.push_back(coords_[i].name);
    return out;
  }
  std::size_t time_index() const { return indices(Role::time).front(); }
  std::size_t action_index() const { return indices(Role::action).front(); }
  const std::string& action_name() const { return name(action_index()); }

  bool operator==(const Chart& o) const {
    if (coords_.size() != o.coords_.size()) return false;
    for (std::size_t i = 0; i < coords_.size(); ++i)
      if (coords_[i].name != o.coords_[i].name || coords_[i].role != o.coords_[i].role) return false;
    return true;
  }

 private:
  std::vector<Coordinate> coords_;
};

using ChartPtr = std::shared_ptr<const Chart>;

/// Canonical chart (t, q1..qn, p1..pn, s); n = 1 uses plain q, p.
inline ChartPtr darboux_chart(int n) {
  std::vector<Coordinate> c{{"t", Role::time}};
  auto suffix = [n](int i) { return n == 1 ? std::string() : std::to_string(i + 1); };
  for (int i = 0; i < n; ++i) c.push_back({"q" + suffix(i), Role::position});
  for (int i = 0; i < n; ++i) c.push_back({"p" + suffix(i), Role::momentum});
  c.push_back({"s", Role::action});
  return std::make_shared<const Chart>(std::move(c));
}

/// Chart (t, q..., v..., s) for a Lagrangian on positions `q` and velocities `v`.
inline ChartPtr tangent_chart(const std::vector<std::string>& q, const std::vector<std::string>& v, const std::string& s = "s") {
  if (q.size() != v.size()) throw ChartError("positions and velocities differ in length");
  std::vector<Coordinate> c{{"t", Role::time}};
  for (const auto& x : q) c.push_back({x, Role::position});
  for (const auto& x : v) c.push_back({x, Role::velocity});
  c.push_back({s, Role::action});
  return std::make_shared<const Chart>(std::move(c));
}

inline symlang::Expr parse(std::string_view text, const Chart& chart, const std::set<std::string>& params,
                           const std::set<std::string>& externals) {
  symlang::SymbolTable table;
  for (const auto& n : chart.names()) table.coordinates.insert(n);
  table.parameters = params;
  table.externals = externals;
  return symlang::parse(text, table);
}

// ---------------------------------------------------------------------------
// Differential forms

class DifferentialForm {
 public:
  using Index = std::vector<int>;

  DifferentialForm(ChartPtr chart, int degree) : chart_(std::move(chart)), degree_(degree) {
    if (degree < 0 || static_cast<std::size_t>(degree) > chart_->dim()) throw DegreeError("form degree out of range");
  }

  static DifferentialForm function(ChartPtr chart, const Expr& f) {
    DifferentialForm out(std::move(chart), 0);
    out.add_term({}, f);
    return out;
  }
  /// d(name)
  static DifferentialForm differential(ChartPtr chart, const std::string& name) {
    int i = static_cast<int>(chart->index(name));
    DifferentialForm out(std::move(chart), 1);
    out.add_term({i}, Expr(1.0));
    return out;
  }
  static DifferentialForm one_form(ChartPtr chart, const std::vector<Expr>& components) {
    if (components.size() != chart->dim()) throw DegreeError("1-form needs one component per coordinate");
    DifferentialForm out(std::move(chart), 1);
    for (std::size_t i = 0; i < components.size(); ++i) out.add_term({static_cast<int>(i)}, components[i]);
    return out;
  }

  const ChartPtr& chart() const { return chart_; }
  int degree() const { return degree_; }
  const std::map<Index, Expr>& terms() const { return terms_; }

  /// Adds c * dx^{idx[0]} ^ ... in any index order; repeated indices vanish.
  void add_term(Index idx, const Expr& c) {
    if (static_cast<int>(idx.size()) != degree_) throw DegreeError("index length does not match degree");
    int sign = sort_with_sign(idx);
    if (sign == 0 || c.is_zero()) return;
    auto it = terms_.find(idx);
    Expr v = sign > 0 ? c : -c;
    if (it == terms_.end()) {
      terms_.emplace(std::move(idx), v);
    } else {
      it->second = it->second + v;
      if (it->second.is_zero()) terms_.erase(it);
    }
  }

  Expr coefficient(Index idx) const {
    int sign = sort_with_sign(idx);
    if (sign == 0) return Expr(0.0);
    auto it = terms_.find(idx);
    if (it == terms_.end()) return Expr(0.0);
    return sign > 0 ? it->second : -it->second;
  }
  Expr coefficient_of(const std::vector<std::string>& names) const {
    Index idx;
    for (const auto& n : names) idx.push_back(static_cast<int>(chart_->index(n)));
    return coefficient(std::move(idx));
  }

  /// Components of a 1-form in the coordinate coframe.
  std::vector<Expr> components() const {
    if (degree_ != 1) throw DegreeError("components() needs a 1-form");
    std::vector<Expr> out(chart_->dim(), Expr(0.0));
    for (const auto& [idx, c] : terms_) out[static_cast<std::size_t>(idx[0])] = c;
    return out;
  }

  /// Scalar value of a 0-form.
  Expr scalar() const {
    if (degree_ != 0) throw DegreeError("scalar() needs a 0-form");
    return coefficient(Index{});
  }

  bool is_zero() const { return terms_.empty(); }

  /// Every coefficient passes the zero oracle.
  bool is_identically_zero() const {
    return std::all_of(terms_.begin(), terms_.end(), [](const auto& kv) { return symlang::is_identically_zero(kv.second); });
  }

  DifferentialForm map_coefficients(const std::function<Expr(const Expr&)>& f) const {
    DifferentialForm out(chart_, degree_);
    for (const auto& [idx, c] : terms_) out.add_term(idx, f(c));
    return out;
  }

  friend DifferentialForm operator+(const DifferentialForm& a, const DifferentialForm& b) {
    a.require_compatible(b);
    DifferentialForm out = a;
    for (const auto& [idx, c] : b.terms_) out.add_term(idx, c);
    return out;
  }
  friend DifferentialForm operator-(const DifferentialForm& a) {
    return a.map_coefficients([](const Expr& c) { return -c; });
  }
  friend DifferentialForm operator-(const DifferentialForm& a, const DifferentialForm& b) { return a + (-b); }
  friend DifferentialForm operator*(const Expr& f, const DifferentialForm& a) {
    return a.map_coefficients([&](const Expr& c) { return f * c; });
  }

  std::string to_string() const {
    if (terms_.empty()) return "0";
    std::string out;
    for (const auto& [idx, c] : terms_) {
      if (!out.empty()) out += " + ";
      std::string basis;
      for (std::size_t k = 0; k < idx.size(); ++k) basis += (k ? "^d" : "d") + chart_->name(static_cast<std::size_t>(idx[k]));
      if (basis.empty()) {
        out += symlang::to_string(c);
      } else if (c.is_one()) {
        out += basis;
      } else {
        out += "(" + symlang::to_string(c) + ")*" + basis;
      }
    }
    return out;
  }

 private:
  ChartPtr chart_;
  int degree_;
  std::map<Index, Expr> terms_;

  static int sort_with_sign(Index& idx) {
    int sign = 1;
    for (std::size_t i = 1; i < idx.size(); ++i)
      for (std::size_t j = i; j > 0 && idx[j - 1] >= idx[j]; --j) {
        if (idx[j - 1] == idx[j]) return 0;
        std::swap(idx[j - 1], idx[j]);
        sign = -sign;
      }
    return sign;
  }

  void require_compatible(const DifferentialForm& b) const {
    if (degree_ != b.degree_) throw DegreeError("adding forms of different degree");
    if (!(*chart_ == *b.chart_)) throw ChartError("forms live on different charts");
  }
};

inline DifferentialForm wedge(const DifferentialForm& a, const DifferentialForm& b) {
  if (!(*a.chart() == *b.chart())) throw ChartError("forms live on different charts");
  std::size_t deg = static_cast<std::size_t>(a.degree() + b.degree());
  if (deg > a.chart()->dim()) throw DegreeError("wedge degree exceeds chart dimension");
  DifferentialForm out(a.chart(), static_cast<int>(deg));
  for (const auto& [ia, ca] : a.terms())
    for (const auto& [ib, cb] : b.terms()) {
      DifferentialForm::Index idx = ia;
      idx.insert(idx.end(), ib.begin(), ib.end());
      out.add_term(std::move(idx), ca * cb);
    }
  return out;
}

inline DifferentialForm exterior_derivative(const DifferentialForm& a) {
  if (static_cast<std::size_t>(a.degree()) >= a.chart()->dim()) throw DegreeError("d of a top-degree form");
  DifferentialForm out(a.chart(), a.degree() + 1);
  for (const auto& [idx, c] : a.terms())
    for (std::size_t i = 0; i < a.chart()->dim(); ++i) {
      Expr dc = symlang::differentiate(c, a.chart()->name(i));
      if (dc.is_zero()) continue;
      DifferentialForm::Index j{static_cast<int>(i)};
      j.insert(j.end(), idx.begin(), idx.end());
      out.add_term(std::move(j), dc);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Vector fields

class VectorFieldExpr {
 public:
  explicit VectorFieldExpr(ChartPtr chart) : chart_(std::move(chart)), comps_(chart_->dim(), Expr(0.0)) {}
  VectorFieldExpr(ChartPtr chart, std::vector<Expr> comps) : chart_(std::move(chart)), comps_(std::move(comps)) {
    if (comps_.size() != chart_->dim()) throw ChartError("vector field needs one component per coordinate");
  }
  /// The coordinate field d/d(name).
  static VectorFieldExpr coordinate(ChartPtr chart, const std::string& name) {
    VectorFieldExpr out(chart);
    out.comps_[chart->index(name)] = Expr(1.0);
    return out;
  }

  const ChartPtr& chart() const { return chart_; }
  const std::vector<Expr>& components() const { return comps_; }
  const Expr& operator[](std::size_t i) const { return comps_.at(i); }
  const Expr& operator[](const std::string& name) const { return comps_.at(chart_->index(name)); }
  void set(const std::string& name, Expr e) { comps_.at(chart_->index(name)) = std::move(e); }
  void set(std::size_t i, Expr e) { comps_.at(i) = std::move(e); }

  VectorFieldExpr map(const std::function<Expr(const Expr&)>& f) const {
    VectorFieldExpr out(chart_);
    for (std::size_t i = 0; i < comps_.size(); ++i) out.comps_[i] = f(comps_[i]);
    return out;
  }

  friend VectorFieldExpr operator+(const VectorFieldExpr& a, const VectorFieldExpr& b) {
    VectorFieldExpr out(a.chart_);
    for (std::size_t i = 0; i < a.comps_.size(); ++i) out.comps_[i] = a.comps_[i] + b.comps_.at(i);
    return out;
  }
  friend VectorFieldExpr operator-(const VectorFieldExpr& a, const VectorFieldExpr& b) {
    VectorFieldExpr out(a.chart_);
    for (std::size_t i = 0; i < a.comps_.size(); ++i) out.comps_[i] = a.comps_[i] - b.comps_.at(i);
    return out;
  }
  friend VectorFieldExpr operator*(const Expr& f, const VectorFieldExpr& a) {
    return a.map([&](const Expr& c) { return f * c; });
  }

  bool is_identically_zero() const {
    return std::all_of(comps_.begin(), comps_.end(), [](const Expr& c) { return symlang::is_identically_zero(c); });
  }

  std::string to_string() const {
    std::string out;
    for (std::size_t i = 0; i < comps_.size(); ++i) {
      if (comps_[i].is_zero()) continue;
      if (!out.empty()) out += " + ";
      std::string basis = "d/d" + chart_->name(i);
      out += comps_[i].is_one() ? basis : "(" + symlang::to_string(comps_[i]) + ")*" + basis;
    }
    return out.empty() ? "0" : out;
  }

 private:
  ChartPtr chart_;
  std::vector<Expr> comps_;
};

inline DifferentialForm interior_product(const VectorFieldExpr& X, const DifferentialForm& a) {
  if (a.degree() < 1) throw DegreeError("contraction of a 0-form");
  DifferentialForm out(a.chart(), a.degree() - 1);
  for (const auto& [idx, c] : a.terms()) {
    // i_X (c dx^{i0} ^ ... ) = sum_k (-1)^k X^{ik} c dx^{...without ik...}
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const Expr& xk = X[static_cast<std::size_t>(idx[k])];
      if (xk.is_zero()) continue;
      DifferentialForm::Index rest;
      for (std::size_t j = 0; j < idx.size(); ++j)
        if (j != k) rest.push_back(idx[j]);
      out.add_term(std::move(rest), (k % 2 ? -xk : xk) * c);
    }
  }
  return out;
}

/// Scalar Lie derivative: sum_c X^c de/dc.
inline Expr lie_derivative(const VectorFieldExpr& X, const Expr& e) {
  std::vector<Expr> terms;
  for (std::size_t i = 0; i < X.chart()->dim(); ++i) {
    if (X[i].is_zero()) continue;
    Expr d = symlang::differentiate(e, X.chart()->name(i));
    if (!d.is_zero()) terms.push_back(X[i] * d);
  }
  return symlang::add(std::move(terms));
}

inline VectorFieldExpr bracket(const VectorFieldExpr& X, const VectorFieldExpr& Y) {
  VectorFieldExpr out(X.chart());
  for (std::size_t i = 0; i < X.chart()->dim(); ++i) out.set(i, lie_derivative(X, Y[i]) - lie_derivative(Y, X[i]));
  return out;
}

// ---------------------------------------------------------------------------
// Flat map

using ExprMatrix = std::vector<std::vector<Expr>>;

/// M with (flat X)_a = sum_b M[a][b] X^b, where
/// flat X = (i_X tau) tau + i_X d(eta) + (i_X eta) eta.
inline ExprMatrix flat_matrix(const DifferentialForm& tau, const DifferentialForm& eta) {
  if (tau.degree() != 1 || eta.degree() != 1) throw DegreeError("flat_matrix needs two 1-forms");
  if (!(*tau.chart() == *eta.chart())) throw ChartError("forms live on different charts");
  std::size_t n = tau.chart()->dim();
  auto t = tau.components(), e = eta.components();
  DifferentialForm w = exterior_derivative(eta);
  ExprMatrix M(n, std::vector<Expr>(n, Expr(0.0)));
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) M[a][b] = t[a] * t[b] + e[a] * e[b];
  for (const auto& [idx, c] : w.terms()) {
    auto i = static_cast<std::size_t>(idx[0]), j = static_cast<std::size_t>(idx[1]);
    // w(e_i, e_j) = c contributes to (flat X)_j via X^i and to (flat X)_i via -X^j
    M[j][i] = M[j][i] + c;
    M[i][j] = M[i][j] - c;
  }
  return M;
}

inline DifferentialForm apply_flat(const ExprMatrix& M, const VectorFieldExpr& X) {
  std::size_t n = M.size();
  std::vector<Expr> out(n, Expr(0.0));
  for (std::size_t a = 0; a < n; ++a) {
    std::vector<Expr> terms;
    for (std::size_t b = 0; b < n; ++b)
      if (!M[a][b].is_zero() && !X[b].is_zero()) terms.push_back(M[a][b] * X[b]);
    out[a] = symlang::add(std::move(terms));
  }
  return DifferentialForm::one_form(X.chart(), out);
}

// ---------------------------------------------------------------------------
// Pullbacks

/// Components, in the source variables, of phi^* a for a 1-form a, where phi
/// sends each chart coordinate to an expression in `source` (coordinates
/// missing from `phi` are mapped to themselves).
inline std::vector<Expr> pullback_one_form(const DifferentialForm& a, const symlang::Substitution& phi,
                                           const std::vector<std::string>& source) {
  if (a.degree() != 1) throw DegreeError("pullback_one_form needs a 1-form");
  const Chart& chart = *a.chart();
  auto image = [&](std::size_t i) {
    auto it = phi.find(chart.name(i));
    return it == phi.end() ? symlang::sym(chart.name(i)) : it->second;
  };
  symlang::Substitution full;
  for (std::size_t i = 0; i < chart.dim(); ++i) full[chart.name(i)] = image(i);
  std::vector<Expr> out(source.size(), Expr(0.0));
  for (const auto& [idx, c] : a.terms()) {
    auto i = static_cast<std::size_t>(idx[0]);
    Expr cc = symlang::substitute(c, full);
    Expr yi = image(i);
    for (std::size_t b = 0; b < source.size(); ++b) {
      Expr d = symlang::differentiate(yi, source[b]);
      if (!d.is_zero()) out[b] = out[b] + cc * d;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Numeric layer

using Point = std::vector<double>;

/// Parameter values and external functions shared by every evaluation.
using Environment = symlang::Bindings;

inline symlang::Bindings bind_point(const Chart& chart, const Point& x, const Environment& env) {
  symlang::Bindings b = env;
  for (std::size_t i = 0; i < chart.dim(); ++i) b.set(chart.name(i), x.at(i));
  return b;
}

/// Adds seeded values in [0.5, 1.5] for parameters the environment lacks and
/// test-family functions for missing externals, so probes can run on
/// purely symbolic systems.
inline Environment complete_environment(const Chart& chart, const std::vector<Expr>& exprs, Environment env,
                                        std::uint64_t seed = symlang::kZeroTestSeed) {
  for (const auto& e : exprs) {
    for (const auto& n : symlang::free_symbols(e)) {
      if (chart.contains(n) || env.values.count(n)) continue;
      double u = symlang::detail::unit_from(symlang::detail::splitmix64(seed ^ symlang::detail::hash_string(n)));
      env.set(n, 0.5 + u);
    }
    for (const auto& [n, order] : symlang::externals_of(e)) {
      (void)order;
      if (!env.externals.count(n)) env.set_external(n, symlang::test_family_function(n, seed));
    }
  }
  return env;
}

/// Seeded uniform samples in [-1, 1]^dim; momenta are pushed away from zero.
inline std::vector<Point> probe_points(const Chart& chart, int count = 16, std::uint64_t seed = symlang::kZeroTestSeed) {
  std::vector<Point> out;
  std::uint64_t state = seed ^ 0x5eedULL;
  for (int k = 0; k < count; ++k) {
    Point x(chart.dim());
    for (std::size_t i = 0; i < chart.dim(); ++i) {
      state = symlang::detail::splitmix64(state);
      double u = 2.0 * symlang::detail::unit_from(state) - 1.0;
      if (chart.role(i) == Role::momentum) u = (u < 0 ? -1.0 : 1.0) * (0.25 + 0.75 * std::fabs(u));
      x[i] = u;
    }
    out.push_back(std::move(x));
  }
  return out;
}

/// Probes at which every expression in `exprs` evaluates; points that hit a
/// domain error are replaced by fresh samples.
inline std::vector<Point> valid_probe_points(const Chart& chart, const std::vector<Expr>& exprs, const Environment& env,
                                             int count = 16, std::uint64_t seed = symlang::kZeroTestSeed) {
  std::vector<Point> out;
  for (int round = 0; round < 8 && static_cast<int>(out.size()) < count; ++round) {
    for (auto& x : probe_points(chart, count, seed + static_cast<std::uint64_t>(round) * 7919u)) {
      if (static_cast<int>(out.size()) == count) break;
      auto b = bind_point(chart, x, env);
      try {
        bool finite = true;
        for (const auto& e : exprs) finite = finite && std::isfinite(symlang::evaluate(e, b));
        if (finite) out.push_back(std::move(x));
      } catch (const symlang::DomainError&) {
      }
    }
  }
  if (out.empty()) throw Error("no probe point avoids the domain errors of the system");
  return out;
}

inline Eigen::MatrixXd evaluate_matrix(const ExprMatrix& M, const Chart& chart, const Point& x, const Environment& env) {
  auto b = bind_point(chart, x, env);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(M.size()), static_cast<Eigen::Index>(M.empty() ? 0 : M[0].size()));
  for (std::size_t i = 0; i < M.size(); ++i)
    for (std::size_t j = 0; j < M[i].size(); ++j)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = symlang::evaluate(M[i][j], b);
  return out;
}

inline Eigen::VectorXd evaluate_vector(const std::vector<Expr>& v, const Chart& chart, const Point& x, const Environment& env) {
  auto b = bind_point(chart, x, env);
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = symlang::evaluate(v[i], b);
  return out;
}

inline constexpr double kRankThreshold = 1e-9;
inline constexpr double kPivotThreshold = 1e-10;

/// Rank by singular values above kRankThreshold * sigma_max.
inline int numeric_rank(const Eigen::MatrixXd& A) {
  if (A.size() == 0) return 0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0;
  int r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > kRankThreshold * s(0)) ++r;
  return r;
}

/// Orthonormal basis of ker A (columns).
inline Eigen::MatrixXd nullspace(const Eigen::MatrixXd& A) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  int r = numeric_rank(A);
  return svd.matrixV().rightCols(A.cols() - r);
}

class SingularMatrixError : public Error {
 public:
  using Error::Error;
};

/// LU with partial pivoting; pivots below kPivotThreshold (relative to the
/// largest entry, floored at 1) count as singular.
inline Eigen::VectorXd lu_solve(const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
  double scale = std::max(1.0, A.cwiseAbs().maxCoeff());
  auto d = lu.matrixLU().diagonal();
  for (Eigen::Index i = 0; i < d.size(); ++i)
    if (std::fabs(d(i)) < kPivotThreshold * scale) throw SingularMatrixError("singular matrix (pivot below threshold)");
  return lu.solve(b);
}

// ---------------------------------------------------------------------------
// Symbolic affine systems

class NonlinearUnknownError : public Error {
 public:
  using Error::Error;
};

struct AffineSolution {
  std::vector<std::pair<std::string, Expr>> solved;  // in solve order, fully back-substituted
  std::vector<Expr> residuals;                        // equations left without unknowns
  std::vector<std::string> free;                      // unknowns never pinned down
};

namespace detail {

inline std::vector<std::string> unknowns_in(const Expr& e, const std::vector<std::string>& unknowns) {
  std::vector<std::string> out;
  auto syms = symlang::free_symbols(e);
  for (const auto& u : unknowns)
    if (syms.count(u)) out.push_back(u);
  return out;
}

}  // namespace detail

/// Solves sum-of-affine equations (each = 0) for the named unknowns. Picks the
/// equation with the fewest unknowns, solves it for the first of them in
/// `unknowns` order, substitutes and repeats.
inline AffineSolution solve_affine(std::vector<Expr> equations, const std::vector<std::string>& unknowns) {
  AffineSolution out;
  symlang::Substitution done;
  while (true) {
    int best = -1;
    std::size_t best_count = 0;
    for (std::size_t i = 0; i < equations.size(); ++i) {
      auto us = detail::unknowns_in(equations[i], unknowns);
      if (us.empty()) continue;
      if (best < 0 || us.size() < best_count) best = static_cast<int>(i), best_count = us.size();
    }
    if (best < 0) break;
    Expr eq = equations[static_cast<std::size_t>(best)];
    equations.erase(equations.begin() + best);
    std::string u;
    Expr coef;
    for (const auto& cand : detail::unknowns_in(eq, unknowns)) {
      Expr c = symlang::expand(symlang::differentiate(eq, cand));
      for (const auto& other : unknowns)
        if (symlang::depends_on(c, other)) throw NonlinearUnknownError("unknown '" + cand + "' enters nonlinearly");
      if (symlang::is_identically_zero(c)) continue;
      if (u.empty()) u = cand, coef = c;
    }
    if (u.empty()) {
      // the unknowns cancel; what is left is a plain residual
      symlang::Substitution zero;
      for (const auto& cand : unknowns) zero[cand] = Expr(0.0);
      equations.push_back(symlang::substitute(eq, zero));
      continue;
    }
    Expr rest = symlang::substitute(eq, {{u, Expr(0.0)}});
    Expr value = -rest / coef;
    for (auto& e : equations) e = symlang::substitute(e, {{u, value}});
    for (auto& [name, v] : out.solved) v = symlang::substitute(v, {{u, value}});
    out.solved.emplace_back(u, value);
    done[u] = value;
  }
  out.residuals = std::move(equations);
  for (const auto& u : unknowns)
    if (!done.count(u)) out.free.push_back(u);
  return out;
}

}  // namespace cocontact::exterior
