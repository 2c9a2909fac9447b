#pragma once

// Immutable symbolic scalar expressions.
//
// Nodes are hash-consed only structurally: every constructor canonicalizes
// (flattening, constant folding, like-term collection, hash ordering of
// commutative operands), so two expressions that differ only by operand order
// or trivially collectable terms share the same structure and hash.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <numbers>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cocontact {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace symlang {

enum class Op : std::uint8_t { constant, symbol, external, add, mul, pow, sin, cos, exp, log };

class Expr;

namespace detail {

struct Node;

inline std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
  // splitmix-style avalanche over a running FNV state
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  h ^= h >> 31;
  h *= 0xbf58476d1ce4e5b9ULL;
  h ^= h >> 27;
  return h;
}

inline std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t hash_double(double v) {
  if (v == 0.0) v = 0.0;  // fold -0
  return std::bit_cast<std::uint64_t>(v);
}

}  // namespace detail

/// Shared immutable expression handle. Default-constructed value is 0.
class Expr {
 public:
  Expr();
  Expr(double v);  // NOLINT(google-explicit-constructor)
  Expr(int v) : Expr(static_cast<double>(v)) {}  // NOLINT(google-explicit-constructor)

  static Expr symbol(std::string name);
  static Expr external(std::string name, int derivative_order = 0);

  Op op() const;
  double value() const;                 // constant
  const std::string& name() const;      // symbol / external
  int order() const;                    // external derivative order
  double exponent() const;              // pow
  const std::vector<Expr>& args() const;
  std::uint64_t hash() const;
  std::size_t size() const;  // node count

  bool is_constant() const { return op() == Op::constant; }
  bool is_constant(double v) const { return is_constant() && value() == v; }
  bool is_zero() const { return is_constant(0.0); }
  bool is_one() const { return is_constant(1.0); }

  const detail::Node* get() const { return node_.get(); }

  friend bool operator==(const Expr& a, const Expr& b);
  friend bool operator!=(const Expr& a, const Expr& b) { return !(a == b); }

 private:
  friend struct Builder;
  explicit Expr(std::shared_ptr<const detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<const detail::Node> node_;
};

namespace detail {

struct Node {
  Op op = Op::constant;
  double value = 0.0;
  double exponent = 0.0;
  int order = 0;
  std::string name;
  std::vector<Expr> args;
  std::uint64_t hash = 0;
  std::size_t size = 1;
};

}  // namespace detail

/// Low-level node factory; canonical constructors below go through here.
struct Builder {
  static Expr make(detail::Node n) {
    std::uint64_t h = detail::mix(0x51ed270b27a3a1f5ULL, static_cast<std::uint64_t>(n.op));
    std::size_t size = 1;
    switch (n.op) {
      case Op::constant:
        h = detail::mix(h, detail::hash_double(n.value));
        break;
      case Op::symbol:
        h = detail::mix(h, detail::hash_string(n.name));
        break;
      case Op::external:
        h = detail::mix(detail::mix(h, detail::hash_string(n.name)), static_cast<std::uint64_t>(n.order));
        break;
      case Op::pow:
        h = detail::mix(h, detail::hash_double(n.exponent));
        [[fallthrough]];
      default:
        for (const auto& a : n.args) {
          h = detail::mix(h, a.hash());
          size += a.size();
        }
    }
    n.hash = h;
    n.size = size;
    return Expr(std::make_shared<const detail::Node>(std::move(n)));
  }
};

inline Expr::Expr() : Expr(0.0) {}

inline Expr::Expr(double v) {
  detail::Node n;
  n.op = Op::constant;
  n.value = (v == 0.0) ? 0.0 : v;
  *this = Builder::make(std::move(n));
}

inline Expr Expr::symbol(std::string name) {
  detail::Node n;
  n.op = Op::symbol;
  n.name = std::move(name);
  return Builder::make(std::move(n));
}

inline Expr Expr::external(std::string name, int derivative_order) {
  if (derivative_order < 0) throw Error("negative derivative order for external '" + name + "'");
  detail::Node n;
  n.op = Op::external;
  n.name = std::move(name);
  n.order = derivative_order;
  return Builder::make(std::move(n));
}

inline Op Expr::op() const { return node_->op; }
inline double Expr::value() const { return node_->value; }
inline const std::string& Expr::name() const { return node_->name; }
inline int Expr::order() const { return node_->order; }
inline double Expr::exponent() const { return node_->exponent; }
inline const std::vector<Expr>& Expr::args() const { return node_->args; }
inline std::uint64_t Expr::hash() const { return node_->hash; }
inline std::size_t Expr::size() const { return node_->size; }

inline bool operator==(const Expr& a, const Expr& b) {
  if (a.node_ == b.node_) return true;
  if (a.hash() != b.hash() || a.op() != b.op()) return false;
  switch (a.op()) {
    case Op::constant:
      return a.value() == b.value();
    case Op::symbol:
      return a.name() == b.name();
    case Op::external:
      return a.name() == b.name() && a.order() == b.order();
    case Op::pow:
      if (a.exponent() != b.exponent()) return false;
      break;
    default:
      break;
  }
  const auto& x = a.args();
  const auto& y = b.args();
  if (x.size() != y.size()) return false;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!(x[i] == y[i])) return false;
  return true;
}

struct ExprHashLess {
  bool operator()(const Expr& a, const Expr& b) const {
    if (a.hash() != b.hash()) return a.hash() < b.hash();
    return static_cast<int>(a.op()) < static_cast<int>(b.op());
  }
};

// ---------------------------------------------------------------------------
// Canonical constructors

Expr add(std::vector<Expr> terms);
Expr mul(std::vector<Expr> factors);
Expr pow(const Expr& base, double exponent);
Expr sin(const Expr& x);
Expr cos(const Expr& x);
Expr exp(const Expr& x);
Expr log(const Expr& x);

namespace detail {

// term = coefficient * rest
inline std::pair<double, Expr> split_coefficient(const Expr& e) {
  if (e.is_constant()) return {e.value(), Expr(1.0)};
  if (e.op() == Op::mul && e.args().front().is_constant()) {
    const auto& a = e.args();
    if (a.size() == 2) return {a[0].value(), a[1]};
    Node n;
    n.op = Op::mul;
    n.args.assign(a.begin() + 1, a.end());
    return {a[0].value(), Builder::make(std::move(n))};
  }
  return {1.0, e};
}

inline std::pair<Expr, double> split_power(const Expr& e) {
  if (e.op() == Op::pow) return {e.args().front(), e.exponent()};
  return {e, 1.0};
}

inline bool is_integer(double v) { return std::isfinite(v) && std::floor(v) == v; }

// Stable ordering for canonical operand lists: by hash, ties broken by op and
// then structural identity is irrelevant (equal hashes with different
// structure are astronomically rare and only affect ordering, not meaning).
/// Sign of the term whose non-numeric part has the smallest hash; invariant
/// under negation of the whole sum, so it can pick a canonical sign.
inline bool negative_lead(const Expr& sum) {
  std::uint64_t best = 0;
  double sign = 1.0;
  bool first = true;
  for (const auto& a : sum.args()) {
    auto [c, rest] = split_coefficient(a);
    if (first || rest.hash() < best) best = rest.hash(), sign = c, first = false;
  }
  return sign < 0.0;
}

inline void canonical_sort(std::vector<Expr>& v) { std::stable_sort(v.begin(), v.end(), ExprHashLess{}); }

template <class Map>
auto& find_or_insert(Map& groups, std::vector<Expr>& order, const Expr& key) {
  auto it = groups.find(key.hash());
  if (it != groups.end()) {
    for (auto& entry : it->second)
      if (entry.first == key) return entry.second;
  }
  order.push_back(key);
  auto& bucket = groups[key.hash()];
  bucket.emplace_back(key, 0.0);
  return bucket.back().second;
}

}  // namespace detail

inline Expr add(std::vector<Expr> terms) {
  // flatten and distribute numeric coefficients over nested sums
  std::vector<Expr> flat;
  flat.reserve(terms.size());
  std::vector<std::pair<double, Expr>> stack;
  for (auto& t : terms) stack.emplace_back(1.0, t);
  while (!stack.empty()) {
    auto [scale, t] = stack.back();
    stack.pop_back();
    if (t.op() == Op::add) {
      for (const auto& a : t.args()) stack.emplace_back(scale, a);
      continue;
    }
    auto [c, rest] = detail::split_coefficient(t);
    if (rest.op() == Op::add) {
      for (const auto& a : rest.args()) stack.emplace_back(scale * c, a);
      continue;
    }
    if (scale == 1.0)
      flat.push_back(t);
    else
      flat.push_back(mul({Expr(scale), t}));
  }

  double constant = 0.0;
  std::map<std::uint64_t, std::vector<std::pair<Expr, double>>> groups;
  std::vector<Expr> order;
  for (const auto& t : flat) {
    auto [c, rest] = detail::split_coefficient(t);
    if (rest.is_one()) {
      constant += c;
      continue;
    }
    detail::find_or_insert(groups, order, rest) += c;
  }
  std::vector<Expr> out;
  for (const auto& rest : order) {
    double c = 0.0;
    for (const auto& entry : groups[rest.hash()])
      if (entry.first == rest) c = entry.second;
    if (c == 0.0) continue;
    out.push_back(c == 1.0 ? rest : mul({Expr(c), rest}));
  }
  if (constant != 0.0) out.push_back(Expr(constant));
  if (out.empty()) return Expr(0.0);
  if (out.size() == 1) return out.front();
  detail::canonical_sort(out);
  detail::Node n;
  n.op = Op::add;
  n.args = std::move(out);
  return Builder::make(std::move(n));
}

inline Expr mul(std::vector<Expr> factors) {
  std::vector<Expr> flat;
  std::vector<Expr> stack(factors.rbegin(), factors.rend());
  double coefficient = 1.0;
  while (!stack.empty()) {
    Expr f = stack.back();
    stack.pop_back();
    if (f.op() == Op::mul) {
      for (auto it = f.args().rbegin(); it != f.args().rend(); ++it) stack.push_back(*it);
      continue;
    }
    if (f.is_constant()) {
      coefficient *= f.value();
      continue;
    }
    flat.push_back(f);
  }
  if (coefficient == 0.0) return Expr(0.0);

  std::map<std::uint64_t, std::vector<std::pair<Expr, double>>> groups;
  std::vector<Expr> order;
  for (const auto& f : flat) {
    auto [base, e] = detail::split_power(f);
    if (base.op() == Op::add && detail::is_integer(e) && detail::negative_lead(base)) {
      // fix the sign of sum factors so that -(a+b)*x and (a+b)*x collect
      std::vector<Expr> neg;
      for (const auto& a : base.args()) neg.push_back(mul({Expr(-1.0), a}));
      base = add(std::move(neg));
      if (std::fmod(e, 2.0) != 0.0) coefficient = -coefficient;
    }
    detail::find_or_insert(groups, order, base) += e;
  }
  std::vector<Expr> out;
  for (const auto& base : order) {
    double e = 0.0;
    for (const auto& entry : groups[base.hash()])
      if (entry.first == base) e = entry.second;
    if (e == 0.0) continue;
    Expr p = pow(base, e);
    if (p.is_constant()) {
      coefficient *= p.value();
      continue;
    }
    if (p.op() == Op::mul) {
      // pow may have distributed over a product; merge its factors
      for (const auto& a : p.args()) {
        if (a.is_constant())
          coefficient *= a.value();
        else
          out.push_back(a);
      }
      continue;
    }
    out.push_back(p);
  }
  if (coefficient == 0.0) return Expr(0.0);
  if (out.empty()) return Expr(coefficient);
  if (out.size() == 1 && coefficient == 1.0) return out.front();
  if (out.size() == 1 && out.front().op() == Op::add) {
    // c*(a+b) -> c*a + c*b keeps sums flat
    std::vector<Expr> terms;
    for (const auto& a : out.front().args()) terms.push_back(mul({Expr(coefficient), a}));
    return add(std::move(terms));
  }
  detail::canonical_sort(out);
  if (coefficient != 1.0) out.insert(out.begin(), Expr(coefficient));
  detail::Node n;
  n.op = Op::mul;
  n.args = std::move(out);
  return Builder::make(std::move(n));
}

inline Expr pow(const Expr& base, double exponent) {
  if (exponent == 0.0) return Expr(1.0);
  if (exponent == 1.0) return base;
  if (base.is_constant()) {
    double b = base.value();
    if (b == 1.0) return Expr(1.0);
    if (b == 0.0 && exponent > 0.0) return Expr(0.0);
    if (b != 0.0 && (b > 0.0 || detail::is_integer(exponent))) {
      double v = std::pow(b, exponent);
      if (std::isfinite(v)) return Expr(v);
    }
  }
  if (base.op() == Op::pow && detail::is_integer(exponent)) return pow(base.args().front(), base.exponent() * exponent);
  if (base.op() == Op::mul && detail::is_integer(exponent)) {
    std::vector<Expr> fs;
    for (const auto& a : base.args()) fs.push_back(pow(a, exponent));
    return mul(std::move(fs));
  }
  detail::Node n;
  n.op = Op::pow;
  n.exponent = exponent;
  n.args = {base};
  return Builder::make(std::move(n));
}

namespace detail {
inline Expr unary(Op op, const Expr& x) {
  Node n;
  n.op = op;
  n.args = {x};
  return Builder::make(std::move(n));
}
}  // namespace detail

inline Expr sin(const Expr& x) {
  if (x.is_constant()) return Expr(std::sin(x.value()));
  return detail::unary(Op::sin, x);
}
inline Expr cos(const Expr& x) {
  if (x.is_constant()) return Expr(std::cos(x.value()));
  return detail::unary(Op::cos, x);
}
inline Expr exp(const Expr& x) {
  if (x.is_constant()) return Expr(std::exp(x.value()));
  if (x.op() == Op::log) return x.args().front();
  return detail::unary(Op::exp, x);
}
inline Expr log(const Expr& x) {
  if (x.is_constant() && x.value() > 0.0) return Expr(std::log(x.value()));
  return detail::unary(Op::log, x);
}

inline Expr operator+(const Expr& a, const Expr& b) { return add({a, b}); }
inline Expr operator-(const Expr& a, const Expr& b) { return add({a, mul({Expr(-1.0), b})}); }
inline Expr operator-(const Expr& a) { return mul({Expr(-1.0), a}); }
inline Expr operator*(const Expr& a, const Expr& b) { return mul({a, b}); }
inline Expr operator/(const Expr& a, const Expr& b) { return mul({a, pow(b, -1.0)}); }
inline Expr& operator+=(Expr& a, const Expr& b) { return a = a + b; }
inline Expr& operator-=(Expr& a, const Expr& b) { return a = a - b; }
inline Expr& operator*=(Expr& a, const Expr& b) { return a = a * b; }

inline Expr sym(std::string name) { return Expr::symbol(std::move(name)); }

// ---------------------------------------------------------------------------
// Structural queries

/// Names of every symbol node (coordinates, parameters, unknowns).
inline void collect_symbols(const Expr& e, std::set<std::string>& out) {
  switch (e.op()) {
    case Op::symbol:
      out.insert(e.name());
      return;
    case Op::constant:
      return;
    case Op::external:
      out.insert("t");
      return;
    default:
      for (const auto& a : e.args()) collect_symbols(a, out);
  }
}

inline std::set<std::string> free_symbols(const Expr& e) {
  std::set<std::string> out;
  collect_symbols(e, out);
  return out;
}

/// (name, derivative order) of every external-function node.
inline void collect_externals(const Expr& e, std::set<std::pair<std::string, int>>& out) {
  if (e.op() == Op::external) {
    out.emplace(e.name(), e.order());
    return;
  }
  for (const auto& a : e.args()) collect_externals(a, out);
}

inline std::set<std::pair<std::string, int>> externals_of(const Expr& e) {
  std::set<std::pair<std::string, int>> out;
  collect_externals(e, out);
  return out;
}

inline bool depends_on(const Expr& e, const std::string& name) {
  switch (e.op()) {
    case Op::symbol:
      return e.name() == name;
    case Op::constant:
      return false;
    case Op::external:
      return name == "t";
    default:
      for (const auto& a : e.args())
        if (depends_on(a, name)) return true;
      return false;
  }
}

}  // namespace symlang
}  // namespace cocontact
