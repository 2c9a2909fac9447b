#pragma once

#include <cstdio>
#include <functional>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>

#include "cocontact/symlang/expr.hpp"

namespace cocontact::symlang {

// ---------------------------------------------------------------------------
// Printing

namespace detail {

/// Shortest decimal that parses back to exactly `v`.
inline std::string format_number(double v) {
  if (v == std::floor(v) && std::fabs(v) < 1e15) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.0f", v);
    return buf;
  }
  char buf[40];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline std::string format_exponent(double e) {
  if (is_integer(e)) return format_number(e);
  for (int den = 2; den <= 12; ++den) {
    double num = e * den;
    if (std::fabs(num - std::round(num)) < 1e-12) return "(" + format_number(std::round(num)) + "/" + std::to_string(den) + ")";
  }
  return "(" + format_number(e) + ")";
}

struct Printer {
  // Optional override for symbol spelling (used by the gnuplot emitter).
  std::function<std::string(const std::string&)> symbol_name;
  std::string pow_op = "^";

  std::string print(const Expr& e) const { return print_prec(e, 0); }

  // precedence: 0 sum, 1 product, 2 unary minus, 3 power, 4 atom
  std::string print_prec(const Expr& e, int outer) const {
    std::string s;
    int prec = 4;
    switch (e.op()) {
      case Op::constant:
        s = format_number(e.value());
        if (e.value() < 0) prec = 2;
        break;
      case Op::symbol:
        s = symbol_name ? symbol_name(e.name()) : e.name();
        break;
      case Op::external:
        s = e.name() + std::string(static_cast<std::size_t>(e.order()), '\'') + "(t)";
        break;
      case Op::sin:
      case Op::cos:
      case Op::exp:
      case Op::log: {
        static const char* names[] = {"sin", "cos", "exp", "log"};
        s = std::string(names[static_cast<int>(e.op()) - static_cast<int>(Op::sin)]) + "(" + print_prec(e.args()[0], 0) + ")";
        break;
      }
      case Op::pow:
        if (e.exponent() < 0) {
          s = "1/" + print_prec(pow(e.args()[0], -e.exponent()), 4);
          prec = 1;
        } else {
          s = print_prec(e.args()[0], 4) + pow_op + format_exponent(e.exponent());
          prec = 3;
        }
        break;
      case Op::mul:
        s = print_product(e, prec);
        break;
      case Op::add:
        s = print_sum(e);
        prec = 0;
        break;
    }
    if (prec < outer) return "(" + s + ")";
    return s;
  }

  std::string print_product(const Expr& e, int& prec) const {
    auto [c, rest] = split_coefficient(e);
    std::vector<std::string> num, den;
    std::vector<Expr> rest_factors = rest.op() == Op::mul ? rest.args() : std::vector<Expr>{rest};
    std::vector<std::pair<std::string, std::string>> keyed;
    for (const auto& f : rest_factors) {
      if (f.op() == Op::pow && f.exponent() < 0)
        den.push_back(print_prec(pow(f.args()[0], -f.exponent()), 3));
      else
        keyed.emplace_back(print_prec(f, 1), "");
    }
    std::sort(keyed.begin(), keyed.end());
    for (auto& k : keyed) num.push_back(k.first);
    std::sort(den.begin(), den.end());
    std::string s;
    double mag = std::fabs(c);
    if (num.empty())
      s = format_number(mag);
    else {
      if (mag != 1.0) s = format_number(mag) + "*";
      for (std::size_t i = 0; i < num.size(); ++i) s += (i ? "*" : "") + num[i];
    }
    if (!den.empty()) {
      s += "/";
      if (den.size() > 1) s += "(";
      for (std::size_t i = 0; i < den.size(); ++i) s += (i ? "*" : "") + den[i];
      if (den.size() > 1) s += ")";
    }
    prec = 1;
    if (c < 0) {
      s = "-" + s;
      prec = 2;
    }
    return s;
  }

  std::string print_sum(const Expr& e) const {
    std::vector<std::pair<std::string, bool>> terms;  // (magnitude text, negative)
    for (const auto& t : e.args()) {
      auto [c, rest] = split_coefficient(t);
      bool neg = c < 0;
      Expr mag = neg ? mul({Expr(-c), rest}) : t;
      terms.emplace_back(print_prec(mag, 1), neg);
    }
    // constants last, otherwise lexicographic for stable output
    std::stable_sort(terms.begin(), terms.end(), [](const auto& a, const auto& b) {
      bool ca = !a.first.empty() && (std::isdigit(static_cast<unsigned char>(a.first[0])) != 0);
      bool cb = !b.first.empty() && (std::isdigit(static_cast<unsigned char>(b.first[0])) != 0);
      if (ca != cb) return cb;
      return a.first < b.first;
    });
    std::string s;
    for (std::size_t i = 0; i < terms.size(); ++i) {
      if (i == 0)
        s = (terms[i].second ? "-" : "") + terms[i].first;
      else
        s += (terms[i].second ? " - " : " + ") + terms[i].first;
    }
    return s;
  }
};

}  // namespace detail

/// Infix text in the input grammar; parse(to_string(e)) rebuilds e.
inline std::string to_string(const Expr& e) { return detail::Printer{}.print(e); }

inline std::ostream& operator<<(std::ostream& os, const Expr& e) { return os << to_string(e); }

// ---------------------------------------------------------------------------
// Differentiation

inline Expr differentiate(const Expr& e, const std::string& x) {
  switch (e.op()) {
    case Op::constant:
      return Expr(0.0);
    case Op::symbol:
      return Expr(e.name() == x ? 1.0 : 0.0);
    case Op::external:
      return x == "t" ? Expr::external(e.name(), e.order() + 1) : Expr(0.0);
    case Op::add: {
      std::vector<Expr> terms;
      for (const auto& a : e.args()) terms.push_back(differentiate(a, x));
      return add(std::move(terms));
    }
    case Op::mul: {
      const auto& a = e.args();
      std::vector<Expr> terms;
      for (std::size_t i = 0; i < a.size(); ++i) {
        Expr di = differentiate(a[i], x);
        if (di.is_zero()) continue;
        std::vector<Expr> f(a.begin(), a.end());
        f[i] = di;
        terms.push_back(mul(std::move(f)));
      }
      return add(std::move(terms));
    }
    case Op::pow: {
      const Expr& b = e.args()[0];
      Expr db = differentiate(b, x);
      if (db.is_zero()) return Expr(0.0);
      return mul({Expr(e.exponent()), pow(b, e.exponent() - 1.0), db});
    }
    case Op::sin: {
      Expr du = differentiate(e.args()[0], x);
      return du.is_zero() ? Expr(0.0) : mul({cos(e.args()[0]), du});
    }
    case Op::cos: {
      Expr du = differentiate(e.args()[0], x);
      return du.is_zero() ? Expr(0.0) : mul({Expr(-1.0), sin(e.args()[0]), du});
    }
    case Op::exp: {
      Expr du = differentiate(e.args()[0], x);
      return du.is_zero() ? Expr(0.0) : mul({e, du});
    }
    case Op::log: {
      Expr du = differentiate(e.args()[0], x);
      return du.is_zero() ? Expr(0.0) : mul({du, pow(e.args()[0], -1.0)});
    }
  }
  return Expr(0.0);
}

// ---------------------------------------------------------------------------
// Rebuild helpers

/// Reconstructs a node of the same kind from new operands.
inline Expr rebuild(const Expr& e, std::vector<Expr> args) {
  switch (e.op()) {
    case Op::add:
      return add(std::move(args));
    case Op::mul:
      return mul(std::move(args));
    case Op::pow:
      return pow(args[0], e.exponent());
    case Op::sin:
      return sin(args[0]);
    case Op::cos:
      return cos(args[0]);
    case Op::exp:
      return exp(args[0]);
    case Op::log:
      return log(args[0]);
    default:
      return e;
  }
}

/// Bottom-up rewrite; `leaf` is called on symbol/external/constant nodes.
template <class Leaf>
Expr transform(const Expr& e, const Leaf& leaf, std::unordered_map<const detail::Node*, Expr>& memo) {
  if (auto it = memo.find(e.get()); it != memo.end()) return it->second;
  Expr out;
  if (e.args().empty()) {
    out = leaf(e);
  } else {
    std::vector<Expr> args;
    args.reserve(e.args().size());
    bool changed = false;
    for (const auto& a : e.args()) {
      args.push_back(transform(a, leaf, memo));
      changed = changed || args.back().get() != a.get();
    }
    out = changed ? rebuild(e, std::move(args)) : e;
  }
  memo.emplace(e.get(), out);
  return out;
}

// ---------------------------------------------------------------------------
// Substitution

using Substitution = std::map<std::string, Expr>;

/// Simultaneous replacement of symbols.
inline Expr substitute(const Expr& e, const Substitution& map) {
  if (map.empty()) return e;
  std::unordered_map<const detail::Node*, Expr> memo;
  return transform(
      e,
      [&](const Expr& leaf) -> Expr {
        if (leaf.op() == Op::symbol) {
          auto it = map.find(leaf.name());
          if (it != map.end()) return it->second;
        }
        return leaf;
      },
      memo);
}

/// Replaces every derivative order of external `name` by the matching
/// t-derivative of `replacement`.
inline Expr substitute_external(const Expr& e, const std::string& name, const Expr& replacement) {
  std::vector<Expr> derivs{replacement};
  std::unordered_map<const detail::Node*, Expr> memo;
  return transform(
      e,
      [&](const Expr& leaf) -> Expr {
        if (leaf.op() != Op::external || leaf.name() != name) return leaf;
        while (static_cast<int>(derivs.size()) <= leaf.order()) derivs.push_back(differentiate(derivs.back(), "t"));
        return derivs[static_cast<std::size_t>(leaf.order())];
      },
      memo);
}

// ---------------------------------------------------------------------------
// Expansion

namespace detail {

inline Expr expand_product(const std::vector<Expr>& factors) {
  // distribute over every sum factor
  std::vector<Expr> acc{Expr(1.0)};
  for (const auto& f : factors) {
    if (f.op() == Op::add) {
      std::vector<Expr> next;
      next.reserve(acc.size() * f.args().size());
      for (const auto& a : acc)
        for (const auto& t : f.args()) next.push_back(mul({a, t}));
      acc = std::move(next);
    } else {
      for (auto& a : acc) a = mul({a, f});
    }
  }
  return add(std::move(acc));
}

}  // namespace detail

/// Distributes products over sums and expands small positive integer powers
/// of sums. Negative powers of sums stay atomic.
inline Expr expand(const Expr& e) {
  std::unordered_map<const detail::Node*, Expr> memo;
  std::function<Expr(const Expr&)> go = [&](const Expr& x) -> Expr {
    if (auto it = memo.find(x.get()); it != memo.end()) return it->second;
    Expr out;
    switch (x.op()) {
      case Op::add: {
        std::vector<Expr> ts;
        for (const auto& a : x.args()) ts.push_back(go(a));
        out = add(std::move(ts));
        break;
      }
      case Op::mul: {
        std::vector<Expr> fs;
        for (const auto& a : x.args()) fs.push_back(go(a));
        out = detail::expand_product(fs);
        break;
      }
      case Op::pow: {
        Expr b = go(x.args()[0]);
        double n = x.exponent();
        if (b.op() == Op::add && detail::is_integer(n) && n >= 2 && n <= 6) {
          std::vector<Expr> fs(static_cast<std::size_t>(n), b);
          out = detail::expand_product(fs);
        } else {
          out = pow(b, n);
        }
        break;
      }
      case Op::sin:
      case Op::cos:
      case Op::exp:
      case Op::log:
        out = rebuild(x, {go(x.args()[0])});
        break;
      default:
        out = x;
    }
    memo.emplace(x.get(), out);
    return out;
  };
  return go(e);
}

}  // namespace cocontact::symlang
