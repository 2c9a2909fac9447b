#pragma once

#include <functional>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "cocontact/symlang/ops.hpp"

namespace cocontact::symlang {

class DomainError : public Error {
 public:
  DomainError(const std::string& what, std::string subexpression)
      : Error(what + " in '" + subexpression + "'"), subexpression_(std::move(subexpression)) {}
  const std::string& subexpression() const { return subexpression_; }

 private:
  std::string subexpression_;
};

class UnboundSymbolError : public Error {
 public:
  explicit UnboundSymbolError(std::string symbol) : Error("unbound symbol '" + symbol + "'"), symbol_(std::move(symbol)) {}
  const std::string& symbol() const { return symbol_; }

 private:
  std::string symbol_;
};

/// Value of the `order`-th derivative of a time function at t.
using TimeFunction = std::function<double(double t, int order)>;

struct Bindings {
  std::unordered_map<std::string, double> values;
  std::unordered_map<std::string, TimeFunction> externals;

  Bindings& set(const std::string& name, double v) {
    values[name] = v;
    return *this;
  }
  Bindings& set_external(const std::string& name, TimeFunction f) {
    externals[name] = std::move(f);
    return *this;
  }
  double at(const std::string& name) const {
    auto it = values.find(name);
    if (it == values.end()) throw UnboundSymbolError(name);
    return it->second;
  }
};

namespace detail {

inline double checked_pow(double b, double e, const Expr& node) {
  if (b == 0.0 && e < 0.0) throw DomainError("division by zero", to_string(node));
  if (b < 0.0 && !is_integer(e)) throw DomainError("non-integer power of a negative value", to_string(node));
  return std::pow(b, e);
}

inline double checked_log(double x, const Expr& node) {
  if (!(x > 0.0)) throw DomainError("log of non-positive value", to_string(node));
  return std::log(x);
}

inline double eval_external(const Bindings& b, const std::string& name, int order) {
  auto it = b.externals.find(name);
  if (it == b.externals.end()) throw UnboundSymbolError(name + "(t)");
  return it->second(b.at("t"), order);
}

}  // namespace detail

inline double evaluate(const Expr& e, const Bindings& b) {
  switch (e.op()) {
    case Op::constant:
      return e.value();
    case Op::symbol:
      return b.at(e.name());
    case Op::external:
      return detail::eval_external(b, e.name(), e.order());
    case Op::add: {
      double s = 0.0;
      for (const auto& a : e.args()) s += evaluate(a, b);
      return s;
    }
    case Op::mul: {
      double p = 1.0;
      for (const auto& a : e.args()) p *= evaluate(a, b);
      return p;
    }
    case Op::pow:
      return detail::checked_pow(evaluate(e.args()[0], b), e.exponent(), e);
    case Op::sin:
      return std::sin(evaluate(e.args()[0], b));
    case Op::cos:
      return std::cos(evaluate(e.args()[0], b));
    case Op::exp:
      return std::exp(evaluate(e.args()[0], b));
    case Op::log:
      return detail::checked_log(evaluate(e.args()[0], b), e);
  }
  return std::numeric_limits<double>::quiet_NaN();
}

/// Upper estimate of the magnitudes that cancel inside `e`; used to scale
/// the zero tolerance so large intermediate values do not read as nonzero.
inline double cancellation_scale(const Expr& e, const Bindings& b) {
  switch (e.op()) {
    case Op::add: {
      double s = 0.0;
      for (const auto& a : e.args()) s += cancellation_scale(a, b);
      return s;
    }
    case Op::mul: {
      double p = 1.0;
      for (const auto& a : e.args()) p *= cancellation_scale(a, b);
      return p;
    }
    case Op::pow:
      if (e.exponent() > 0) return std::pow(cancellation_scale(e.args()[0], b), e.exponent());
      return std::fabs(evaluate(e, b));
    case Op::sin:
    case Op::cos:
      return 1.0;
    default:
      return std::fabs(evaluate(e, b));
  }
}

// ---------------------------------------------------------------------------
// Compiled evaluation: postfix program over index-resolved slots.

class CompiledExpr {
 public:
  CompiledExpr() = default;

  /// `slots` fixes the order of the value vector passed to operator().
  /// `time_slot` is the index of t in that vector (needed by externals).
  CompiledExpr(const Expr& e, const std::vector<std::string>& slots, std::size_t time_slot,
               const std::unordered_map<std::string, TimeFunction>& externals)
      : time_slot_(time_slot) {
    std::unordered_map<std::string, std::size_t> slot_of;
    for (std::size_t i = 0; i < slots.size(); ++i) slot_of[slots[i]] = i;
    std::unordered_map<std::string, std::size_t> ext_of;
    emit(e, slot_of, externals, ext_of);
    std::size_t depth = 0, max_depth = 0;
    for (const auto& ins : code_) {
      switch (ins.kind) {
        case Kind::push_const:
        case Kind::push_slot:
        case Kind::push_ext:
          ++depth;
          break;
        case Kind::add:
        case Kind::mul:
          depth -= static_cast<std::size_t>(ins.count) - 1;
          break;
        default:
          break;
      }
      max_depth = std::max(max_depth, depth);
    }
    stack_size_ = max_depth;
  }

  double operator()(const double* values) const {
    // Shared per thread; externals may re-enter (an external defined by a
    // compiled expression), so each call works above the caller's frame.
    thread_local std::vector<double> stack;
    thread_local std::size_t top = 0;
    const std::size_t base = top;
    if (stack.size() < base + stack_size_) stack.resize(base + stack_size_);
    struct Frame {
      std::size_t& top;
      std::size_t saved;
      ~Frame() { top = saved; }
    } frame{top, base};
    top = base + stack_size_;
    std::size_t sp = base;
    for (const auto& ins : code_) {
      switch (ins.kind) {
        case Kind::push_const:
          stack[sp++] = ins.value;
          break;
        case Kind::push_slot:
          stack[sp++] = values[ins.index];
          break;
        case Kind::push_ext:
          stack[sp++] = functions_[ins.index](values[time_slot_], ins.count);
          break;
        case Kind::add: {
          std::size_t n = static_cast<std::size_t>(ins.count);
          double s = 0.0;
          for (std::size_t i = sp - n; i < sp; ++i) s += stack[i];
          sp -= n;
          stack[sp++] = s;
          break;
        }
        case Kind::mul: {
          std::size_t n = static_cast<std::size_t>(ins.count);
          double p = 1.0;
          for (std::size_t i = sp - n; i < sp; ++i) p *= stack[i];
          sp -= n;
          stack[sp++] = p;
          break;
        }
        case Kind::pow:
          stack[sp - 1] = detail::checked_pow(stack[sp - 1], ins.value, nodes_[ins.index]);
          break;
        case Kind::sin:
          stack[sp - 1] = std::sin(stack[sp - 1]);
          break;
        case Kind::cos:
          stack[sp - 1] = std::cos(stack[sp - 1]);
          break;
        case Kind::exp:
          stack[sp - 1] = std::exp(stack[sp - 1]);
          break;
        case Kind::log:
          stack[sp - 1] = detail::checked_log(stack[sp - 1], nodes_[ins.index]);
          break;
      }
    }
    return stack[base];
  }

  double operator()(const std::vector<double>& values) const { return (*this)(values.data()); }

 private:
  enum class Kind : std::uint8_t { push_const, push_slot, push_ext, add, mul, pow, sin, cos, exp, log };
  struct Instr {
    Kind kind;
    int count = 0;
    std::size_t index = 0;
    double value = 0.0;
  };
  std::vector<Instr> code_;
  std::vector<TimeFunction> functions_;
  std::vector<Expr> nodes_;  // for domain-error messages
  std::size_t time_slot_ = 0;
  std::size_t stack_size_ = 0;

  void emit(const Expr& e, const std::unordered_map<std::string, std::size_t>& slot_of,
            const std::unordered_map<std::string, TimeFunction>& externals,
            std::unordered_map<std::string, std::size_t>& ext_of) {
    switch (e.op()) {
      case Op::constant:
        code_.push_back({Kind::push_const, 0, 0, e.value()});
        return;
      case Op::symbol: {
        auto it = slot_of.find(e.name());
        if (it == slot_of.end()) throw UnboundSymbolError(e.name());
        code_.push_back({Kind::push_slot, 0, it->second, 0.0});
        return;
      }
      case Op::external: {
        auto it = ext_of.find(e.name());
        if (it == ext_of.end()) {
          auto f = externals.find(e.name());
          if (f == externals.end()) throw UnboundSymbolError(e.name() + "(t)");
          functions_.push_back(f->second);
          it = ext_of.emplace(e.name(), functions_.size() - 1).first;
        }
        code_.push_back({Kind::push_ext, e.order(), it->second, 0.0});
        return;
      }
      case Op::add:
      case Op::mul:
        for (const auto& a : e.args()) emit(a, slot_of, externals, ext_of);
        code_.push_back({e.op() == Op::add ? Kind::add : Kind::mul, static_cast<int>(e.args().size()), 0, 0.0});
        return;
      case Op::pow:
        emit(e.args()[0], slot_of, externals, ext_of);
        nodes_.push_back(e);
        code_.push_back({Kind::pow, 0, nodes_.size() - 1, e.exponent()});
        return;
      case Op::sin:
      case Op::cos:
      case Op::exp:
      case Op::log: {
        emit(e.args()[0], slot_of, externals, ext_of);
        nodes_.push_back(e);
        Kind k = e.op() == Op::sin ? Kind::sin : e.op() == Op::cos ? Kind::cos : e.op() == Op::exp ? Kind::exp : Kind::log;
        code_.push_back({k, 0, nodes_.size() - 1, 0.0});
        return;
      }
    }
  }
};

}  // namespace cocontact::symlang
