#pragma once

// Expression grammar
//
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := ('-' | '+') unary | power
//   power   := primary ('^' unary)?            right associative, constant exponent
//   primary := number | 'pi' | ident | ident '\''* '(' 't' ')' | func '(' expr ')' | '(' expr ')'
//   func    := 'sin' | 'cos' | 'exp' | 'log'
//   ident   := [a-zA-Z_][a-zA-Z0-9_]*
//   number  := decimal or scientific notation
//
// `name(t)` is an external time function; each trailing prime is one
// t-derivative (l''(t) is the second derivative of l).

#include <cctype>
#include <cstdlib>
#include <set>
#include <string>
#include <string_view>

#include "cocontact/symlang/ops.hpp"

namespace cocontact::symlang {

class SyntaxError : public Error {
 public:
  SyntaxError(std::size_t offset, const std::string& what)
      : Error("syntax error at offset " + std::to_string(offset) + ": " + what), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class UnknownSymbolError : public Error {
 public:
  explicit UnknownSymbolError(std::string symbol)
      : Error("unknown symbol '" + symbol + "'"), symbol_(std::move(symbol)) {}
  const std::string& symbol() const { return symbol_; }

 private:
  std::string symbol_;
};

/// Names an expression may refer to.
struct SymbolTable {
  std::set<std::string> coordinates;
  std::set<std::string> parameters;
  std::set<std::string> externals;
  bool allow_any_symbol = false;  // skip validation (internal use)
};

namespace detail {

class Parser {
 public:
  Parser(std::string_view text, const SymbolTable& table) : text_(text), table_(table) {}

  Expr parse() {
    Expr e = parse_expr();
    skip_ws();
    if (pos_ != text_.size()) throw SyntaxError(pos_, std::string("unexpected '") + text_[pos_] + "'");
    return e;
  }

 private:
  std::string_view text_;
  const SymbolTable& table_;
  std::size_t pos_ = 0;

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }
  bool accept(char c) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  void expect(char c) {
    skip_ws();
    if (pos_ >= text_.size()) throw SyntaxError(pos_, std::string("expected '") + c + "' but input ended");
    if (text_[pos_] != c) throw SyntaxError(pos_, std::string("expected '") + c + "'");
    ++pos_;
  }

  Expr parse_expr() {
    Expr lhs = parse_term();
    for (;;) {
      if (accept('+'))
        lhs = lhs + parse_term();
      else if (accept('-'))
        lhs = lhs - parse_term();
      else
        return lhs;
    }
  }

  Expr parse_term() {
    Expr lhs = parse_unary();
    for (;;) {
      if (accept('*'))
        lhs = lhs * parse_unary();
      else if (accept('/'))
        lhs = lhs / parse_unary();
      else
        return lhs;
    }
  }

  Expr parse_unary() {
    if (accept('-')) return -parse_unary();
    if (accept('+')) return parse_unary();
    return parse_power();
  }

  Expr parse_power() {
    Expr base = parse_primary();
    skip_ws();
    if (accept('^')) {
      std::size_t at = pos_;
      Expr ex = parse_unary();
      if (!ex.is_constant()) throw SyntaxError(at, "exponent must be a constant");
      return pow(base, ex.value());
    }
    return base;
  }

  Expr parse_primary() {
    skip_ws();
    if (pos_ >= text_.size()) throw SyntaxError(pos_, "unexpected end of input");
    char c = text_[pos_];
    if (c == '(') {
      ++pos_;
      Expr e = parse_expr();
      expect(')');
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_identifier();
    throw SyntaxError(pos_, std::string("unexpected '") + c + "'");
  }

  Expr parse_number() {
    std::size_t start = pos_;
    while (pos_ < text_.size() && (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.')) ++pos_;
    if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
      std::size_t save = pos_++;
      if (pos_ < text_.size() && (text_[pos_] == '+' || text_[pos_] == '-')) ++pos_;
      if (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
        while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
      } else {
        pos_ = save;
      }
    }
    std::string tok(text_.substr(start, pos_ - start));
    char* end = nullptr;
    double v = std::strtod(tok.c_str(), &end);
    if (end != tok.c_str() + tok.size()) throw SyntaxError(start, "malformed number '" + tok + "'");
    return Expr(v);
  }

  Expr parse_identifier() {
    std::size_t start = pos_;
    while (pos_ < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) ++pos_;
    std::string id(text_.substr(start, pos_ - start));
    int primes = 0;
    while (pos_ < text_.size() && text_[pos_] == '\'') {
      ++primes;
      ++pos_;
    }
    skip_ws();
    bool call = pos_ < text_.size() && text_[pos_] == '(';
    if (call && primes == 0 && (id == "sin" || id == "cos" || id == "exp" || id == "log")) {
      ++pos_;
      Expr arg = parse_expr();
      expect(')');
      if (id == "sin") return sin(arg);
      if (id == "cos") return cos(arg);
      if (id == "exp") return exp(arg);
      return log(arg);
    }
    if (call) {
      if (!table_.allow_any_symbol && !table_.externals.count(id)) throw UnknownSymbolError(id);
      ++pos_;
      skip_ws();
      std::size_t arg_at = pos_;
      if (pos_ >= text_.size() || text_.substr(pos_, 1) != "t") throw SyntaxError(arg_at, "external functions take the single argument t");
      ++pos_;
      if (pos_ < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
        throw SyntaxError(arg_at, "external functions take the single argument t");
      expect(')');
      return Expr::external(id, primes);
    }
    if (primes) throw SyntaxError(start, "derivative marks are only valid on external calls");
    if (id == "pi") return Expr(std::numbers::pi);
    if (!table_.allow_any_symbol && !table_.coordinates.count(id) && !table_.parameters.count(id)) {
      throw UnknownSymbolError(id);
    }
    return Expr::symbol(id);
  }
};

}  // namespace detail

inline Expr parse(std::string_view text, const SymbolTable& table) { return detail::Parser(text, table).parse(); }

/// Parses without symbol validation.
inline Expr parse_unchecked(std::string_view text) {
  SymbolTable table;
  table.allow_any_symbol = true;
  return parse(text, table);
}

}  // namespace cocontact::symlang
