#pragma once

// Built-in external time functions with derivatives of every order.

#include <cmath>
#include <map>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "cocontact/symlang.hpp"

namespace cocontact::functions {

using symlang::TimeFunction;

inline TimeFunction constant(double c) {
  return [c](double, int order) { return order == 0 ? c : 0.0; };
}

/// Gaussian bump a*exp(-u^2/2), u = (t - center)/width. The n-th derivative is
/// (-1)^n He_n(u) exp(-u^2/2) / width^n with He the probabilists' Hermite polynomials.
inline TimeFunction smooth_pulse(double amplitude, double center, double width) {
  if (!(width > 0.0)) throw Error("smooth_pulse: width must be positive");
  return [=](double t, int order) {
    double u = (t - center) / width;
    double he_prev = 1.0, he = u;  // He_0, He_1
    double h_n = 1.0;
    if (order == 1) h_n = he;
    for (int k = 1; k < order; ++k) {
      double next = u * he - k * he_prev;
      he_prev = he;
      he = next;
      h_n = he;
    }
    double sign = order % 2 == 0 ? 1.0 : -1.0;
    return amplitude * sign * h_n * std::exp(-0.5 * u * u) / std::pow(width, order);
  };
}

/// Half-period sine bump a*sin(pi (t - start)/width) on [start, start + width], zero elsewhere.
inline TimeFunction sin_pulse(double amplitude, double start, double width) {
  if (!(width > 0.0)) throw Error("sin_pulse: width must be positive");
  return [=](double t, int order) {
    if (t < start || t > start + width) return 0.0;
    double w = std::numbers::pi / width;
    return amplitude * std::pow(w, order) * std::sin(w * (t - start) + order * std::numbers::pi / 2.0);
  };
}

/// Closed-form expression in t (parameters substituted by value), differentiated
/// symbolically up to `max_order` at construction so the result is thread-safe.
inline TimeFunction expression(const std::string& text, const std::map<std::string, double>& params = {},
                               int max_order = 8) {
  symlang::SymbolTable table;
  table.coordinates = {"t"};
  symlang::Substitution sub;
  for (const auto& [name, v] : params) {
    table.parameters.insert(name);
    sub[name] = symlang::Expr(v);
  }
  symlang::Expr e = symlang::substitute(symlang::parse(text, table), sub);
  auto compiled = std::make_shared<std::vector<symlang::CompiledExpr>>();
  for (int k = 0; k <= max_order; ++k) {
    compiled->emplace_back(e, std::vector<std::string>{"t"}, 0, std::unordered_map<std::string, TimeFunction>{});
    e = symlang::differentiate(e, "t");
  }
  return [compiled, text](double t, int order) {
    if (order < 0 || order >= static_cast<int>(compiled->size()))
      throw Error("derivative order " + std::to_string(order) + " of '" + text + "' not available");
    return (*compiled)[static_cast<std::size_t>(order)](&t);
  };
}

}  // namespace cocontact::functions
