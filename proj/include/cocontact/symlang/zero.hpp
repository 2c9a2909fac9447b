#pragma once

#include <cstdint>
#include <numbers>

#include "cocontact/symlang/eval.hpp"

namespace cocontact::symlang {

/// Seed of the randomized zero oracle. Every symbol's value at probe k is a
/// pure function of (seed, symbol name, k), so results do not depend on which
/// other symbols an expression happens to contain.
inline constexpr std::uint64_t kZeroTestSeed = 0x00C0C047AC7ULL;

struct ZeroTestOptions {
  int points = 32;
  double tolerance = 1e-9;
  double lower = -2.0;
  double upper = 2.0;
  std::uint64_t seed = kZeroTestSeed;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline double unit_from(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

}  // namespace detail

/// Deterministic smooth stand-in for an external time function, valued in
/// [1, 2] so reciprocals stay tame. Exact derivatives of every order.
inline TimeFunction test_family_function(const std::string& name, std::uint64_t seed = kZeroTestSeed) {
  std::uint64_t h = detail::splitmix64(seed ^ detail::hash_string(name));
  double a = 0.5 + 1.5 * detail::unit_from(detail::splitmix64(h + 1));
  double b = 2.0 * std::numbers::pi * detail::unit_from(detail::splitmix64(h + 2));
  double c = 0.5 + 1.5 * detail::unit_from(detail::splitmix64(h + 3));
  double d = 2.0 * std::numbers::pi * detail::unit_from(detail::splitmix64(h + 4));
  return [=](double t, int order) {
    double shift = order * std::numbers::pi / 2.0;
    double v = 0.3 * std::pow(a, order) * std::sin(a * t + b + shift) + 0.2 * std::pow(c, order) * std::cos(c * t + d + shift);
    return order == 0 ? 1.5 + v : v;
  };
}

/// Bindings for probe `k`: every free symbol of `e` gets a value in
/// [lower, upper]; externals come from the test family.
inline Bindings zero_test_bindings(const Expr& e, int k, const ZeroTestOptions& opt) {
  Bindings b;
  for (const auto& name : free_symbols(e)) {
    std::uint64_t bits = detail::splitmix64(opt.seed ^ detail::hash_string(name) ^ (0x100000001b3ULL * static_cast<std::uint64_t>(k + 1)));
    b.set(name, opt.lower + (opt.upper - opt.lower) * detail::unit_from(bits));
  }
  if (!b.values.count("t")) b.set("t", 0.0);
  for (const auto& [name, order] : externals_of(e)) {
    (void)order;
    if (!b.externals.count(name)) b.set_external(name, test_family_function(name, opt.seed));
  }
  return b;
}

/// True when `e` is zero by construction, or evaluates to (scaled) zero at
/// every valid probe. Probes hitting a domain error are skipped; fewer than
/// half valid probes means "not provably zero".
inline bool is_identically_zero(const Expr& e, const ZeroTestOptions& opt = {}) {
  if (e.is_zero()) return true;
  if (e.is_constant()) return false;
  if (e.size() <= 400 && expand(e).is_zero()) return true;
  int valid = 0;
  for (int k = 0; k < opt.points; ++k) {
    Bindings b = zero_test_bindings(e, k, opt);
    double v = 0.0, scale = 1.0;
    try {
      v = evaluate(e, b);
      scale = std::max(1.0, cancellation_scale(e, b));
    } catch (const DomainError&) {
      continue;
    }
    if (!std::isfinite(v) || !std::isfinite(scale)) continue;
    ++valid;
    if (std::fabs(v) > opt.tolerance * scale) return false;
  }
  return valid * 2 >= opt.points;
}

}  // namespace cocontact::symlang
