#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "cocontact/exterior.hpp"

namespace cocontact {

class TrajectoryError : public Error {
 public:
  using Error::Error;
};

/// Time-stamped states on a chart plus named per-sample diagnostic columns.
struct Trajectory {
  exterior::ChartPtr chart;
  std::vector<double> times;
  std::vector<exterior::Point> states;
  std::vector<std::string> diagnostic_names;
  std::vector<std::vector<double>> diagnostics;  // one column per name
  std::string status = "ok";                     // or the abort reason

  std::size_t size() const { return times.size(); }
  bool ok() const { return status == "ok"; }

  /// Column of coordinate `name`.
  std::vector<double> column(const std::string& name) const {
    std::size_t i = chart->index(name);
    std::vector<double> out;
    out.reserve(states.size());
    for (const auto& x : states) out.push_back(x[i]);
    return out;
  }

  const std::vector<double>& diagnostic(const std::string& name) const {
    for (std::size_t i = 0; i < diagnostic_names.size(); ++i)
      if (diagnostic_names[i] == name) return diagnostics[i];
    throw TrajectoryError("no diagnostic column '" + name + "'");
  }
  bool has_diagnostic(const std::string& name) const {
    for (const auto& n : diagnostic_names)
      if (n == name) return true;
    return false;
  }
  void add_diagnostic(std::string name, std::vector<double> values) {
    diagnostic_names.push_back(std::move(name));
    diagnostics.push_back(std::move(values));
  }
};

/// d/dt of the sampled quantity f(j) at interior sample k. Uses the five-point
/// stencil where the surrounding steps are equal, otherwise the three-point
/// formula for uneven spacing.
template <class F>
double sample_derivative(const std::vector<double>& t, std::size_t k, F&& f) {
  double h0 = t[k] - t[k - 1], h1 = t[k + 1] - t[k];
  auto same = [&](double a, double b) { return std::fabs(a - b) <= 1e-9 * std::max(std::fabs(a), std::fabs(b)); };
  if (k >= 2 && k + 2 < t.size() && same(h0, h1) && same(t[k - 1] - t[k - 2], h0) && same(t[k + 2] - t[k + 1], h1)) {
    double h = 0.25 * (t[k + 2] - t[k - 2]);
    return (f(k - 2) - 8.0 * f(k - 1) + 8.0 * f(k + 1) - f(k + 2)) / (12.0 * h);
  }
  return (-h1 / (h0 * (h0 + h1))) * f(k - 1) + ((h1 - h0) / (h0 * h1)) * f(k) + (h0 / (h1 * (h0 + h1))) * f(k + 1);
}

/// Finite-difference derivative of every coordinate at interior samples 1..n-2.
inline std::vector<exterior::Point> centered_derivatives(const Trajectory& traj) {
  if (traj.size() < 3) throw TrajectoryError("finite differences need at least 3 samples");
  std::vector<exterior::Point> out;
  for (std::size_t k = 1; k + 1 < traj.size(); ++k) {
    exterior::Point d(traj.chart->dim());
    for (std::size_t i = 0; i < d.size(); ++i)
      d[i] = sample_derivative(traj.times, k, [&](std::size_t j) { return traj.states[j][i]; });
    out.push_back(std::move(d));
  }
  return out;
}

/// Residual of x' = X(x) at interior samples, one row per sample.
inline std::vector<std::vector<double>> field_residual(const exterior::VectorFieldExpr& X, const Trajectory& traj,
                                                       const exterior::Environment& env) {
  auto d = centered_derivatives(traj);
  std::vector<std::vector<double>> out;
  for (std::size_t k = 1; k + 1 < traj.size(); ++k) {
    auto b = exterior::bind_point(*traj.chart, traj.states[k], env);
    std::vector<double> row(traj.chart->dim());
    for (std::size_t i = 0; i < row.size(); ++i) row[i] = d[k - 1][i] - symlang::evaluate(X[i], b);
    out.push_back(std::move(row));
  }
  return out;
}

inline double max_abs(const std::vector<std::vector<double>>& rows) {
  double m = 0.0;
  for (const auto& r : rows)
    for (double v : r) m = std::max(m, std::fabs(v));
  return m;
}

}  // namespace cocontact
