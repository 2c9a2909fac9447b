#pragma once

// Built-in example systems. configs/<name>.toml holds the same text.

#include <map>
#include <string>
#include <string_view>

namespace cocontact::app {

inline const std::map<std::string, std::string_view>& builtin_configs() {
  static const std::map<std::string, std::string_view> table{
      {"oscillator", R"toml(# Damped harmonic oscillator driven by a smooth pulse at t = 1.
[system]
name = "oscillator"
formalism = "lagrangian"
positions = ["q"]
velocities = ["v"]
lagrangian = "(1/2)*m*v^2 - (k/2)*q^2 + q*f(t) - (gamma/m)*s"
kinetic = "(1/2)*m*v^2"
potential = "(k/2)*q^2"

[parameters]
m = 1.0
k = 1.0
gamma = 0.3

[externals]
f = { type = "smooth_pulse", amplitude = 1.0, center = 1.0, width = 0.25 }

[integrator]
method = "rk4"
dt = 1e-3
t0 = 0.0
t1 = 20.0

[integrator.initial]
q = 0.0
v = 0.0

[output]
panels = [["q", "v"]]
)toml"},
      {"kepler", R"toml(# Central force on a particle of time-dependent mass M(t), with friction.
[system]
name = "kepler"
formalism = "hamiltonian"
positions = ["r", "phi"]
momenta = ["p_r", "p_phi"]
hamiltonian = "p_r^2/(2*M(t)) + p_phi^2/(2*M(t)*r^2) + k/r + gamma*s"
kinetic = "p_r^2/(2*M(t)) + p_phi^2/(2*M(t)*r^2)"
potential = "k/r"
positive = ["r"]

[parameters]
k = 1.0
gamma = 0.1

[externals]
M = "1 + 0.2*sin(t)"

[integrator]
method = "rk4"
dt = 1e-3
t0 = 0.0
t1 = 10.0

[integrator.initial]
r = 1.0
phi = 0.0
p_r = 0.0
p_phi = 1.0

[output]
cartesian_map = { x = "r*cos(phi)", y = "r*sin(phi)" }
panels = [["t", "p_phi"]]
)toml"},
      {"pendulum", R"toml(# Damped pendulum whose length follows l(t); r = l(t) enters through a multiplier.
[system]
name = "pendulum"
formalism = "lagrangian"
positions = ["r", "theta"]
velocities = ["v_r", "v_theta"]
lagrangian = "(1/2)*m*(v_r^2 + r^2*v_theta^2) - m*g*r*(1 - cos(theta)) - gamma*s"
kinetic = "(1/2)*m*(v_r^2 + r^2*v_theta^2)"
potential = "m*g*r*(1 - cos(theta))"
positive = ["r"]

[parameters]
m = 1.0
g = 1.0
gamma = 0.5

[externals]
l = "1 + 0.1*sin(2*pi*t)"

[constraints]
holonomic = ["r - l(t)"]
multipliers = ["lambda"]

[integrator]
method = "rk4"
dt = 1e-3
t0 = 0.0
t1 = 20.0

[integrator.initial]
theta = "pi/4"
v_theta = 0.0

[output]
cartesian_map = { x = "r*sin(theta)", y = "-r*cos(theta)" }
panels = [["theta", "v_theta"], ["theta", "r"]]
)toml"},
      {"canonical", R"toml(# Canonical cocontact structure (dt, ds - p dq) with a damped quadratic Hamiltonian.
[system]
name = "canonical"
formalism = "hamiltonian"
positions = ["q"]
momenta = ["p"]
hamiltonian = "p^2/2 + q^2/2 + gamma*s"

[parameters]
gamma = 0.2

[integrator]
method = "rk4"
dt = 1e-3
t0 = 0.0
t1 = 10.0

[integrator.initial]
q = 1.0
p = 0.0
)toml"},
  };
  return table;
}

}  // namespace cocontact::app
