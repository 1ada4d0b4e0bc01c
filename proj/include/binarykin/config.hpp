#pragma once

#include <cstdint>
#include <map>
#include <sstream>
#include <string>

#include "binarykin/collision.hpp"
#include "binarykin/core.hpp"
#include "binarykin/linop.hpp"
#include "binarykin/solver.hpp"

namespace binarykin {

/// Aggregated run configuration.  Every key has a documented default; the
/// empty file is a valid configuration.
struct RunConfig {
  double mass_a = 7.0;
  double mass_b = 8.0;
  double gamma = -1.0;
  std::string kernel_family = "abs_cos";
  double c_b = 1.0;

  double v_radius = 8.0;
  int v_points = 17;
  int x_dims = 1;
  int x_points = 16;

  double eps = 0.25;
  double m_trunc = 6.0;

  int sphere_points = 14;
  int velocity_subgrid = 0;
  std::string quad_mode = "deterministic";
  std::uint64_t seed = 12345;

  double dt = 0.01;
  double t_end = 1.0;
  int inner_iterations = 2;
  double cfl_limit = 0.9;
  int energy_order = 1;
  bool monitor_entropy = false;

  std::string init = "micro_cos";  // zero | chi6_cos | micro_cos
  double init_amplitude = 1e-3;
  std::string out_monitors = "monitors.csv";
  std::string out_final = "final_state.csv";

  MassPair masses() const { return MassPair(mass_a, mass_b); }

  AngularKernel kernel() const {
    return AngularKernel(AngularKernel::parse_family(kernel_family), c_b);
  }

  QuadratureSpec quadrature() const {
    QuadratureSpec q;
    q.sphere_points = sphere_points;
    q.velocity_subgrid = velocity_subgrid;
    q.gamma = gamma;
    q.mode = quad_mode == "monte-carlo" ? QuadMode::MonteCarlo : QuadMode::Deterministic;
    q.seed = seed;
    return q;
  }

  VelocityGrid velocity_grid() const { return VelocityGrid(v_radius, v_points); }
  SpatialGrid spatial_grid() const { return SpatialGrid(x_dims, x_points); }
  KernelSplitConfig split() const { return KernelSplitConfig(eps, m_trunc); }

  SolverConfig solver() const {
    SolverConfig s;
    s.dt = dt;
    s.t_end = t_end;
    s.inner_iterations = inner_iterations;
    s.cfl_limit = cfl_limit;
    s.energy_order = energy_order;
    s.monitor_entropy = monitor_entropy;
    return s;
  }

  void validate() const {
    auto range_error = [](const std::string& key, const std::string& range) {
      throw ConfigError("config key '" + key + "' out of range, expected " + range);
    };
    if (!(gamma > -3.0 && gamma < 0.0)) range_error("gamma", "the open interval (-3, 0)");
    if (!(mass_a > 0)) range_error("mass_a", "> 0");
    if (!(mass_b > 0)) range_error("mass_b", "> 0");
    if (!(c_b > 0)) range_error("cb", "> 0");
    if (v_points < 5 || v_points % 2 == 0) range_error("v_points", "odd and >= 5");
    if (!(v_radius > 0)) range_error("v_radius", "> 0");
    if (x_dims != 1 && x_dims != 3) range_error("x_dims", "1 or 3");
    if (x_points < 2) range_error("x_points", ">= 2");
    if (!(eps > 0)) range_error("eps", "> 0");
    if (!(m_trunc > 0)) range_error("m_trunc", "> 0");
    if (sphere_points < 2) range_error("sphere_points", ">= 2");
    if (velocity_subgrid != 0 && (velocity_subgrid < 3 || velocity_subgrid % 2 == 0))
      range_error("velocity_subgrid", "0 or odd >= 3");
    if (quad_mode != "deterministic" && quad_mode != "monte-carlo")
      range_error("quad_mode", "deterministic | monte-carlo");
    if (!(dt > 0)) range_error("dt", "> 0");
    if (!(t_end > 0)) range_error("t_end", "> 0");
    if (inner_iterations < 1) range_error("inner_iterations", ">= 1");
    if (!(cfl_limit > 0)) range_error("cfl_limit", "> 0");
    if (energy_order < 0 || energy_order > 2) range_error("energy_order", "0, 1 or 2");
    if (init != "zero" && init != "chi6_cos" && init != "micro_cos")
      range_error("init", "zero | chi6_cos | micro_cos");
    if (!(init_amplitude >= 0)) range_error("init_amplitude", ">= 0");
    AngularKernel::parse_family(kernel_family);
  }
};

/// Parse flat key = value text with '#' comments.  Unknown keys are hard
/// errors with the line number.
inline RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;

  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };

  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config parse error at line " + std::to_string(lineno) +
                        ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty() || val.empty())
      throw ConfigError("config parse error at line " + std::to_string(lineno) +
                        ": empty key or value");

    auto as_double = [&](double& slot) {
      std::size_t pos = 0;
      double v;
      try {
        v = std::stod(val, &pos);
      } catch (...) {
        throw ConfigError("config parse error at line " + std::to_string(lineno) +
                          ": '" + val + "' is not a number");
      }
      if (pos != val.size())
        throw ConfigError("config parse error at line " + std::to_string(lineno) +
                          ": trailing characters after number");
      slot = v;
    };
    auto as_int = [&](int& slot) {
      double d;
      as_double(d);
      slot = static_cast<int>(d);
      if (slot != d)
        throw ConfigError("config parse error at line " + std::to_string(lineno) +
                          ": expected an integer for '" + key + "'");
    };
    auto as_bool = [&](bool& slot) {
      if (val == "1" || val == "true") slot = true;
      else if (val == "0" || val == "false") slot = false;
      else
        throw ConfigError("config parse error at line " + std::to_string(lineno) +
                          ": expected 0/1 for '" + key + "'");
    };

    if (key == "mass_a") as_double(cfg.mass_a);
    else if (key == "mass_b") as_double(cfg.mass_b);
    else if (key == "gamma") as_double(cfg.gamma);
    else if (key == "kernel") cfg.kernel_family = val;
    else if (key == "cb") as_double(cfg.c_b);
    else if (key == "v_radius") as_double(cfg.v_radius);
    else if (key == "v_points") as_int(cfg.v_points);
    else if (key == "x_dims") as_int(cfg.x_dims);
    else if (key == "x_points") as_int(cfg.x_points);
    else if (key == "eps") as_double(cfg.eps);
    else if (key == "m_trunc") as_double(cfg.m_trunc);
    else if (key == "sphere_points") as_int(cfg.sphere_points);
    else if (key == "velocity_subgrid") as_int(cfg.velocity_subgrid);
    else if (key == "quad_mode") cfg.quad_mode = val;
    else if (key == "seed") {
      double d;
      as_double(d);
      cfg.seed = static_cast<std::uint64_t>(d);
    } else if (key == "dt") as_double(cfg.dt);
    else if (key == "t_end") as_double(cfg.t_end);
    else if (key == "inner_iterations") as_int(cfg.inner_iterations);
    else if (key == "cfl_limit") as_double(cfg.cfl_limit);
    else if (key == "energy_order") as_int(cfg.energy_order);
    else if (key == "monitor_entropy") as_bool(cfg.monitor_entropy);
    else if (key == "init") cfg.init = val;
    else if (key == "init_amplitude") as_double(cfg.init_amplitude);
    else if (key == "out_monitors") cfg.out_monitors = val;
    else if (key == "out_final") cfg.out_final = val;
    else
      throw ConfigError("config parse error at line " + std::to_string(lineno) +
                        ": unknown key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

/// Initial perturbations used by the simulator.
inline DistributionPair make_initial_state(const RunConfig& cfg, const SpatialGrid& xg,
                                           const InvariantBasis& basis) {
  const VelocityGrid& vg = basis.grid();
  DistributionPair f(xg, vg);
  if (cfg.init == "zero" || cfg.init_amplitude == 0) return f;

  VPairField shape(vg.size());
  if (cfg.init == "chi6_cos") {
    shape = basis.chi(5);
  } else {
    // microscopic bump: smooth fields deflated against all six invariants
    for (std::size_t i = 0; i < vg.size(); ++i) {
      const Vec3 v = vg.node(i);
      const double g = std::exp(-0.5 * v.norm2());
      shape.a[i] = g * v.x * v.y;
      shape.b[i] = g * (v.x * v.x - v.y * v.y);
    }
    basis.deflate(shape);
    double nrm = std::sqrt(basis.inner(shape, shape));
    if (nrm > 0)
      for (std::size_t i = 0; i < vg.size(); ++i) {
        shape.a[i] /= nrm;
        shape.b[i] /= nrm;
      }
  }

  const std::size_t nv = vg.size();
  for (std::size_t ix = 0; ix < xg.size(); ++ix) {
    const auto c = xg.unflatten(ix);
    const double x1 = xg.coord(c[0]);
    const double mod = cfg.init == "chi6_cos" ? std::cos(x1) : 1.0 + 0.5 * std::cos(x1);
    for (std::size_t iv = 0; iv < nv; ++iv) {
      f.a[ix * nv + iv] = cfg.init_amplitude * mod * shape.a[iv];
      f.b[ix * nv + iv] = cfg.init_amplitude * mod * shape.b[iv];
    }
  }
  return f;
}

}  // namespace binarykin
