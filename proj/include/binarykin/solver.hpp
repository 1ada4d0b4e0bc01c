#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "binarykin/collision.hpp"
#include "binarykin/core.hpp"
#include "binarykin/equilibrium.hpp"
#include "binarykin/grid.hpp"
#include "binarykin/linop.hpp"

namespace binarykin {

struct SolverConfig {
  double dt = 0.01;
  double t_end = 1.0;
  int inner_iterations = 2;
  double cfl_limit = 0.9;
  int energy_order = 1;  // N of the monitored energy functional
  bool monitor_entropy = false;
  double blowup_factor = 1e3;
  bool conserve_projection = true;
};

/// Per-step diagnostics.  inst_l2sq / inst_nusq are indexed by the
/// multi-index enumeration of the energy order.
struct MonitorRecord {
  double t = 0;
  std::array<double, 6> conservation{};
  double entropy_production = 0;
  double energy = 0;
  std::vector<double> inst_l2sq;
  std::vector<double> inst_nusq;
  double coercivity_num = 0;
  double coercivity_den = 0;
  double min_F = 0;
};

/// Operators assembled once on the state grids.
struct SolverOperators {
  MassPair masses;
  AngularKernel kernel;
  QuadratureSpec quad;  // quadrature of the nonlinear terms
  InvariantBasis basis;
  AssembledL L;

  SolverOperators(const MassPair& m, const AngularKernel& k, const QuadratureSpec& q_gamma,
                  const QuadratureSpec& q_linear, const VelocityGrid& grid,
                  const AssembleOptions& opts = {})
      : masses(m), kernel(k), quad(q_gamma), basis(m, grid),
        L(assemble_L(m, k, q_linear, grid, opts)) {}
};

namespace detail {

/// Semi-Lagrangian shift of all x-lines along one axis by a per-velocity
/// displacement, cubic Lagrange interpolation.  The interpolation matrix
/// is circulant with unit row sums, so x-sums are preserved exactly.
inline void advect_axis(DistributionPair& f, int axis, double dt) {
  const int nx = f.xgrid.points_per_axis();
  const double hx = f.xgrid.spacing();
  const std::size_t nv = f.vgrid.size();
  const int dims = f.xgrid.dims();

  std::size_t stride = 1;
  for (int d = axis + 1; d < dims; ++d) stride *= nx;

  std::vector<double> line(nx);
  for (int s = 0; s < 2; ++s) {
    std::vector<double>& data = f.species(s);
    for (std::size_t iv = 0; iv < nv; ++iv) {
      const double shift = -f.vgrid.node(iv)[axis] * dt / hx;  // foot = ix + shift
      const double fl = std::floor(shift);
      const int base = static_cast<int>(fl);
      const double t = shift - fl;
      // cubic Lagrange on nodes base-1 .. base+2
      const double wm1 = -t * (t - 1.0) * (t - 2.0) / 6.0;
      const double w0 = (t * t - 1.0) * (t - 2.0) / 2.0;
      const double w1 = -t * (t + 1.0) * (t - 2.0) / 2.0;
      const double w2 = t * (t * t - 1.0) / 6.0;

      for (std::size_t ix = 0; ix < f.xgrid.size(); ++ix) {
        const auto c = f.xgrid.unflatten(ix);
        if (c[axis] != 0) continue;
        for (int p = 0; p < nx; ++p) line[p] = data[(ix + p * stride) * nv + iv];
        for (int p = 0; p < nx; ++p) {
          const int i0 = ((p + base) % nx + nx) % nx;
          const int im = (i0 - 1 + nx) % nx;
          const int i1 = (i0 + 1) % nx;
          const int i2 = (i0 + 2) % nx;
          data[(ix + p * stride) * nv + iv] =
              wm1 * line[im] + w0 * line[i0] + w1 * line[i1] + w2 * line[i2];
        }
      }
    }
  }
}

inline void transport(DistributionPair& f, double dt) {
  for (int axis = 0; axis < f.xgrid.dims(); ++axis) advect_axis(f, axis, dt);
}

}  // namespace detail

/// One Strang step: transport half-step, semi-implicit collision step
/// (loss and nu implicit as a pointwise-diagonal solve, K and gain
/// explicit in the previous sweep iterate), transport half-step.
inline void step(const SolverConfig& config, DistributionPair& state,
                 const SolverOperators& ops) {
  const double vmax = state.vgrid.radius() * std::sqrt(3.0);
  if (config.dt * vmax / state.xgrid.spacing() > config.cfl_limit)
    throw ConfigError("step: dt violates the CFL limit for the transport substep");

  detail::transport(state, 0.5 * config.dt);

  const std::size_t nv = state.vgrid.size();
  const double dt = config.dt;
  for (std::size_t ix = 0; ix < state.xgrid.size(); ++ix) {
    const VPairField g = state.at_x(ix);
    VPairField prev = g;
    VPairField next(nv);
    for (int sweep = 0; sweep < config.inner_iterations; ++sweep) {
      const VPairField kf = ops.L.apply_K_matrix(prev);
      std::array<std::vector<double>, 2> gain, freq;
      for (int alpha = 0; alpha < 2; ++alpha) {
        gain[alpha].assign(nv, 0.0);
        freq[alpha].assign(nv, 0.0);
        for (int beta = 0; beta < 2; ++beta) {
          const GammaTerms terms =
              eval_Gamma_terms(ops.masses, ops.kernel, ops.quad, state.vgrid,
                               prev.species(alpha), prev.species(beta),
                               SpeciesPair{alpha, beta});
          for (std::size_t i = 0; i < nv; ++i) {
            gain[alpha][i] += terms.gain[i];
            freq[alpha][i] += terms.freq[i];
          }
        }
      }
      for (int alpha = 0; alpha < 2; ++alpha) {
        const std::vector<double>& ga = g.species(alpha);
        const std::vector<double>& ka = kf.species(alpha);
        std::vector<double>& na = next.species(alpha);
        na.resize(nv);
        for (std::size_t i = 0; i < nv; ++i) {
          const double nu_i = ops.L.nu[alpha * nv + i];
          na[i] = (ga[i] + dt * (gain[alpha][i] - ka[i])) /
                  (1.0 + dt * (nu_i + freq[alpha][i]));
        }
      }
      prev = next;
    }
    if (config.conserve_projection) {
      VPairField incr(nv);
      for (std::size_t i = 0; i < nv; ++i) {
        incr.a[i] = next.a[i] - g.a[i];
        incr.b[i] = next.b[i] - g.b[i];
      }
      ops.basis.deflate(incr);
      for (std::size_t i = 0; i < nv; ++i) {
        next.a[i] = g.a[i] + incr.a[i];
        next.b[i] = g.b[i] + incr.b[i];
      }
    }
    state.set_x(ix, next);
  }

  detail::transport(state, 0.5 * config.dt);
}

struct SolverResult {
  std::vector<MonitorRecord> records;
  std::unique_ptr<DistributionPair> final_state;
  std::vector<MultiIndex> indices;
  bool blew_up = false;
  std::string diagnosis;
  double sup_norm_ratio = 0;  // sup_t sum inst_l2sq / value at t=0
  double sweep_residual = 0;  // sweep-2 vs sweep-3 difference, reported once
};

namespace detail {

inline MonitorRecord make_record(double t, const DistributionPair& f,
                                 const SolverOperators& ops, const SolverConfig& cfg,
                                 const std::vector<MultiIndex>& indices,
                                 double dissipation_acc_energy) {
  MonitorRecord rec;
  rec.t = t;
  rec.conservation = conservation_functionals(ops.masses, f);

  const WeightSpec ws(ops.L.gamma, 0.0);
  rec.inst_l2sq.reserve(indices.size());
  rec.inst_nusq.reserve(indices.size());
  double inst_energy = 0;
  for (const MultiIndex& mi : indices) {
    const DistributionPair df = finite_diff(f, mi);
    const WeightSpec wl(ops.L.gamma, static_cast<double>(mi.order_v()));
    const double l2 = weighted_norm_l2(wl, df);
    const double nu = weighted_norm_nu(wl, df);
    rec.inst_l2sq.push_back(l2 * l2);
    rec.inst_nusq.push_back(nu * nu);
    inst_energy += 0.5 * l2 * l2;
  }
  rec.energy = inst_energy + dissipation_acc_energy;

  // time-integrated coercivity monitors: x-derivative multi-indices only
  const std::size_t nv = f.vgrid.size();
  const double qx = f.xgrid.cell_weight();
  DistributionPair kf(f.xgrid, f.vgrid);
  for (std::size_t ix = 0; ix < f.xgrid.size(); ++ix)
    kf.set_x(ix, ops.L.apply_K_matrix(f.at_x(ix)));
  double num = 0, den = 0;
  for (int order = 0; order <= cfg.energy_order; ++order) {
    std::vector<MultiIndex> xmis;
    for (const MultiIndex& mi : enumerate_multi_indices(cfg.energy_order, f.xgrid.dims()))
      if (mi.order_v() == 0 && mi.order_x() == order) xmis.push_back(mi);
    for (const MultiIndex& mi : xmis) {
      const DistributionPair df = order == 0 ? f : finite_diff(f, mi);
      const DistributionPair dkf = order == 0 ? kf : finite_diff(kf, mi);
      double n_mi = 0;
      for (std::size_t iv = 0; iv < nv; ++iv) {
        const double qv = f.vgrid.quad_weight(iv);
        const double nu_a = ops.L.nu[iv], nu_b = ops.L.nu[nv + iv];
        double sx = 0;
        for (std::size_t ix = 0; ix < f.xgrid.size(); ++ix) {
          const double fa = df.a[ix * nv + iv], fb = df.b[ix * nv + iv];
          sx += (nu_a * fa + dkf.a[ix * nv + iv]) * fa +
                (nu_b * fb + dkf.b[ix * nv + iv]) * fb;
        }
        n_mi += qv * sx;
      }
      num += qx * n_mi;
      const double nn = weighted_norm_nu(ws, df);
      den += nn * nn;
    }
  }
  rec.coercivity_num = num;
  rec.coercivity_den = den;

  if (cfg.monitor_entropy) {
    double ep = 0;
    for (std::size_t ix = 0; ix < f.xgrid.size(); ++ix) {
      VPairField F = f.at_x(ix);
      for (std::size_t iv = 0; iv < nv; ++iv) {
        const Vec3 v = f.vgrid.node(iv);
        F.a[iv] = maxwellian_species(ops.masses.m_alpha, v) +
                  sqrt_maxwellian_species(ops.masses.m_alpha, v) * F.a[iv];
        F.b[iv] = maxwellian_species(ops.masses.m_beta, v) +
                  sqrt_maxwellian_species(ops.masses.m_beta, v) * F.b[iv];
      }
      ep += qx * entropy_production(ops.masses, ops.kernel, ops.quad, f.vgrid, F);
    }
    rec.entropy_production = ep;
  }

  double mn = 1e300;
  for (std::size_t ix = 0; ix < f.xgrid.size(); ++ix)
    for (std::size_t iv = 0; iv < nv; ++iv) {
      const Vec3 v = f.vgrid.node(iv);
      mn = std::min(mn, maxwellian_species(ops.masses.m_alpha, v) +
                            sqrt_maxwellian_species(ops.masses.m_alpha, v) *
                                f.a[ix * nv + iv]);
      mn = std::min(mn, maxwellian_species(ops.masses.m_beta, v) +
                            sqrt_maxwellian_species(ops.masses.m_beta, v) *
                                f.b[ix * nv + iv]);
    }
  rec.min_F = mn;
  return rec;
}

}  // namespace detail

/// Integrate to t_end with per-step monitors.  Stops early with a
/// diagnosis when the instantaneous norm grows past the blow-up factor or
/// a non-finite value appears.
inline SolverResult run(const SolverConfig& config, const DistributionPair& f_init,
                        const SolverOperators& ops) {
  SolverResult result;
  result.indices = enumerate_multi_indices(config.energy_order, f_init.xgrid.dims());
  auto state = std::make_unique<DistributionPair>(f_init);

  // one-time report: residual between two and three fixed-point sweeps
  {
    DistributionPair probe2 = f_init, probe3 = f_init;
    SolverConfig c2 = config, c3 = config;
    c2.inner_iterations = 2;
    c3.inner_iterations = 3;
    c2.conserve_projection = c3.conserve_projection = false;
    step(c2, probe2, ops);
    step(c3, probe3, ops);
    double diff = 0;
    for (std::size_t i = 0; i < probe2.a.size(); ++i) {
      diff = std::max(diff, std::abs(probe2.a[i] - probe3.a[i]));
      diff = std::max(diff, std::abs(probe2.b[i] - probe3.b[i]));
    }
    result.sweep_residual = diff;
  }

  const int n_steps = static_cast<int>(std::llround(config.t_end / config.dt));
  std::vector<double> dissipation(result.indices.size(), 0.0);
  MonitorRecord rec = detail::make_record(0.0, *state, ops, config, result.indices, 0.0);
  result.records.push_back(rec);
  double initial_inst = 0;
  for (double v : rec.inst_l2sq) initial_inst += v;
  result.sup_norm_ratio = 1.0;

  for (int s = 1; s <= n_steps; ++s) {
    step(config, *state, ops);
    const MonitorRecord& prev = result.records.back();
    double acc_energy = 0;
    MonitorRecord now =
        detail::make_record(s * config.dt, *state, ops, config, result.indices, 0.0);
    for (std::size_t k = 0; k < dissipation.size(); ++k) {
      dissipation[k] += 0.5 * config.dt * (prev.inst_nusq[k] + now.inst_nusq[k]);
      acc_energy += dissipation[k];
    }
    now.energy += acc_energy;

    double inst = 0;
    bool finite = true;
    for (double v : now.inst_l2sq) {
      inst += v;
      finite = finite && std::isfinite(v);
    }
    result.records.push_back(now);
    if (initial_inst > 0)
      result.sup_norm_ratio = std::max(result.sup_norm_ratio, inst / initial_inst);
    if (!finite) {
      result.blew_up = true;
      result.diagnosis = "non-finite norm at t = " + std::to_string(now.t);
      break;
    }
    if (initial_inst > 0 && inst > config.blowup_factor * initial_inst) {
      result.blew_up = true;
      result.diagnosis = "norm growth beyond blow-up threshold at t = " +
                         std::to_string(now.t);
      break;
    }
  }
  result.final_state = std::move(state);
  return result;
}

struct CoercivityIntegral {
  double lhs = 0;
  double rhs = 0;
  double ratio = 0;
  bool degenerate = false;
};

/// Trapezoid integrals of the coercivity monitors over [t1, t1 + span].
inline CoercivityIntegral coercivity_time_integral(const std::vector<MonitorRecord>& records,
                                                   double t1, double span) {
  CoercivityIntegral out;
  std::vector<const MonitorRecord*> window;
  for (const auto& r : records)
    if (r.t >= t1 - 1e-12 && r.t <= t1 + span + 1e-12) window.push_back(&r);
  if (window.size() < 2)
    throw std::invalid_argument("coercivity_time_integral: window contains fewer than two records");
  for (std::size_t i = 0; i + 1 < window.size(); ++i) {
    const double dt = window[i + 1]->t - window[i]->t;
    out.lhs += 0.5 * dt * (window[i]->coercivity_num + window[i + 1]->coercivity_num);
    out.rhs += 0.5 * dt * (window[i]->coercivity_den + window[i + 1]->coercivity_den);
  }
  if (out.rhs <= 1e-300) {
    out.degenerate = true;
    out.ratio = 0;
  } else {
    out.ratio = out.lhs / out.rhs;
  }
  return out;
}

}  // namespace binarykin
