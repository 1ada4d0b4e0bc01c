#pragma once

#include <Eigen/Dense>
#include <array>
#include <atomic>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "binarykin/collision.hpp"
#include "binarykin/core.hpp"
#include "binarykin/equilibrium.hpp"
#include "binarykin/grid.hpp"
#include "binarykin/kinematics.hpp"

namespace binarykin {

/// Truncation family of the K = K_s + K_c split: chi_eps cuts off small
/// relative velocities, m_trunc splits |v| + |v_star| above/below m.
struct KernelSplitConfig {
  double epsilon = 0.25;
  double m_trunc = 6.0;

  KernelSplitConfig() = default;
  KernelSplitConfig(double eps, double m) : epsilon(eps), m_trunc(m) {
    if (!(eps > 0)) throw ConfigError("KernelSplitConfig: epsilon must be positive");
    if (!(m > 0)) throw ConfigError("KernelSplitConfig: m_trunc must be positive");
  }

  /// C^2 ramp: 0 below eps, 1 above 2 eps, quintic smoothstep between.
  double chi(double r) const {
    if (r <= epsilon) return 0.0;
    if (r >= 2.0 * epsilon) return 1.0;
    const double s = (r - epsilon) / epsilon;
    return s * s * s * (10.0 + s * (-15.0 + 6.0 * s));
  }
};

enum class KPart { Full, Small, Compact };

namespace detail {

// Weight of a quadrature contribution in the requested part of
// K = K_s + K_c.  The small part collects both 1-chi branches and the
// chi branch above the m-truncation; the compact part is the remainder.
inline double part_weight(KPart part, const KernelSplitConfig* split, double r,
                          double speed_sum) {
  if (part == KPart::Full || split == nullptr) return 1.0;
  const double chi = split->chi(r);
  const bool above = speed_sum > split->m_trunc;
  if (part == KPart::Small) return (1.0 - chi) + (above ? chi : 0.0);
  return above ? 0.0 : chi;
}

}  // namespace detail

/// Collision frequency nu^alpha(v) on an explicit integration lattice.
inline double eval_nu(const MassPair& masses, const AngularKernel& kernel,
                      const QuadratureSpec& quad, int species, const Vec3& v,
                      const VelocityGrid& lattice) {
  quad.validate();
  const SphereQuadrature sph = make_sphere_quadrature(quad);
  const double r_excl = 0.5 * lattice.spacing();
  const double corr =
      detail::singular_ball_integral(quad.gamma, r_excl) * kernel.sphere_integral();
  double acc = 0;
  for (int beta = 0; beta < 2; ++beta) {
    const double mb = beta == 0 ? masses.m_alpha : masses.m_beta;
    double sum = 0;
    for (std::size_t j = 0; j < lattice.size(); ++j) {
      const Vec3 u = lattice.node(j) - v;
      const double r2 = u.norm2();
      if (r2 <= r_excl * r_excl) continue;
      const double r = std::sqrt(r2);
      double sum_b = 0;
      for (std::size_t k = 0; k < sph.nodes.size(); ++k)
        sum_b += sph.weights[k] * kernel.b(u.dot(sph.nodes[k]) / r);
      sum += lattice.quad_weight(j) * std::pow(r, quad.gamma) * sum_b *
             maxwellian_species(mb, lattice.node(j));
    }
    acc += sum + corr * maxwellian_species(mb, v);
  }
  (void)species;  // nu is the same field for both rows; species kept for the contract
  return acc;
}

inline double eval_nu(const MassPair& masses, const AngularKernel& kernel,
                      const QuadratureSpec& quad, int species, const Vec3& v) {
  const int n = quad.velocity_subgrid > 0 ? quad.velocity_subgrid : 25;
  return eval_nu(masses, kernel, quad, species, v, VelocityGrid(8.0, n));
}

/// Semi-analytic reference for nu via the radial reduction of the
/// Maxwellian integral; used as the tolerance estimate next to the
/// lattice value.
inline double eval_nu_reference(const MassPair& masses, const AngularKernel& kernel,
                                double gamma, double speed) {
  auto radial = [&](double m) {
    // J = int |u|^gamma mu(v+u) du for |v| = speed.
    const double pref = 2.0 * M_PI * std::pow(m / (2.0 * M_PI), 1.5);
    const double V = speed;
    auto integrand = [&](double r) -> double {
      if (r <= 0) return 0.0;
      double angular;
      if (V < 1e-12) {
        angular = 2.0 * std::exp(-0.5 * m * (V * V + r * r));
      } else {
        const double x = m * V * r;
        angular = std::exp(-0.5 * m * (V - r) * (V - r)) * (-std::expm1(-2.0 * x)) / x;
      }
      return std::pow(r, 2.0 + gamma) * angular;
    };
    // substitution r = t^kappa flattens the r -> 0 singularity
    const double kappa = 2.0 / (3.0 + gamma);
    auto near0 = [&](double t) {
      const double r = std::pow(t, kappa);
      return integrand(r) * kappa * std::pow(t, kappa - 1.0);
    };
    const double rmax = V + std::sqrt(140.0 / m) + 1.0;
    double acc = 0;
    // panel [0,1] in t for r in [0,1]
    const int n0 = 2000;
    for (int i = 0; i < n0; ++i) {
      const double t0 = static_cast<double>(i) / n0, t1 = static_cast<double>(i + 1) / n0;
      acc += (t1 - t0) / 6.0 * (near0(t0) + 4.0 * near0(0.5 * (t0 + t1)) + near0(t1));
    }
    const int n1 = 4000;
    for (int i = 0; i < n1; ++i) {
      const double r0 = 1.0 + (rmax - 1.0) * i / n1, r1 = 1.0 + (rmax - 1.0) * (i + 1) / n1;
      acc += (r1 - r0) / 6.0 *
             (integrand(r0) + 4.0 * integrand(0.5 * (r0 + r1)) + integrand(r1));
    }
    return pref * acc;
  };
  return kernel.sphere_integral() *
         (radial(masses.m_alpha) + radial(masses.m_beta));
}

/// nu sampled at every node of a grid (same field for both species rows).
inline std::vector<double> nu_field(const MassPair& masses, const AngularKernel& kernel,
                                    const QuadratureSpec& quad, const VelocityGrid& grid) {
  std::vector<double> out(grid.size());
  parallel_for(grid.size(), [&](std::size_t i) {
    out[i] = eval_nu(masses, kernel, quad, 0, grid.node(i), grid);
  });
  return out;
}

namespace detail {

/// Shared per-contribution geometry of the K quadrature.  K2 is always in
/// the energy-identity form: no division by sqrt(mu^alpha(v)).
struct KSweepContext {
  const VelocityGrid& grid;
  MassPair masses;
  const AngularKernel& kernel;
  SphereQuadrature sph;
  double gamma;
  double r_excl;
  double corr_sphere;  // ball patch x analytic sphere integral of b
  std::array<std::vector<double>, 2> sqrt_mu;  // per species, nodal
  std::array<std::vector<double>, 2> mu;

  KSweepContext(const VelocityGrid& g, const MassPair& m, const AngularKernel& k,
                const QuadratureSpec& quad)
      : grid(g), masses(m), kernel(k), sph(make_sphere_quadrature(quad)), gamma(quad.gamma) {
    quad.validate();
    r_excl = 0.5 * g.spacing();
    corr_sphere = singular_ball_integral(gamma, r_excl) * k.sphere_integral();
    for (int s = 0; s < 2; ++s) {
      sqrt_mu[s].resize(g.size());
      mu[s].resize(g.size());
      const double ms = s == 0 ? m.m_alpha : m.m_beta;
      for (std::size_t j = 0; j < g.size(); ++j) {
        sqrt_mu[s][j] = sqrt_maxwellian_species(ms, g.node(j));
        mu[s][j] = maxwellian_species(ms, g.node(j));
      }
    }
  }

  double mass_of(int s) const { return s == 0 ? masses.m_alpha : masses.m_beta; }
};

}  // namespace detail

/// K f = K1 f + K2 f applied to one velocity slice, optionally restricted
/// to the small or compact part of the (eps, m) split.  K2 is evaluated in
/// the energy-identity form with Maxwellian-ratio interpolation:
///   K2 f (v) = - sum_b int w sqrt(mu^a(v)) mu^b(v_*) [h_b(v_*') + h_a(v')]
/// with h = f / sqrt(mu), so all Gaussian factors are nodal.
inline VPairField apply_K_part(const MassPair& masses, const AngularKernel& kernel,
                               const QuadratureSpec& quad, const VelocityGrid& grid,
                               const VPairField& f, KPart part,
                               const KernelSplitConfig* split) {
  if (f.size() != grid.size())
    throw std::invalid_argument("apply_K: field size does not match grid");
  detail::KSweepContext ctx(grid, masses, kernel, quad);
  VPairField out(grid.size());
  const std::array<std::vector<double>, 2> h = {
      detail::sqrt_mu_ratio(grid, f.a, masses.m_alpha),
      detail::sqrt_mu_ratio(grid, f.b, masses.m_beta)};

  parallel_for(grid.size(), [&](std::size_t i) {
    const Vec3 vi = ctx.grid.node(i);
    const double speed_i = vi.norm();
    for (int alpha = 0; alpha < 2; ++alpha) {
      double acc = 0;
      for (int beta = 0; beta < 2; ++beta) {
        const double ma = ctx.mass_of(alpha), mb = ctx.mass_of(beta);
        const double ca = 2.0 * mb / (ma + mb), cb = 2.0 * ma / (ma + mb);
        const double smu_a_i = ctx.sqrt_mu[alpha][i];
        for (std::size_t j = 0; j < ctx.grid.size(); ++j) {
          const Vec3 vj = ctx.grid.node(j);
          const Vec3 u = vj - vi;
          const double r2 = u.norm2();
          if (r2 <= ctx.r_excl * ctx.r_excl) {
            const double pw = detail::part_weight(part, split, 0.0, speed_i + vj.norm());
            if (pw != 0.0) {
              const double patch = pw * ctx.corr_sphere;
              acc += patch * smu_a_i * ctx.sqrt_mu[beta][i] * f.species(beta)[i];
              acc -= patch * (smu_a_i * ctx.sqrt_mu[beta][i] * f.species(beta)[i] +
                              ctx.mu[beta][i] * f.species(alpha)[i]);
            }
            continue;
          }
          const double r = std::sqrt(r2);
          const double pw = detail::part_weight(part, split, r, speed_i + vj.norm());
          if (pw == 0.0) continue;
          const double base = pw * ctx.grid.quad_weight(j) * std::pow(r, ctx.gamma);
          const double smu_b_j = ctx.sqrt_mu[beta][j];
          const double mu_b_j = ctx.mu[beta][j];
          double sum_b = 0, gain = 0;
          for (std::size_t k = 0; k < ctx.sph.nodes.size(); ++k) {
            const Vec3& om = ctx.sph.nodes[k];
            const double d = u.dot(om);
            const double bk = ctx.kernel.b(d / r);
            if (bk == 0) continue;
            const double wk = ctx.sph.weights[k] * bk;
            sum_b += wk;
            const Vec3 vp = vi + ca * d * om;
            const Vec3 vsp = vj - cb * d * om;
            gain += wk * (ctx.grid.interpolate(h[beta].data(), vsp) +
                          ctx.grid.interpolate(h[alpha].data(), vp));
          }
          acc += base * (sum_b * smu_a_i * smu_b_j * f.species(beta)[j] -
                         gain * smu_a_i * mu_b_j);
        }
      }
      out.species(alpha)[i] = acc;
    }
  });
  return out;
}

inline VPairField apply_K(const MassPair& masses, const AngularKernel& kernel,
                          const QuadratureSpec& quad, const VelocityGrid& grid,
                          const VPairField& f) {
  return apply_K_part(masses, kernel, quad, grid, f, KPart::Full, nullptr);
}

struct KsKcSplit {
  VPairField Ks_f;
  VPairField Kc_f;
  double ks_ratio;  // |<Ks f, f>| / |f|_nu^2 for the given f
};

/// Evaluate the eight truncated pieces regrouped as K_s and K_c.  The
/// partition identity Ks f + Kc f = K f holds to rounding because every
/// contribution is weighted by complementary factors of the same chi and
/// indicator values.
inline KsKcSplit split_Ks_Kc(const KernelSplitConfig& config, const MassPair& masses,
                             const AngularKernel& kernel, const QuadratureSpec& quad,
                             const VelocityGrid& grid, const VPairField& f) {
  if (!(config.epsilon < 1.0))
    throw ConfigError("split_Ks_Kc: epsilon must be < 1");
  if (!(config.m_trunc > 1.0))
    throw ConfigError("split_Ks_Kc: m_trunc must be > 1");
  KsKcSplit out;
  out.Ks_f = apply_K_part(masses, kernel, quad, grid, f, KPart::Small, &config);
  out.Kc_f = apply_K_part(masses, kernel, quad, grid, f, KPart::Compact, &config);
  double num = 0, den = 0;
  const WeightSpec ws(quad.gamma, 0.0);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double q = grid.quad_weight(i);
    num += q * (out.Ks_f.a[i] * f.a[i] + out.Ks_f.b[i] * f.b[i]);
    const double w = ws.w(grid.node(i));
    den += q * w * (f.a[i] * f.a[i] + f.b[i] * f.b[i]);
  }
  out.ks_ratio = den > 0 ? std::abs(num) / den : 0.0;
  return out;
}

/// Dense symmetric realization of L = nu + K on a velocity grid.
///
/// L_form is the quadrature-weighted bilinear form of the whole operator
/// assembled in Dirichlet (weak) form,
///   <L f, f> = 1/4 sum_{ab} int w mu^a mu^b_* [h^a + h^b_* - h^a' - h^b_*']^2,
/// which is symmetric positive semidefinite by construction with the
/// collision invariants in its kernel.  nu is the strong-form collision
/// frequency used as the diagonal of the implicit splitting; K as an
/// operator is recovered as Q^{-1} L_form - nu.
struct AssembledL {
  VelocityGrid grid;
  MassPair masses;
  double gamma;
  Eigen::VectorXd nu;          // 2 Nv, species-major
  Eigen::MatrixXd L_form;      // symmetric PSD form of nu + K
  Eigen::VectorXd q;           // Nv quadrature weights
  double asymmetry = 0;        // strong-form operator asymmetry diagnostic

  AssembledL(const VelocityGrid& g, const MassPair& m, double gam)
      : grid(g), masses(m), gamma(gam) {}

  std::size_t dim() const { return 2 * grid.size(); }

  Eigen::VectorXd pack(const VPairField& f) const {
    Eigen::VectorXd x(dim());
    const std::size_t nv = grid.size();
    for (std::size_t i = 0; i < nv; ++i) {
      x[i] = f.a[i];
      x[nv + i] = f.b[i];
    }
    return x;
  }

  VPairField unpack(const Eigen::VectorXd& x) const {
    const std::size_t nv = grid.size();
    VPairField f(nv);
    for (std::size_t i = 0; i < nv; ++i) {
      f.a[i] = x[i];
      f.b[i] = x[nv + i];
    }
    return f;
  }

  /// L f = Q^{-1} (L_form f).
  VPairField apply(const VPairField& f) const {
    Eigen::VectorXd y = L_form * pack(f);
    const std::size_t nv = grid.size();
    for (std::size_t i = 0; i < nv; ++i) {
      y[i] /= q[i];
      y[nv + i] /= q[i];
    }
    return unpack(y);
  }

  /// K f = L f - nu f.
  VPairField apply_K_matrix(const VPairField& f) const {
    VPairField out = apply(f);
    const std::size_t nv = grid.size();
    for (std::size_t i = 0; i < nv; ++i) {
      out.a[i] -= nu[i] * f.a[i];
      out.b[i] -= nu[nv + i] * f.b[i];
    }
    return out;
  }

  /// <L f, g> in the grid L^2 product.
  double form(const VPairField& f, const VPairField& g) const {
    return pack(g).dot(L_form * pack(f));
  }
};

struct AssembleOptions {
  double budget_bytes = 5e9;
  KPart part = KPart::Full;
  const KernelSplitConfig* split = nullptr;
  bool with_asymmetry = true;  // also assemble the strong form for the diagnostic
};

namespace detail {

/// Raw (unsymmetrized) q-weighted form matrix of the selected K part,
/// plus the nu diagonal, assembled in one sweep.
struct RawKForm {
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> B;
  Eigen::VectorXd nu;
};

inline RawKForm assemble_raw(const MassPair& masses, const AngularKernel& kernel,
                             const QuadratureSpec& quad, const VelocityGrid& grid,
                             const AssembleOptions& opts) {
  const std::size_t nv = grid.size();
  const std::size_t n2 = 2 * nv;
  const double bytes = static_cast<double>(n2) * n2 * sizeof(double);
  if (bytes > opts.budget_bytes)
    throw SizingError("assemble_L: dense matrix would need " +
                      std::to_string(bytes / 1e9) + " GB, budget is " +
                      std::to_string(opts.budget_bytes / 1e9) + " GB");

  detail::KSweepContext ctx(grid, masses, kernel, quad);
  RawKForm out;
  out.B.setZero(n2, n2);
  out.nu.setZero(n2);

  // reciprocal sqrt-mu at the stencil nodes realizes the ratio
  // interpolation h = f / sqrt(mu) in matrix form
  std::array<std::vector<double>, 2> inv_smu;
  for (int s = 0; s < 2; ++s) {
    inv_smu[s].resize(nv);
    for (std::size_t j = 0; j < nv; ++j)
      inv_smu[s][j] = 1.0 / std::max(ctx.sqrt_mu[s][j], detail::kSqrtMuFloor);
  }

  parallel_for(nv, [&](std::size_t i) {
    const Vec3 vi = ctx.grid.node(i);
    const double speed_i = vi.norm();
    const double qi = ctx.grid.quad_weight(i);
    std::size_t sidx[8];
    double swts[8];
    for (int alpha = 0; alpha < 2; ++alpha) {
      double* row = out.B.data() + (alpha * nv + i) * n2;
      double nu_acc = 0;
      for (int beta = 0; beta < 2; ++beta) {
        const double ma = ctx.mass_of(alpha), mb = ctx.mass_of(beta);
        const double ca = 2.0 * mb / (ma + mb), cb = 2.0 * ma / (ma + mb);
        const double smu_a_i = ctx.sqrt_mu[alpha][i];
        const std::size_t col_a = static_cast<std::size_t>(alpha) * nv;
        const std::size_t col_b = static_cast<std::size_t>(beta) * nv;
        for (std::size_t j = 0; j < nv; ++j) {
          const Vec3 vj = ctx.grid.node(j);
          const Vec3 u = vj - vi;
          const double r2 = u.norm2();
          if (r2 <= ctx.r_excl * ctx.r_excl) {
            const double pw =
                detail::part_weight(opts.part, opts.split, 0.0, speed_i + vj.norm());
            nu_acc += ctx.corr_sphere * ctx.mu[beta][i];
            if (pw != 0.0) {
              // K1 and the first K2 patch term cancel; the net patch is the
              // f^alpha(v) term of K2.
              row[col_a + i] -= qi * pw * ctx.corr_sphere * ctx.mu[beta][i];
            }
            continue;
          }
          const double r = std::sqrt(r2);
          const double pw =
              detail::part_weight(opts.part, opts.split, r, speed_i + vj.norm());
          const double base0 = ctx.grid.quad_weight(j) * std::pow(r, ctx.gamma);
          const double smu_b_j = ctx.sqrt_mu[beta][j];
          const double gain_w = smu_a_i * ctx.mu[beta][j];
          double sum_b = 0;
          if (pw != 0.0) {
            const double base = qi * pw * base0;
            for (std::size_t k = 0; k < ctx.sph.nodes.size(); ++k) {
              const Vec3& om = ctx.sph.nodes[k];
              const double d = u.dot(om);
              const double bk = ctx.kernel.b(d / r);
              if (bk == 0) continue;
              const double wk = ctx.sph.weights[k] * bk;
              sum_b += wk;
              const Vec3 vp = vi + ca * d * om;
              const Vec3 vsp = vj - cb * d * om;
              const double t = base * wk * gain_w;
              int ns = ctx.grid.stencil(vsp, sidx, swts);
              for (int s = 0; s < ns; ++s)
                row[col_b + sidx[s]] -= t * swts[s] * inv_smu[beta][sidx[s]];
              ns = ctx.grid.stencil(vp, sidx, swts);
              for (int s = 0; s < ns; ++s)
                row[col_a + sidx[s]] -= t * swts[s] * inv_smu[alpha][sidx[s]];
            }
            row[col_b + j] += base * sum_b * smu_a_i * smu_b_j;
          } else if (opts.part == KPart::Full) {
            for (std::size_t k = 0; k < ctx.sph.nodes.size(); ++k)
              sum_b += ctx.sph.weights[k] * ctx.kernel.b(u.dot(ctx.sph.nodes[k]) / r);
          }
          nu_acc += base0 * sum_b * ctx.mu[beta][j];
        }
      }
      out.nu[alpha * nv + i] = nu_acc;
    }
  });
  return out;
}

}  // namespace detail

namespace detail {

/// Dirichlet-form assembly of the full L.  Each velocity pair and sphere
/// node contributes a rank-one outer product of the nodal functional
/// Phi(f) = h_a(v_i) + h_b(v_j) - hhat_a(v') - hhat_b(v_star'), so the
/// form is PSD with the discrete invariants in its kernel (exactly for
/// the linear ones, to O(h^2) for the energy).
inline Eigen::MatrixXd assemble_dirichlet(const MassPair& masses,
                                          const AngularKernel& kernel,
                                          const QuadratureSpec& quad,
                                          const VelocityGrid& grid,
                                          double budget_bytes) {
  const std::size_t nv = grid.size();
  const std::size_t n2 = 2 * nv;
  KSweepContext ctx(grid, masses, kernel, quad);

  std::array<std::vector<double>, 2> inv_smu;
  for (int s = 0; s < 2; ++s) {
    inv_smu[s].resize(nv);
    for (std::size_t j = 0; j < nv; ++j)
      inv_smu[s][j] = 1.0 / std::max(ctx.sqrt_mu[s][j], kSqrtMuFloor);
  }

  const double bytes_each = static_cast<double>(n2) * n2 * sizeof(double);
  unsigned workers = worker_count();
  while (workers > 1 && bytes_each * (workers + 1) > budget_bytes) --workers;

  std::vector<Eigen::MatrixXd> partial(workers);
  std::vector<std::thread> pool;
  const std::size_t chunk = (nv + workers - 1) / workers;

  auto work = [&](unsigned w) {
    Eigen::MatrixXd& B = partial[w];
    B.setZero(n2, n2);
    std::size_t cols[20];
    double coef[20];
    std::size_t sidx[8];
    double swts[8];
    const std::size_t lo = w * chunk, hi = std::min(nv, lo + chunk);
    for (std::size_t i = lo; i < hi; ++i) {
      const Vec3 vi = ctx.grid.node(i);
      const double qi = ctx.grid.quad_weight(i);
      for (int alpha = 0; alpha < 2; ++alpha)
        for (int beta = 0; beta < 2; ++beta) {
          const double ma = ctx.mass_of(alpha), mb = ctx.mass_of(beta);
          const double ca = 2.0 * mb / (ma + mb), cb = 2.0 * ma / (ma + mb);
          const std::size_t col_a = static_cast<std::size_t>(alpha) * nv;
          const std::size_t col_b = static_cast<std::size_t>(beta) * nv;
          for (std::size_t j = 0; j < nv; ++j) {
            const Vec3 vj = ctx.grid.node(j);
            const Vec3 u = vj - vi;
            const double r2 = u.norm2();
            if (r2 <= ctx.r_excl * ctx.r_excl) continue;  // Phi = O(u) there
            const double r = std::sqrt(r2);
            const double w0 = 0.25 * qi * ctx.grid.quad_weight(j) *
                              std::pow(r, ctx.gamma) * ctx.mu[alpha][i] * ctx.mu[beta][j];
            if (w0 == 0.0) continue;
            for (std::size_t k = 0; k < ctx.sph.nodes.size(); ++k) {
              const Vec3& om = ctx.sph.nodes[k];
              const double d = u.dot(om);
              const double bk = ctx.kernel.b(d / r);
              if (bk == 0) continue;
              const double W = w0 * ctx.sph.weights[k] * bk;
              int m = 0;
              cols[m] = col_a + i;
              coef[m++] = inv_smu[alpha][i];
              cols[m] = col_b + j;
              coef[m++] = inv_smu[beta][j];
              const Vec3 vp = vi + ca * d * om;
              const Vec3 vsp = vj - cb * d * om;
              int ns = ctx.grid.stencil(vp, sidx, swts);
              for (int s = 0; s < ns; ++s) {
                cols[m] = col_a + sidx[s];
                coef[m++] = -swts[s] * inv_smu[alpha][sidx[s]];
              }
              ns = ctx.grid.stencil(vsp, sidx, swts);
              for (int s = 0; s < ns; ++s) {
                cols[m] = col_b + sidx[s];
                coef[m++] = -swts[s] * inv_smu[beta][sidx[s]];
              }
              // merge duplicate columns so the outer product stays small
              int mm = 0;
              for (int a = 0; a < m; ++a) {
                bool merged = false;
                for (int b = 0; b < mm; ++b)
                  if (cols[b] == cols[a]) {
                    coef[b] += coef[a];
                    merged = true;
                    break;
                  }
                if (!merged) {
                  cols[mm] = cols[a];
                  coef[mm] = coef[a];
                  ++mm;
                }
              }
              // scatter the upper triangle of the rank-one update
              for (int a = 0; a < mm; ++a) {
                const double wa = W * coef[a];
                double* bcol = B.data() + cols[a] * n2;  // column-major
                for (int b = 0; b < mm; ++b)
                  if (cols[b] <= cols[a]) bcol[cols[b]] += wa * coef[b];
              }
            }
          }
        }
    }
  };

  if (workers <= 1) {
    work(0);
  } else {
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (unsigned w = 1; w < workers; ++w) partial[0] += partial[w];
  // mirror the accumulated upper triangle
  Eigen::MatrixXd B = std::move(partial[0]);
  for (std::size_t c = 0; c < n2; ++c)
    for (std::size_t r = c + 1; r < n2; ++r) B(r, c) = B(c, r);
  return B;
}

}  // namespace detail

/// Assemble L = nu + K as a dense symmetric PSD form (weak assembly).
/// The strong-form operator matrix is additionally assembled for the
/// asymmetry diagnostic when requested.
inline AssembledL assemble_L(const MassPair& masses, const AngularKernel& kernel,
                             const QuadratureSpec& quad, const VelocityGrid& grid,
                             const AssembleOptions& opts = {}) {
  {
    const double bytes =
        4.0 * static_cast<double>(grid.size()) * grid.size() * sizeof(double) * 2.0;
    if (bytes > opts.budget_bytes)
      throw SizingError("assemble_L: dense matrix would need " +
                        std::to_string(bytes / 1e9) + " GB, budget is " +
                        std::to_string(opts.budget_bytes / 1e9) + " GB");
  }
  AssembledL out(grid, masses, quad.gamma);
  const std::size_t nv = grid.size();
  out.q.resize(nv);
  for (std::size_t i = 0; i < nv; ++i) out.q[i] = grid.quad_weight(i);

  out.L_form = detail::assemble_dirichlet(masses, kernel, quad, grid, opts.budget_bytes);

  if (opts.with_asymmetry) {
    detail::RawKForm raw = detail::assemble_raw(masses, kernel, quad, grid, opts);
    out.nu = raw.nu;
    double diff2 = 0, norm2 = 0;
    const std::size_t n2 = 2 * nv;
    for (std::size_t r = 0; r < n2; ++r)
      for (std::size_t c = r + 1; c < n2; ++c) {
        const double brc = raw.B(r, c), bcr = raw.B(c, r);
        diff2 += (brc - bcr) * (brc - bcr);
        norm2 += brc * brc + bcr * bcr;
      }
    out.asymmetry = norm2 > 0 ? std::sqrt(2.0 * diff2 / norm2) : 0.0;
  } else {
    // strong-form frequency only (cheap single sweep)
    out.nu.resize(2 * nv);
    const std::vector<double> nu1 = nu_field(masses, kernel, quad, grid);
    for (std::size_t i = 0; i < nv; ++i) {
      out.nu[i] = nu1[i];
      out.nu[nv + i] = nu1[i];
    }
    out.asymmetry = -1.0;  // not measured
  }
  return out;
}

/// nu-weighted residuals of the six kernel identities L chi_j = 0.
inline std::array<double, 6> kernel_residuals(const AssembledL& L,
                                              const InvariantBasis& basis) {
  std::array<double, 6> out{};
  const WeightSpec ws(L.gamma, 0.0);
  for (int j = 0; j < 6; ++j)
    out[j] = norm_nu_v(ws, L.grid, L.apply(basis.chi(j)));
  return out;
}

/// Largest singular value of the nu-normalized form: the measured
/// operator ratio sup |<K f1, f2>| / (|f1|_nu |f2|_nu).
inline double spectral_ratio(const Eigen::MatrixXd& B_form, const Eigen::VectorXd& wd,
                             std::uint64_t seed = 7) {
  const Eigen::VectorXd inv_sqrt = wd.cwiseSqrt().cwiseInverse();
  const std::size_t n = B_form.rows();
  Rng rng(seed);
  Eigen::VectorXd x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = rng.normal();
  x.normalize();
  double sigma = 0;
  for (int it = 0; it < 60; ++it) {
    Eigen::VectorXd y = inv_sqrt.asDiagonal() * (B_form * (inv_sqrt.asDiagonal() * x));
    y = inv_sqrt.asDiagonal() * (B_form.transpose() * (inv_sqrt.asDiagonal() * y));
    const double nrm = y.norm();
    if (nrm == 0) return 0;
    y /= nrm;
    const double s = std::sqrt(nrm);
    if (std::abs(s - sigma) < 1e-9 * s && it > 5) return s;
    sigma = s;
    x = y;
  }
  return sigma;
}

struct CoercivityResult {
  double delta_hat = 0;
  int iterations = 0;
  double eig_residual = 0;
  double nu_orth_max = 0;  // max |<argmin, chi_j>_nu|
  VPairField minimizer;
};

/// Deflated pencil (L, W) with W = diag(q w): the kernel span is removed
/// W-orthogonally, so the minimizing direction is nu-orthogonal to the
/// invariants by construction.
class CoercivitySolver {
 public:
  CoercivitySolver(const AssembledL& L, const InvariantBasis& basis) : L_(L) {
    if (!basis.grid().same_as(L.grid))
      throw std::invalid_argument("CoercivitySolver: basis grid does not match operator");
    const std::size_t nv = L.grid.size();
    const std::size_t n2 = 2 * nv;
    wd_.resize(n2);
    const WeightSpec ws(L.gamma, 0.0);
    for (std::size_t i = 0; i < nv; ++i) {
      const double w = ws.w(L.grid.node(i));
      wd_[i] = L.q[i] * w;
      wd_[nv + i] = L.q[i] * w;
    }
    X_.resize(n2, 6);
    for (int j = 0; j < 6; ++j) X_.col(j) = L.pack(basis.chi(j));

    Lhat_ = L.L_form;
    // W-orthogonal kernel deflation: Lhat = P^T L P, P = I - X Gw^{-1} X^T W
    gw_ = X_.transpose() * wd_.asDiagonal() * X_;
    gw_llt_.compute(gw_);
    const Eigen::MatrixXd WX = wd_.asDiagonal() * X_;
    const Eigen::MatrixXd LX = Lhat_ * X_;
    const Eigen::MatrixXd S = gw_llt_.solve(LX.transpose());            // 6 x n2
    const Eigen::MatrixXd XtLX = X_.transpose() * LX;                   // 6 x 6
    const Eigen::MatrixXd T = gw_llt_.solve(gw_llt_.solve(XtLX).transpose());  // 6 x 6
    Lhat_.noalias() -= WX * S;
    Lhat_.noalias() -= S.transpose() * WX.transpose();
    Lhat_.noalias() += WX * T * WX.transpose();
  }

  /// Rayleigh quotient <L f, f> / |f|_nu^2 of the kernel-deflated form.
  double rayleigh(const VPairField& f) const {
    const Eigen::VectorXd x = L_.pack(f);
    const double den = x.dot(wd_.cwiseProduct(x));
    return den > 0 ? x.dot(Lhat_ * x) / den : 0.0;
  }

  CoercivityResult smallest(std::uint64_t seed = 1234, int block = 6, int max_iter = 200,
                            double tol = 1e-8) const {
    const std::size_t n2 = Lhat_.rows();
    double tau = 0;
    for (std::size_t i = 0; i < n2; ++i)
      tau = std::max(tau, std::abs(Lhat_(i, i)) / wd_[i]);
    tau *= 1e-6;

    Eigen::MatrixXd M = Lhat_ + (tau * wd_).asDiagonal().toDenseMatrix();
    Eigen::LLT<Eigen::MatrixXd> llt(M);
    for (int attempt = 0; attempt < 4 && llt.info() != Eigen::Success; ++attempt) {
      tau *= 100.0;
      M = Lhat_ + (tau * wd_).asDiagonal().toDenseMatrix();
      llt.compute(M);
    }
    if (llt.info() != Eigen::Success)
      throw IterationError("estimate_coercivity: shifted operator not SPD");

    Rng rng(seed);
    Eigen::MatrixXd V(n2, block);
    for (std::size_t i = 0; i < n2; ++i)
      for (int c = 0; c < block; ++c) V(i, c) = rng.normal();

    auto project_out_kernel = [&](Eigen::MatrixXd& Z) {
      const Eigen::MatrixXd C = gw_llt_.solve(X_.transpose() * (wd_.asDiagonal() * Z));
      Z.noalias() -= X_ * C;
    };
    auto w_orthonormalize = [&](Eigen::MatrixXd& Z) {
      for (int c = 0; c < Z.cols(); ++c) {
        for (int p = 0; p < c; ++p) {
          const double proj = Z.col(p).dot(wd_.cwiseProduct(Z.col(c)));
          Z.col(c) -= proj * Z.col(p);
        }
        const double nrm = std::sqrt(Z.col(c).dot(wd_.cwiseProduct(Z.col(c))));
        if (nrm > 0) Z.col(c) /= nrm;
      }
    };

    project_out_kernel(V);
    w_orthonormalize(V);
    double lambda = 0, lambda_prev = 1e300;
    int it = 0;
    Eigen::VectorXd best;
    for (; it < max_iter; ++it) {
      Eigen::MatrixXd Y = llt.solve(wd_.asDiagonal() * V);
      project_out_kernel(Y);
      w_orthonormalize(Y);
      // Rayleigh-Ritz in the block
      const Eigen::MatrixXd A = Y.transpose() * (Lhat_ * Y);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (A + A.transpose()));
      V.noalias() = Y * es.eigenvectors();
      lambda = es.eigenvalues()(0);
      best = V.col(0);
      if (std::abs(lambda - lambda_prev) <= tol * std::max(1e-300, std::abs(lambda)) &&
          it > 3)
        break;
      lambda_prev = lambda;
    }
    const Eigen::VectorXd r = Lhat_ * best - lambda * wd_.cwiseProduct(best);
    const double resid = r.norm() / std::max(1e-300, (Lhat_ * best).norm());
    if (it >= max_iter)
      throw IterationError("estimate_coercivity: eigensolve did not converge, residual " +
                           std::to_string(resid));

    CoercivityResult out;
    out.delta_hat = lambda;
    out.iterations = it;
    out.eig_residual = resid;
    out.minimizer = L_.unpack(best);
    for (int j = 0; j < 6; ++j)
      out.nu_orth_max =
          std::max(out.nu_orth_max, std::abs(X_.col(j).dot(wd_.cwiseProduct(best))));
    return out;
  }

  /// Full spectrum of the deflated pencil (small grids only).
  Eigen::VectorXd full_spectrum(std::size_t max_dim = 5000) const {
    if (Lhat_.rows() > static_cast<Eigen::Index>(max_dim))
      throw SizingError("full_spectrum: operator dimension exceeds dense budget");
    const Eigen::VectorXd inv_sqrt = wd_.cwiseSqrt().cwiseInverse();
    const Eigen::MatrixXd B =
        inv_sqrt.asDiagonal() * Lhat_ * inv_sqrt.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (B + B.transpose()),
                                                      Eigen::EigenvaluesOnly);
    return es.eigenvalues();
  }

 private:
  const AssembledL& L_;
  Eigen::VectorXd wd_;
  Eigen::MatrixXd X_;
  Eigen::MatrixXd Lhat_;
  Eigen::MatrixXd gw_;
  Eigen::LLT<Eigen::MatrixXd> gw_llt_;
};

inline CoercivityResult estimate_coercivity(const AssembledL& L, const InvariantBasis& basis) {
  return CoercivitySolver(L, basis).smallest();
}

// ---------------------------------------------------------------------------
// Explicit integral kernels of the typical/hybrid decomposition.
// ---------------------------------------------------------------------------

namespace detail {

/// Adaptive Simpson on [a, b].
template <typename F>
double adaptive_simpson(const F& f, double a, double b, double tol, int depth,
                        double fa, double fm, double fb) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) < 15.0 * tol)
    return left + right + (left + right - whole) / 15.0;
  return adaptive_simpson(f, a, m, 0.5 * tol, depth - 1, fa, flm, fm) +
         adaptive_simpson(f, m, b, 0.5 * tol, depth - 1, fm, frm, fb);
}

template <typename F>
double integrate(const F& f, double a, double b, double tol, int depth = 18) {
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  return adaptive_simpson(f, a, b, tol, depth, fa, fm, fb);
}

/// Angular factor A(r) = int_0^{2pi} exp(-(m/2)(r^2 + 2 r c0 cos phi + c0^2)) dphi
/// by doubling trapezoid; the integrand is periodic analytic so this
/// converges spectrally.
inline double gaussian_ring_integral(double m, double r, double c0) {
  const double base = -0.5 * m * (r - c0) * (r - c0);
  if (base < -700.0) return 0.0;
  auto g = [&](double phi) {
    // exponent relative to the peak at phi = pi
    return std::exp(base - m * r * c0 * (1.0 + std::cos(phi)));
  };
  int n = 16;
  double prev = 0;
  double val = 0;
  for (int round = 0; round < 9; ++round) {
    double s = 0;
    const double h = M_PI / n;
    for (int i = 0; i <= n; ++i) {
      const double w = (i == 0 || i == n) ? 0.5 : 1.0;
      s += w * g(i * h);
    }
    val = 2.0 * s * h;  // even in phi around 0..pi doubled
    if (round > 1 && std::abs(val - prev) <= 1e-10 * std::abs(val) + 1e-300) break;
    prev = val;
    n *= 2;
  }
  return val;
}

/// Common inner 2D integral of k1 / degenerate k2 in polar coordinates:
/// int_{R^2} exp(-(m/2)|y + zeta|^2) [rho^2 + |y|^2]^{(gamma-1)/2}
///   chi(sqrt(rho^2 + |y|^2)) bfac(|y|) dy,  |zeta| = c0.
template <typename BFac>
double polar_gauss_integral(double m, double c0, double rho, double gamma,
                            const KernelSplitConfig& cfg, const BFac& bfac, double tol) {
  auto integrand = [&](double r) -> double {
    if (r <= 0) return 0.0;
    const double s2 = rho * rho + r * r;
    const double chi = cfg.chi(std::sqrt(s2));
    if (chi == 0) return 0.0;
    return r * std::pow(s2, 0.5 * (gamma - 1.0)) * chi * bfac(r) *
           gaussian_ring_integral(m, r, c0);
  };
  const double rmax = c0 + std::sqrt(160.0 / m) + 1.0;
  return integrate(integrand, 0.0, rmax, tol);
}

struct AxisFrame {
  Vec3 unit;       // axis direction
  double par;      // signed component of v along the axis
  Vec3 perp;       // remaining component of v
};

inline AxisFrame decompose(const Vec3& v, const Vec3& axis) {
  const double n = axis.norm();
  const Vec3 u = axis * (1.0 / n);
  const double c = v.dot(u);
  return {u, c, v - c * u};
}

}  // namespace detail

/// Typical-part kernel k^{(1)}_{ab}(v, u_par), u_par in R^3 \ {0}.
inline double eval_kernel_k1(const MassPair& masses, const KernelSplitConfig& config,
                             const AngularKernel& kernel, double gamma,
                             const SpeciesPair& pair, const Vec3& v, const Vec3& u_par,
                             double tol = 1e-9) {
  const double rho = u_par.norm();
  if (rho == 0) throw std::invalid_argument("eval_kernel_k1: u_par must be nonzero");
  const MassPair om = oriented_masses(masses, pair);
  const double ma = om.m_alpha, mb = om.m_beta;
  const auto frame = detail::decompose(v, u_par);
  const double zeta_par = frame.par + mb / (ma + mb) * rho;
  const double zeta_perp = frame.perp.norm();
  const double ratio = ma / (ma + mb);
  const double expo = -0.5 * mb * (zeta_par * zeta_par + ratio * ratio * rho * rho);
  if (expo < -700.0) return 0.0;
  // b(theta)/|cos theta| with |cos theta| = |u_par| / |u|
  auto bfac = [&](double r) {
    const double cos_t = rho / std::sqrt(rho * rho + r * r);
    return kernel.b(cos_t) / cos_t;
  };
  const double inner =
      detail::polar_gauss_integral(mb, zeta_perp, rho, gamma, config, bfac, tol);
  return std::exp(expo) * inner / rho;
}

/// Hybrid-part kernel.  For unequal species the pointwise exponential
/// formula in the (xi, eta) variables; for equal species the degenerate
/// kernel k^{(2)}_{aa}(v, u_perp) with a 2D u_par integral mirroring k1
/// with the roles of par/perp exchanged.
inline double eval_kernel_k2(const MassPair& masses, const KernelSplitConfig& config,
                             const AngularKernel& kernel, double gamma,
                             const SpeciesPair& pair, const Vec3& v, const Vec3& u_perp,
                             const Vec3& u_par, double tol = 1e-9) {
  const MassPair om = oriented_masses(masses, pair);
  const double ma = om.m_alpha, mb = om.m_beta;
  if (pair.alpha != pair.beta) {
    const double rho = u_par.norm();
    if (rho == 0) throw std::invalid_argument("eval_kernel_k2: u_par must be nonzero");
    if (std::abs(u_perp.dot(u_par)) > 1e-10 * (1.0 + u_perp.norm()) * rho)
      throw std::invalid_argument("eval_kernel_k2: u_perp must be orthogonal to u_par");
    const auto frame = detail::decompose(v, u_par);
    const double sa = std::sqrt(ma), sb = std::sqrt(mb);
    const double cpar_plus = 0.5 * sb + sa * mb / (ma + mb);
    const double cpar_minus = 0.5 * sb - sa * mb / (ma + mb);
    const double xi_par = 0.5 * (sb + sa) * frame.par + cpar_plus * rho;
    const double eta_par = 0.5 * (sb - sa) * frame.par + cpar_minus * rho;
    const Vec3 xi_perp = 0.5 * (sb + sa) * frame.perp + 0.5 * sb * u_perp;
    const Vec3 eta_perp = 0.5 * (sb - sa) * frame.perp + 0.5 * sb * u_perp;
    const double expo = -0.5 * (xi_par * xi_par + eta_par * eta_par + xi_perp.norm2() +
                                eta_perp.norm2());
    if (expo < -700.0) return 0.0;
    const double s2 = rho * rho + u_perp.norm2();
    const double s = std::sqrt(s2);
    const double chi = config.chi(s);
    if (chi == 0) return 0.0;
    const double cos_t = rho / s;
    return std::exp(expo) * chi * std::pow(s2, 0.5 * (gamma - 1.0)) *
           (kernel.b(cos_t) / cos_t) / rho;
  }

  // degenerate branch: u_perp carries three degrees of freedom
  const double rho = u_perp.norm();
  if (rho == 0) throw std::invalid_argument("eval_kernel_k2: u_perp must be nonzero");
  const auto frame = detail::decompose(v, u_perp);
  const double zeta_perp_axis = frame.par + 0.5 * rho;  // along u_perp
  const double in_plane = frame.perp.norm();
  const double expo = -0.5 * ma * (zeta_perp_axis * zeta_perp_axis + 0.25 * rho * rho);
  if (expo < -700.0) return 0.0;
  auto bfac = [&](double r) {
    const double cos_t = r / std::sqrt(rho * rho + r * r);
    const double b = kernel.b(cos_t);
    return cos_t > 0 ? b / cos_t : 0.0;
  };
  const double inner =
      detail::polar_gauss_integral(ma, in_plane, rho, gamma, config, bfac, tol);
  return std::exp(expo) * inner / rho;
}

struct KernelDecayRow {
  double speed;
  double integral;    // I(v) = int |k1| w^s(v)/w^s(v_*) dv_*
  double normalized;  // I(v) <v>^{2-gamma}
  double tolerance;   // quadrature error estimate
};

/// Decay certification of the transformed typical-part kernel: the
/// substitution v_* = v + (2 m_b / (m_a + m_b)) u_par turns the u_par
/// integral into the v_* integral of Remark-2.2 form.
inline std::vector<KernelDecayRow> verify_kernel_decay(
    const MassPair& masses, const KernelSplitConfig& config, const AngularKernel& kernel,
    double gamma, const std::vector<double>& sample_speeds, double s_power,
    const SpeciesPair& pair = SpeciesPair{0, 1}) {
  if (s_power > 0)
    throw std::invalid_argument("verify_kernel_decay: weight power s must be <= 0");
  const MassPair om = oriented_masses(masses, pair);
  const double shift = 2.0 * om.m_beta / (om.m_alpha + om.m_beta);

  std::vector<KernelDecayRow> rows;
  for (double V : sample_speeds) {
    const Vec3 v{V, 0, 0};
    const double wv = std::pow(1.0 + V, s_power * gamma);  // w^s(v) with w = (1+|v|)^gamma

    auto radial = [&](double rho, double ct, double k1tol) -> double {
      // u_par = rho * (ct, st, 0); azimuthal symmetry about the x-axis
      const double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
      const Vec3 upar{rho * ct, rho * st, 0.0};
      const double k1 = eval_kernel_k1(masses, config, kernel, gamma, pair, v, upar, k1tol);
      const Vec3 vstar = v + shift * upar;
      const double wvs = std::pow(1.0 + vstar.norm(), s_power * gamma);
      return std::abs(k1) * wv / wvs;
    };

    auto integral_at = [&](double k1tol, double outer_tol, int n_theta) -> double {
      // Gauss-Legendre in cos(theta), adaptive Simpson in rho
      std::vector<double> xs(n_theta), ws(n_theta);
      // Chebyshev-like nodes are adequate here: use composite Gauss points
      // of order 4 on n_theta/4 panels.
      static const double g4x[4] = {-0.8611363115940526, -0.3399810435848563,
                                    0.3399810435848563, 0.8611363115940526};
      static const double g4w[4] = {0.3478548451374538, 0.6521451548625461,
                                    0.6521451548625461, 0.3478548451374538};
      const int panels = n_theta / 4;
      int idx = 0;
      for (int p = 0; p < panels; ++p) {
        const double a = -1.0 + 2.0 * p / panels, b = -1.0 + 2.0 * (p + 1) / panels;
        for (int q = 0; q < 4; ++q) {
          xs[idx] = 0.5 * (a + b) + 0.5 * (b - a) * g4x[q];
          ws[idx] = 0.5 * (b - a) * g4w[q];
          ++idx;
        }
      }
      const double rho_max =
          (om.m_alpha + om.m_beta) / om.m_alpha * std::sqrt(160.0 / om.m_beta) + V + 2.0;
      std::vector<double> theta_vals(idx, 0.0);
      std::atomic<long> bad{-1};
      parallel_for(static_cast<std::size_t>(idx), [&](std::size_t t) {
        auto f = [&](double rho) {
          return rho <= 0 ? 0.0 : rho * rho * radial(rho, xs[t], k1tol);
        };
        const double val = detail::integrate(f, 0.0, rho_max, outer_tol);
        if (!std::isfinite(val)) bad.store(static_cast<long>(t));
        theta_vals[t] = val;
      });
      if (bad.load() >= 0)
        throw std::runtime_error("verify_kernel_decay: quadrature non-convergence at node " +
                                 std::to_string(bad.load()));
      double acc = 0;
      for (int t = 0; t < idx; ++t) acc += ws[t] * theta_vals[t];
      return 2.0 * M_PI * acc;
    };

    const double coarse = integral_at(1e-7, 1e-7, 16);
    const double fine = integral_at(1e-9, 1e-9, 32);
    KernelDecayRow row;
    row.speed = V;
    row.integral = fine;
    row.normalized = fine * std::pow(1.0 + V, 2.0 - gamma);
    row.tolerance = std::abs(fine - coarse);
    rows.push_back(row);
  }
  return rows;
}

struct DerivativeProbeResult {
  bool feasible = false;
  double eta = 0;
  double c_eta = 0;
  double worst_margin = 0;  // most negative slack at the chosen pair
};

/// Measured constants of the first-derivative commutator estimates: finds
/// (eta <= 1/2, C_eta) making the inequality hold across the sample set.
/// probe = 0 checks the nu inequality, probe = 1 the K inequality.
inline DerivativeProbeResult probe_derivative_estimates(
    const MassPair& masses, const AngularKernel& kernel, const QuadratureSpec& quad,
    const VelocityGrid& grid, const std::vector<VPairField>& samples, int beta_axis,
    double l, int probe) {
  if (beta_axis < 0 || beta_axis > 2)
    throw std::invalid_argument("probe_derivative_estimates: beta axis must be 0..2");
  const WeightSpec ws(quad.gamma, l);
  const std::vector<double> nu = nu_field(masses, kernel, quad, grid);

  auto dv = [&](const VPairField& f) {
    VPairField out(f.size());
    out.a = diff_v(grid, f.a, beta_axis);
    out.b = diff_v(grid, f.b, beta_axis);
    return out;
  };
  auto inner_w2l = [&](const VPairField& f, const VPairField& g) {
    double acc = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const double w2l = std::pow(ws.w(grid.node(i)), 2.0 * l);
      acc += grid.quad_weight(i) * w2l * (f.a[i] * g.a[i] + f.b[i] * g.b[i]);
    }
    return acc;
  };
  auto nu_normsq = [&](const VPairField& f) {
    const double n = norm_nu_v(ws, grid, f);
    return n * n;
  };

  auto dv_axis = [&](const VPairField& f, int axis) {
    VPairField out(f.size());
    out.a = diff_v(grid, f.a, axis);
    out.b = diff_v(grid, f.b, axis);
    return out;
  };

  struct Row {
    double lhs, a_sq, bsum_sq, c_sq, bsum_norm, c_norm, a2_norm;
  };
  std::vector<Row> rows;
  for (std::size_t s = 0; s + (probe == 1 ? 1 : 0) < samples.size();
       s += (probe == 1 ? 2 : 1)) {
    const VPairField& f1 = samples[s];
    const VPairField& f2 = probe == 1 ? samples[s + 1] : samples[s];
    Row row{};
    const VPairField df1 = dv(f1);
    const VPairField df2 = dv(f2);
    if (probe == 0) {
      VPairField nuf(f1.size());
      for (std::size_t i = 0; i < grid.size(); ++i) {
        nuf.a[i] = nu[i] * f1.a[i];
        nuf.b[i] = nu[i] * f1.b[i];
      }
      row.lhs = inner_w2l(dv(nuf), df1);
    } else {
      const VPairField kf = apply_K(masses, kernel, quad, grid, f1);
      row.lhs = std::abs(inner_w2l(dv(kf), df2));
    }
    row.a_sq = nu_normsq(df1);
    // all |beta_1| <= 1: the identity plus the three axis derivatives
    row.c_sq = nu_normsq(f1);
    row.bsum_sq = row.c_sq;
    row.bsum_norm = std::sqrt(row.c_sq);
    for (int ax = 0; ax < 3; ++ax) {
      const double nsq = nu_normsq(dv_axis(f1, ax));
      row.bsum_sq += nsq;
      row.bsum_norm += std::sqrt(nsq);
    }
    row.c_norm = std::sqrt(row.c_sq);
    row.a2_norm = std::sqrt(nu_normsq(df2));
    rows.push_back(row);
  }

  DerivativeProbeResult best;
  for (double eta = 0.025; eta <= 0.5 + 1e-12; eta += 0.025) {
    for (double c_eta = 0.25; c_eta <= 2e5; c_eta *= 2.0) {
      double worst = 1e300;
      for (const Row& r : rows) {
        double margin;
        if (probe == 0)
          margin = r.lhs - r.a_sq + eta * r.bsum_sq + c_eta * r.c_sq;
        else
          margin = (eta * r.bsum_norm + c_eta * r.c_norm) * r.a2_norm - r.lhs;
        worst = std::min(worst, margin);
      }
      if (worst >= 0) {
        best.feasible = true;
        best.eta = eta;
        best.c_eta = c_eta;
        best.worst_margin = worst;
        return best;
      }
    }
  }
  return best;
}

}  // namespace binarykin
