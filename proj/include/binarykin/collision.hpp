#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "binarykin/core.hpp"
#include "binarykin/equilibrium.hpp"
#include "binarykin/grid.hpp"
#include "binarykin/kinematics.hpp"

namespace binarykin {

/// Angular kernel under the Grad cutoff 0 < b(cos t) <= C_b |cos t|.
struct AngularKernel {
  enum class Family { AbsCos, CosSquared };

  Family family = Family::AbsCos;
  double c_b = 1.0;

  AngularKernel() = default;
  AngularKernel(Family f, double cb) : family(f), c_b(cb) {
    if (!(cb > 0)) throw ConfigError("AngularKernel: C_b must be positive");
  }

  double b(double cos_t) const {
    switch (family) {
      case Family::AbsCos: return c_b * std::abs(cos_t);
      case Family::CosSquared: return c_b * cos_t * cos_t;
    }
    return 0;
  }

  /// Exact integral of b over S^2 (used only by the local singular patch).
  double sphere_integral() const {
    switch (family) {
      case Family::AbsCos: return 2.0 * M_PI * c_b;
      case Family::CosSquared: return 4.0 * M_PI / 3.0 * c_b;
    }
    return 0;
  }

  static Family parse_family(const std::string& name) {
    if (name == "abs_cos") return Family::AbsCos;
    if (name == "cos_squared") return Family::CosSquared;
    throw ConfigError("AngularKernel: unknown family '" + name + "'");
  }
};

enum class QuadMode { Deterministic, MonteCarlo };

/// Quadrature controls shared by the collision and linearized operators.
struct QuadratureSpec {
  int sphere_points = 14;
  int velocity_subgrid = 0;  // 0: integrate on the state grid itself
  double gamma = -1.0;       // singular exponent, in (-3, 0)
  QuadMode mode = QuadMode::Deterministic;
  std::uint64_t seed = 12345;
  // Rotate the node set into generic position relative to the lattice.
  // Operator assembly uses this: axis-aligned nodes let post-collision
  // points fall on lattice planes, which creates spurious discrete
  // collision invariants.  Kept off for the nonlinear operators so the
  // discrete rotational equivariance of eval_Q is exact.
  bool rotate_sphere = false;

  void validate() const {
    if (!(gamma > -3.0 && gamma < 0.0))
      throw ConfigError("QuadratureSpec: gamma must lie in (-3, 0)");
    if (sphere_points < 2) throw ConfigError("QuadratureSpec: sphere_points must be >= 2");
    if (velocity_subgrid != 0 && (velocity_subgrid < 3 || velocity_subgrid % 2 == 0))
      throw ConfigError("QuadratureSpec: velocity_subgrid must be 0 or odd >= 3");
  }
};

struct SphereQuadrature {
  std::vector<Vec3> nodes;
  std::vector<double> weights;  // sum to 4 pi
};

namespace detail {

inline void add_axis_points(SphereQuadrature& q, double w) {
  for (int d = 0; d < 3; ++d)
    for (double s : {1.0, -1.0}) {
      Vec3 v{0, 0, 0};
      v[d] = s;
      q.nodes.push_back(v);
      q.weights.push_back(w);
    }
}

inline void add_corner_points(SphereQuadrature& q, double w) {
  const double c = 1.0 / std::sqrt(3.0);
  for (double sx : {1.0, -1.0})
    for (double sy : {1.0, -1.0})
      for (double sz : {1.0, -1.0}) {
        q.nodes.push_back({sx * c, sy * c, sz * c});
        q.weights.push_back(w);
      }
}

inline void add_edge_points(SphereQuadrature& q, double w) {
  const double c = 1.0 / std::sqrt(2.0);
  const int pairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
  for (const auto& p : pairs)
    for (double s0 : {1.0, -1.0})
      for (double s1 : {1.0, -1.0}) {
        Vec3 v{0, 0, 0};
        v[p[0]] = s0 * c;
        v[p[1]] = s1 * c;
        q.nodes.push_back(v);
        q.weights.push_back(w);
      }
}

inline void add_ab0_points(SphereQuadrature& q, double a, double w) {
  const double b = std::sqrt(1.0 - a * a);
  const int pairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
  for (const auto& p : pairs)
    for (int swap = 0; swap < 2; ++swap)
      for (double s0 : {1.0, -1.0})
        for (double s1 : {1.0, -1.0}) {
          Vec3 v{0, 0, 0};
          v[p[0]] = s0 * (swap ? b : a);
          v[p[1]] = s1 * (swap ? a : b);
          q.nodes.push_back(v);
          q.weights.push_back(w);
        }
}

}  // namespace detail

/// Octahedrally symmetric fixed node sets (Lebedev orders 6/14/26/38) for
/// deterministic mode; seeded uniform directions for Monte-Carlo mode.
inline SphereQuadrature make_sphere_quadrature(const QuadratureSpec& spec) {
  SphereQuadrature q;
  if (spec.mode == QuadMode::MonteCarlo) {
    Rng rng(spec.seed);
    const double w = 4.0 * M_PI / spec.sphere_points;
    for (int i = 0; i < spec.sphere_points; ++i) {
      q.nodes.push_back(rng.unit_vector());
      q.weights.push_back(w);
    }
    return q;
  }
  const int n = spec.sphere_points;
  if (n <= 6) {
    detail::add_axis_points(q, 1.0 / 6.0);
  } else if (n <= 14) {
    detail::add_axis_points(q, 1.0 / 15.0);
    detail::add_corner_points(q, 3.0 / 40.0);
  } else if (n <= 26) {
    detail::add_axis_points(q, 1.0 / 21.0);
    detail::add_edge_points(q, 4.0 / 105.0);
    detail::add_corner_points(q, 9.0 / 280.0);
  } else {
    detail::add_axis_points(q, 1.0 / 105.0);
    detail::add_corner_points(q, 9.0 / 280.0);
    detail::add_ab0_points(q, 0.4597008433809831, 1.0 / 35.0);
  }
  for (double& w : q.weights) w *= 4.0 * M_PI;
  if (spec.rotate_sphere) {
    // fixed generic rotation (Rz Ry Rx with angles 0.5, 0.3, 0.2)
    const double c1 = std::cos(0.5), s1 = std::sin(0.5);
    const double c2 = std::cos(0.3), s2 = std::sin(0.3);
    const double c3 = std::cos(0.2), s3 = std::sin(0.2);
    for (Vec3& v : q.nodes) {
      Vec3 a{v.x, c3 * v.y - s3 * v.z, s3 * v.y + c3 * v.z};
      Vec3 b{c2 * a.x + s2 * a.z, a.y, -s2 * a.x + c2 * a.z};
      v = {c1 * b.x - s1 * b.y, s1 * b.x + c1 * b.y, b.z};
    }
  }
  return q;
}

/// Which species supplies v (alpha) and v_star (beta) in Q^{alpha beta}.
struct SpeciesPair {
  int alpha = 0;
  int beta = 1;
};

/// Masses in the (alpha, beta) orientation of the pair.
inline MassPair oriented_masses(const MassPair& m, const SpeciesPair& p) {
  const double ma = p.alpha == 0 ? m.m_alpha : m.m_beta;
  const double mb = p.beta == 0 ? m.m_alpha : m.m_beta;
  return MassPair(ma, mb);
}

namespace detail {

/// Integration lattice for the v_star integral: either the state grid or a
/// coarser lattice of the configured resolution over the same cube.
struct InnerLattice {
  VelocityGrid grid;
  bool matches_state;
};

inline InnerLattice make_inner_lattice(const VelocityGrid& state, const QuadratureSpec& q) {
  if (q.velocity_subgrid == 0 || q.velocity_subgrid == state.points_per_axis())
    return {state, true};
  return {VelocityGrid(state.radius(), q.velocity_subgrid), false};
}

inline std::vector<double> resample(const VelocityGrid& from, const std::vector<double>& f,
                                    const VelocityGrid& to) {
  if (from.same_as(to)) return f;
  std::vector<double> out(to.size());
  for (std::size_t i = 0; i < to.size(); ++i) out[i] = from.interpolate(f, to.node(i));
  return out;
}

/// Volume integral of |u|^gamma over the excluded ball of radius r0.
inline double singular_ball_integral(double gamma, double r0) {
  return 4.0 * M_PI * std::pow(r0, 3.0 + gamma) / (3.0 + gamma);
}

// Post-collision values are reconstructed from interpolated Maxwellian
// ratios: F(v') = mu(v') ghat(v') with ghat trilinear in F/mu.  The
// Gaussian factors recombine through the collision energy identity
// mu^a(v') mu^b(v_star') = mu^a(v) mu^b(v_star) into nodal values, so the
// equilibrium bracket cancels to rounding and the interpolation error
// falls on the smooth ratio only.  Flooring the denominator can only
// shrink a ratio, which keeps every reconstructed product bounded by its
// analytic value.
constexpr double kMuFloor = 1e-280;
constexpr double kSqrtMuFloor = 1e-140;

inline std::vector<double> mu_ratio(const VelocityGrid& g, const std::vector<double>& F,
                                    double mass) {
  std::vector<double> out(g.size());
  for (std::size_t i = 0; i < g.size(); ++i)
    out[i] = F[i] / std::max(maxwellian_species(mass, g.node(i)), kMuFloor);
  return out;
}

inline std::vector<double> sqrt_mu_ratio(const VelocityGrid& g, const std::vector<double>& f,
                                         double mass) {
  std::vector<double> out(g.size());
  for (std::size_t i = 0; i < g.size(); ++i)
    out[i] = f[i] / std::max(sqrt_maxwellian_species(mass, g.node(i)), kSqrtMuFloor);
  return out;
}

}  // namespace detail

/// Q^{alpha beta}(F_alpha, F_beta) by lattice x sphere quadrature.  The
/// v_star = v cell is excluded; its contribution vanishes because the
/// gain/loss bracket is identically zero at u = 0.
inline std::vector<double> eval_Q(const MassPair& masses, const AngularKernel& kernel,
                                  const QuadratureSpec& quad, const VelocityGrid& grid,
                                  const std::vector<double>& F_alpha,
                                  const std::vector<double>& F_beta,
                                  const SpeciesPair& pair) {
  quad.validate();
  if (F_alpha.size() != grid.size() || F_beta.size() != grid.size())
    throw std::invalid_argument("eval_Q: field size does not match grid");
  const MassPair om = oriented_masses(masses, pair);
  const double ca = om.coeff_alpha(), cb = om.coeff_beta();
  const double gamma = quad.gamma;
  const SphereQuadrature sph = make_sphere_quadrature(quad);
  const auto inner = detail::make_inner_lattice(grid, quad);
  const VelocityGrid& ig = inner.grid;
  const double r_excl = 0.5 * ig.spacing();

  const std::vector<double> ga = detail::mu_ratio(grid, F_alpha, om.m_alpha);
  const std::vector<double> gb = detail::mu_ratio(grid, F_beta, om.m_beta);
  const std::vector<double> gb_inner =
      inner.matches_state ? gb : detail::resample(grid, gb, ig);
  std::vector<double> mu_b_inner(ig.size());
  for (std::size_t j = 0; j < ig.size(); ++j)
    mu_b_inner[j] = maxwellian_species(om.m_beta, ig.node(j));

  const std::size_t n_out = grid.size();
  const std::size_t n_in = ig.size();
  const std::size_t n_sph = sph.nodes.size();
  std::vector<double> out(n_out, 0.0);
  std::atomic<long> bad_node{-1};

  parallel_for(n_out, [&](std::size_t i) {
    const Vec3 vi = grid.node(i);
    const double mu_a_i = maxwellian_species(om.m_alpha, vi);
    const double ga_i = ga[i];
    double acc = 0;
    for (std::size_t j = 0; j < n_in; ++j) {
      const Vec3 vj = ig.node(j);
      const Vec3 u = vj - vi;
      const double r2 = u.norm2();
      if (r2 <= r_excl * r_excl) continue;  // zero bracket at the singular cell
      const double r = std::sqrt(r2);
      const double w_base =
          ig.quad_weight(j) * std::pow(r, gamma) * mu_a_i * mu_b_inner[j];
      // multiply the Gaussian base into the first ratio before forming the
      // product: the energy identity bounds every partial product, while
      // the bare ratio product can overflow in deep tails
      const double loss_term = (w_base * ga_i) * gb_inner[j];
      double sum_k = 0, sum_b = 0;
      for (std::size_t k = 0; k < n_sph; ++k) {
        const Vec3& om_k = sph.nodes[k];
        const double d = u.dot(om_k);
        const double bk = kernel.b(d / r);
        if (bk == 0) continue;
        const Vec3 shift = d * om_k;
        const double ga_p = grid.interpolate(ga.data(), vi + ca * shift);
        const double gb_p = grid.interpolate(gb.data(), vj - cb * shift);
        sum_k += sph.weights[k] * bk * ((w_base * ga_p) * gb_p);
        sum_b += sph.weights[k] * bk;
      }
      acc += sum_k - sum_b * loss_term;
    }
    if (!std::isfinite(acc)) bad_node.store(static_cast<long>(i));
    out[i] = acc;
  });
  if (bad_node.load() >= 0)
    throw std::runtime_error("eval_Q: non-finite value at node " +
                             std::to_string(bad_node.load()));
  return out;
}

struct GammaSplit {
  std::vector<double> gain;
  std::vector<double> loss;
};

struct GammaTerms {
  std::vector<double> gain;  // Gamma_gain field
  std::vector<double> freq;  // multiplier field: Gamma_loss = f_alpha * freq
};

/// Gain field and loss frequency of Gamma^{alpha beta}.  The mu^{-1/2}
/// prefactor is folded through the collision energy identity:
/// sqrt(mu^a(v') mu^b(v_star')) / sqrt(mu^a(v)) = sqrt(mu^b(v_star)),
/// so no Gaussian is ever divided out; the perturbations enter through
/// their sqrt-mu ratios, whose trilinear interpolation carries the error.
inline GammaTerms eval_Gamma_terms(const MassPair& masses, const AngularKernel& kernel,
                                   const QuadratureSpec& quad, const VelocityGrid& grid,
                                   const std::vector<double>& f_alpha,
                                   const std::vector<double>& f_beta,
                                   const SpeciesPair& pair) {
  quad.validate();
  if (f_alpha.size() != grid.size() || f_beta.size() != grid.size())
    throw std::invalid_argument("eval_Gamma: field size does not match grid");
  const MassPair om = oriented_masses(masses, pair);
  const double ca = om.coeff_alpha(), cb = om.coeff_beta();
  const double m_beta = om.m_beta;
  const double gamma = quad.gamma;
  const SphereQuadrature sph = make_sphere_quadrature(quad);
  const auto inner = detail::make_inner_lattice(grid, quad);
  const VelocityGrid& ig = inner.grid;
  const double r_excl = 0.5 * ig.spacing();
  const double corr = detail::singular_ball_integral(gamma, r_excl) * kernel.sphere_integral();

  const std::vector<double> ha = detail::sqrt_mu_ratio(grid, f_alpha, om.m_alpha);
  const std::vector<double> hb = detail::sqrt_mu_ratio(grid, f_beta, om.m_beta);
  const std::vector<double> hb_inner =
      inner.matches_state ? hb : detail::resample(grid, hb, ig);
  const std::size_t n_in = ig.size();
  std::vector<double> mu_b_inner(n_in);
  for (std::size_t j = 0; j < n_in; ++j)
    mu_b_inner[j] = maxwellian_species(m_beta, ig.node(j));

  GammaTerms out;
  out.gain.assign(grid.size(), 0.0);
  out.freq.assign(grid.size(), 0.0);
  std::atomic<long> bad_node{-1};

  parallel_for(grid.size(), [&](std::size_t i) {
    const Vec3 vi = grid.node(i);
    const double smu_a_i = sqrt_maxwellian_species(om.m_alpha, vi);
    double gain = 0, freq = 0;
    for (std::size_t j = 0; j < n_in; ++j) {
      const Vec3 vj = ig.node(j);
      const Vec3 u = vj - vi;
      const double r2 = u.norm2();
      if (r2 <= r_excl * r_excl) continue;
      const double r = std::sqrt(r2);
      const double w_base = ig.quad_weight(j) * std::pow(r, gamma) * mu_b_inner[j];
      double sum_gain = 0, sum_b = 0;
      for (std::size_t k = 0; k < sph.nodes.size(); ++k) {
        const Vec3& om_k = sph.nodes[k];
        const double d = u.dot(om_k);
        const double bk = kernel.b(d / r);
        if (bk == 0) continue;
        const double wk = sph.weights[k] * bk;
        const Vec3 shift = d * om_k;
        const double ha_p = grid.interpolate(ha.data(), vi + ca * shift);
        const double hb_p = grid.interpolate(hb.data(), vj - cb * shift);
        sum_gain += wk * ((w_base * ha_p) * hb_p);  // base first: bounded partials
        sum_b += wk;
      }
      gain += sum_gain;
      freq += w_base * sum_b * hb_inner[j];
    }
    // gain = sqrt(mu^a(v)) int mu^b(v_star) h_a(v') h_b(v_star') ...;
    // freq = int mu^b(v_star) h_b(v_star) ... carries no such prefactor.
    // The local patch over the excluded ball keeps gain = loss at u = 0.
    const double local = corr * sqrt_maxwellian_species(m_beta, vi) * f_beta[i];
    out.gain[i] = smu_a_i * gain + local * f_alpha[i];
    out.freq[i] = freq + local;
    if (!std::isfinite(out.gain[i]) || !std::isfinite(out.freq[i]))
      bad_node.store(static_cast<long>(i));
  });
  if (bad_node.load() >= 0)
    throw std::runtime_error("eval_Gamma: non-finite value at node " +
                             std::to_string(bad_node.load()));
  return out;
}

/// Gamma^{alpha beta}(f_alpha, f_beta) as the gain/loss split.
inline GammaSplit eval_Gamma(const MassPair& masses, const AngularKernel& kernel,
                             const QuadratureSpec& quad, const VelocityGrid& grid,
                             const std::vector<double>& f_alpha,
                             const std::vector<double>& f_beta,
                             const SpeciesPair& pair) {
  const GammaTerms terms =
      eval_Gamma_terms(masses, kernel, quad, grid, f_alpha, f_beta, pair);
  GammaSplit out;
  out.gain = terms.gain;
  out.loss.resize(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i)
    out.loss[i] = f_alpha[i] * terms.freq[i];
  return out;
}

/// Sum over beta of Q^{alpha beta}(F^alpha, F^beta) for both alpha.
inline VPairField eval_C(const MassPair& masses, const AngularKernel& kernel,
                         const QuadratureSpec& quad, const VelocityGrid& grid,
                         const VPairField& F) {
  VPairField out(grid.size());
  for (int alpha = 0; alpha < 2; ++alpha) {
    std::vector<double> acc(grid.size(), 0.0);
    for (int beta = 0; beta < 2; ++beta) {
      const auto q = eval_Q(masses, kernel, quad, grid, F.species(alpha), F.species(beta),
                            SpeciesPair{alpha, beta});
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += q[i];
    }
    out.species(alpha) = std::move(acc);
  }
  return out;
}

/// Entropy production sum_{a,b} <Q^{ab}(F^a, F^b), log F^a>.  Nonpositive
/// for positive states, zero at the bi-Maxwellian.
///
/// The pairing is evaluated with the collision-invariant component of
/// log F removed.  Analytically this changes nothing (<CF, Psi> = 0 for
/// every invariant Psi) but it cancels the quadrature defect that the
/// large invariant part of log F would otherwise inject; at the
/// bi-Maxwellian log F lies entirely in the invariant span and the
/// estimator vanishes to rounding.
inline double entropy_production(const MassPair& masses, const AngularKernel& kernel,
                                 const QuadratureSpec& quad, const VelocityGrid& grid,
                                 const VPairField& F) {
  for (std::size_t i = 0; i < F.size(); ++i)
    if (!(F.a[i] > 0) || !(F.b[i] > 0))
      throw std::domain_error("entropy_production: state must be positive everywhere");
  const VPairField cf = eval_C(masses, kernel, quad, grid, F);

  // the six polynomial invariants (1_A, 1_B, v m, |v|^2 m) on the grid
  auto psi = [&](int j, int s, const Vec3& v) -> double {
    switch (j) {
      case 0: return s == 0 ? 1.0 : 0.0;
      case 1: return s == 1 ? 1.0 : 0.0;
      case 2: case 3: case 4:
        return (s == 0 ? masses.m_alpha : masses.m_beta) * v[j - 2];
      default: return (s == 0 ? masses.m_alpha : masses.m_beta) * v.norm2();
    }
  };
  std::array<std::array<double, 6>, 6> gram{};
  std::array<double, 6> rhs{};
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Vec3 v = grid.node(i);
    const double q = grid.quad_weight(i);
    const double lga = std::log(F.a[i]), lgb = std::log(F.b[i]);
    double p[6][2];
    for (int j = 0; j < 6; ++j) {
      p[j][0] = psi(j, 0, v);
      p[j][1] = psi(j, 1, v);
    }
    for (int j = 0; j < 6; ++j) {
      rhs[j] += q * (p[j][0] * lga + p[j][1] * lgb);
      for (int k = j; k < 6; ++k)
        gram[j][k] += q * (p[j][0] * p[k][0] + p[j][1] * p[k][1]);
    }
  }
  for (int j = 0; j < 6; ++j)
    for (int k = 0; k < j; ++k) gram[j][k] = gram[k][j];
  const std::array<double, 6> coef = detail::solve6(gram, rhs);

  double acc = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Vec3 v = grid.node(i);
    const double q = grid.quad_weight(i);
    double ra = std::log(F.a[i]), rb = std::log(F.b[i]);
    for (int j = 0; j < 6; ++j) {
      ra -= coef[j] * psi(j, 0, v);
      rb -= coef[j] * psi(j, 1, v);
    }
    acc += q * (cf.a[i] * ra + cf.b[i] * rb);
  }
  return acc;
}

/// <CF, Psi> for the six invariants Psi in {e1, e2, v_j m, |v|^2 m}.
inline std::array<double, 6> collision_invariant_pairing(const MassPair& masses,
                                                         const AngularKernel& kernel,
                                                         const QuadratureSpec& quad,
                                                         const VelocityGrid& grid,
                                                         const VPairField& F) {
  const VPairField cf = eval_C(masses, kernel, quad, grid, F);
  std::array<double, 6> out{};
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Vec3 v = grid.node(i);
    const double q = grid.quad_weight(i);
    const double qa = q * cf.a[i], qb = q * cf.b[i];
    out[0] += qa;
    out[1] += qb;
    for (int d = 0; d < 3; ++d)
      out[2 + d] += qa * masses.m_alpha * v[d] + qb * masses.m_beta * v[d];
    out[5] += v.norm2() * (qa * masses.m_alpha + qb * masses.m_beta);
  }
  return out;
}

}  // namespace binarykin
