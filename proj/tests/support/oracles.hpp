#pragma once

// Test-only oracles, independent of the operator implementations they
// check.  The symmetrized pairing evaluates the collision invariants with
// exact pre/post pair bookkeeping (analytic test functions at the exact
// post-collision points, no interpolation), so it vanishes to rounding
// for every discrete state.

#include <array>
#include <cmath>
#include <functional>
#include <vector>

#include "binarykin/collision.hpp"
#include "binarykin/grid.hpp"
#include "binarykin/kinematics.hpp"

namespace binarykin::oracles {

/// Pair-valued analytic test function psi(species, v).
using TestFunction = std::function<double(int, const Vec3&)>;

/// sum_{a,b} <Q^{ab}(F^a, F^b), psi^a> with the gain written through the
/// exact (v, v_*, omega) -> (v', v_*') pairing.
inline double symmetrized_invariant_pairing(const MassPair& masses,
                                            const AngularKernel& kernel,
                                            const QuadratureSpec& quad,
                                            const VelocityGrid& grid, const VPairField& F,
                                            const TestFunction& psi) {
  const SphereQuadrature sph = make_sphere_quadrature(quad);
  const double r_excl = 0.5 * grid.spacing();
  double acc = 0;
  for (int alpha = 0; alpha < 2; ++alpha)
    for (int beta = 0; beta < 2; ++beta) {
      const MassPair om = oriented_masses(masses, SpeciesPair{alpha, beta});
      for (std::size_t i = 0; i < grid.size(); ++i) {
        const Vec3 vi = grid.node(i);
        const double Fa = F.species(alpha)[i];
        for (std::size_t j = 0; j < grid.size(); ++j) {
          const Vec3 vj = grid.node(j);
          const Vec3 u = vj - vi;
          const double r2 = u.norm2();
          if (r2 <= r_excl * r_excl) continue;
          const double r = std::sqrt(r2);
          const double wq = grid.quad_weight(i) * grid.quad_weight(j) *
                            std::pow(r, quad.gamma) * Fa * F.species(beta)[j];
          for (std::size_t k = 0; k < sph.nodes.size(); ++k) {
            const double d = u.dot(sph.nodes[k]);
            const double bk = kernel.b(d / r);
            if (bk == 0) continue;
            const CollisionOutcome post =
                post_collision(om, {vi, vj, sph.nodes[k]});
            acc += wq * sph.weights[k] * bk *
                   (psi(alpha, post.v_prime) - psi(alpha, vi));
          }
        }
      }
    }
  return acc;
}

/// The six collision invariants as analytic test functions.
inline std::array<TestFunction, 6> invariant_test_functions(const MassPair& m) {
  std::array<TestFunction, 6> out;
  out[0] = [](int s, const Vec3&) { return s == 0 ? 1.0 : 0.0; };
  out[1] = [](int s, const Vec3&) { return s == 1 ? 1.0 : 0.0; };
  for (int d = 0; d < 3; ++d)
    out[2 + d] = [m, d](int s, const Vec3& v) {
      return (s == 0 ? m.m_alpha : m.m_beta) * v[d];
    };
  out[5] = [m](int s, const Vec3& v) {
    return (s == 0 ? m.m_alpha : m.m_beta) * v.norm2();
  };
  return out;
}

/// Exponential integral E1 by series / continued fraction; used only to
/// pin the closed-form value of the typical-part kernel at the origin.
inline double expint_e1(double x) {
  if (x <= 0) return 1e300;
  if (x <= 1.0) {
    // E1(x) = -gamma - ln x + sum (-1)^{k+1} x^k / (k k!)
    const double euler = 0.57721566490153286;
    double sum = 0, term = 1;
    for (int k = 1; k <= 40; ++k) {
      term *= -x / k;
      sum += -term / k;
    }
    return -euler - std::log(x) + sum;
  }
  // Lentz continued fraction for x > 1
  double b = x + 1.0, c = 1e300, d = 1.0 / b, h = d;
  for (int i = 1; i <= 200; ++i) {
    const double a = -static_cast<double>(i) * i;
    b += 2.0;
    d = 1.0 / (a * d + b);
    c = b + a / c;
    const double del = c * d;
    h *= del;
    if (std::abs(del - 1.0) < 1e-15) break;
  }
  return h * std::exp(-x);
}

/// Smooth positive state mu-perturbed by seeded low-order modes.
inline VPairField random_positive_state(const MassPair& masses, const VelocityGrid& grid,
                                        std::uint64_t seed, double amplitude = 0.3) {
  Rng rng(seed);
  std::array<double, 6> ca{}, cb{};
  for (auto& c : ca) c = rng.uniform(-1.0, 1.0);
  for (auto& c : cb) c = rng.uniform(-1.0, 1.0);
  VPairField F(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Vec3 v = grid.node(i);
    const auto mu = maxwellian_eval(masses, v);
    auto bump = [&](const std::array<double, 6>& c) {
      const double s = c[0] * std::sin(v.x) + c[1] * std::sin(v.y) + c[2] * std::sin(v.z) +
                       c[3] * std::cos(v.x * 0.7) + c[4] * v.x * v.y / 25.0 +
                       c[5] * std::cos(0.5 * v.norm());
      return 1.0 + amplitude * s / 3.0;
    };
    F.a[i] = mu[0] * std::max(0.05, bump(ca));
    F.b[i] = mu[1] * std::max(0.05, bump(cb));
  }
  return F;
}

}  // namespace binarykin::oracles
