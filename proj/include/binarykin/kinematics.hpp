#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "binarykin/core.hpp"

namespace binarykin {

/// Particle masses of the two species, dimensionless units.
struct MassPair {
  double m_alpha = 1;
  double m_beta = 1;

  MassPair() = default;
  MassPair(double a, double b) : m_alpha(a), m_beta(b) {
    if (!(a > 0) || !(b > 0))
      throw ConfigError("MassPair: masses must be positive, got (" +
                        std::to_string(a) + ", " + std::to_string(b) + ")");
  }

  /// 2 m_beta / (m_alpha + m_beta); multiplies the reflection in v.
  double coeff_alpha() const { return 2.0 * m_beta / (m_alpha + m_beta); }
  /// 2 m_alpha / (m_alpha + m_beta); multiplies the reflection in v_star.
  double coeff_beta() const { return 2.0 * m_alpha / (m_alpha + m_beta); }

  double min_mass() const { return m_alpha < m_beta ? m_alpha : m_beta; }
  MassPair swapped() const { return MassPair(m_beta, m_alpha); }
};

struct CollisionInput {
  Vec3 v;
  Vec3 v_star;
  Vec3 omega;  // unit vector on S^2
};

struct CollisionOutcome {
  Vec3 v_prime;
  Vec3 v_star_prime;
};

namespace detail {
inline void require_unit(const Vec3& omega) {
  if (std::abs(omega.norm() - 1.0) > 1e-12)
    throw std::invalid_argument("collision input: |omega| must be 1 within 1e-12");
}
}  // namespace detail

/// Post-collision velocities for an unequal-mass pair.  The transform
/// conserves m_alpha*v + m_beta*v_star, the matching kinetic energy, and
/// the relative speed |v - v_star| exactly.
inline CollisionOutcome post_collision(const MassPair& m, const CollisionInput& in) {
  detail::require_unit(in.omega);
  const double d = (in.v - in.v_star).dot(in.omega);
  return {in.v - m.coeff_alpha() * d * in.omega,
          in.v_star + m.coeff_beta() * d * in.omega};
}

/// cos(theta) convention: omega . (v - v_star) / |v - v_star|, zero at
/// coincident velocities.
inline double cos_theta(const CollisionInput& in) {
  const Vec3 u = in.v - in.v_star;
  const double r = u.norm();
  return r == 0 ? 0.0 : u.dot(in.omega) / r;
}

namespace detail {
// Determinant of a 6x6 matrix by partial-pivot elimination.
inline double det6(std::array<std::array<double, 6>, 6> a) {
  double det = 1.0;
  for (int c = 0; c < 6; ++c) {
    int piv = c;
    for (int r = c + 1; r < 6; ++r)
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    if (a[piv][c] == 0.0) return 0.0;
    if (piv != c) {
      std::swap(a[piv], a[c]);
      det = -det;
    }
    det *= a[c][c];
    for (int r = c + 1; r < 6; ++r) {
      const double f = a[r][c] / a[c][c];
      for (int k = c; k < 6; ++k) a[r][k] -= f * a[c][k];
    }
  }
  return det;
}
}  // namespace detail

/// Central finite-difference determinant of the map (v, v_star) -> (v',
/// v_star') at fixed omega.  The analytic value is -1 for every mass pair
/// and every direction.
inline double jacobian_determinant(const MassPair& m, const CollisionInput& in,
                                   double fd_step = 1e-5) {
  if (!(fd_step > 0) || fd_step > 1e-3)
    throw std::invalid_argument("jacobian_determinant: fd_step must lie in (0, 1e-3]");
  detail::require_unit(in.omega);

  std::array<std::array<double, 6>, 6> jac{};
  for (int j = 0; j < 6; ++j) {
    CollisionInput plus = in, minus = in;
    Vec3& p = j < 3 ? plus.v : plus.v_star;
    Vec3& q = j < 3 ? minus.v : minus.v_star;
    p[j % 3] += fd_step;
    q[j % 3] -= fd_step;
    const CollisionOutcome op = post_collision(m, plus);
    const CollisionOutcome om = post_collision(m, minus);
    for (int i = 0; i < 3; ++i) {
      jac[i][j] = (op.v_prime[i] - om.v_prime[i]) / (2.0 * fd_step);
      jac[i + 3][j] = (op.v_star_prime[i] - om.v_star_prime[i]) / (2.0 * fd_step);
    }
  }
  const double det = detail::det6(jac);
  if (!std::isfinite(det))
    throw std::invalid_argument("jacobian_determinant: degenerate fd_step");
  return det;
}

/// Seeded uniform samples on S^2.
inline std::vector<Vec3> sample_sphere(std::uint64_t seed, std::size_t n) {
  if (n < 1) throw std::invalid_argument("sample_sphere: n must be >= 1");
  Rng rng(seed);
  std::vector<Vec3> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(rng.unit_vector());
  return out;
}

}  // namespace binarykin
