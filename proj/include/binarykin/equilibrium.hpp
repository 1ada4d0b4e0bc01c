#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "binarykin/core.hpp"
#include "binarykin/grid.hpp"
#include "binarykin/kinematics.hpp"

namespace binarykin {

/// mu^alpha(v) = (m^alpha)^{3/2} (2 pi)^{-3/2} exp(-m^alpha |v|^2 / 2).
inline std::array<double, 2> maxwellian_eval(const MassPair& m, const Vec3& v) {
  const double c = std::pow(2.0 * M_PI, -1.5);
  const double v2 = v.norm2();
  return {c * std::pow(m.m_alpha, 1.5) * std::exp(-0.5 * m.m_alpha * v2),
          c * std::pow(m.m_beta, 1.5) * std::exp(-0.5 * m.m_beta * v2)};
}

inline double maxwellian_species(double mass, const Vec3& v) {
  return std::pow(mass / (2.0 * M_PI), 1.5) * std::exp(-0.5 * mass * v.norm2());
}

inline double sqrt_maxwellian_species(double mass, const Vec3& v) {
  return std::pow(mass / (2.0 * M_PI), 0.75) * std::exp(-0.25 * mass * v.norm2());
}

struct BiMaxwellian {
  MassPair masses;

  explicit BiMaxwellian(const MassPair& m) : masses(m) {}

  std::array<double, 2> eval(const Vec3& v) const { return maxwellian_eval(masses, v); }

  VPairField sample(const VelocityGrid& g) const {
    VPairField f(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto mu = maxwellian_eval(masses, g.node(i));
      f.a[i] = mu[0];
      f.b[i] = mu[1];
    }
    return f;
  }

  VPairField sample_sqrt(const VelocityGrid& g) const {
    VPairField f(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      f.a[i] = sqrt_maxwellian_species(masses.m_alpha, g.node(i));
      f.b[i] = sqrt_maxwellian_species(masses.m_beta, g.node(i));
    }
    return f;
  }

  /// Quadrature residual of the normalization, per species.
  std::array<double, 2> normalization_residual(const VelocityGrid& g) const {
    double ia = 0, ib = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto mu = maxwellian_eval(masses, g.node(i));
      const double q = g.quad_weight(i);
      ia += q * mu[0];
      ib += q * mu[1];
    }
    return {ia - 1.0, ib - 1.0};
  }
};

namespace detail {

inline std::array<double, 6> solve6(std::array<std::array<double, 6>, 6> a,
                                    std::array<double, 6> rhs) {
  for (int c = 0; c < 6; ++c) {
    int piv = c;
    for (int r = c + 1; r < 6; ++r)
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    if (a[piv][c] == 0.0)
      throw std::runtime_error("singular 6x6 Gram system");
    std::swap(a[piv], a[c]);
    std::swap(rhs[piv], rhs[c]);
    for (int r = c + 1; r < 6; ++r) {
      const double f = a[r][c] / a[c][c];
      rhs[r] -= f * rhs[c];
      for (int k = c; k < 6; ++k) a[r][k] -= f * a[c][k];
    }
  }
  std::array<double, 6> x{};
  for (int r = 5; r >= 0; --r) {
    double s = rhs[r];
    for (int k = r + 1; k < 6; ++k) s -= a[r][k] * x[k];
    x[r] = s / a[r][r];
  }
  return x;
}

}  // namespace detail

/// The six raw collision invariants sampled on the grid, in the fixed
/// order (e1:sqrt mu), (e2:sqrt mu), v_i (m:sqrt mu), |v|^2 (m:sqrt mu).
inline std::array<VPairField, 6> raw_invariants(const MassPair& m, const VelocityGrid& g) {
  std::array<VPairField, 6> psi;
  for (auto& p : psi) p = VPairField(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Vec3 v = g.node(i);
    const double sa = sqrt_maxwellian_species(m.m_alpha, v);
    const double sb = sqrt_maxwellian_species(m.m_beta, v);
    psi[0].a[i] = sa;
    psi[1].b[i] = sb;
    for (int d = 0; d < 3; ++d) {
      psi[2 + d].a[i] = m.m_alpha * v[d] * sa;
      psi[2 + d].b[i] = m.m_beta * v[d] * sb;
    }
    psi[5].a[i] = m.m_alpha * v.norm2() * sa;
    psi[5].b[i] = m.m_beta * v.norm2() * sb;
  }
  return psi;
}

/// Orthonormalized collision-invariant basis with the grid inner product.
class InvariantBasis {
 public:
  InvariantBasis(const MassPair& masses, const VelocityGrid& grid)
      : masses_(masses), grid_(grid) {
    if (grid.radius() < 6.0 / std::sqrt(masses.min_mass()))
      throw ConfigError("InvariantBasis: grid radius " + std::to_string(grid.radius()) +
                        " does not resolve the Gaussians (need >= 6/sqrt(min mass))");
    build();
  }

  const VelocityGrid& grid() const { return grid_; }
  const MassPair& masses() const { return masses_; }
  const VPairField& chi(int j) const { return chi_[j]; }
  const VPairField& raw(int j) const { return psi_[j]; }
  const std::array<std::array<double, 6>, 6>& gram() const { return gram_; }

  double inner(const VPairField& f, const VPairField& g) const {
    double acc = 0;
    for (std::size_t i = 0; i < f.size(); ++i)
      acc += grid_.quad_weight(i) * (f.a[i] * g.a[i] + f.b[i] * g.b[i]);
    return acc;
  }

  std::array<double, 6> coefficients(const VPairField& f) const {
    std::array<double, 6> c{};
    for (int j = 0; j < 6; ++j) c[j] = inner(f, chi_[j]);
    return c;
  }

  /// P0 applied to one velocity slice.
  VPairField project(const VPairField& f) const {
    const auto c = coefficients(f);
    VPairField out(f.size());
    for (int j = 0; j < 6; ++j)
      for (std::size_t i = 0; i < f.size(); ++i) {
        out.a[i] += c[j] * chi_[j].a[i];
        out.b[i] += c[j] * chi_[j].b[i];
      }
    return out;
  }

  /// f minus its projection, in place.
  void deflate(VPairField& f) const {
    const auto c = coefficients(f);
    for (int j = 0; j < 6; ++j)
      for (std::size_t i = 0; i < f.size(); ++i) {
        f.a[i] -= c[j] * chi_[j].a[i];
        f.b[i] -= c[j] * chi_[j].b[i];
      }
  }

 private:
  void build() {
    psi_ = raw_invariants(masses_, grid_);
    for (int j = 0; j < 6; ++j)
      for (int k = 0; k < 6; ++k) gram_[j][k] = inner(psi_[j], psi_[k]);

    // Modified Gram-Schmidt with one re-orthogonalization pass.
    static const char* names[6] = {"(e1:sqrt mu)", "(e2:sqrt mu)", "v1(m:sqrt mu)",
                                   "v2(m:sqrt mu)", "v3(m:sqrt mu)", "|v|^2(m:sqrt mu)"};
    for (int j = 0; j < 6; ++j) {
      VPairField v = psi_[j];
      const double norm0 = std::sqrt(inner(v, v));
      for (int pass = 0; pass < 2; ++pass)
        for (int k = 0; k < j; ++k) {
          const double c = inner(v, chi_[k]);
          for (std::size_t i = 0; i < v.size(); ++i) {
            v.a[i] -= c * chi_[k].a[i];
            v.b[i] -= c * chi_[k].b[i];
          }
        }
      const double norm1 = std::sqrt(inner(v, v));
      if (!(norm1 > 1e-10 * norm0))
        throw std::runtime_error(std::string("InvariantBasis: rank deficiency at ") +
                                 names[j] + " (grid too coarse)");
      const double inv = 1.0 / norm1;
      for (std::size_t i = 0; i < v.size(); ++i) {
        v.a[i] *= inv;
        v.b[i] *= inv;
      }
      chi_[j] = v;
    }
  }

  MassPair masses_;
  VelocityGrid grid_;
  std::array<VPairField, 6> psi_;
  std::array<VPairField, 6> chi_;
  std::array<std::array<double, 6>, 6> gram_{};
};

inline InvariantBasis build_invariant_basis(const MassPair& m, const VelocityGrid& g) {
  return InvariantBasis(m, g);
}

/// P0 f pointwise in x.
inline DistributionPair project_P0(const InvariantBasis& basis, const DistributionPair& f) {
  if (!f.vgrid.same_as(basis.grid()))
    throw std::invalid_argument("project_P0: field grid does not match basis grid");
  DistributionPair out(f.xgrid, f.vgrid);
  for (std::size_t ix = 0; ix < f.xgrid.size(); ++ix)
    out.set_x(ix, basis.project(f.at_x(ix)));
  return out;
}

/// The six conserved functionals: species masses, momentum, kinetic energy.
inline std::array<double, 6> conservation_functionals(const MassPair& m,
                                                      const DistributionPair& f) {
  std::array<double, 6> out{};
  const std::size_t nv = f.vgrid.size();
  const double qx = f.xgrid.cell_weight();
  for (std::size_t iv = 0; iv < nv; ++iv) {
    const Vec3 v = f.vgrid.node(iv);
    const double qv = f.vgrid.quad_weight(iv);
    const double sa = sqrt_maxwellian_species(m.m_alpha, v);
    const double sb = sqrt_maxwellian_species(m.m_beta, v);
    double suma = 0, sumb = 0;
    for (std::size_t ix = 0; ix < f.xgrid.size(); ++ix) {
      suma += f.a[ix * nv + iv];
      sumb += f.b[ix * nv + iv];
    }
    const double wa = qx * qv * suma, wb = qx * qv * sumb;
    out[0] += wa * sa;
    out[1] += wb * sb;
    for (int d = 0; d < 3; ++d)
      out[2 + d] += wa * m.m_alpha * v[d] * sa + wb * m.m_beta * v[d] * sb;
    out[5] += 0.5 * v.norm2() * (wa * m.m_alpha * sa + wb * m.m_beta * sb);
  }
  return out;
}

/// Hydrodynamic coefficient fields a(x), b(x), c(x).
struct MacroState {
  std::vector<double> a1, a2;      // species densities
  std::vector<double> b1, b2, b3;  // bulk velocity coefficient
  std::vector<double> c;           // temperature coefficient
};

/// Solve the 6x6 Gram system of the raw invariants at every x so that the
/// reconstruction (a:sqrt mu) + (b.v)(m:sqrt mu) + c|v|^2(m:sqrt mu)
/// equals P0 f.
inline MacroState macroscopic_moments(const InvariantBasis& basis,
                                      const DistributionPair& f) {
  if (!f.vgrid.same_as(basis.grid()))
    throw std::invalid_argument("macroscopic_moments: grid mismatch");
  const std::size_t nx = f.xgrid.size();
  MacroState st;
  st.a1.resize(nx);
  st.a2.resize(nx);
  st.b1.resize(nx);
  st.b2.resize(nx);
  st.b3.resize(nx);
  st.c.resize(nx);
  for (std::size_t ix = 0; ix < nx; ++ix) {
    const VPairField slice = f.at_x(ix);
    std::array<double, 6> rhs{};
    for (int j = 0; j < 6; ++j) rhs[j] = basis.inner(slice, basis.raw(j));
    std::array<double, 6> c;
    try {
      c = detail::solve6(basis.gram(), rhs);
    } catch (const std::runtime_error&) {
      throw std::runtime_error("macroscopic_moments: singular Gram system at x-index " +
                               std::to_string(ix));
    }
    st.a1[ix] = c[0];
    st.a2[ix] = c[1];
    st.b1[ix] = c[2];
    st.b2[ix] = c[3];
    st.b3[ix] = c[4];
    st.c[ix] = c[5];
  }
  return st;
}

/// Reconstruction of the invariant-span field described by a MacroState.
inline DistributionPair reconstruct_macro(const InvariantBasis& basis,
                                          const SpatialGrid& xg, const MacroState& st) {
  DistributionPair out(xg, basis.grid());
  const std::size_t nv = basis.grid().size();
  for (std::size_t ix = 0; ix < xg.size(); ++ix) {
    const double coef[6] = {st.a1[ix], st.a2[ix], st.b1[ix], st.b2[ix], st.b3[ix], st.c[ix]};
    for (int j = 0; j < 6; ++j) {
      const VPairField& p = basis.raw(j);
      for (std::size_t iv = 0; iv < nv; ++iv) {
        out.a[ix * nv + iv] += coef[j] * p.a[iv];
        out.b[ix * nv + iv] += coef[j] * p.b[iv];
      }
    }
  }
  return out;
}

}  // namespace binarykin
