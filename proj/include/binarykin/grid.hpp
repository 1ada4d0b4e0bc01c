#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "binarykin/core.hpp"

namespace binarykin {

/// Uniform symmetric lattice on [-radius, radius]^3 with trapezoidal
/// quadrature weights.  Nodes are symmetric under v -> -v and the weights
/// sum to (2 radius)^3.
class VelocityGrid {
 public:
  VelocityGrid(double radius, int points_per_axis)
      : radius_(radius), n_(points_per_axis) {
    if (!(radius > 0)) throw ConfigError("VelocityGrid: radius must be positive");
    if (n_ < 3 || n_ % 2 == 0)
      throw ConfigError("VelocityGrid: points_per_axis must be odd and >= 3");
    h_ = 2.0 * radius_ / (n_ - 1);
  }

  double radius() const { return radius_; }
  int points_per_axis() const { return n_; }
  double spacing() const { return h_; }
  std::size_t size() const { return static_cast<std::size_t>(n_) * n_ * n_; }

  double coord(int i) const { return -radius_ + h_ * i; }
  double weight1d(int i) const { return (i == 0 || i == n_ - 1) ? 0.5 * h_ : h_; }

  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * n_ + j) * n_ + k;
  }

  Vec3 node(std::size_t flat) const {
    const int k = static_cast<int>(flat % n_);
    const int j = static_cast<int>((flat / n_) % n_);
    const int i = static_cast<int>(flat / (static_cast<std::size_t>(n_) * n_));
    return {coord(i), coord(j), coord(k)};
  }

  double quad_weight(std::size_t flat) const {
    const int k = static_cast<int>(flat % n_);
    const int j = static_cast<int>((flat / n_) % n_);
    const int i = static_cast<int>(flat / (static_cast<std::size_t>(n_) * n_));
    return weight1d(i) * weight1d(j) * weight1d(k);
  }

  /// Trilinear interpolation of a nodal field; zero outside the grid cube.
  double interpolate(const std::vector<double>& f, const Vec3& p) const {
    return interpolate(f.data(), p);
  }

  double interpolate(const double* f, const Vec3& p) const {
    const double tx = (p.x + radius_) / h_;
    const double ty = (p.y + radius_) / h_;
    const double tz = (p.z + radius_) / h_;
    if (tx < 0 || ty < 0 || tz < 0 || tx > n_ - 1 || ty > n_ - 1 || tz > n_ - 1)
      return 0.0;
    int i = static_cast<int>(tx), j = static_cast<int>(ty), k = static_cast<int>(tz);
    if (i > n_ - 2) i = n_ - 2;
    if (j > n_ - 2) j = n_ - 2;
    if (k > n_ - 2) k = n_ - 2;
    const double fx = tx - i, fy = ty - j, fz = tz - k;
    const std::size_t s = index(i, j, k);
    const std::size_t dk = 1, dj = n_, di = static_cast<std::size_t>(n_) * n_;
    const double c00 = f[s] * (1 - fz) + f[s + dk] * fz;
    const double c01 = f[s + dj] * (1 - fz) + f[s + dj + dk] * fz;
    const double c10 = f[s + di] * (1 - fz) + f[s + di + dk] * fz;
    const double c11 = f[s + di + dj] * (1 - fz) + f[s + di + dj + dk] * fz;
    return (c00 * (1 - fy) + c01 * fy) * (1 - fx) + (c10 * (1 - fy) + c11 * fy) * fx;
  }

  /// Stencil of the trilinear interpolation at p: up to 8 (node, weight)
  /// pairs.  Returns the number of pairs written (0 outside the cube).
  int stencil(const Vec3& p, std::size_t idx[8], double wts[8]) const {
    const double tx = (p.x + radius_) / h_;
    const double ty = (p.y + radius_) / h_;
    const double tz = (p.z + radius_) / h_;
    if (tx < 0 || ty < 0 || tz < 0 || tx > n_ - 1 || ty > n_ - 1 || tz > n_ - 1)
      return 0;
    int i = static_cast<int>(tx), j = static_cast<int>(ty), k = static_cast<int>(tz);
    if (i > n_ - 2) i = n_ - 2;
    if (j > n_ - 2) j = n_ - 2;
    if (k > n_ - 2) k = n_ - 2;
    const double fx = tx - i, fy = ty - j, fz = tz - k;
    const double wx[2] = {1 - fx, fx}, wy[2] = {1 - fy, fy}, wz[2] = {1 - fz, fz};
    int m = 0;
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b)
        for (int c = 0; c < 2; ++c) {
          idx[m] = index(i + a, j + b, k + c);
          wts[m] = wx[a] * wy[b] * wz[c];
          ++m;
        }
    return m;
  }

  bool same_as(const VelocityGrid& o) const {
    return n_ == o.n_ && radius_ == o.radius_;
  }

 private:
  double radius_;
  int n_;
  double h_;
};

/// Periodic grid on [-pi, pi]^dims, dims = 1 or 3.
class SpatialGrid {
 public:
  SpatialGrid(int dims, int points_per_axis) : dims_(dims), n_(points_per_axis) {
    if (dims_ != 1 && dims_ != 3) throw ConfigError("SpatialGrid: dims must be 1 or 3");
    if (n_ < 2) throw ConfigError("SpatialGrid: points_per_axis must be >= 2");
    h_ = 2.0 * M_PI / n_;
  }

  int dims() const { return dims_; }
  int points_per_axis() const { return n_; }
  double spacing() const { return h_; }
  std::size_t size() const {
    std::size_t s = 1;
    for (int d = 0; d < dims_; ++d) s *= n_;
    return s;
  }
  /// Quadrature weight per node (uniform; trapezoid is exact on the torus).
  double cell_weight() const { return std::pow(h_, dims_); }
  double measure() const { return std::pow(2.0 * M_PI, dims_); }
  double coord(int i) const { return -M_PI + h_ * i; }
  int wrap(int i) const { return ((i % n_) + n_) % n_; }

  std::array<int, 3> unflatten(std::size_t flat) const {
    std::array<int, 3> ix{0, 0, 0};
    if (dims_ == 1) {
      ix[0] = static_cast<int>(flat);
    } else {
      ix[2] = static_cast<int>(flat % n_);
      ix[1] = static_cast<int>((flat / n_) % n_);
      ix[0] = static_cast<int>(flat / (static_cast<std::size_t>(n_) * n_));
    }
    return ix;
  }

  std::size_t flatten(const std::array<int, 3>& ix) const {
    if (dims_ == 1) return static_cast<std::size_t>(wrap(ix[0]));
    return (static_cast<std::size_t>(wrap(ix[0])) * n_ + wrap(ix[1])) * n_ + wrap(ix[2]);
  }

 private:
  int dims_;
  int n_;
  double h_;
};

/// Pair-valued field over velocity only (one spatial point).
struct VPairField {
  std::vector<double> a, b;

  VPairField() = default;
  explicit VPairField(std::size_t nv) : a(nv, 0.0), b(nv, 0.0) {}

  std::vector<double>& species(int s) { return s == 0 ? a : b; }
  const std::vector<double>& species(int s) const { return s == 0 ? a : b; }
  std::size_t size() const { return a.size(); }
};

/// The state f = (f^A, f^B) sampled on SpatialGrid x VelocityGrid.
struct DistributionPair {
  SpatialGrid xgrid;
  VelocityGrid vgrid;
  std::vector<double> a, b;  // layout: [ix * Nv + iv]

  DistributionPair(const SpatialGrid& xg, const VelocityGrid& vg)
      : xgrid(xg), vgrid(vg),
        a(xg.size() * vg.size(), 0.0),
        b(xg.size() * vg.size(), 0.0) {}

  std::vector<double>& species(int s) { return s == 0 ? a : b; }
  const std::vector<double>& species(int s) const { return s == 0 ? a : b; }

  double* slice(int s, std::size_t ix) {
    return species(s).data() + ix * vgrid.size();
  }
  const double* slice(int s, std::size_t ix) const {
    return species(s).data() + ix * vgrid.size();
  }

  VPairField at_x(std::size_t ix) const {
    VPairField out(vgrid.size());
    const std::size_t nv = vgrid.size();
    for (std::size_t iv = 0; iv < nv; ++iv) {
      out.a[iv] = a[ix * nv + iv];
      out.b[iv] = b[ix * nv + iv];
    }
    return out;
  }

  void set_x(std::size_t ix, const VPairField& f) {
    const std::size_t nv = vgrid.size();
    for (std::size_t iv = 0; iv < nv; ++iv) {
      a[ix * nv + iv] = f.a[iv];
      b[ix * nv + iv] = f.b[iv];
    }
  }
};

/// w(v) = (1 + |v|)^gamma together with the auxiliary power l.
struct WeightSpec {
  double gamma = -1.0;
  double l = 0.0;

  WeightSpec() = default;
  WeightSpec(double g, double l_) : gamma(g), l(l_) {
    if (!(g > -3.0 && g < 0.0))
      throw ConfigError("WeightSpec: gamma must lie in (-3, 0)");
    if (l_ < 0) throw ConfigError("WeightSpec: l must be nonnegative");
  }

  double w(const Vec3& v) const { return std::pow(1.0 + v.norm(), gamma); }
};

/// Multi-index pair: alpha for x-derivatives, beta for v-derivatives.
struct MultiIndex {
  std::array<int, 3> alpha{0, 0, 0};
  std::array<int, 3> beta{0, 0, 0};

  int order_x() const { return alpha[0] + alpha[1] + alpha[2]; }
  int order_v() const { return beta[0] + beta[1] + beta[2]; }
};

/// All (alpha, beta) with |alpha| + |beta| <= N; alpha restricted to the
/// active spatial dimensions.
inline std::vector<MultiIndex> enumerate_multi_indices(int N, int xdims) {
  std::vector<MultiIndex> out;
  auto push_alphas = [&](int total_x, auto&& emit) {
    if (xdims == 1) {
      MultiIndex m;
      m.alpha = {total_x, 0, 0};
      emit(m);
    } else {
      for (int a0 = 0; a0 <= total_x; ++a0)
        for (int a1 = 0; a1 + a0 <= total_x; ++a1) {
          MultiIndex m;
          m.alpha = {a0, a1, total_x - a0 - a1};
          emit(m);
        }
    }
  };
  for (int ax = 0; ax <= N; ++ax)
    for (int bv = 0; ax + bv <= N; ++bv)
      push_alphas(ax, [&](MultiIndex base) {
        for (int b0 = 0; b0 <= bv; ++b0)
          for (int b1 = 0; b1 + b0 <= bv; ++b1) {
            MultiIndex m = base;
            m.beta = {b0, b1, bv - b0 - b1};
            out.push_back(m);
          }
      });
  return out;
}

namespace detail {

// One centered second-order derivative along a line of length n with
// spacing h.  Periodic wrap or one-sided second-order stencils at the ends.
inline void diff_line(const double* in, double* out, int n, double h, bool periodic,
                      std::ptrdiff_t stride) {
  const double inv2h = 1.0 / (2.0 * h);
  auto at = [&](int i) { return in[static_cast<std::ptrdiff_t>(i) * stride]; };
  if (periodic) {
    for (int i = 0; i < n; ++i) {
      const int ip = (i + 1) % n, im = (i - 1 + n) % n;
      out[static_cast<std::ptrdiff_t>(i) * stride] = (at(ip) - at(im)) * inv2h;
    }
    return;
  }
  for (int i = 1; i < n - 1; ++i)
    out[static_cast<std::ptrdiff_t>(i) * stride] = (at(i + 1) - at(i - 1)) * inv2h;
  out[0] = (-3.0 * at(0) + 4.0 * at(1) - at(2)) * inv2h;
  out[static_cast<std::ptrdiff_t>(n - 1) * stride] =
      (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) * inv2h;
}

}  // namespace detail

/// Apply d/dv_axis once to a velocity field.
inline std::vector<double> diff_v(const VelocityGrid& g, const std::vector<double>& f,
                                  int axis) {
  const int n = g.points_per_axis();
  std::vector<double> out(f.size());
  const std::ptrdiff_t strides[3] = {static_cast<std::ptrdiff_t>(n) * n, n, 1};
  const std::ptrdiff_t st = strides[axis];
  // iterate over all lines along `axis`
  for (int p = 0; p < n; ++p)
    for (int q = 0; q < n; ++q) {
      std::size_t base;
      if (axis == 0) base = g.index(0, p, q);
      else if (axis == 1) base = g.index(p, 0, q);
      else base = g.index(p, q, 0);
      detail::diff_line(f.data() + base, out.data() + base, n, g.spacing(), false, st);
    }
  return out;
}

/// Centered second-order realization of d^alpha_x d^beta_v on the full
/// phase-space field.  x-derivatives wrap periodically; v-derivatives use
/// one-sided stencils at the truncation boundary.  Exact on polynomials of
/// degree <= 2 in the differentiated variable.
inline DistributionPair finite_diff(const DistributionPair& f, const MultiIndex& mi) {
  if (mi.order_v() > 2)
    throw std::invalid_argument("finite_diff: |beta| > 2 unsupported at desk scale");
  if (mi.order_x() > 4)
    throw std::invalid_argument("finite_diff: |alpha| > 4 unsupported");
  for (int d = f.xgrid.dims(); d < 3; ++d)
    if (mi.alpha[d] != 0)
      throw std::invalid_argument("finite_diff: x-derivative along inactive dimension");

  DistributionPair out = f;
  const std::size_t nv = f.vgrid.size();
  const std::size_t nx = f.xgrid.size();
  const int n_x = f.xgrid.points_per_axis();

  // x-derivatives: for each velocity node, differentiate along x-lines.
  for (int axis = 0; axis < f.xgrid.dims(); ++axis) {
    for (int rep = 0; rep < mi.alpha[axis]; ++rep) {
      DistributionPair tmp = out;
      for (int s = 0; s < 2; ++s) {
        std::vector<double>& src = tmp.species(s);
        std::vector<double>& dst = out.species(s);
        // stride between consecutive x-points along `axis`, in units of nv
        std::size_t xstride = 1;
        for (int d = axis + 1; d < f.xgrid.dims(); ++d) xstride *= n_x;
        std::vector<double> line(n_x), dline(n_x);
        for (std::size_t ix = 0; ix < nx; ++ix) {
          const auto coords = f.xgrid.unflatten(ix);
          if (coords[axis] != 0) continue;  // handle each line once
          for (std::size_t iv = 0; iv < nv; ++iv) {
            for (int p = 0; p < n_x; ++p)
              line[p] = src[(ix + p * xstride) * nv + iv];
            detail::diff_line(line.data(), dline.data(), n_x, f.xgrid.spacing(), true, 1);
            for (int p = 0; p < n_x; ++p)
              dst[(ix + p * xstride) * nv + iv] = dline[p];
          }
        }
      }
    }
  }

  // v-derivatives per x-slice.
  for (int axis = 0; axis < 3; ++axis) {
    for (int rep = 0; rep < mi.beta[axis]; ++rep) {
      DistributionPair tmp = out;
      for (int s = 0; s < 2; ++s)
        for (std::size_t ix = 0; ix < nx; ++ix) {
          std::vector<double> slice(tmp.slice(s, ix), tmp.slice(s, ix) + nv);
          std::vector<double> d = diff_v(f.vgrid, slice, axis);
          std::copy(d.begin(), d.end(), out.slice(s, ix));
        }
    }
  }
  return out;
}

/// || w^l f ||_nu = ( sum over species, x, v of |w^l f|^2 w q )^(1/2).
inline double weighted_norm_nu(const WeightSpec& ws, const DistributionPair& f) {
  const std::size_t nv = f.vgrid.size();
  const double qx = f.xgrid.cell_weight();
  double acc = 0;
  for (std::size_t iv = 0; iv < nv; ++iv) {
    const double w = ws.w(f.vgrid.node(iv));
    const double wl = std::pow(w, ws.l);
    const double qv = f.vgrid.quad_weight(iv);
    double sum_x = 0;
    for (std::size_t ix = 0; ix < f.xgrid.size(); ++ix) {
      const double fa = f.a[ix * nv + iv], fb = f.b[ix * nv + iv];
      sum_x += fa * fa + fb * fb;
    }
    acc += sum_x * wl * wl * w * qv * qx;
  }
  return std::sqrt(acc);
}

/// Plain L^2 norm with the w^l weight (no extra factor of w).
inline double weighted_norm_l2(const WeightSpec& ws, const DistributionPair& f) {
  const std::size_t nv = f.vgrid.size();
  const double qx = f.xgrid.cell_weight();
  double acc = 0;
  for (std::size_t iv = 0; iv < nv; ++iv) {
    const double wl = std::pow(ws.w(f.vgrid.node(iv)), ws.l);
    const double qv = f.vgrid.quad_weight(iv);
    double sum_x = 0;
    for (std::size_t ix = 0; ix < f.xgrid.size(); ++ix) {
      const double fa = f.a[ix * nv + iv], fb = f.b[ix * nv + iv];
      sum_x += fa * fa + fb * fb;
    }
    acc += sum_x * wl * wl * qv * qx;
  }
  return std::sqrt(acc);
}

/// Velocity-only nu-norm of a pair field (one spatial point).
inline double norm_nu_v(const WeightSpec& ws, const VelocityGrid& g, const VPairField& f) {
  double acc = 0;
  for (std::size_t iv = 0; iv < f.size(); ++iv) {
    const double w = ws.w(g.node(iv));
    const double wl = std::pow(w, ws.l);
    const double q = g.quad_weight(iv);
    acc += (f.a[iv] * f.a[iv] + f.b[iv] * f.b[iv]) * wl * wl * w * q;
  }
  return std::sqrt(acc);
}

/// Energy functional terms for one snapshot: (1/2 ||w^|b| d f||_L2^2,
/// ||w^|b| d f||_nu^2) for every |alpha|+|beta| <= N.
inline std::vector<std::array<double, 2>> energy_terms(const DistributionPair& f, int N,
                                                       const WeightSpec& ws) {
  std::vector<std::array<double, 2>> out;
  for (const MultiIndex& mi : enumerate_multi_indices(N, f.xgrid.dims())) {
    const DistributionPair df = finite_diff(f, mi);
    WeightSpec wl(ws.gamma, static_cast<double>(mi.order_v()));
    const double l2 = weighted_norm_l2(wl, df);
    const double nu = weighted_norm_nu(wl, df);
    out.push_back({0.5 * l2 * l2, nu * nu});
  }
  return out;
}

/// E[f(t)] at the final snapshot of a history: instantaneous part plus the
/// trapezoid-integrated dissipation.
inline double energy_functional(const std::vector<std::pair<double, DistributionPair>>& history,
                                int N, const WeightSpec& ws) {
  if (history.empty())
    throw std::invalid_argument("energy_functional: empty history");
  std::vector<std::vector<std::array<double, 2>>> terms;
  terms.reserve(history.size());
  for (const auto& [t, f] : history) terms.push_back(energy_terms(f, N, ws));
  const std::size_t nterms = terms.front().size();
  double e = 0;
  for (std::size_t k = 0; k < nterms; ++k) {
    e += terms.back()[k][0];
    for (std::size_t s = 0; s + 1 < history.size(); ++s) {
      const double dt = history[s + 1].first - history[s].first;
      e += 0.5 * dt * (terms[s][k][1] + terms[s + 1][k][1]);
    }
  }
  return e;
}

}  // namespace binarykin
