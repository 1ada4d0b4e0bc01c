#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "binarykin/equilibrium.hpp"
#include "binarykin/grid.hpp"

using namespace binarykin;

TEST_CASE("velocity grid basics") {
  const VelocityGrid g(8.0, 17);
  CHECK(g.spacing() == Catch::Approx(1.0));
  double wsum = 0;
  for (std::size_t i = 0; i < g.size(); ++i) wsum += g.quad_weight(i);
  CHECK(wsum == Catch::Approx(std::pow(16.0, 3)).epsilon(1e-12));

  // symmetry under v -> -v
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Vec3 v = g.node(i);
    bool found = false;
    for (std::size_t j = 0; j < g.size(); ++j)
      if ((g.node(j) + v).norm() < 1e-12) {
        found = true;
        break;
      }
    if (i > 50) break;  // spot check
    CHECK(found);
  }
}

TEST_CASE("trilinear interpolation reproduces linear fields") {
  const VelocityGrid g(4.0, 9);
  std::vector<double> f(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Vec3 v = g.node(i);
    f[i] = 2.0 + 0.5 * v.x - 0.25 * v.y + v.z;
  }
  Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    const Vec3 p{rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-4, 4)};
    const double exact = 2.0 + 0.5 * p.x - 0.25 * p.y + p.z;
    CHECK(g.interpolate(f, p) == Catch::Approx(exact).margin(1e-12));
  }
  CHECK(g.interpolate(f, {5.0, 0, 0}) == 0.0);
}

TEST_CASE("maxwellian quadrature converges with order >= 2") {
  // the narrow species keeps the trapezoid error above rounding so the
  // observed order is measurable
  const MassPair m(1, 8);
  std::vector<double> errs;
  for (int n : {17, 25, 33}) {
    const VelocityGrid g(8.0, n);
    const auto resid = BiMaxwellian(m).normalization_residual(g);
    errs.push_back(std::abs(resid[1]));
  }
  CHECK(errs[2] < errs[1]);
  CHECK(errs[1] < errs[0]);
  const double order = std::log(errs[0] / errs[2]) /
                       std::log((33.0 - 1.0) / (17.0 - 1.0));
  CHECK(order >= 2.0);
  CHECK(errs[2] < 1e-3);
}

TEST_CASE("weighted nu norm") {
  const SpatialGrid xg(1, 4);
  const VelocityGrid vg(4.0, 9);
  const WeightSpec ws(-1.0, 0.0);

  SECTION("zero field") {
    DistributionPair f(xg, vg);
    CHECK(weighted_norm_nu(ws, f) == 0.0);
  }

  SECTION("single node") {
    DistributionPair f(xg, vg);
    const std::size_t iv = vg.index(2, 3, 4);
    f.a[0 * vg.size() + iv] = 1.0;
    const double w = std::pow(1.0 + vg.node(iv).norm(), -1.0);
    const double expect = std::sqrt(vg.quad_weight(iv) * w * xg.cell_weight());
    CHECK(weighted_norm_nu(ws, f) == Catch::Approx(expect).epsilon(1e-12));
  }

  SECTION("indicator of the unit ball matches the radial integral") {
    // 2 pi * 4 pi * int_0^1 r^2/(1+r) dr, 1D x of measure 2 pi
    const double radial = std::log(2.0) - 0.5;
    const double exact = 2.0 * M_PI * 4.0 * M_PI * radial;
    std::vector<double> approx;
    for (int n : {41, 81, 161}) {
      const VelocityGrid fine(2.0, n);
      const SpatialGrid x1(1, 4);
      DistributionPair f(x1, fine);
      for (std::size_t iv = 0; iv < fine.size(); ++iv)
        if (fine.node(iv).norm() <= 1.0)
          for (std::size_t ix = 0; ix < x1.size(); ++ix) f.a[ix * fine.size() + iv] = 1.0;
      const double nrm = weighted_norm_nu(ws, f);
      approx.push_back(nrm * nrm);
    }
    CHECK(std::abs(approx[2] - exact) < std::abs(approx[0] - exact));
    CHECK(approx[2] == Catch::Approx(exact).epsilon(0.03));
  }

  SECTION("w-monotonicity in l for gamma < 0") {
    DistributionPair f(xg, vg);
    Rng rng(3);
    for (double& v : f.a) v = rng.normal();
    for (double& v : f.b) v = rng.normal();
    const double n0 = weighted_norm_nu(WeightSpec(-1.0, 0.0), f);
    const double n1 = weighted_norm_nu(WeightSpec(-1.0, 1.0), f);
    const double n2 = weighted_norm_nu(WeightSpec(-1.0, 2.0), f);
    CHECK(n1 <= n0);
    CHECK(n2 <= n1);
  }
}

TEST_CASE("finite differences") {
  const SpatialGrid xg(1, 32);
  const VelocityGrid vg(4.0, 9);

  SECTION("constant field has zero derivative") {
    DistributionPair f(xg, vg);
    for (double& v : f.a) v = 3.5;
    MultiIndex mi;
    mi.alpha = {1, 0, 0};
    const auto df = finite_diff(f, mi);
    for (double v : df.a) CHECK(std::abs(v) < 1e-13);
  }

  SECTION("sin(x) derivative converges at second order") {
    std::vector<double> errs;
    for (int nx : {16, 32, 64}) {
      const SpatialGrid x(1, nx);
      DistributionPair f(x, vg);
      const std::size_t nv = vg.size();
      for (std::size_t ix = 0; ix < x.size(); ++ix)
        for (std::size_t iv = 0; iv < nv; ++iv)
          f.a[ix * nv + iv] = std::sin(x.coord(static_cast<int>(ix)));
      MultiIndex mi;
      mi.alpha = {1, 0, 0};
      const auto df = finite_diff(f, mi);
      double err = 0;
      for (std::size_t ix = 0; ix < x.size(); ++ix)
        err = std::max(err, std::abs(df.a[ix * nv] -
                                     std::cos(x.coord(static_cast<int>(ix)))));
      errs.push_back(err);
    }
    const double slope = std::log(errs[0] / errs[2]) / std::log(4.0);
    CHECK(slope > 1.9);
  }

  SECTION("second v-derivative exact on quadratics") {
    DistributionPair f(xg, vg);
    const std::size_t nv = vg.size();
    for (std::size_t ix = 0; ix < xg.size(); ++ix)
      for (std::size_t iv = 0; iv < nv; ++iv) {
        const Vec3 v = vg.node(iv);
        f.a[ix * nv + iv] = v.x * v.x;
      }
    MultiIndex mi;
    mi.beta = {2, 0, 0};
    const auto df = finite_diff(f, mi);
    for (std::size_t i = 0; i < df.a.size(); ++i)
      CHECK(df.a[i] == Catch::Approx(2.0).margin(1e-10));
  }

  SECTION("unsupported order") {
    DistributionPair f(xg, vg);
    MultiIndex mi;
    mi.beta = {3, 0, 0};
    CHECK_THROWS_AS(finite_diff(f, mi), std::invalid_argument);
  }
}

TEST_CASE("energy functional") {
  const SpatialGrid xg(1, 8);
  const VelocityGrid vg(4.0, 9);
  const WeightSpec ws(-1.0, 0.0);

  SECTION("zero history") {
    std::vector<std::pair<double, DistributionPair>> hist;
    hist.emplace_back(0.0, DistributionPair(xg, vg));
    CHECK(energy_functional(hist, 0, ws) == 0.0);
    hist.clear();
    CHECK_THROWS_AS(energy_functional(hist, 0, ws), std::invalid_argument);
  }

  SECTION("single snapshot is half the L2 norm squared") {
    DistributionPair f(xg, vg);
    Rng rng(10);
    for (double& v : f.a) v = rng.normal();
    std::vector<std::pair<double, DistributionPair>> hist;
    hist.emplace_back(0.0, f);
    const double l2 = weighted_norm_l2(ws, f);
    CHECK(energy_functional(hist, 0, ws) == Catch::Approx(0.5 * l2 * l2).epsilon(1e-12));
  }

  SECTION("constant history over [0,1]") {
    DistributionPair f(xg, vg);
    Rng rng(11);
    for (double& v : f.b) v = rng.normal();
    std::vector<std::pair<double, DistributionPair>> hist;
    for (int k = 0; k <= 4; ++k) hist.emplace_back(k / 4.0, f);
    const double l2 = weighted_norm_l2(ws, f);
    const double nu = weighted_norm_nu(ws, f);
    CHECK(energy_functional(hist, 0, ws) ==
          Catch::Approx(0.5 * l2 * l2 + nu * nu).epsilon(1e-12));
  }

  SECTION("monotone in the order N") {
    DistributionPair f(xg, vg);
    Rng rng(12);
    const std::size_t nv = vg.size();
    for (std::size_t ix = 0; ix < xg.size(); ++ix)
      for (std::size_t iv = 0; iv < nv; ++iv) {
        const Vec3 v = vg.node(iv);
        const double smooth = std::exp(-0.5 * v.norm2()) *
                              std::cos(xg.coord(static_cast<int>(ix)));
        f.a[ix * nv + iv] = smooth;
        f.b[ix * nv + iv] = 0.5 * smooth;
      }
    std::vector<std::pair<double, DistributionPair>> hist;
    hist.emplace_back(0.0, f);
    hist.emplace_back(0.5, f);
    const double e0 = energy_functional(hist, 0, ws);
    const double e1 = energy_functional(hist, 1, ws);
    const double e2 = energy_functional(hist, 2, ws);
    CHECK(e0 <= e1);
    CHECK(e1 <= e2);
  }
}
