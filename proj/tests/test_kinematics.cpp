#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "binarykin/kinematics.hpp"

using namespace binarykin;

namespace {

struct Residuals {
  double momentum = 0, energy = 0, rel_speed = 0;
};

Residuals collision_residuals(const MassPair& m, const CollisionInput& in,
                              const CollisionOutcome& out) {
  Residuals r;
  for (int d = 0; d < 3; ++d)
    r.momentum = std::max(r.momentum,
                          std::abs(m.m_alpha * out.v_prime[d] + m.m_beta * out.v_star_prime[d] -
                                   m.m_alpha * in.v[d] - m.m_beta * in.v_star[d]));
  const double e_in = m.m_alpha * in.v.norm2() + m.m_beta * in.v_star.norm2();
  const double e_out = m.m_alpha * out.v_prime.norm2() + m.m_beta * out.v_star_prime.norm2();
  r.energy = std::abs(e_out - e_in) / std::max(1.0, e_in);
  const double g_in = (in.v - in.v_star).norm();
  const double g_out = (out.v_prime - out.v_star_prime).norm();
  r.rel_speed = std::abs(g_out - g_in) / std::max(1.0, g_in);
  return r;
}

}  // namespace

TEST_CASE("post_collision examples") {
  SECTION("omega perpendicular to the relative velocity leaves it unchanged") {
    const auto out = post_collision(MassPair(1, 1), {{1, 0, 0}, {0, 0, 0}, {0, 1, 0}});
    CHECK(out.v_prime.x == Catch::Approx(1.0).margin(1e-15));
    CHECK((out.v_prime - Vec3{1, 0, 0}).norm() < 1e-15);
    CHECK(out.v_star_prime.norm() < 1e-15);
  }
  SECTION("equal-mass head-on exchange") {
    const auto out = post_collision(MassPair(1, 1), {{1, 0, 0}, {0, 0, 0}, {1, 0, 0}});
    CHECK(out.v_prime.norm() < 1e-15);
    CHECK((out.v_star_prime - Vec3{1, 0, 0}).norm() < 1e-15);
  }
  SECTION("7:8 masses head-on") {
    const MassPair m(7, 8);
    const CollisionInput in{{1, 0, 0}, {0, 0, 0}, {1, 0, 0}};
    const auto out = post_collision(m, in);
    CHECK(out.v_prime.x == Catch::Approx(-1.0 / 15.0).epsilon(1e-13));
    CHECK(out.v_star_prime.x == Catch::Approx(14.0 / 15.0).epsilon(1e-13));
    const auto r = collision_residuals(m, in, out);
    CHECK(r.momentum < 1e-14);
    CHECK(r.energy < 1e-14);
  }
  SECTION("non-unit omega is rejected") {
    CHECK_THROWS_AS(post_collision(MassPair(1, 1), {{1, 0, 0}, {0, 0, 0}, {1, 1e-5, 0}}),
                    std::invalid_argument);
  }
  SECTION("non-positive mass is rejected") {
    CHECK_THROWS_AS(MassPair(0.0, 1.0), ConfigError);
  }
}

TEST_CASE("conservation over random collisions") {
  Rng rng(2024);
  Residuals worst;
  for (int trial = 0; trial < 100000; ++trial) {
    const MassPair m(rng.uniform(0.1, 10.0), rng.uniform(0.1, 10.0));
    const CollisionInput in{
        {rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-10, 10)},
        {rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-10, 10)},
        rng.unit_vector()};
    const auto out = post_collision(m, in);
    const auto r = collision_residuals(m, in, out);
    worst.momentum = std::max(worst.momentum, r.momentum);
    worst.energy = std::max(worst.energy, r.energy);
    worst.rel_speed = std::max(worst.rel_speed, r.rel_speed);
  }
  CHECK(worst.momentum < 1e-12);
  CHECK(worst.energy < 1e-12);
  CHECK(worst.rel_speed < 1e-12);
}

TEST_CASE("involution and swap symmetry") {
  Rng rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const MassPair m(rng.uniform(0.1, 10.0), rng.uniform(0.1, 10.0));
    const CollisionInput in{
        {rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)},
        {rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)},
        rng.unit_vector()};
    const auto once = post_collision(m, in);
    const auto twice = post_collision(m, {once.v_prime, once.v_star_prime, in.omega});
    CHECK((twice.v_prime - in.v).norm() < 1e-12);
    CHECK((twice.v_star_prime - in.v_star).norm() < 1e-12);

    const auto swapped = post_collision(m.swapped(), {in.v_star, in.v, -in.omega});
    CHECK((swapped.v_prime - once.v_star_prime).norm() < 1e-13);
    CHECK((swapped.v_star_prime - once.v_prime).norm() < 1e-13);
  }
}

TEST_CASE("jacobian determinant is -1") {
  SECTION("equal masses, axis omega") {
    const double det =
        jacobian_determinant(MassPair(1, 1), {{0.3, -0.2, 0.9}, {1, 2, -1}, {0, 0, 1}}, 1e-5);
    CHECK(det == Catch::Approx(-1.0).margin(1e-6));
  }
  SECTION("random configurations") {
    Rng rng(99);
    for (int trial = 0; trial < 100; ++trial) {
      const MassPair m(rng.uniform(0.1, 10.0), rng.uniform(0.1, 10.0));
      const CollisionInput in{
          {rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)},
          {rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)},
          rng.unit_vector()};
      CHECK(jacobian_determinant(m, in, 1e-5) == Catch::Approx(-1.0).margin(1e-6));
    }
  }
  SECTION("invalid step is rejected") {
    CHECK_THROWS_AS(
        jacobian_determinant(MassPair(1, 1), {{0, 0, 0}, {1, 0, 0}, {0, 0, 1}}, 1e-2),
        std::invalid_argument);
  }
}

TEST_CASE("sphere sampling moments") {
  const auto one = sample_sphere(0, 1);
  REQUIRE(one.size() == 1);
  CHECK(std::abs(one[0].norm() - 1.0) < 1e-14);

  const auto pts = sample_sphere(0, 100000);
  Vec3 mean{0, 0, 0};
  double cos2 = 0;
  for (const Vec3& p : pts) {
    mean += p * (1.0 / pts.size());
    cos2 += p.z * p.z / pts.size();
  }
  CHECK(std::abs(mean.x) < 0.01);
  CHECK(std::abs(mean.y) < 0.01);
  CHECK(std::abs(mean.z) < 0.01);
  CHECK(cos2 == Catch::Approx(1.0 / 3.0).margin(0.01));
}
