#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "omct/orientation.hpp"

using namespace omct;
using Catch::Matchers::WithinAbs;

namespace {

/// Ideal symmetric landmark layout: eyes level and anterior, canals
/// posterior, all four on one axial plane.
LandmarkFrame reference_frame() {
  LandmarkFrame f;
  f.left_eye = {32.0, 30.0, 0.0};
  f.right_eye = {-32.0, 30.0, 0.0};
  f.left_eac = {32.0, -30.0, 0.0};
  f.right_eac = {-32.0, -30.0, 0.0};
  return f;
}

LandmarkFrame rotated(const LandmarkFrame& f, const Mat3& r) {
  return {r * f.left_eye, r * f.right_eye, r * f.left_eac, r * f.right_eac};
}

LandmarkFrame translated(const LandmarkFrame& f, const Vec3& t) {
  return {f.left_eye + t, f.right_eye + t, f.left_eac + t, f.right_eac + t};
}

LandmarkFrame scaled(const LandmarkFrame& f, double c) {
  return {c * f.left_eye, c * f.right_eye, c * f.left_eac, c * f.right_eac};
}

}  // namespace

TEST_CASE("roll picks the smaller-magnitude side") {
  LandmarkFrame f;
  f.left_eye = {10, 120, 80};
  f.left_eac = {10, 60, 60};
  f.right_eye = {-10, 120, 78};
  f.right_eac = {-10, 60, 60};
  // left side arctan(20/60), right side arctan(18/60)
  REQUIRE_THAT(rad_to_deg(compute_roll(f)), WithinAbs(16.6992, 5e-3));

  SECTION("left side smaller wins instead") {
    std::swap(f.left_eye, f.right_eye);
    std::swap(f.left_eac, f.right_eac);
    f.left_eye.x = 10;
    f.right_eye.x = -10;
    f.left_eac.x = 10;
    f.right_eac.x = -10;
    REQUIRE_THAT(rad_to_deg(compute_roll(f)), WithinAbs(16.6992, 5e-3));
  }
}

TEST_CASE("coplanar landmarks give zero roll and pitch") {
  const LandmarkFrame f = reference_frame();
  REQUIRE_THAT(compute_roll(f), WithinAbs(0.0, 1e-12));
  REQUIRE_THAT(compute_pitch(f), WithinAbs(0.0, 1e-12));
  REQUIRE_THAT(compute_yaw(f), WithinAbs(0.0, 1e-12));
}

TEST_CASE("pitch picks the smaller of eye and canal pairs") {
  LandmarkFrame f = reference_frame();
  f.left_eac.z = 2.5;
  f.right_eac.z = -2.5;  // canal pair arctan(5/64) while eyes stay level
  REQUIRE_THAT(compute_pitch(f), WithinAbs(0.0, 1e-12));

  SECTION("only tilted pair counts when the other is level") {
    f.left_eye.z = 5.0;
    f.right_eye.z = -5.0;
    // eyes arctan(10/64), canals arctan(5/64); canals win
    REQUIRE_THAT(rad_to_deg(compute_pitch(f)),
                 WithinAbs(rad_to_deg(std::atan2(5.0, 64.0)), 1e-9));
  }
}

TEST_CASE("pitch is invariant under uniform scaling") {
  LandmarkFrame f = reference_frame();
  f.left_eye.z = 3.0;
  f.left_eac.z = 1.0;
  const double p1 = compute_pitch(f);
  const double p2 = compute_pitch(scaled(f, 2.0));
  REQUIRE(p1 == p2);
}

TEST_CASE("yaw handles the undirected eye axis") {
  LandmarkFrame f;
  f.left_eac = {0, -1, 0};
  f.right_eac = {0, -2, 0};

  SECTION("level eyes give zero") {
    f.left_eye = {200, 250, 0};
    f.right_eye = {312, 250, 0};
    REQUIRE_THAT(compute_yaw(f), WithinAbs(0.0, 1e-12));
  }

  SECTION("reversed axis folds back into range") {
    f.left_eye = {200, 260, 0};
    f.right_eye = {312, 240, 0};
    REQUIRE_THAT(rad_to_deg(compute_yaw(f)), WithinAbs(-10.125, 5e-3));
  }

  SECTION("swapping eye labels changes nothing") {
    f.left_eye = {200, 260, 0};
    f.right_eye = {312, 240, 0};
    const double y1 = compute_yaw(f);
    std::swap(f.left_eye, f.right_eye);
    REQUIRE_THAT(compute_yaw(f), WithinAbs(y1, 1e-12));
  }
}

TEST_CASE("translation invariance is exact") {
  LandmarkFrame f = reference_frame();
  f.left_eye.z = 4.0;
  f.right_eac.z = -2.0;
  const EulerAngles a = compute_angles(f);
  const EulerAngles b = compute_angles(translated(f, {5, 5, 5}));
  REQUIRE(a.roll == b.roll);
  REQUIRE(a.pitch == b.pitch);
  REQUIRE(a.yaw == b.yaw);
}

TEST_CASE("degenerate landmark configurations are reported") {
  LandmarkFrame f;

  SECTION("roll undefined when both sides collapse") {
    f.left_eye = f.left_eac = {1, 2, 3};
    f.right_eye = f.right_eac = {-1, 2, 3};
    REQUIRE_THROWS_AS(compute_roll(f), degenerate_landmarks_error);
  }

  SECTION("one good side suffices") {
    f.left_eye = f.left_eac = {1, 2, 3};
    f.right_eye = {-1, 30, 10};
    f.right_eac = {-1, -30, 10};
    REQUIRE_NOTHROW(compute_roll(f));
  }

  SECTION("yaw undefined when eyes coincide") {
    f.left_eye = f.right_eye = {0, 0, 0};
    REQUIRE_THROWS_AS(compute_yaw(f), degenerate_landmarks_error);
  }
}

TEST_CASE("rotation matrix basics") {
  SECTION("zero angles give identity") {
    const Mat3 r = euler_to_matrix({0, 0, 0});
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        REQUIRE_THAT(r(i, j), WithinAbs(i == j ? 1.0 : 0.0, 1e-15));
  }

  SECTION("quarter turn about z") {
    const Mat3 r = euler_to_matrix({0, 0, deg_to_rad(90)});
    const double expect[9] = {0, -1, 0, 1, 0, 0, 0, 0, 1};
    for (int i = 0; i < 9; ++i)
      REQUIRE_THAT(r.m[i], WithinAbs(expect[i], 1e-12));
  }

  SECTION("pure roll matches the textbook x rotation") {
    const double t = deg_to_rad(30);
    const Mat3 r = euler_to_matrix({t, 0, 0});
    const double expect[9] = {1, 0,           0,
                              0, std::cos(t), -std::sin(t),
                              0, std::sin(t), std::cos(t)};
    for (int i = 0; i < 9; ++i)
      REQUIRE_THAT(r.m[i], WithinAbs(expect[i], 1e-15));
  }

  SECTION("orthonormal with unit determinant on random angles") {
    std::mt19937 rng(99);
    std::uniform_real_distribution<double> ang(-1.2, 1.2);
    for (int i = 0; i < 200; ++i) {
      const Mat3 r = euler_to_matrix({ang(rng), ang(rng), ang(rng)});
      const Mat3 rtr = r.transposed() * r;
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b)
          REQUIRE_THAT(rtr(a, b), WithinAbs(a == b ? 1.0 : 0.0, 1e-9));
      REQUIRE_THAT(det(r), WithinAbs(1.0, 1e-9));
    }
  }

  SECTION("single-axis inverse is the transpose") {
    for (const EulerAngles a :
         {EulerAngles{0.4, 0, 0}, EulerAngles{0, 0.4, 0},
          EulerAngles{0, 0, 0.4}}) {
      const Mat3 pos = euler_to_matrix(a);
      const Mat3 neg =
          euler_to_matrix({-a.roll, -a.pitch, -a.yaw});
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
          REQUIRE_THAT(neg(i, j), WithinAbs(pos(j, i), 1e-12));
    }
  }
}

TEST_CASE("angle measurement inverts matrix construction exactly") {
  // the end-to-end exactness contract: rotate ideal landmarks by the
  // matrix built from a tilt, re-measure, and recover that tilt
  std::mt19937 rng(2024);
  std::uniform_real_distribution<double> ang(-20.0, 20.0);
  const LandmarkFrame ref = reference_frame();
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const EulerAngles t{deg_to_rad(ang(rng)), deg_to_rad(ang(rng)),
                        deg_to_rad(ang(rng))};
    const LandmarkFrame rot = rotated(ref, euler_to_matrix(t));
    const EulerAngles m = compute_angles(rot);
    worst = std::max({worst, std::abs(rad_to_deg(m.roll - t.roll)),
                      std::abs(rad_to_deg(m.pitch - t.pitch)),
                      std::abs(rad_to_deg(m.yaw - t.yaw))});
  }
  REQUIRE(worst < 1e-6);
}

TEST_CASE("matrix_to_euler inverts euler_to_matrix") {
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> ang(-0.5, 0.5);
  for (int i = 0; i < 200; ++i) {
    const EulerAngles t{ang(rng), ang(rng), ang(rng)};
    const EulerAngles m = matrix_to_euler(euler_to_matrix(t));
    REQUIRE_THAT(m.roll, WithinAbs(t.roll, 1e-12));
    REQUIRE_THAT(m.pitch, WithinAbs(t.pitch, 1e-12));
    REQUIRE_THAT(m.yaw, WithinAbs(t.yaw, 1e-12));
  }
}

TEST_CASE("plausibility warnings") {
  REQUIRE(plausibility_warnings(
              {deg_to_rad(5), deg_to_rad(3), deg_to_rad(-8)})
              .empty());
  REQUIRE(plausibility_warnings({deg_to_rad(44.9), 0, 0}).empty());

  const auto warn = plausibility_warnings({deg_to_rad(60), 0, 0});
  REQUIRE(warn.size() == 1);
  REQUIRE_THAT(warn[0], Catch::Matchers::ContainsSubstring("roll"));
  REQUIRE_THAT(warn[0], Catch::Matchers::ContainsSubstring("60.00"));

  const auto two = plausibility_warnings(
      {deg_to_rad(50), deg_to_rad(-50), 0}, 45.0);
  REQUIRE(two.size() == 2);

  // tighter bound flags smaller angles
  REQUIRE(plausibility_warnings({deg_to_rad(10), 0, 0}, 5.0).size() == 1);
}
