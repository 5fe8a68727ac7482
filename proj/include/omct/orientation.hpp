#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "omct/errors.hpp"
#include "omct/geometry.hpp"

namespace omct {

/// Head-pose angles in radians: roll about x, pitch about y, yaw about z.
/// Each lies in the arctangent range (-pi/2, pi/2].
struct EulerAngles {
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;

  friend bool operator==(const EulerAngles&, const EulerAngles&) = default;
};

/// The four landmark positions as plain coordinate triples, in whatever
/// space (physical mm or raw voxel index) the caller measured them.
/// Angle formulas are ratio-based, so any uniform scale works.
struct LandmarkFrame {
  Vec3 left_eye;
  Vec3 right_eye;
  Vec3 left_eac;
  Vec3 right_eac;
};

namespace detail {

/// Reduces an angle to (-pi/2, pi/2] by half-turns. The landmark axes are
/// undirected, so angles a and a+pi describe the same line.
inline double fold_half_turn(double a) {
  const double half = std::numbers::pi / 2.0;
  while (a > half) a -= std::numbers::pi;
  while (a <= -half) a += std::numbers::pi;
  return a;
}

inline constexpr double kDegenerateEps = 1e-9;

inline bool pair_degenerate(double num, double den) {
  return std::abs(num) < kDegenerateEps && std::abs(den) < kDegenerateEps;
}

/// Picks the angle with smaller absolute value; `first` wins ties.
inline double smaller_angle(double first, double second) {
  return std::abs(second) < std::abs(first) ? second : first;
}

}  // namespace detail

/// Roll: eye-above-canal elevation seen from the side. Each side gives
/// atan(dz/dy) for its eye-to-canal segment; the smaller magnitude wins.
inline double compute_roll(const LandmarkFrame& f) {
  const double lnum = f.left_eye.z - f.left_eac.z;
  const double lden = f.left_eye.y - f.left_eac.y;
  const double rnum = f.right_eye.z - f.right_eac.z;
  const double rden = f.right_eye.y - f.right_eac.y;
  const bool l_bad = detail::pair_degenerate(lnum, lden);
  const bool r_bad = detail::pair_degenerate(rnum, rden);
  if (l_bad && r_bad)
    throw degenerate_landmarks_error(
        "both eye-to-canal segments vanish in the y-z plane; roll undefined");
  const double left = detail::fold_half_turn(std::atan2(lnum, lden));
  const double right = detail::fold_half_turn(std::atan2(rnum, rden));
  if (l_bad) return right;
  if (r_bad) return left;
  return detail::smaller_angle(left, right);
}

/// Pitch: left-right elevation difference. The eye pair and the canal
/// pair each give atan(dz/dx); the smaller magnitude wins.
inline double compute_pitch(const LandmarkFrame& f) {
  const double enum_ = f.left_eye.z - f.right_eye.z;
  const double eden = f.left_eye.x - f.right_eye.x;
  const double cnum = f.left_eac.z - f.right_eac.z;
  const double cden = f.left_eac.x - f.right_eac.x;
  const bool e_bad = detail::pair_degenerate(enum_, eden);
  const bool c_bad = detail::pair_degenerate(cnum, cden);
  if (e_bad && c_bad)
    throw degenerate_landmarks_error(
        "both left-right segments vanish in the x-z plane; pitch undefined");
  const double eyes = detail::fold_half_turn(std::atan2(enum_, eden));
  const double canals = detail::fold_half_turn(std::atan2(cnum, cden));
  if (e_bad) return canals;
  if (c_bad) return eyes;
  return detail::smaller_angle(eyes, canals);
}

/// Yaw: in-plane rotation of the interocular axis.
inline double compute_yaw(const LandmarkFrame& f) {
  const double num = f.left_eye.y - f.right_eye.y;
  const double den = f.left_eye.x - f.right_eye.x;
  if (detail::pair_degenerate(num, den))
    throw degenerate_landmarks_error(
        "eyes coincide in the x-y plane; yaw undefined");
  return detail::fold_half_turn(std::atan2(num, den));
}

inline EulerAngles compute_angles(const LandmarkFrame& f) {
  return {compute_roll(f), compute_pitch(f), compute_yaw(f)};
}

/// Builds the head-pose rotation whose measured angles are exactly the
/// given ones: the rotated x axis satisfies tan(yaw) = x.y/x.x and
/// tan(pitch) = x.z/x.x, and the rotated y axis satisfies
/// tan(roll) = y.z/y.y. Orthonormal right-handed by construction, so
/// angle measurement followed by this map round-trips exactly.
inline Mat3 euler_to_matrix(const EulerAngles& a) {
  const double cr = std::cos(a.roll), sr = std::sin(a.roll);
  const double cp = std::cos(a.pitch), sp = std::sin(a.pitch);
  const double cy = std::cos(a.yaw), sy = std::sin(a.yaw);

  // tan-ratio directions scaled by the (non-negative) cosine products to
  // stay finite at right angles
  const Vec3 x_axis =
      normalized(Vec3{cy * cp, sy * cp, sp * cy});
  const Vec3 y_axis = normalized(
      Vec3{-(sy * cp * cr + sp * cy * sr), cy * cp * cr, sr * cy * cp});
  const Vec3 z_axis = cross(x_axis, y_axis);
  return Mat3::from_columns(x_axis, y_axis, z_axis);
}

/// Measures the pose angles a rotation implies for an ideal symmetric
/// head: the inverse of euler_to_matrix on its range.
inline EulerAngles matrix_to_euler(const Mat3& r) {
  EulerAngles a;
  a.yaw = detail::fold_half_turn(std::atan2(r(1, 0), r(0, 0)));
  a.pitch = detail::fold_half_turn(std::atan2(r(2, 0), r(0, 0)));
  a.roll = detail::fold_half_turn(std::atan2(r(2, 1), r(1, 1)));
  return a;
}

/// Flags implausibly large angles (likely detector failure). Warnings
/// only; the pipeline still runs.
inline std::vector<std::string> plausibility_warnings(const EulerAngles& a,
                                                      double max_deg = 45.0) {
  std::vector<std::string> out;
  const struct {
    const char* name;
    double value;
  } items[] = {{"roll", a.roll}, {"pitch", a.pitch}, {"yaw", a.yaw}};
  for (const auto& it : items) {
    const double deg = rad_to_deg(it.value);
    if (std::abs(deg) > max_deg) {
      char buf[96];
      std::snprintf(buf, sizeof(buf),
                    "%s angle %.2f deg exceeds plausibility bound %.2f deg",
                    it.name, deg, max_deg);
      out.emplace_back(buf);
    }
  }
  return out;
}

}  // namespace omct
