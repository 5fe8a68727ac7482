#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

#include "omct/detections.hpp"
#include "omct/errors.hpp"
#include "omct/orientation.hpp"
#include "omct/reformat.hpp"
#include "omct/volume.hpp"

namespace omct {

/// Parametric synthetic head: soft-tissue ellipsoid, two bright eye
/// spheres, two air ear-canal cores inside bone shells. Marker centers
/// are stored as offsets from the volume center so the left/right pairs
/// are mirror images about the mid-sagittal plane by construction.
struct PhantomSpec {
  std::array<int, 3> dims{128, 128, 128};
  Vec3 spacing{1.0, 1.0, 1.0};
  EulerAngles tilt;

  Vec3 head_semi_axes{52.0, 62.0, 52.0};  // mm
  double eye_offset_x = 32.0;             // mm from center, +x = left
  double eye_offset_y = 30.0;             // mm, +y = toward the face
  double eye_radius = 6.0;
  double eac_offset_x = 32.0;
  double eac_offset_y = -30.0;
  double eac_core_radius = 3.5;
  double eac_shell_radius = 8.0;

  double soft_tissue_hu = 40.0;
  double bone_hu = 700.0;
  double eye_hu = 300.0;
  double air_hu = -1000.0;

  std::string case_id = "phantom";
};

/// Analytic ground truth: the tilt as applied and the rotated marker
/// centers, in both voxel and physical coordinates.
struct PhantomTruth {
  EulerAngles tilt;
  std::array<Vec3, 4> voxel;     // by LandmarkClass order
  std::array<Vec3, 4> physical;  // mm

  LandmarkFrame frame() const {
    return {physical[0], physical[1], physical[2], physical[3]};
  }
  LandmarkFrame voxel_frame() const {
    return {voxel[0], voxel[1], voxel[2], voxel[3]};
  }
};

namespace detail {

/// Fraction of a voxel covered by the object, from the signed distance
/// of the voxel center to the object surface (one-voxel ramp). This
/// mimics CT partial-volume averaging, and without it neighbouring
/// slices through a small sphere are pixel-identical, which makes the
/// marker's true center slice undetectable in principle.
inline double coverage(double signed_distance) {
  return std::clamp(0.5 - signed_distance, 0.0, 1.0);
}

inline double sphere_sdf(const Vec3& p, const Vec3& c, double r) {
  return norm(p - c) - r;
}

/// Approximate signed distance to an axis-aligned ellipsoid, exact for
/// spheres, accurate to well under a voxel near the surface.
inline double ellipsoid_sdf(const Vec3& p, const Vec3& c, const Vec3& semi) {
  const Vec3 d = p - c;
  const double m = std::sqrt((d.x / semi.x) * (d.x / semi.x) +
                             (d.y / semi.y) * (d.y / semi.y) +
                             (d.z / semi.z) * (d.z / semi.z));
  if (m < 1e-12) return -std::min({semi.x, semi.y, semi.z});
  return norm(d) * (m - 1.0) / m;
}

}  // namespace detail

/// Renders the untilted phantom by per-voxel membership, then rotates
/// the scene by the tilt. Deterministic; no noise model.
inline std::tuple<Volume, PhantomTruth, std::vector<GroundTruthBox>>
generate_phantom(const PhantomSpec& spec, int threads = 0) {
  for (double a : {spec.tilt.roll, spec.tilt.pitch, spec.tilt.yaw})
    if (std::abs(rad_to_deg(a)) > 20.0)
      throw implausible_geometry_error(
          "phantom tilt component exceeds 20 degrees");

  VolumeGeometry g;
  g.dims = spec.dims;
  g.spacing = spec.spacing;
  g.origin = {0.0, 0.0, 0.0};
  g.validate();
  const Vec3 c = volume_center(g);

  const Vec3 eye_l = c + Vec3{spec.eye_offset_x, spec.eye_offset_y, 0.0};
  const Vec3 eye_r = c + Vec3{-spec.eye_offset_x, spec.eye_offset_y, 0.0};
  const Vec3 eac_l = c + Vec3{spec.eac_offset_x, spec.eac_offset_y, 0.0};
  const Vec3 eac_r = c + Vec3{-spec.eac_offset_x, spec.eac_offset_y, 0.0};

  // markers must live inside the head ellipsoid
  auto ellipsoid_ok = [&](const Vec3& center, double r) {
    const Vec3 d = center - c;
    const double m = std::sqrt(
        (d.x / spec.head_semi_axes.x) * (d.x / spec.head_semi_axes.x) +
        (d.y / spec.head_semi_axes.y) * (d.y / spec.head_semi_axes.y) +
        (d.z / spec.head_semi_axes.z) * (d.z / spec.head_semi_axes.z));
    const double min_axis = std::min(
        {spec.head_semi_axes.x, spec.head_semi_axes.y, spec.head_semi_axes.z});
    return m + r / min_axis < 1.0;
  };
  if (!ellipsoid_ok(eye_l, spec.eye_radius) ||
      !ellipsoid_ok(eac_l, spec.eac_shell_radius))
    throw implausible_geometry_error("markers extend outside the head");

  std::vector<std::int16_t> vox(g.voxel_count());
  for (int z = 0; z < g.dims[2]; ++z)
    for (int y = 0; y < g.dims[1]; ++y)
      for (int x = 0; x < g.dims[0]; ++x) {
        const Vec3 p = voxel_to_physical(
            g, {static_cast<double>(x), static_cast<double>(y),
                static_cast<double>(z)});
        // paint layers over each other with partial-volume coverage
        double hu = spec.air_hu;
        auto paint = [&](double sdf, double layer_hu) {
          const double a = detail::coverage(sdf);
          hu += a * (layer_hu - hu);
        };
        paint(detail::ellipsoid_sdf(p, c, spec.head_semi_axes),
              spec.soft_tissue_hu);
        paint(std::min(detail::sphere_sdf(p, eac_l, spec.eac_shell_radius),
                       detail::sphere_sdf(p, eac_r, spec.eac_shell_radius)),
              spec.bone_hu);
        paint(std::min(detail::sphere_sdf(p, eac_l, spec.eac_core_radius),
                       detail::sphere_sdf(p, eac_r, spec.eac_core_radius)),
              spec.air_hu);
        paint(std::min(detail::sphere_sdf(p, eye_l, spec.eye_radius),
                       detail::sphere_sdf(p, eye_r, spec.eye_radius)),
              spec.eye_hu);
        vox[static_cast<std::size_t>(x) +
            static_cast<std::size_t>(g.dims[0]) *
                (static_cast<std::size_t>(y) +
                 static_cast<std::size_t>(g.dims[1]) *
                     static_cast<std::size_t>(z))] = clamp_hu(hu);
      }
  Volume upright(g, std::move(vox));

  const Mat3 r = euler_to_matrix(spec.tilt);
  Volume tilted = resample_rotated(upright, r, clamp_hu(spec.air_hu), threads);

  PhantomTruth truth;
  truth.tilt = spec.tilt;
  const Vec3 centers[4] = {eye_l, eye_r, eac_l, eac_r};
  const double radii[4] = {spec.eye_radius, spec.eye_radius,
                           spec.eac_core_radius, spec.eac_core_radius};
  std::vector<GroundTruthBox> boxes;
  for (int i = 0; i < 4; ++i) {
    const Vec3 rotated = c + r * (centers[i] - c);
    truth.physical[i] = rotated;
    truth.voxel[i] = physical_to_voxel(g, rotated);
    const double r_px = radii[i] / g.spacing.x;
    for (int axis = 0; axis < 3; ++axis) {
      const double v = axis == 0   ? truth.voxel[i].x
                       : axis == 1 ? truth.voxel[i].y
                                   : truth.voxel[i].z;
      const double span = radii[i] / (axis == 0   ? g.spacing.x
                                      : axis == 1 ? g.spacing.y
                                                  : g.spacing.z);
      if (v - span < 0.0 || v + span > g.dims[axis] - 1)
        throw implausible_geometry_error("marker out of frame after tilt");
    }
    GroundTruthBox b;
    b.case_id = spec.case_id;
    b.slice_index = static_cast<int>(std::lround(truth.voxel[i].z));
    b.cls = kAllLandmarkClasses[i];
    b.x_min = truth.voxel[i].x - r_px;
    b.x_max = truth.voxel[i].x + r_px;
    b.y_min = truth.voxel[i].y - r_px;
    b.y_max = truth.voxel[i].y + r_px;
    boxes.push_back(b);
  }

  return {std::move(tilted), truth, std::move(boxes)};
}

/// Thresholds and shape priors for the classical slice-wise detector.
/// HU bands bound each tissue of interest; the eye band has a bone
/// ceiling so partial-volume rims of the skull shell cannot mimic eyes.
struct ClassicalDetectorConfig {
  double head_min_hu = -200.0;
  double eye_min_hu = 250.0;
  double eye_max_hu = 500.0;
  double eac_max_hu = -500.0;
  double ring_min_hu = 500.0;
  double ring_search_mm = 16.0;
  double eye_radius_mm = 6.0;
  double eac_radius_mm = 3.5;
  int min_blob_area_px = 2;
  // contrast anchors for partial-volume pixel weighting (weight 0 at the
  // surround value, 1 at the nominal marker value)
  double eye_surround_hu = 40.0;
  double eye_marker_hu = 300.0;
  double eac_surround_hu = 700.0;
  double eac_marker_hu = -1000.0;
};

namespace detail {

struct Blob {
  std::vector<std::pair<int, int>> pixels;  // (x, y)
  bool touches_border = false;

  double area() const { return static_cast<double>(pixels.size()); }

  std::pair<double, double> centroid() const {
    double sx = 0.0, sy = 0.0;
    for (const auto& [x, y] : pixels) {
      sx += x;
      sy += y;
    }
    return {sx / pixels.size(), sy / pixels.size()};
  }
};

/// 8-connected components of mask (true pixels), row-major nx*ny.
inline std::vector<Blob> connected_components(const std::vector<char>& mask,
                                              int nx, int ny) {
  std::vector<Blob> blobs;
  std::vector<char> seen(mask.size(), 0);
  std::vector<int> stack;
  for (int start = 0; start < nx * ny; ++start) {
    if (!mask[start] || seen[start]) continue;
    Blob blob;
    stack.push_back(start);
    seen[start] = 1;
    while (!stack.empty()) {
      const int cur = stack.back();
      stack.pop_back();
      const int x = cur % nx, y = cur / nx;
      blob.pixels.emplace_back(x, y);
      if (x == 0 || y == 0 || x == nx - 1 || y == ny - 1)
        blob.touches_border = true;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const int qx = x + dx, qy = y + dy;
          if (qx < 0 || qy < 0 || qx >= nx || qy >= ny) continue;
          const int q = qx + nx * qy;
          if (mask[q] && !seen[q]) {
            seen[q] = 1;
            stack.push_back(q);
          }
        }
    }
    blobs.push_back(std::move(blob));
  }
  return blobs;
}

/// Roundness times how well the blob radius matches the expected marker
/// radius; both factors in [0,1] so the product is a confidence. Area
/// is partial-volume weighted, so slices whose thresholded pixel sets
/// happen to coincide still rank by how fully the marker fills them.
/// Roundness comes from the weighted second moment (a uniform disc of
/// radius R has mean square radius R^2/2, making the ratio exactly 1);
/// unlike a max-distance radius it is not flipped by a single boundary
/// pixel crossing the band threshold after interpolation.
template <typename WeightFn>
double blob_confidence(const Blob& b, double expected_radius_px,
                       WeightFn&& weight) {
  double area_w = 0.0, wx = 0.0, wy = 0.0;
  for (const auto& [x, y] : b.pixels) {
    const double w = weight(x, y);
    area_w += w;
    wx += w * x;
    wy += w * y;
  }
  if (area_w <= 0.0) return 0.0;
  const double cx = wx / area_w, cy = wy / area_w;
  double moment2 = 0.0;
  for (const auto& [x, y] : b.pixels) {
    const double dx = x - cx, dy = y - cy;
    moment2 += weight(x, y) * (dx * dx + dy * dy);
  }
  const double r_eff2 = std::max(2.0 * moment2 / area_w, 0.25);
  const double circularity =
      std::min(1.0, area_w / (std::numbers::pi * r_eff2));
  const double r_eq = std::sqrt(area_w / std::numbers::pi);
  const double size_match = std::min(r_eq, expected_radius_px) /
                            std::max(r_eq, expected_radius_px);
  return std::clamp(circularity * size_match, 0.0, 1.0);
}

inline double blob_box_side(const Blob& b) {
  int min_x = 1 << 30, max_x = -(1 << 30);
  int min_y = 1 << 30, max_y = -(1 << 30);
  for (const auto& [x, y] : b.pixels) {
    min_x = std::min(min_x, x);
    max_x = std::max(max_x, x);
    min_y = std::min(min_y, y);
    max_y = std::max(max_y, y);
  }
  return static_cast<double>(std::max(max_x - min_x, max_y - min_y) + 1);
}

}  // namespace detail

/// Slice-wise threshold + connected-component detector for phantom-like
/// contrast. Returns candidates for all four classes with deterministic
/// ordering; may be empty when nothing matches.
inline DetectionSet classical_detect(
    const Volume& v, const std::string& case_id,
    const ClassicalDetectorConfig& cfg = {}) {
  DetectionSet out;
  out.case_id = case_id;
  const int nx = v.nx(), ny = v.ny();
  const double px_mm = v.geometry().spacing.x;
  const double eye_r_px = cfg.eye_radius_mm / px_mm;
  const double eac_r_px = cfg.eac_radius_mm / px_mm;
  const int ring_px = std::max(1, static_cast<int>(
                                      std::lround(cfg.ring_search_mm / px_mm)));

  std::vector<char> head_mask(static_cast<std::size_t>(nx) * ny);
  std::vector<char> band_mask(head_mask.size());

  for (int z = 0; z < v.nz(); ++z) {
    auto hu = [&](int x, int y) { return static_cast<double>(v.at(x, y, z)); };

    // head = largest bright-enough component
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x)
        head_mask[x + nx * y] = hu(x, y) >= cfg.head_min_hu ? 1 : 0;
    auto head_blobs = detail::connected_components(head_mask, nx, ny);
    if (head_blobs.empty()) continue;
    const auto largest = std::max_element(
        head_blobs.begin(), head_blobs.end(),
        [](const auto& a, const auto& b) { return a.area() < b.area(); });
    std::fill(head_mask.begin(), head_mask.end(), 0);
    for (const auto& [x, y] : largest->pixels) head_mask[x + nx * y] = 1;
    const auto [head_cx, head_cy] = largest->centroid();

    auto eye_weight = [&](int x, int y) {
      return std::clamp((hu(x, y) - cfg.eye_surround_hu) /
                            (cfg.eye_marker_hu - cfg.eye_surround_hu),
                        0.0, 1.0);
    };
    auto eac_weight = [&](int x, int y) {
      return std::clamp((hu(x, y) - cfg.eac_surround_hu) /
                            (cfg.eac_marker_hu - cfg.eac_surround_hu),
                        0.0, 1.0);
    };

    auto emit = [&](const detail::Blob& b, bool is_eye) {
      if (static_cast<int>(b.pixels.size()) < cfg.min_blob_area_px) return;
      const auto [cx, cy] = b.centroid();
      DetectionRecord r;
      r.case_id = case_id;
      r.slice_index = z;
      const bool left = cx > head_cx;
      r.cls = is_eye ? (left ? LandmarkClass::left_eye
                             : LandmarkClass::right_eye)
                     : (left ? LandmarkClass::left_eac
                             : LandmarkClass::right_eac);
      r.cx = cx;
      r.cy = cy;
      r.box_size = detail::blob_box_side(b);
      r.confidence =
          is_eye ? detail::blob_confidence(b, eye_r_px, eye_weight)
                 : detail::blob_confidence(b, eac_r_px, eac_weight);
      out.records.push_back(r);
    };

    // eyes: bright soft-tissue band inside the head
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        const double h = hu(x, y);
        band_mask[x + nx * y] = (h >= cfg.eye_min_hu && h < cfg.eye_max_hu &&
                                 head_mask[x + nx * y])
                                    ? 1
                                    : 0;
      }
    for (const auto& b : detail::connected_components(band_mask, nx, ny))
      emit(b, true);

    // canals: air pockets enclosed by bone
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x)
        band_mask[x + nx * y] = hu(x, y) <= cfg.eac_max_hu ? 1 : 0;
    for (const auto& b : detail::connected_components(band_mask, nx, ny)) {
      if (b.touches_border) continue;
      const auto [cx, cy] = b.centroid();
      const int icx = static_cast<int>(std::lround(cx));
      const int icy = static_cast<int>(std::lround(cy));
      int enclosed_rays = 0;
      const int dirs[8][2] = {{1, 0},  {1, 1},  {0, 1},  {-1, 1},
                              {-1, 0}, {-1, -1}, {0, -1}, {1, -1}};
      for (const auto& d : dirs) {
        for (int step = 1; step <= ring_px; ++step) {
          const int qx = icx + d[0] * step, qy = icy + d[1] * step;
          if (qx < 0 || qy < 0 || qx >= nx || qy >= ny) break;
          if (hu(qx, qy) >= cfg.ring_min_hu) {
            ++enclosed_rays;
            break;
          }
        }
      }
      if (enclosed_rays == 8) emit(b, false);
    }
  }

  std::sort(out.records.begin(), out.records.end(),
            [](const DetectionRecord& a, const DetectionRecord& b) {
              return std::tuple{a.slice_index, static_cast<int>(a.cls), a.cx,
                                a.cy} < std::tuple{b.slice_index,
                                                   static_cast<int>(b.cls),
                                                   b.cx, b.cy};
            });
  return out;
}

}  // namespace omct
