#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <tuple>

#include "omct/detections.hpp"
#include "omct/errors.hpp"
#include "omct/orientation.hpp"
#include "omct/volume.hpp"

namespace omct {

/// One selected landmark: the winning detection's center and slice as a
/// voxel-space triple, plus its physical-mm position.
struct LandmarkPoint {
  LandmarkClass cls = LandmarkClass::left_eye;
  Vec3 voxel;     // (cx, cy, slice_index)
  Vec3 physical;  // mm
  double confidence = 0.0;

  friend bool operator==(const LandmarkPoint&, const LandmarkPoint&) = default;
};

/// Exactly four landmarks, one per class, in kAllLandmarkClasses order.
struct LandmarkSet {
  std::string case_id;
  std::array<LandmarkPoint, 4> points;

  const LandmarkPoint& get(LandmarkClass c) const {
    return points[static_cast<std::size_t>(c)];
  }

  /// Coordinate frame for angle computation. `index_space` selects raw
  /// voxel triples instead of physical mm; the two differ whenever the
  /// grid is anisotropic.
  LandmarkFrame frame(bool index_space = false) const {
    auto pick = [&](LandmarkClass c) {
      return index_space ? get(c).voxel : get(c).physical;
    };
    return {pick(LandmarkClass::left_eye), pick(LandmarkClass::right_eye),
            pick(LandmarkClass::left_eac), pick(LandmarkClass::right_eac)};
  }

  friend bool operator==(const LandmarkSet&, const LandmarkSet&) = default;
};

/// Per class, picks the detection with globally maximal confidence at or
/// above `min_confidence`. Ties break on lowest slice index, then lowest
/// cx, then lowest cy, so the result is independent of record order.
inline LandmarkSet identify_landmarks(const DetectionSet& d,
                                      const VolumeGeometry& g,
                                      double min_confidence = 0.0) {
  LandmarkSet set;
  set.case_id = d.case_id;
  for (auto cls : kAllLandmarkClasses) {
    const DetectionRecord* best = nullptr;
    for (const auto& r : d.records) {
      if (r.cls != cls || r.confidence < min_confidence) continue;
      if (!best) {
        best = &r;
        continue;
      }
      if (r.confidence > best->confidence) {
        best = &r;
      } else if (r.confidence == best->confidence) {
        const auto key = [](const DetectionRecord& x) {
          return std::tuple{x.slice_index, x.cx, x.cy};
        };
        if (key(r) < key(*best)) best = &r;
      }
    }
    if (!best) throw landmark_missing_error(to_string(cls));
    LandmarkPoint p;
    p.cls = cls;
    p.voxel = {best->cx, best->cy, static_cast<double>(best->slice_index)};
    p.physical = voxel_to_physical(g, p.voxel);
    p.confidence = best->confidence;
    set.points[static_cast<std::size_t>(cls)] = p;
  }

  // a pair collapsing to a point cannot define the baseline
  auto check_pair = [&](LandmarkClass a, LandmarkClass b, const char* what) {
    const Vec3 d_vox = set.get(a).voxel - set.get(b).voxel;
    if (norm(d_vox) < 1.0)
      throw implausible_geometry_error(
          std::string(what) + " landmarks nearly coincide (distance " +
          format_fixed6(norm(d_vox)) + " voxels)");
  };
  check_pair(LandmarkClass::left_eye, LandmarkClass::right_eye, "eye");
  check_pair(LandmarkClass::left_eac, LandmarkClass::right_eac, "ear-canal");
  return set;
}

inline constexpr const char* kLandmarkReportHeader =
    "class,vx,vy,vz,px,py,pz,confidence";

/// Writes the landmark report: an angle summary comment, a header, and
/// one line per class.
inline void write_landmark_report(const LandmarkSet& set,
                                  const EulerAngles& angles,
                                  const std::filesystem::path& path) {
  std::string out;
  out += "# angles_deg = " + format_fixed6(rad_to_deg(angles.roll)) + " " +
         format_fixed6(rad_to_deg(angles.pitch)) + " " +
         format_fixed6(rad_to_deg(angles.yaw)) + "\n";
  out += std::string(kLandmarkReportHeader) + "\n";
  for (const auto& p : set.points) {
    out += std::string(to_string(p.cls)) + "," + format_fixed6(p.voxel.x) +
           "," + format_fixed6(p.voxel.y) + "," + format_fixed6(p.voxel.z) +
           "," + format_fixed6(p.physical.x) + "," +
           format_fixed6(p.physical.y) + "," + format_fixed6(p.physical.z) +
           "," + format_fixed6(p.confidence) + "\n";
  }
  atomic_write_text(path, out);
}

}  // namespace omct
