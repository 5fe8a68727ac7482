#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "omct/errors.hpp"
#include "omct/text_io.hpp"

namespace omct {

/// The four orbitomeatal-line landmark classes.
enum class LandmarkClass { left_eye, right_eye, left_eac, right_eac };

inline constexpr std::array<LandmarkClass, 4> kAllLandmarkClasses = {
    LandmarkClass::left_eye, LandmarkClass::right_eye, LandmarkClass::left_eac,
    LandmarkClass::right_eac};

inline const char* to_string(LandmarkClass c) {
  switch (c) {
    case LandmarkClass::left_eye: return "left_eye";
    case LandmarkClass::right_eye: return "right_eye";
    case LandmarkClass::left_eac: return "left_eac";
    case LandmarkClass::right_eac: return "right_eac";
  }
  return "?";
}

inline std::optional<LandmarkClass> landmark_class_from_string(
    const std::string& s) {
  for (auto c : kAllLandmarkClasses)
    if (s == to_string(c)) return c;
  return std::nullopt;
}

/// One candidate landmark detection: a square box centered at (cx, cy)
/// pixels on slice `slice_index`, with a confidence in [0, 1].
struct DetectionRecord {
  std::string case_id;
  int slice_index = 0;
  LandmarkClass cls = LandmarkClass::left_eye;
  double cx = 0.0;
  double cy = 0.0;
  double box_size = 0.0;
  double confidence = 0.0;

  friend bool operator==(const DetectionRecord&, const DetectionRecord&) =
      default;
};

/// All candidate detections for one case.
struct DetectionSet {
  std::string case_id;
  std::vector<DetectionRecord> records;

  friend bool operator==(const DetectionSet&, const DetectionSet&) = default;
};

/// A manually annotated rectangle on one slice.
struct GroundTruthBox {
  std::string case_id;
  int slice_index = 0;
  LandmarkClass cls = LandmarkClass::left_eye;
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  friend bool operator==(const GroundTruthBox&, const GroundTruthBox&) =
      default;
};

inline constexpr const char* kDetectionHeader =
    "case_id,slice_index,class,cx,cy,box_size,confidence";
inline constexpr const char* kGroundTruthHeader =
    "case_id,slice_index,class,x_min,y_min,x_max,y_max";

namespace detail {

inline parse_error line_error(const std::filesystem::path& path, int line_no,
                              const std::string& what) {
  return parse_error(path.string() + ":" + std::to_string(line_no) + ": " +
                     what);
}

template <typename Fn>
void read_csv(const std::filesystem::path& path, const char* expected_header,
              int field_count, Fn&& fn) {
  const std::string text = read_text_file(path);
  bool saw_header = false;
  for_each_data_line(text, [&](int line_no, const std::string& line) {
    if (!saw_header) {
      if (line != expected_header)
        throw line_error(path, line_no,
                         std::string("expected header '") + expected_header +
                             "', got '" + line + "'");
      saw_header = true;
      return;
    }
    const auto fields = split(line, ',');
    if (static_cast<int>(fields.size()) != field_count)
      throw line_error(path, line_no,
                       "expected " + std::to_string(field_count) +
                           " fields, got " + std::to_string(fields.size()));
    fn(line_no, fields);
  });
  if (!saw_header) throw parse_error(path.string() + ": missing header line");
}

}  // namespace detail

/// Reads a detection file as a flat record list. Multiple case ids are
/// allowed; use read_detections for single-case pipelines.
inline std::vector<DetectionRecord> read_detection_records(
    const std::filesystem::path& path) {
  std::vector<DetectionRecord> out;
  detail::read_csv(path, kDetectionHeader, 7, [&](int line_no,
                                                  const std::vector<std::string>& f) {
    DetectionRecord r;
    r.case_id = f[0];
    long long slice = 0;
    if (r.case_id.empty())
      throw detail::line_error(path, line_no, "empty case_id");
    if (!parse_long(f[1], slice) || slice < 0)
      throw detail::line_error(path, line_no,
                               "slice_index must be a non-negative integer");
    r.slice_index = static_cast<int>(slice);
    const auto cls = landmark_class_from_string(f[2]);
    if (!cls)
      throw detail::line_error(path, line_no, "unknown class '" + f[2] + "'");
    r.cls = *cls;
    if (!parse_double(f[3], r.cx) || !parse_double(f[4], r.cy))
      throw detail::line_error(path, line_no, "bad center coordinates");
    if (!parse_double(f[5], r.box_size) || !(r.box_size > 0.0))
      throw detail::line_error(path, line_no, "box_size must be > 0");
    if (!parse_double(f[6], r.confidence) || r.confidence < 0.0 ||
        r.confidence > 1.0)
      throw detail::line_error(path, line_no,
                               "confidence must be within [0, 1]");
    out.push_back(std::move(r));
  });
  return out;
}

/// Reads a single-case detection set; a file mixing case ids is rejected.
inline DetectionSet read_detections(const std::filesystem::path& path) {
  DetectionSet set;
  set.records = read_detection_records(path);
  for (const auto& r : set.records) {
    if (set.case_id.empty())
      set.case_id = r.case_id;
    else if (set.case_id != r.case_id)
      throw parse_error(path.string() + ": multiple case ids in one set ('" +
                        set.case_id + "' vs '" + r.case_id + "')");
  }
  return set;
}

inline void write_detections(const DetectionSet& set,
                             const std::filesystem::path& path) {
  std::string out = std::string(kDetectionHeader) + "\n";
  for (const auto& r : set.records) {
    out += r.case_id + "," + std::to_string(r.slice_index) + "," +
           to_string(r.cls) + "," + format_fixed6(r.cx) + "," +
           format_fixed6(r.cy) + "," + format_fixed6(r.box_size) + "," +
           format_fixed6(r.confidence) + "\n";
  }
  atomic_write_text(path, out);
}

inline std::vector<GroundTruthBox> read_ground_truth(
    const std::filesystem::path& path) {
  std::vector<GroundTruthBox> out;
  detail::read_csv(path, kGroundTruthHeader, 7, [&](int line_no,
                                                    const std::vector<std::string>& f) {
    GroundTruthBox b;
    b.case_id = f[0];
    long long slice = 0;
    if (b.case_id.empty())
      throw detail::line_error(path, line_no, "empty case_id");
    if (!parse_long(f[1], slice) || slice < 0)
      throw detail::line_error(path, line_no,
                               "slice_index must be a non-negative integer");
    b.slice_index = static_cast<int>(slice);
    const auto cls = landmark_class_from_string(f[2]);
    if (!cls)
      throw detail::line_error(path, line_no, "unknown class '" + f[2] + "'");
    b.cls = *cls;
    if (!parse_double(f[3], b.x_min) || !parse_double(f[4], b.y_min) ||
        !parse_double(f[5], b.x_max) || !parse_double(f[6], b.y_max))
      throw detail::line_error(path, line_no, "bad rectangle coordinates");
    if (!(b.x_min < b.x_max) || !(b.y_min < b.y_max))
      throw detail::line_error(path, line_no,
                               "rectangle must satisfy min < max");
    out.push_back(std::move(b));
  });
  return out;
}

inline void write_ground_truth(const std::vector<GroundTruthBox>& boxes,
                               const std::filesystem::path& path) {
  std::string out = std::string(kGroundTruthHeader) + "\n";
  for (const auto& b : boxes) {
    out += b.case_id + "," + std::to_string(b.slice_index) + "," +
           to_string(b.cls) + "," + format_fixed6(b.x_min) + "," +
           format_fixed6(b.y_min) + "," + format_fixed6(b.x_max) + "," +
           format_fixed6(b.y_max) + "\n";
  }
  atomic_write_text(path, out);
}

}  // namespace omct
