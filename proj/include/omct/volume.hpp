#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "omct/errors.hpp"
#include "omct/geometry.hpp"
#include "omct/text_io.hpp"

namespace omct {

inline constexpr std::int16_t kHuMin = -1024;
inline constexpr std::int16_t kHuMax = 3071;

inline std::int16_t clamp_hu(double v) {
  if (v < kHuMin) return kHuMin;
  if (v > kHuMax) return kHuMax;
  return static_cast<std::int16_t>(std::lround(v));
}

/// Axis-aligned voxel grid geometry. `origin` is the physical position
/// (mm) of the center of voxel (0,0,0); `spacing` is mm per voxel step.
struct VolumeGeometry {
  std::array<int, 3> dims{1, 1, 1};
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) *
           static_cast<std::size_t>(dims[1]) *
           static_cast<std::size_t>(dims[2]);
  }

  void validate() const {
    for (int d : dims)
      if (d < 1) throw parse_error("volume dims must be >= 1");
    for (double s : {spacing.x, spacing.y, spacing.z})
      if (!(s > 0.0) || !std::isfinite(s))
        throw parse_error("volume spacing must be > 0 and finite");
    for (double o : {origin.x, origin.y, origin.z})
      if (!std::isfinite(o)) throw parse_error("volume origin must be finite");
  }

  friend bool operator==(const VolumeGeometry&, const VolumeGeometry&) =
      default;
};

/// Affine voxel-index -> physical-mm map. Fractional indices are fine;
/// the map is defined on all of R^3.
inline Vec3 voxel_to_physical(const VolumeGeometry& g, const Vec3& idx) {
  return {g.origin.x + idx.x * g.spacing.x, g.origin.y + idx.y * g.spacing.y,
          g.origin.z + idx.z * g.spacing.z};
}

inline Vec3 physical_to_voxel(const VolumeGeometry& g, const Vec3& p) {
  return {(p.x - g.origin.x) / g.spacing.x, (p.y - g.origin.y) / g.spacing.y,
          (p.z - g.origin.z) / g.spacing.z};
}

/// Physical center of the voxel grid (midpoint of the voxel-center box).
inline Vec3 volume_center(const VolumeGeometry& g) {
  return voxel_to_physical(g, {0.5 * (g.dims[0] - 1), 0.5 * (g.dims[1] - 1),
                               0.5 * (g.dims[2] - 1)});
}

/// Dense CT volume in Hounsfield units, int16 storage, x-fastest then y
/// then z. Values are always within [kHuMin, kHuMax]; construction clamps.
class Volume {
 public:
  Volume() = default;

  Volume(VolumeGeometry geometry, std::vector<std::int16_t> voxels)
      : geometry_(geometry), voxels_(std::move(voxels)) {
    geometry_.validate();
    if (voxels_.size() != geometry_.voxel_count())
      throw parse_error("voxel count does not match dims");
    for (auto& v : voxels_) {
      if (v < kHuMin) {
        v = kHuMin;
        ++clamped_;
      } else if (v > kHuMax) {
        v = kHuMax;
        ++clamped_;
      }
    }
  }

  static Volume filled(VolumeGeometry geometry, std::int16_t value) {
    return Volume(geometry,
                  std::vector<std::int16_t>(geometry.voxel_count(), value));
  }

  const VolumeGeometry& geometry() const { return geometry_; }
  const std::vector<std::int16_t>& voxels() const { return voxels_; }
  std::vector<std::int16_t>& voxels() { return voxels_; }

  int nx() const { return geometry_.dims[0]; }
  int ny() const { return geometry_.dims[1]; }
  int nz() const { return geometry_.dims[2]; }

  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(geometry_.dims[0]) *
               (static_cast<std::size_t>(y) +
                static_cast<std::size_t>(geometry_.dims[1]) *
                    static_cast<std::size_t>(z));
  }

  std::int16_t at(int x, int y, int z) const {
    return voxels_[index(x, y, z)];
  }
  std::int16_t& at(int x, int y, int z) { return voxels_[index(x, y, z)]; }

  /// Number of input values clamped into the HU range at construction.
  std::size_t clamped_count() const { return clamped_; }

  friend bool operator==(const Volume& a, const Volume& b) {
    return a.geometry_ == b.geometry_ && a.voxels_ == b.voxels_;
  }

 private:
  VolumeGeometry geometry_;
  std::vector<std::int16_t> voxels_;
  std::size_t clamped_ = 0;
};

namespace detail {

inline std::filesystem::path raw_path_for(const std::filesystem::path& header,
                                          const std::string& data_name) {
  return header.parent_path() / data_name;
}

}  // namespace detail

/// Loads a volume from the text-header + raw-int16 interchange pair.
/// Header keys: dims, spacing_mm, origin_mm, data (raw file, relative to
/// the header). Raw values are little-endian signed 16-bit, x-fastest.
inline Volume load_volume(const std::filesystem::path& header_path) {
  const std::string text = read_text_file(header_path);

  VolumeGeometry g;
  std::string data_name;
  bool have_dims = false, have_spacing = false, have_origin = false,
       have_data = false;

  for_each_data_line(text, [&](int line_no, const std::string& line) {
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw parse_error(header_path.string() + ":" + std::to_string(line_no) +
                        ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto three = [&](Vec3& out) {
      const auto parts = split(value, ' ');
      std::vector<std::string> nonempty;
      for (const auto& p : parts)
        if (!p.empty()) nonempty.push_back(p);
      if (nonempty.size() != 3 || !parse_double(nonempty[0], out.x) ||
          !parse_double(nonempty[1], out.y) ||
          !parse_double(nonempty[2], out.z))
        throw parse_error(header_path.string() + ":" +
                          std::to_string(line_no) + ": expected three numbers");
    };
    if (key == "dims") {
      Vec3 d;
      three(d);
      if (d.x != std::floor(d.x) || d.y != std::floor(d.y) ||
          d.z != std::floor(d.z))
        throw parse_error(header_path.string() + ":" +
                          std::to_string(line_no) + ": dims must be integers");
      g.dims = {static_cast<int>(d.x), static_cast<int>(d.y),
                static_cast<int>(d.z)};
      have_dims = true;
    } else if (key == "spacing_mm") {
      three(g.spacing);
      have_spacing = true;
    } else if (key == "origin_mm") {
      three(g.origin);
      have_origin = true;
    } else if (key == "data") {
      data_name = value;
      have_data = true;
    } else {
      throw parse_error(header_path.string() + ":" + std::to_string(line_no) +
                        ": unknown key '" + key + "'");
    }
  });

  if (!have_dims || !have_spacing || !have_origin || !have_data)
    throw parse_error(header_path.string() +
                      ": header must define dims, spacing_mm, origin_mm, data");
  g.validate();

  const auto raw_path = detail::raw_path_for(header_path, data_name);
  std::ifstream raw(raw_path, std::ios::binary | std::ios::ate);
  if (!raw) throw io_error("cannot open raw file: " + raw_path.string());
  const auto size = static_cast<std::size_t>(raw.tellg());
  const std::size_t expected = g.voxel_count() * 2;
  if (size != expected)
    throw parse_error(raw_path.string() + ": size mismatch: got " +
                      std::to_string(size) + " bytes, dims require " +
                      std::to_string(expected));
  raw.seekg(0);
  std::vector<unsigned char> bytes(size);
  raw.read(reinterpret_cast<char*>(bytes.data()),
           static_cast<std::streamsize>(size));
  if (!raw) throw io_error("short read: " + raw_path.string());

  std::vector<std::int16_t> voxels(g.voxel_count());
  for (std::size_t i = 0; i < voxels.size(); ++i) {
    const std::uint16_t lo = bytes[2 * i];
    const std::uint16_t hi = bytes[2 * i + 1];
    voxels[i] = static_cast<std::int16_t>(
        static_cast<std::uint16_t>(lo | (hi << 8)));
  }
  return Volume(g, std::move(voxels));
}

/// Writes the header + raw pair. The raw file sits next to the header,
/// named after the header's stem. Round-trips bit-exactly.
inline void save_volume(const Volume& v, const std::filesystem::path& header_path) {
  const std::string raw_name = header_path.stem().string() + ".raw";
  const auto raw_path = detail::raw_path_for(header_path, raw_name);

  const auto& g = v.geometry();
  std::vector<unsigned char> bytes(v.voxels().size() * 2);
  for (std::size_t i = 0; i < v.voxels().size(); ++i) {
    const auto u = static_cast<std::uint16_t>(v.voxels()[i]);
    bytes[2 * i] = static_cast<unsigned char>(u & 0xff);
    bytes[2 * i + 1] = static_cast<unsigned char>(u >> 8);
  }
  atomic_write_bytes(raw_path, bytes.data(), bytes.size());

  std::string header;
  header += "dims = " + std::to_string(g.dims[0]) + " " +
            std::to_string(g.dims[1]) + " " + std::to_string(g.dims[2]) + "\n";
  header += "spacing_mm = " + format_exact(g.spacing.x) + " " +
            format_exact(g.spacing.y) + " " + format_exact(g.spacing.z) + "\n";
  header += "origin_mm = " + format_exact(g.origin.x) + " " +
            format_exact(g.origin.y) + " " + format_exact(g.origin.z) + "\n";
  header += "data = " + raw_name + "\n";
  atomic_write_text(header_path, header);
}

}  // namespace omct
