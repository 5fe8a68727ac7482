#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include "omct/errors.hpp"
#include "omct/text_io.hpp"
#include "omct/volume.hpp"

namespace omct {

/// Everything this pipeline consumes from one CT slice file.
struct SliceRecord {
  int rows = 0;
  int cols = 0;
  std::array<double, 2> pixel_spacing{0.0, 0.0};  // (row, column) mm
  Vec3 image_position{0.0, 0.0, 0.0};
  int instance_number = 0;
  std::optional<double> slice_thickness;
  double rescale_slope = 1.0;
  double rescale_intercept = 0.0;
  std::vector<std::int32_t> pixels;  // raw stored values, row-major
};

namespace detail {

inline constexpr const char* kExplicitLittleEndian = "1.2.840.10008.1.2.1";
inline constexpr const char* kImplicitLittleEndian = "1.2.840.10008.1.2";

/// Bounds-checked little-endian cursor; any read past the end throws
/// instead of returning partial data.
class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size)
      : data_(data), size_(size) {}

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return size_ - pos_; }
  bool at_end() const { return pos_ == size_; }

  void need(std::size_t n, const char* what) const {
    if (size_ - pos_ < n)
      throw parse_error(std::string("truncated file: unexpected end in ") +
                        what);
    }

  std::uint16_t u16(const char* what) {
    need(2, what);
    const std::uint16_t v = static_cast<std::uint16_t>(
        data_[pos_] | (static_cast<std::uint16_t>(data_[pos_ + 1]) << 8));
    pos_ += 2;
    return v;
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | data_[pos_ + i];
    pos_ += 4;
    return v;
  }

  std::uint16_t peek_u16() const {
    need(2, "element header");
    return static_cast<std::uint16_t>(
        data_[pos_] | (static_cast<std::uint16_t>(data_[pos_ + 1]) << 8));
  }

  const std::uint8_t* bytes(std::size_t n, const char* what) {
    need(n, what);
    const std::uint8_t* p = data_ + pos_;
    pos_ += n;
    return p;
  }

  void skip(std::size_t n, const char* what) { bytes(n, what); }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

struct Element {
  std::uint16_t group = 0;
  std::uint16_t element = 0;
  std::string vr;  // empty under implicit VR
  std::uint32_t length = 0;
  const std::uint8_t* value = nullptr;
};

inline constexpr std::uint32_t kUndefinedLength = 0xFFFFFFFFu;

inline std::string tag_name(std::uint16_t g, std::uint16_t e) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "(%04X,%04X)", g, e);
  return buf;
}

inline Element read_element(ByteReader& r, bool explicit_vr);

/// Skips an undefined-length sequence: items until the sequence
/// delimitation tag, parsing nested elements in the enclosing syntax so
/// their declared lengths are honored.
inline void skip_undefined_sequence(ByteReader& r, bool explicit_vr) {
  for (;;) {
    const std::uint16_t g = r.u16("sequence item tag");
    const std::uint16_t e = r.u16("sequence item tag");
    const std::uint32_t len = r.u32("sequence item length");
    if (g == 0xFFFE && e == 0xE0DD) return;  // sequence delimitation
    if (g != 0xFFFE || e != 0xE000)
      throw parse_error("malformed sequence: expected item tag, got " +
                        tag_name(g, e));
    if (len == kUndefinedLength) {
      // undefined-length item: elements until item delimitation
      for (;;) {
        if (r.peek_u16() == 0xFFFE) {
          const std::uint16_t dg = r.u16("item delimiter");
          const std::uint16_t de = r.u16("item delimiter");
          r.u32("item delimiter length");
          if (dg == 0xFFFE && de == 0xE00D) break;
          throw parse_error("malformed sequence item delimiter " +
                            tag_name(dg, de));
        }
        read_element(r, explicit_vr);
      }
    } else {
      r.skip(len, "sequence item value");
    }
  }
}

/// Reads one data element under the given syntax. For undefined-length
/// sequences the value is consumed (skipped) and `value` is null.
inline Element read_element(ByteReader& r, bool explicit_vr) {
  Element el;
  el.group = r.u16("element tag");
  el.element = r.u16("element tag");
  if (explicit_vr) {
    const std::uint8_t* vr = r.bytes(2, "VR");
    el.vr.assign(reinterpret_cast<const char*>(vr), 2);
    if (el.vr == "OB" || el.vr == "OW" || el.vr == "OF" || el.vr == "SQ" ||
        el.vr == "UT" || el.vr == "UN") {
      r.skip(2, "VR reserved bytes");
      el.length = r.u32("element length");
    } else {
      el.length = r.u16("element length");
    }
  } else {
    el.length = r.u32("element length");
  }

  if (el.length == kUndefinedLength) {
    const bool is_sequence = explicit_vr ? el.vr == "SQ" : true;
    if (!is_sequence)
      throw parse_error("undefined length on non-sequence element " +
                        tag_name(el.group, el.element));
    skip_undefined_sequence(r, explicit_vr);
    return el;
  }
  el.value = r.bytes(el.length, "element value");
  return el;
}

inline std::string element_text(const Element& el) {
  std::string s(reinterpret_cast<const char*>(el.value), el.length);
  while (!s.empty() && (s.back() == '\0' || s.back() == ' ')) s.pop_back();
  std::size_t start = 0;
  while (start < s.size() && s[start] == ' ') ++start;
  return s.substr(start);
}

inline double element_decimal(const Element& el, const char* tag) {
  double v = 0.0;
  if (!parse_double(element_text(el), v))
    throw parse_error(std::string("bad decimal string in ") + tag + ": '" +
                      element_text(el) + "'");
  return v;
}

inline std::vector<double> element_decimals(const Element& el,
                                            const char* tag) {
  std::vector<double> out;
  for (const auto& part : split(element_text(el), '\\')) {
    double v = 0.0;
    if (!parse_double(part, v))
      throw parse_error(std::string("bad decimal string in ") + tag + ": '" +
                        part + "'");
    out.push_back(v);
  }
  return out;
}

inline int element_int_string(const Element& el, const char* tag) {
  long long v = 0;
  if (!parse_long(element_text(el), v))
    throw parse_error(std::string("bad integer string in ") + tag + ": '" +
                      element_text(el) + "'");
  return static_cast<int>(v);
}

inline int element_u16_value(const Element& el, const char* tag) {
  if (el.length != 2)
    throw parse_error(std::string("expected 2-byte value in ") + tag);
  return el.value[0] | (static_cast<int>(el.value[1]) << 8);
}

}  // namespace detail

inline SliceRecord parse_dicom_file(const std::uint8_t* data,
                                    std::size_t size) {
  detail::ByteReader r(data, size);
  r.need(132, "preamble");
  r.skip(128, "preamble");
  const std::uint8_t* magic = r.bytes(4, "magic");
  if (std::memcmp(magic, "DICM", 4) != 0)
    throw parse_error("missing DICM magic");

  // file meta group (0002,xxxx) is always Explicit VR Little Endian
  std::string transfer_syntax;
  while (!r.at_end() && r.peek_u16() == 0x0002) {
    const auto el = detail::read_element(r, true);
    if (el.element == 0x0010) transfer_syntax = detail::element_text(el);
  }
  if (transfer_syntax.empty())
    throw parse_error("missing transfer syntax UID (0002,0010)");
  bool explicit_vr;
  if (transfer_syntax == detail::kExplicitLittleEndian)
    explicit_vr = true;
  else if (transfer_syntax == detail::kImplicitLittleEndian)
    explicit_vr = false;
  else
    throw parse_error("unsupported transfer syntax '" + transfer_syntax +
                      "'");

  SliceRecord s;
  bool have_rows = false, have_cols = false, have_spacing = false,
       have_position = false, have_instance = false, have_pixels = false;
  int pixel_representation = 0;  // DICOM default: unsigned

  while (!r.at_end()) {
    const auto el = detail::read_element(r, explicit_vr);
    if (el.value == nullptr) continue;  // skipped sequence
    const std::uint32_t tag =
        (static_cast<std::uint32_t>(el.group) << 16) | el.element;
    switch (tag) {
      case 0x00280010:
        s.rows = detail::element_u16_value(el, "Rows");
        have_rows = true;
        break;
      case 0x00280011:
        s.cols = detail::element_u16_value(el, "Columns");
        have_cols = true;
        break;
      case 0x00280030: {
        const auto v = detail::element_decimals(el, "PixelSpacing");
        if (v.size() != 2)
          throw parse_error("PixelSpacing must have 2 values");
        s.pixel_spacing = {v[0], v[1]};
        have_spacing = true;
        break;
      }
      case 0x00200032: {
        const auto v = detail::element_decimals(el, "ImagePositionPatient");
        if (v.size() != 3)
          throw parse_error("ImagePositionPatient must have 3 values");
        s.image_position = {v[0], v[1], v[2]};
        have_position = true;
        break;
      }
      case 0x00200037: {
        const auto v = detail::element_decimals(el, "ImageOrientationPatient");
        const std::vector<double> identity{1, 0, 0, 0, 1, 0};
        if (v != identity)
          throw parse_error(
              "non-axial orientation: ImageOrientationPatient is not "
              "1\\0\\0\\0\\1\\0");
        break;
      }
      case 0x00200013:
        s.instance_number = detail::element_int_string(el, "InstanceNumber");
        have_instance = true;
        break;
      case 0x00180050:
        s.slice_thickness = detail::element_decimal(el, "SliceThickness");
        break;
      case 0x00281052:
        s.rescale_intercept = detail::element_decimal(el, "RescaleIntercept");
        break;
      case 0x00281053:
        s.rescale_slope = detail::element_decimal(el, "RescaleSlope");
        break;
      case 0x00280103:
        pixel_representation = detail::element_u16_value(
            el, "PixelRepresentation");
        break;
      case 0x7FE00010: {
        if (!have_rows || !have_cols)
          throw parse_error("PixelData before Rows/Columns");
        const std::size_t expected = 2u *
                                     static_cast<std::size_t>(s.rows) *
                                     static_cast<std::size_t>(s.cols);
        if (el.length != expected)
          throw parse_error("pixel data length " + std::to_string(el.length) +
                            " does not match 2*rows*cols (" +
                            std::to_string(expected) + ")");
        s.pixels.resize(static_cast<std::size_t>(s.rows) * s.cols);
        for (std::size_t i = 0; i < s.pixels.size(); ++i) {
          const std::uint16_t raw = static_cast<std::uint16_t>(
              el.value[2 * i] |
              (static_cast<std::uint16_t>(el.value[2 * i + 1]) << 8));
          s.pixels[i] = pixel_representation == 1
                            ? static_cast<std::int16_t>(raw)
                            : static_cast<std::int32_t>(raw);
        }
        have_pixels = true;
        break;
      }
      default:
        break;
    }
  }

  if (!have_rows) throw parse_error("missing tag Rows");
  if (!have_cols) throw parse_error("missing tag Columns");
  if (!have_spacing) throw parse_error("missing tag PixelSpacing");
  if (!have_position) throw parse_error("missing tag ImagePositionPatient");
  if (!have_instance) throw parse_error("missing tag InstanceNumber");
  if (!have_pixels) throw parse_error("missing tag PixelData");
  if (s.rows < 1 || s.cols < 1)
    throw parse_error("Rows and Columns must be >= 1");
  if (!(s.pixel_spacing[0] > 0.0) || !(s.pixel_spacing[1] > 0.0))
    throw parse_error("PixelSpacing must be positive");
  return s;
}

inline SliceRecord parse_dicom_file(const std::vector<std::uint8_t>& bytes) {
  return parse_dicom_file(bytes.data(), bytes.size());
}

inline std::vector<std::uint8_t> read_binary_file(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open file: " + path.string());
  std::vector<std::uint8_t> bytes(
      (std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

inline SliceRecord parse_dicom_file(const std::filesystem::path& path) {
  try {
    return parse_dicom_file(read_binary_file(path));
  } catch (const parse_error& e) {
    throw parse_error(path.string() + ": " + e.what());
  }
}

/// Stacks parsed slices into a volume. Slices sort by the z component of
/// their image position; the z spacing is the (lower) median inter-slice
/// gap, and any gap deviating more than 10% from it is rejected.
inline Volume assemble_series(std::vector<SliceRecord> slices) {
  if (slices.size() < 2)
    throw parse_error("fewer than 2 slices in series");
  for (const auto& s : slices) {
    if (s.rows != slices[0].rows || s.cols != slices[0].cols)
      throw parse_error("inconsistent slice dimensions across series");
    if (s.pixel_spacing != slices[0].pixel_spacing)
      throw parse_error("inconsistent pixel spacing across series");
  }
  std::sort(slices.begin(), slices.end(),
            [](const SliceRecord& a, const SliceRecord& b) {
              return a.image_position.z < b.image_position.z;
            });

  std::vector<double> gaps;
  for (std::size_t i = 1; i < slices.size(); ++i)
    gaps.push_back(slices[i].image_position.z -
                   slices[i - 1].image_position.z);
  std::vector<double> sorted_gaps = gaps;
  std::sort(sorted_gaps.begin(), sorted_gaps.end());
  const double median = sorted_gaps[(sorted_gaps.size() - 1) / 2];
  if (!(median > 0.0))
    throw parse_error("non-positive slice gap (duplicate z positions?)");
  for (double g : gaps)
    if (std::abs(g - median) > 0.10 * median)
      throw parse_error("non-uniform slice spacing: gap " +
                        format_exact(g) + " vs median " +
                        format_exact(median));

  VolumeGeometry geo;
  geo.dims = {slices[0].cols, slices[0].rows,
              static_cast<int>(slices.size())};
  geo.spacing = {slices[0].pixel_spacing[1], slices[0].pixel_spacing[0],
                 median};
  geo.origin = slices[0].image_position;

  std::vector<std::int16_t> voxels;
  voxels.reserve(geo.voxel_count());
  for (const auto& s : slices)
    for (std::int32_t raw : s.pixels)
      voxels.push_back(
          clamp_hu(s.rescale_slope * raw + s.rescale_intercept));
  return Volume(geo, std::move(voxels));
}

}  // namespace omct
