#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>

#include "omct/dicom.hpp"
#include "support/dicom_builder.hpp"

using namespace omct;
using omct_test::DicomBuilder;
using omct_test::SliceParams;
using omct_test::slice_bytes;

namespace {

std::vector<std::uint16_t> ramp_pixels(int rows, int cols, int start = 0) {
  std::vector<std::uint16_t> px(static_cast<std::size_t>(rows) * cols);
  for (std::size_t i = 0; i < px.size(); ++i)
    px[i] = static_cast<std::uint16_t>(start + static_cast<int>(i));
  return px;
}

}  // namespace

TEST_CASE("parses a well-formed explicit VR slice") {
  SliceParams p;
  p.rows = 3;
  p.cols = 5;
  p.row_spacing = 0.5;
  p.col_spacing = 0.25;
  p.x = -10.0;
  p.y = 4.5;
  p.z = 7.25;
  p.instance = 42;
  p.slope = 2.0;
  p.intercept = -1024.0;
  const auto bytes = slice_bytes(true, p, ramp_pixels(3, 5));
  const auto s = parse_dicom_file(bytes);
  REQUIRE(s.rows == 3);
  REQUIRE(s.cols == 5);
  REQUIRE(s.pixel_spacing == std::array<double, 2>{0.5, 0.25});
  REQUIRE(s.image_position.x == -10.0);
  REQUIRE(s.image_position.y == 4.5);
  REQUIRE(s.image_position.z == 7.25);
  REQUIRE(s.instance_number == 42);
  REQUIRE(s.slice_thickness == 1.0);
  REQUIRE(s.rescale_slope == 2.0);
  REQUIRE(s.rescale_intercept == -1024.0);
  REQUIRE(s.pixels.size() == 15);
  REQUIRE(s.pixels[0] == 0);
  REQUIRE(s.pixels[14] == 14);
}

TEST_CASE("explicit and implicit encodings parse identically") {
  SliceParams p;
  p.rows = 4;
  p.cols = 4;
  p.z = 3.5;
  const auto px = ramp_pixels(4, 4, 100);
  const auto a = parse_dicom_file(slice_bytes(true, p, px));
  const auto b = parse_dicom_file(slice_bytes(false, p, px));
  REQUIRE(a.rows == b.rows);
  REQUIRE(a.cols == b.cols);
  REQUIRE(a.pixel_spacing == b.pixel_spacing);
  REQUIRE(a.image_position.z == b.image_position.z);
  REQUIRE(a.instance_number == b.instance_number);
  REQUIRE(a.pixels == b.pixels);
}

TEST_CASE("signed and unsigned pixel representations") {
  SliceParams p;
  p.rows = 1;
  p.cols = 2;
  SECTION("representation 1 reads two's complement") {
    p.pixel_representation = 1;
    const auto s =
        parse_dicom_file(slice_bytes(true, p, {0xFFFF, 0x8000}));
    REQUIRE(s.pixels[0] == -1);
    REQUIRE(s.pixels[1] == -32768);
  }
  SECTION("representation 0 reads unsigned") {
    p.pixel_representation = 0;
    const auto s =
        parse_dicom_file(slice_bytes(true, p, {0xFFFF, 0x8000}));
    REQUIRE(s.pixels[0] == 65535);
    REQUIRE(s.pixels[1] == 32768);
  }
}

TEST_CASE("rescale defaults apply when tags are absent") {
  DicomBuilder b = DicomBuilder::explicit_le();
  b.add_text(0x0020, 0x0013, "IS", "1");
  b.add_text(0x0020, 0x0032, "DS", "0\\0\\0");
  b.add_us(0x0028, 0x0010, 2);
  b.add_us(0x0028, 0x0011, 2);
  b.add_text(0x0028, 0x0030, "DS", "1\\1");
  b.add_pixels({1, 2, 3, 4});
  const auto s = parse_dicom_file(b.bytes());
  REQUIRE(s.rescale_slope == 1.0);
  REQUIRE(s.rescale_intercept == 0.0);
  REQUIRE_FALSE(s.slice_thickness.has_value());
}

TEST_CASE("sequence elements are skipped without touching required tags") {
  for (bool explicit_vr : {true, false}) {
    INFO((explicit_vr ? "explicit" : "implicit"));
    DicomBuilder b =
        explicit_vr ? DicomBuilder::explicit_le() : DicomBuilder::implicit_le();
    b.add_text(0x0020, 0x0013, "IS", "7");
    b.add_text(0x0020, 0x0032, "DS", "0\\0\\2");
    // defined-length sequence whose payload would misparse as elements
    b.add_sequence_defined(0x0008, 0x1140,
                           {0xDE, 0xAD, 0xBE, 0xEF, 0x00, 0x01});
    b.add_us(0x0028, 0x0010, 2);
    b.add_us(0x0028, 0x0011, 2);
    // undefined-length sequence with one empty item
    b.add_sequence_undefined(0x0008, 0x9215);
    b.add_text(0x0028, 0x0030, "DS", "1\\1");
    b.add_pixels({9, 9, 9, 9});
    const auto s = parse_dicom_file(b.bytes());
    REQUIRE(s.rows == 2);
    REQUIRE(s.instance_number == 7);
    REQUIRE(s.pixels == std::vector<std::int32_t>{9, 9, 9, 9});
  }
}

TEST_CASE("malformed files raise classified parse errors") {
  SliceParams p;
  p.rows = 2;
  p.cols = 2;
  const auto px = ramp_pixels(2, 2);

  SECTION("corrupted magic") {
    auto bytes = slice_bytes(true, p, px);
    bytes[131] = 'X';  // DICM -> DICX
    REQUIRE_THROWS_WITH(parse_dicom_file(bytes),
                        Catch::Matchers::ContainsSubstring("DICM"));
  }
  SECTION("file shorter than the preamble") {
    const std::vector<std::uint8_t> bytes(64, 0);
    REQUIRE_THROWS_AS(parse_dicom_file(bytes), parse_error);
  }
  SECTION("compressed transfer syntax is refused") {
    DicomBuilder b(true, "1.2.840.10008.1.2.4.70");
    b.add_us(0x0028, 0x0010, 2);
    REQUIRE_THROWS_WITH(
        parse_dicom_file(b.bytes()),
        Catch::Matchers::ContainsSubstring("unsupported transfer syntax"));
  }
  SECTION("missing transfer syntax UID") {
    std::vector<std::uint8_t> bytes(128, 0);
    const char* magic = "DICM";
    bytes.insert(bytes.end(), magic, magic + 4);
    // dataset element (0008,0018) with no meta group at all
    const std::uint8_t elem[] = {0x08, 0x00, 0x18, 0x00, 'C', 'S',
                                 0x02, 0x00, 'A',  'B'};
    bytes.insert(bytes.end(), std::begin(elem), std::end(elem));
    REQUIRE_THROWS_WITH(
        parse_dicom_file(bytes),
        Catch::Matchers::ContainsSubstring("missing transfer syntax"));
  }
  SECTION("each required tag is reported when missing") {
    struct Case {
      std::uint32_t tag;
      const char* name;
    };
    const Case cases[] = {{0x00280010, "Rows"},
                          {0x00280011, "Columns"},
                          {0x00280030, "PixelSpacing"},
                          {0x00200032, "ImagePositionPatient"},
                          {0x00200013, "InstanceNumber"}};
    for (const auto& c : cases) {
      INFO(c.name);
      DicomBuilder b = DicomBuilder::explicit_le();
      if (c.tag != 0x00200013) b.add_text(0x0020, 0x0013, "IS", "1");
      if (c.tag != 0x00200032) b.add_text(0x0020, 0x0032, "DS", "0\\0\\0");
      if (c.tag != 0x00280010) b.add_us(0x0028, 0x0010, 2);
      if (c.tag != 0x00280011) b.add_us(0x0028, 0x0011, 2);
      if (c.tag != 0x00280030) b.add_text(0x0028, 0x0030, "DS", "1\\1");
      if (c.tag != 0x00280010 && c.tag != 0x00280011)
        b.add_pixels({1, 2, 3, 4});
      REQUIRE_THROWS_WITH(parse_dicom_file(b.bytes()),
                          Catch::Matchers::ContainsSubstring(
                              c.tag == 0x00280010 || c.tag == 0x00280011
                                  ? c.name
                                  : std::string("missing tag ") + c.name));
    }
  }
  SECTION("missing pixel data") {
    DicomBuilder b = DicomBuilder::explicit_le();
    b.add_text(0x0020, 0x0013, "IS", "1");
    b.add_text(0x0020, 0x0032, "DS", "0\\0\\0");
    b.add_us(0x0028, 0x0010, 2);
    b.add_us(0x0028, 0x0011, 2);
    b.add_text(0x0028, 0x0030, "DS", "1\\1");
    REQUIRE_THROWS_WITH(
        parse_dicom_file(b.bytes()),
        Catch::Matchers::ContainsSubstring("missing tag PixelData"));
  }
  SECTION("pixel data length mismatch") {
    DicomBuilder b = DicomBuilder::explicit_le();
    b.add_text(0x0020, 0x0013, "IS", "1");
    b.add_text(0x0020, 0x0032, "DS", "0\\0\\0");
    b.add_us(0x0028, 0x0010, 2);
    b.add_us(0x0028, 0x0011, 2);
    b.add_text(0x0028, 0x0030, "DS", "1\\1");
    b.add_pixels_with_declared_length({1, 2, 3}, 6);  // needs 8 bytes
    REQUIRE_THROWS_WITH(
        parse_dicom_file(b.bytes()),
        Catch::Matchers::ContainsSubstring("does not match 2*rows*cols"));
  }
  SECTION("non-axial orientation") {
    DicomBuilder b = DicomBuilder::explicit_le();
    b.add_text(0x0020, 0x0032, "DS", "0\\0\\0");
    b.add_text(0x0020, 0x0037, "DS", "0\\1\\0\\1\\0\\0");
    REQUIRE_THROWS_WITH(
        parse_dicom_file(b.bytes()),
        Catch::Matchers::ContainsSubstring("non-axial orientation"));
  }
  SECTION("unparseable decimal string") {
    DicomBuilder b = DicomBuilder::explicit_le();
    b.add_text(0x0028, 0x0030, "DS", "abc\\1");
    REQUIRE_THROWS_WITH(parse_dicom_file(b.bytes()),
                        Catch::Matchers::ContainsSubstring("bad decimal"));
  }
  SECTION("pixel data before image dimensions") {
    DicomBuilder b = DicomBuilder::explicit_le();
    b.add_pixels({1, 2, 3, 4});
    REQUIRE_THROWS_AS(parse_dicom_file(b.bytes()), parse_error);
  }
  SECTION("declared element length beyond end of file") {
    DicomBuilder b = DicomBuilder::explicit_le();
    b.add_pixels_with_declared_length({1, 2}, 0x00100000);
    REQUIRE_THROWS_WITH(parse_dicom_file(b.bytes()),
                        Catch::Matchers::ContainsSubstring("truncated"));
  }
}

TEST_CASE("every proper prefix of a valid file fails cleanly") {
  SliceParams p;
  p.rows = 2;
  p.cols = 3;
  const auto full = slice_bytes(true, p, ramp_pixels(2, 3));
  // sanity: the whole file parses
  REQUIRE_NOTHROW(parse_dicom_file(full));
  for (std::size_t n = 0; n < full.size(); ++n) {
    const std::vector<std::uint8_t> prefix(full.begin(), full.begin() + n);
    REQUIRE_THROWS_AS(parse_dicom_file(prefix), io_error);
  }
}

TEST_CASE("assembles a sorted series into a volume") {
  const auto make = [](double z, int instance, int base) {
    SliceParams p;
    p.rows = 2;
    p.cols = 3;
    p.row_spacing = 0.5;
    p.col_spacing = 0.25;
    p.x = -1.0;
    p.y = -2.0;
    p.z = z;
    p.instance = instance;
    return parse_dicom_file(slice_bytes(true, p, ramp_pixels(2, 3, base)));
  };

  SECTION("uniform gaps, shuffled input order") {
    const std::vector<SliceRecord> in_order = {make(0, 1, 0), make(1, 2, 100),
                                               make(2, 3, 200)};
    const std::vector<SliceRecord> shuffled = {make(2, 3, 200), make(0, 1, 0),
                                               make(1, 2, 100)};
    const Volume a = assemble_series(in_order);
    const Volume b = assemble_series(shuffled);
    REQUIRE(a == b);
    REQUIRE(a.geometry().dims == std::array<int, 3>{3, 2, 3});
    // x spacing comes from the column spacing, y from the row spacing
    REQUIRE(a.geometry().spacing.x == 0.25);
    REQUIRE(a.geometry().spacing.y == 0.5);
    REQUIRE(a.geometry().spacing.z == 1.0);
    REQUIRE(a.geometry().origin.z == 0.0);
    REQUIRE(a.at(0, 0, 1) == 100);
    REQUIRE(a.at(2, 1, 2) == 205);
  }
  SECTION("rescale mapping is exact before clamping") {
    SliceParams p;
    p.rows = 1;
    p.cols = 4;
    p.slope = 2.5;
    p.intercept = -1000.0;
    std::vector<SliceRecord> slices;
    for (int i = 0; i < 2; ++i) {
      p.z = i;
      slices.push_back(
          parse_dicom_file(slice_bytes(true, p, {0, 2, 400, 800})));
    }
    const Volume v = assemble_series(slices);
    REQUIRE(v.at(0, 0, 0) == -1000);
    REQUIRE(v.at(1, 0, 0) == -995);
    REQUIRE(v.at(2, 0, 0) == 0);
    REQUIRE(v.at(3, 0, 1) == 1000);
  }
  SECTION("values outside the HU range clamp") {
    SliceParams p;
    p.rows = 1;
    p.cols = 2;
    p.slope = 10.0;
    std::vector<SliceRecord> slices;
    for (int i = 0; i < 2; ++i) {
      p.z = i;
      slices.push_back(parse_dicom_file(slice_bytes(true, p, {1000, 0})));
    }
    const Volume v = assemble_series(slices);
    REQUIRE(v.at(0, 0, 0) == kHuMax);
  }
  SECTION("mild gap jitter within ten percent passes") {
    const Volume v =
        assemble_series({make(0, 1, 0), make(1, 2, 0), make(2.05, 3, 0)});
    REQUIRE(v.geometry().spacing.z == 1.0);
  }
  SECTION("spec example: gaps one and four fail") {
    REQUIRE_THROWS_WITH(
        assemble_series({make(0, 1, 0), make(1, 2, 0), make(5, 3, 0)}),
        Catch::Matchers::ContainsSubstring("non-uniform slice spacing"));
  }
  SECTION("duplicate z positions fail") {
    REQUIRE_THROWS_WITH(
        assemble_series({make(0, 1, 0), make(0, 2, 0), make(1, 3, 0)}),
        Catch::Matchers::ContainsSubstring("non-positive slice gap"));
  }
  SECTION("fewer than two slices fail") {
    REQUIRE_THROWS_WITH(
        assemble_series({make(0, 1, 0)}),
        Catch::Matchers::ContainsSubstring("fewer than 2 slices"));
    REQUIRE_THROWS_AS(assemble_series({}), parse_error);
  }
  SECTION("inconsistent dimensions fail") {
    SliceParams p;
    p.rows = 3;
    p.cols = 3;
    p.z = 1.0;
    auto odd = parse_dicom_file(slice_bytes(true, p, ramp_pixels(3, 3)));
    REQUIRE_THROWS_WITH(
        assemble_series({make(0, 1, 0), odd}),
        Catch::Matchers::ContainsSubstring("inconsistent slice dimensions"));
  }
  SECTION("inconsistent pixel spacing fails") {
    SliceParams p;
    p.rows = 2;
    p.cols = 3;
    p.row_spacing = 0.7;
    p.col_spacing = 0.25;
    p.z = 1.0;
    auto odd = parse_dicom_file(slice_bytes(true, p, ramp_pixels(2, 3)));
    REQUIRE_THROWS_WITH(
        assemble_series({make(0, 1, 0), odd}),
        Catch::Matchers::ContainsSubstring("inconsistent pixel spacing"));
  }
}
