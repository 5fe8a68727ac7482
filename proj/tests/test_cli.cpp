#include <sys/wait.h>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>

#include <catch2/catch_amalgamated.hpp>
#include "json.hpp"

#include "omct/dicom.hpp"
#include "omct/text_io.hpp"
#include "support/dicom_builder.hpp"
#include "support/temp_dir.hpp"

using omct_test::TempDir;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr interleaved
};

RunResult run_cli(const std::string& args) {
  const std::string cmd = std::string(OMCT_BIN) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  RunResult r;
  char buf[4096];
  std::size_t n = 0;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0)
    r.output.append(buf, n);
  const int status = pclose(pipe);
  if (WIFEXITED(status)) r.exit_code = WEXITSTATUS(status);
  return r;
}

std::string q(const std::filesystem::path& p) { return p.string(); }

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
  REQUIRE(out.good());
}

/// Parses "roll_deg 9.63" style lines out of identify/standardize output.
double printed_angle(const std::string& output, const std::string& key) {
  const auto pos = output.find(key + " ");
  REQUIRE(pos != std::string::npos);
  return std::stod(output.substr(pos + key.size() + 1));
}

const std::string kDataDir = OMCT_TEST_DATA_DIR;

}  // namespace

TEST_CASE("version and usage handling") {
  CHECK(run_cli("--version").output == "0.1.0\n");
  CHECK(run_cli("--version").exit_code == 0);
  CHECK(run_cli("--no-such-flag").exit_code == 64);
  CHECK(run_cli("").exit_code == 64);
  CHECK(run_cli("detect ghost.vol --out x.csv").exit_code == 64);  // no --classic
  CHECK(run_cli("--help").exit_code == 0);
}

TEST_CASE("phantom gen writes volume, truth and ground truth") {
  TempDir tmp;
  const auto r = run_cli("phantom gen --out " + q(tmp.file("ph")) +
                         " --roll 8 --pitch -4 --yaw 6");
  INFO(r.output);
  REQUIRE(r.exit_code == 0);
  CHECK(std::filesystem::exists(tmp.file("ph") / "phantom.vol"));
  CHECK(std::filesystem::exists(tmp.file("ph") / "phantom.raw"));
  CHECK(std::filesystem::exists(tmp.file("ph") / "ground_truth.csv"));
  const std::string truth =
      omct::read_text_file(tmp.file("ph") / "truth.txt");
  CHECK(truth.find("tilt_deg = 8.000000 -4.000000 6.000000") !=
        std::string::npos);
  CHECK(truth.find("left_eac,") != std::string::npos);
}

TEST_CASE("phantom tilt beyond the plausible range is refused") {
  TempDir tmp;
  const auto r = run_cli("phantom gen --out " + q(tmp.file("ph")) +
                         " --roll 25");
  CHECK(r.exit_code == 4);
  CHECK(r.output.find("20 degrees") != std::string::npos);
}

TEST_CASE("detect, identify and standardize round trip on a phantom") {
  TempDir tmp;
  REQUIRE(run_cli("phantom gen --out " + q(tmp.file("ph")) +
                  " --roll 8 --pitch -4 --yaw 6")
              .exit_code == 0);
  const std::string vol = q(tmp.file("ph") / "phantom.vol");
  const std::string det = q(tmp.file("det.csv"));

  auto r = run_cli("detect --classic " + vol + " --out " + det);
  INFO(r.output);
  REQUIRE(r.exit_code == 0);
  REQUIRE(std::filesystem::exists(det));

  r = run_cli("identify --volume " + vol + " --detections " + det);
  INFO(r.output);
  REQUIRE(r.exit_code == 0);
  CHECK(printed_angle(r.output, "roll_deg") == Catch::Approx(8.0).margin(2.0));
  CHECK(printed_angle(r.output, "pitch_deg") ==
        Catch::Approx(-4.0).margin(2.0));
  CHECK(printed_angle(r.output, "yaw_deg") == Catch::Approx(6.0).margin(2.0));

  r = run_cli("standardize --volume " + vol + " --detections " + det +
              " --out-dir " + q(tmp.file("std")));
  INFO(r.output);
  REQUIRE(r.exit_code == 0);

  const auto manifest_path = tmp.file("std") / "manifest.json";
  REQUIRE(std::filesystem::exists(manifest_path));
  const auto manifest =
      nlohmann::json::parse(omct::read_text_file(manifest_path));
  CHECK(manifest.at("tool_version") == "0.1.0");
  CHECK(manifest.at("case_id") == "phantom");
  CHECK(std::filesystem::exists(
      manifest.at("outputs").at("volume").get<std::string>()));
  CHECK(std::filesystem::exists(
      manifest.at("outputs").at("landmark_report").get<std::string>()));
  CHECK(manifest.at("angles_deg").at("roll").get<double>() ==
        Catch::Approx(8.0).margin(2.0));
  CHECK(manifest.at("warnings").empty());
  CHECK(manifest.at("timings_sec").contains("resample"));
}

TEST_CASE("standardize output is identical across thread counts") {
  TempDir tmp;
  REQUIRE(run_cli("phantom gen --out " + q(tmp.file("ph")) +
                  " --roll 10 --pitch 5 --yaw -7")
              .exit_code == 0);
  const std::string vol = q(tmp.file("ph") / "phantom.vol");
  const std::string det = q(tmp.file("det.csv"));
  REQUIRE(run_cli("detect --classic " + vol + " --out " + det).exit_code ==
          0);
  for (int threads : {1, 4, 8}) {
    REQUIRE(run_cli("standardize --volume " + vol + " --detections " + det +
                    " --out-dir " + q(tmp.file("t" + std::to_string(threads))) +
                    " --threads " + std::to_string(threads))
                .exit_code == 0);
  }
  const auto raw1 =
      omct::read_binary_file(tmp.file("t1") / "standardized.raw");
  const auto raw4 =
      omct::read_binary_file(tmp.file("t4") / "standardized.raw");
  const auto raw8 =
      omct::read_binary_file(tmp.file("t8") / "standardized.raw");
  REQUIRE(!raw1.empty());
  CHECK(raw1 == raw4);
  CHECK(raw1 == raw8);
  CHECK(omct::read_text_file(tmp.file("t1") / "landmarks.csv") ==
        omct::read_text_file(tmp.file("t8") / "landmarks.csv"));
}

TEST_CASE("identify failure modes map to distinct exit codes") {
  TempDir tmp;
  REQUIRE(run_cli("phantom gen --out " + q(tmp.file("ph"))).exit_code == 0);
  const std::string vol = q(tmp.file("ph") / "phantom.vol");

  SECTION("absent volume file") {
    const auto r = run_cli("identify --volume " + q(tmp.file("ghost.vol")) +
                           " --detections " + q(tmp.file("d.csv")));
    CHECK(r.exit_code == 3);
  }
  SECTION("malformed detections header") {
    write_file(tmp.file("bad.csv"), "who,what\n1,2\n");
    const auto r = run_cli("identify --volume " + vol + " --detections " +
                           q(tmp.file("bad.csv")));
    CHECK(r.exit_code == 3);
  }
  SECTION("landmark class with no detections") {
    write_file(tmp.file("partial.csv"),
               "case_id,slice_index,class,cx,cy,box_size,confidence\n"
               "phantom,60,left_eye,95,93,12,0.9\n");
    const auto r = run_cli("identify --volume " + vol + " --detections " +
                           q(tmp.file("partial.csv")));
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("right_eye") != std::string::npos);
  }
  SECTION("degenerate landmark geometry") {
    write_file(tmp.file("flat.csv"),
               "case_id,slice_index,class,cx,cy,box_size,confidence\n"
               "p,60,left_eye,63.5,63.5,12,0.9\n"
               "p,60,right_eye,63.5,63.5,12,0.9\n"
               "p,60,left_eac,63.5,63.5,12,0.9\n"
               "p,60,right_eac,63.5,63.5,12,0.9\n");
    const auto r = run_cli("identify --volume " + vol + " --detections " +
                           q(tmp.file("flat.csv")));
    CHECK(r.exit_code == 4);
  }
}

TEST_CASE("identify can warn without failing") {
  TempDir tmp;
  REQUIRE(run_cli("phantom gen --out " + q(tmp.file("ph")) + " --roll 18")
              .exit_code == 0);
  const std::string vol = q(tmp.file("ph") / "phantom.vol");
  const std::string det = q(tmp.file("det.csv"));
  REQUIRE(run_cli("detect --classic " + vol + " --out " + det).exit_code ==
          0);
  const auto r = run_cli("identify --volume " + vol + " --detections " + det +
                         " --max-angle-deg 10");
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("warning:") != std::string::npos);
}

TEST_CASE("reconstruct writes a mesh and reports its shape") {
  TempDir tmp;
  REQUIRE(run_cli("phantom gen --out " + q(tmp.file("ph"))).exit_code == 0);
  const std::string vol = q(tmp.file("ph") / "phantom.vol");

  const auto r = run_cli("reconstruct --volume " + vol +
                         " --iso -350 --out " + q(tmp.file("head.obj")));
  INFO(r.output);
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("vertices") != std::string::npos);
  const std::string obj = omct::read_text_file(tmp.file("head.obj"));
  CHECK(obj.find("v ") != std::string::npos);
  CHECK(obj.find("f ") != std::string::npos);

  const auto empty = run_cli("reconstruct --volume " + vol +
                             " --iso 3000 --out " + q(tmp.file("none.obj")));
  CHECK(empty.exit_code == 4);
  CHECK(!std::filesystem::exists(tmp.file("none.obj")));
}

TEST_CASE("eval det writes report json and one curve per class") {
  TempDir tmp;
  REQUIRE(run_cli("phantom gen --out " + q(tmp.file("ph")) + " --roll 5")
              .exit_code == 0);
  const std::string vol = q(tmp.file("ph") / "phantom.vol");
  const std::string det = q(tmp.file("det.csv"));
  REQUIRE(run_cli("detect --classic " + vol + " --out " + det).exit_code ==
          0);
  const auto r = run_cli("eval det --pred " + det + " --gt " +
                         q(tmp.file("ph") / "ground_truth.csv") +
                         " --out-dir " + q(tmp.file("ev")));
  INFO(r.output);
  REQUIRE(r.exit_code == 0);

  const auto report =
      nlohmann::json::parse(omct::read_text_file(tmp.file("ev") / "report.json"));
  CHECK(report.at("map").get<double>() > 0.5);
  CHECK(report.at("per_class_ap").size() == 4);
  for (const char* cls :
       {"left_eye", "right_eye", "left_eac", "right_eac"}) {
    const auto curve = omct::read_text_file(
        tmp.file("ev") / ("curve_" + std::string(cls) + ".csv"));
    CHECK(curve.rfind("threshold,precision,recall,f1\n", 0) == 0);
    CHECK(std::count(curve.begin(), curve.end(), '\n') == 100);
  }
}

TEST_CASE("eval efficiency prints both index columns and the swap note") {
  const auto r =
      run_cli("eval efficiency --models " + kDataDir + "/detector_models.csv");
  INFO(r.output);
  REQUIRE(r.exit_code == 0);
  // YOLOv8: map/params = 0.0834, map/gflops = 0.0507
  CHECK(r.output.find("0.0834") != std::string::npos);
  CHECK(r.output.find("0.0507") != std::string::npos);
  CHECK(r.output.find("swapped") != std::string::npos);
  CHECK(r.output.find("EfficientDet") != std::string::npos);
}

TEST_CASE("eval scores reports summaries, divergences and the paired test") {
  TempDir tmp;
  auto r = run_cli("eval scores --tables " + kDataDir +
                   "/observer_scores.csv");
  INFO(r.output);
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("obs1_nonstd: n=52 mean=2.846") != std::string::npos);
  CHECK(r.output.find("viable=43/52 (82.7%)") != std::string::npos);
  CHECK(r.output.find("differs from reported mean") != std::string::npos);

  write_file(tmp.file("paired.csv"),
             "case_id,x,y\na,1,2\nb,3,1\nc,2,5\nd,4,4\ne,6,2\n");
  r = run_cli("eval scores --paired " + q(tmp.file("paired.csv")));
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("wilcoxon: W=4.0") != std::string::npos);
  CHECK(r.output.find("method=exact n=4") != std::string::npos);

  write_file(tmp.file("same.csv"), "case_id,x,y\na,1,1\nb,2,2\n");
  r = run_cli("eval scores --paired " + q(tmp.file("same.csv")));
  CHECK(r.exit_code == 4);
}

TEST_CASE("dicom import assembles a series from a directory") {
  TempDir tmp;
  const auto series = tmp.file("series");
  std::filesystem::create_directory(series);
  // three 4x4 explicit-LE slices, 2 mm apart, written out of order
  for (int i : {2, 0, 1}) {
    omct_test::SliceParams p;
    p.z = 2.0 * i;
    p.instance = i + 1;
    std::vector<std::uint16_t> pix(16, static_cast<std::uint16_t>(100 * i));
    const auto bytes = omct_test::slice_bytes(true, p, pix);
    std::ofstream out(series / ("slice" + std::to_string(i) + ".dcm"),
                      std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
  }
  const auto r = run_cli("dicom import --dir " + q(series) + " --out " +
                         q(tmp.file("series.vol")));
  INFO(r.output);
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("imported 3 slices") != std::string::npos);
  CHECK(std::filesystem::exists(tmp.file("series.vol")));
  CHECK(std::filesystem::exists(tmp.file("series.raw")));

  // corrupting one slice fails the whole import with an input error
  write_file(series / "slice1.dcm", "not dicom at all");
  CHECK(run_cli("dicom import --dir " + q(series) + " --out " +
                q(tmp.file("bad.vol")))
            .exit_code == 3);
}
