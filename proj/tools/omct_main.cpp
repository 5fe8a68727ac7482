#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "omct/detections.hpp"
#include "omct/dicom.hpp"
#include "omct/landmarks.hpp"
#include "omct/metrics.hpp"
#include "omct/orientation.hpp"
#include "omct/phantom.hpp"
#include "omct/reformat.hpp"
#include "omct/version.hpp"
#include "omct/volume.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace omct;

namespace {

constexpr int kExitLandmarkMissing = 2;
constexpr int kExitIo = 3;
constexpr int kExitGeometry = 4;
constexpr int kExitUsage = 64;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

int run_guarded(const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const landmark_missing_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitLandmarkMissing;
  } catch (const degenerate_landmarks_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitGeometry;
  } catch (const implausible_geometry_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitGeometry;
  } catch (const empty_surface_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitGeometry;
  } catch (const all_zero_differences_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitGeometry;
  } catch (const io_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

void print_angles(const EulerAngles& a) {
  std::printf("roll_deg %.2f\n", rad_to_deg(a.roll));
  std::printf("pitch_deg %.2f\n", rad_to_deg(a.pitch));
  std::printf("yaw_deg %.2f\n", rad_to_deg(a.yaw));
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings)
    std::fprintf(stderr, "warning: %s\n", w.c_str());
}

std::string csv_fixed6(std::initializer_list<double> vals) {
  std::string line;
  for (double v : vals) {
    if (!line.empty()) line += ",";
    line += format_fixed6(v);
  }
  return line;
}

// ---------------------------------------------------------------------------
// command bodies

void cmd_dicom_import(const std::string& dir, const std::string& out) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file()) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<SliceRecord> slices;
  slices.reserve(files.size());
  for (const auto& f : files) slices.push_back(parse_dicom_file(f));
  const Volume v = assemble_series(std::move(slices));
  if (const auto parent = fs::path(out).parent_path(); !parent.empty())
    fs::create_directories(parent);
  save_volume(v, out);
  std::printf("imported %zu slices -> %s (%d x %d x %d)\n", files.size(),
              out.c_str(), v.nx(), v.ny(), v.nz());
}

void cmd_phantom_gen(const std::string& out_dir, double roll_deg,
                     double pitch_deg, double yaw_deg, int size,
                     int threads) {
  PhantomSpec spec;
  spec.dims = {size, size, size};
  spec.tilt = {deg_to_rad(roll_deg), deg_to_rad(pitch_deg),
               deg_to_rad(yaw_deg)};
  const auto [volume, truth, boxes] = generate_phantom(spec, threads);

  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  save_volume(volume, dir / "phantom.vol");
  write_ground_truth(boxes, dir / "ground_truth.csv");

  std::string manifest = "# analytic phantom truth\n";
  manifest += "tilt_deg = " + format_fixed6(roll_deg) + " " +
              format_fixed6(pitch_deg) + " " + format_fixed6(yaw_deg) + "\n";
  manifest += "class,vx,vy,vz,px,py,pz\n";
  for (auto cls : kAllLandmarkClasses) {
    const auto i = static_cast<std::size_t>(cls);
    manifest += std::string(to_string(cls)) + "," +
                csv_fixed6({truth.voxel[i].x, truth.voxel[i].y,
                            truth.voxel[i].z, truth.physical[i].x,
                            truth.physical[i].y, truth.physical[i].z}) +
                "\n";
  }
  atomic_write_text(dir / "truth.txt", manifest);
  std::printf("phantom written to %s (%d^3, tilt %.2f %.2f %.2f deg)\n",
              out_dir.c_str(), size, roll_deg, pitch_deg, yaw_deg);
}

void cmd_detect_classic(const std::string& volume_path,
                        const std::string& out,
                        const std::string& case_id) {
  const Volume v = load_volume(volume_path);
  const std::string id =
      case_id.empty() ? fs::path(volume_path).stem().string() : case_id;
  const DetectionSet d = classical_detect(v, id);
  if (const auto parent = fs::path(out).parent_path(); !parent.empty())
    fs::create_directories(parent);
  write_detections(d, out);
  std::printf("%zu detections -> %s\n", d.records.size(), out.c_str());
}

void cmd_identify(const std::string& volume_path,
                  const std::string& detections_path,
                  const std::string& report_out, double min_confidence,
                  bool index_space, double max_angle_deg) {
  const Volume v = load_volume(volume_path);
  const DetectionSet d = read_detections(detections_path);
  const LandmarkSet lm =
      identify_landmarks(d, v.geometry(), min_confidence);
  const EulerAngles angles = compute_angles(lm.frame(index_space));
  print_warnings(plausibility_warnings(angles, max_angle_deg));
  print_angles(angles);
  if (!report_out.empty()) {
    if (const auto parent = fs::path(report_out).parent_path();
        !parent.empty())
      fs::create_directories(parent);
    write_landmark_report(lm, angles, report_out);
  }
}

void cmd_standardize(const std::string& volume_path,
                     const std::string& detections_path,
                     const std::string& out_dir, double min_confidence,
                     bool index_space, double max_angle_deg, int threads) {
  const auto t_load_start = Clock::now();
  const Volume v = load_volume(volume_path);
  const DetectionSet d = read_detections(detections_path);
  const double t_load = seconds_since(t_load_start);

  const auto t_identify_start = Clock::now();
  const LandmarkSet lm =
      identify_landmarks(d, v.geometry(), min_confidence);
  const EulerAngles angles = compute_angles(lm.frame(index_space));
  const auto warnings = plausibility_warnings(angles, max_angle_deg);
  const double t_identify = seconds_since(t_identify_start);

  const auto t_resample_start = Clock::now();
  const Volume out = standardize(v, angles, threads);
  const double t_resample = seconds_since(t_resample_start);

  const auto t_write_start = Clock::now();
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  const fs::path volume_out = dir / "standardized.vol";
  const fs::path report_out = dir / "landmarks.csv";
  save_volume(out, volume_out);
  write_landmark_report(lm, angles, report_out);
  const double t_write = seconds_since(t_write_start);

  json manifest;
  manifest["case_id"] = lm.case_id;
  manifest["tool_version"] = kVersion;
  manifest["inputs"] = {{"volume", volume_path},
                        {"detections", detections_path}};
  manifest["outputs"] = {{"volume", volume_out.string()},
                         {"landmark_report", report_out.string()}};
  manifest["min_confidence"] = min_confidence;
  manifest["index_space"] = index_space;
  manifest["max_angle_deg"] = max_angle_deg;
  manifest["threads"] = threads;
  manifest["angles_deg"] = {{"roll", rad_to_deg(angles.roll)},
                            {"pitch", rad_to_deg(angles.pitch)},
                            {"yaw", rad_to_deg(angles.yaw)}};
  manifest["warnings"] = warnings;
  manifest["timings_sec"] = {{"load", t_load},
                             {"identify", t_identify},
                             {"resample", t_resample},
                             {"write", t_write}};
  atomic_write_text(dir / "manifest.json", manifest.dump(2) + "\n");

  print_warnings(warnings);
  print_angles(angles);
  std::printf("standardized volume -> %s\n", volume_out.string().c_str());
}

void cmd_reconstruct(const std::string& volume_path, double iso,
                     const std::string& out) {
  const Volume v = load_volume(volume_path);
  const TriangleMesh mesh = extract_isosurface(v, iso);
  if (const auto parent = fs::path(out).parent_path(); !parent.empty())
    fs::create_directories(parent);
  write_mesh_obj(mesh, out);
  std::printf("mesh -> %s (%zu vertices, %zu triangles, area %.3f mm^2, "
              "euler characteristic %lld)\n",
              out.c_str(), mesh.vertices.size(), mesh.triangles.size(),
              mesh_surface_area(mesh), mesh_euler_characteristic(mesh));
}

void cmd_eval_det(const std::string& pred_path, const std::string& gt_path,
                  const std::string& out_dir, double iou_threshold) {
  const auto preds = read_detection_records(pred_path);
  const auto gts = read_ground_truth(gt_path);
  const EvalReport report = mean_average_precision(preds, gts, iou_threshold);

  fs::create_directories(out_dir);
  const fs::path dir(out_dir);

  for (auto cls : kAllLandmarkClasses) {
    std::string csv = "threshold,precision,recall,f1\n";
    for (const auto& p : report.curve(cls))
      csv += csv_fixed6({p.threshold, p.precision, p.recall, p.f1}) + "\n";
    atomic_write_text(dir / ("curve_" + std::string(to_string(cls)) + ".csv"),
                      csv);
  }

  json j;
  j["tool_version"] = kVersion;
  j["iou_threshold"] = iou_threshold;
  j["map"] = report.map;
  for (auto cls : kAllLandmarkClasses) {
    j["per_class_ap"][to_string(cls)] = report.ap(cls);
    const auto& mid = report.curve(cls)[49];  // threshold 0.50
    j["counts_at_0.50"][to_string(cls)] = {
        {"tp", mid.tp}, {"fp", mid.fp}, {"fn", mid.fn}};
  }
  atomic_write_text(dir / "report.json", j.dump(2) + "\n");

  for (auto cls : kAllLandmarkClasses)
    std::printf("ap %-9s %.6f\n", to_string(cls), report.ap(cls));
  std::printf("map %.6f\n", report.map);
  std::printf("report -> %s\n", (dir / "report.json").string().c_str());
}

void cmd_eval_efficiency(const std::string& models_path) {
  const auto models = read_model_infos(models_path);
  std::printf("%-14s %8s %10s %10s %8s %8s\n", "model", "map", "gflops",
              "params_M", "pei", "cpei");
  for (const auto& m : models)
    std::printf("%-14s %8.4f %10.3f %10.3f %8.4f %8.4f\n", m.name.c_str(),
                m.map, m.gflops, m.params_millions, pei(m), cpei(m));
  std::printf(
      "note: pei = map / params_M, cpei = map / gflops. Some published\n"
      "comparison tables print these two columns swapped; values above\n"
      "follow the definitions.\n");
}

void cmd_eval_scores(const std::string& tables_path,
                     const std::string& paired_path) {
  if (!tables_path.empty()) {
    const auto tables = read_score_tables(tables_path);
    for (const auto& t : tables) {
      const auto s = score_summary(t);
      const long viable = t.counts[2] + t.counts[3] + t.counts[4];
      std::printf("%s: n=%ld mean=%.3f sd=%.3f viable=%ld/%ld (%.1f%%)\n",
                  t.observer.c_str(), s.total, s.mean, s.sd, viable, s.total,
                  100.0 * s.viable_fraction);
      if (t.reported_mean &&
          std::abs(s.mean - *t.reported_mean) > 0.05)
        std::printf(
            "  note: count-derived mean %.3f differs from reported mean "
            "%.2f\n",
            s.mean, *t.reported_mean);
    }
  }
  if (!paired_path.empty()) {
    const auto pairs = read_paired_scores(paired_path);
    const auto r = wilcoxon_signed_rank(pairs.x, pairs.y);
    std::printf("wilcoxon: W=%.1f p=%.6f method=%s n=%d\n", r.w,
                r.p_two_sided,
                r.method == WilcoxonMethod::exact ? "exact" : "normal",
                r.n_nonzero);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"orbitomeatal head-CT standardization toolkit"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  std::function<void()> action;

  // dicom import
  auto* dicom = app.add_subcommand("dicom", "DICOM series operations");
  dicom->require_subcommand(1);
  {
    auto* import = dicom->add_subcommand("import",
                                         "assemble a series into a volume");
    auto dir = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    import->add_option("--dir", *dir, "directory of slice files")
        ->required()
        ->check(CLI::ExistingDirectory);
    import->add_option("--out", *out, "output volume header path")->required();
    import->callback([dir, out, &action] {
      action = [=] { cmd_dicom_import(*dir, *out); };
    });
  }

  // phantom gen
  auto* phantom = app.add_subcommand("phantom", "synthetic phantom");
  phantom->require_subcommand(1);
  {
    auto* gen = phantom->add_subcommand("gen", "generate a tilted phantom");
    auto out = std::make_shared<std::string>();
    auto roll = std::make_shared<double>(0.0);
    auto pitch = std::make_shared<double>(0.0);
    auto yaw = std::make_shared<double>(0.0);
    auto size = std::make_shared<int>(128);
    auto threads = std::make_shared<int>(0);
    gen->add_option("--out", *out, "output directory")->required();
    gen->add_option("--roll", *roll, "tilt roll (deg)");
    gen->add_option("--pitch", *pitch, "tilt pitch (deg)");
    gen->add_option("--yaw", *yaw, "tilt yaw (deg)");
    gen->add_option("--size", *size, "cubic grid size")
        ->check(CLI::PositiveNumber);
    gen->add_option("--threads", *threads, "resampler threads (0 = auto)");
    gen->callback([=, &action] {
      action = [=] {
        cmd_phantom_gen(*out, *roll, *pitch, *yaw, *size, *threads);
      };
    });
  }

  // detect --classic
  {
    auto* detect = app.add_subcommand("detect", "landmark detection");
    auto classic = std::make_shared<bool>(false);
    auto volume = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto case_id = std::make_shared<std::string>();
    detect->add_flag("--classic", *classic,
                     "use the classical intensity detector")
        ->required();
    detect->add_option("volume", *volume, "volume header path")->required();
    detect->add_option("--out", *out, "output detections CSV")->required();
    detect->add_option("--case-id", *case_id,
                       "case id (default: volume stem)");
    detect->callback([=, &action] {
      action = [=] { cmd_detect_classic(*volume, *out, *case_id); };
    });
  }

  // identify
  {
    auto* identify = app.add_subcommand(
        "identify", "pick landmarks and compute tilt angles");
    auto volume = std::make_shared<std::string>();
    auto detections = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto min_conf = std::make_shared<double>(0.0);
    auto index_space = std::make_shared<bool>(false);
    auto max_angle = std::make_shared<double>(45.0);
    identify->add_option("--volume", *volume, "volume header path")
        ->required();
    identify->add_option("--detections", *detections, "detections CSV")
        ->required();
    identify->add_option("--out", *out, "landmark report path");
    identify->add_option("--min-confidence", *min_conf,
                         "drop detections below this confidence");
    identify->add_flag("--index-space", *index_space,
                       "compute angles from voxel indices, not mm");
    identify->add_option("--max-angle-deg", *max_angle,
                         "plausibility warning bound");
    identify->callback([=, &action] {
      action = [=] {
        cmd_identify(*volume, *detections, *out, *min_conf, *index_space,
                     *max_angle);
      };
    });
  }

  // standardize
  {
    auto* std_cmd = app.add_subcommand(
        "standardize", "measure tilt and resample the volume upright");
    auto volume = std::make_shared<std::string>();
    auto detections = std::make_shared<std::string>();
    auto out_dir = std::make_shared<std::string>();
    auto min_conf = std::make_shared<double>(0.0);
    auto index_space = std::make_shared<bool>(false);
    auto max_angle = std::make_shared<double>(45.0);
    auto threads = std::make_shared<int>(0);
    std_cmd->add_option("--volume", *volume, "volume header path")
        ->required();
    std_cmd->add_option("--detections", *detections, "detections CSV")
        ->required();
    std_cmd->add_option("--out-dir", *out_dir, "output directory")
        ->required();
    std_cmd->add_option("--min-confidence", *min_conf,
                        "drop detections below this confidence");
    std_cmd->add_flag("--index-space", *index_space,
                      "compute angles from voxel indices, not mm");
    std_cmd->add_option("--max-angle-deg", *max_angle,
                        "plausibility warning bound");
    std_cmd->add_option("--threads", *threads, "resampler threads (0 = auto)");
    std_cmd->callback([=, &action] {
      action = [=] {
        cmd_standardize(*volume, *detections, *out_dir, *min_conf,
                        *index_space, *max_angle, *threads);
      };
    });
  }

  // reconstruct
  {
    auto* rec = app.add_subcommand("reconstruct",
                                   "extract an isosurface mesh");
    auto volume = std::make_shared<std::string>();
    auto iso = std::make_shared<double>();
    auto out = std::make_shared<std::string>();
    rec->add_option("--volume", *volume, "volume header path")->required();
    rec->add_option("--iso", *iso, "isosurface threshold (HU)")->required();
    rec->add_option("--out", *out, "output OBJ path")->required();
    rec->callback([=, &action] {
      action = [=] { cmd_reconstruct(*volume, *iso, *out); };
    });
  }

  // eval det | efficiency | scores
  auto* eval = app.add_subcommand("eval", "evaluation reports");
  eval->require_subcommand(1);
  {
    auto* det = eval->add_subcommand("det", "detection metrics");
    auto pred = std::make_shared<std::string>();
    auto gt = std::make_shared<std::string>();
    auto out_dir = std::make_shared<std::string>();
    auto iou_thr = std::make_shared<double>(0.5);
    det->add_option("--pred", *pred, "predictions CSV")->required();
    det->add_option("--gt", *gt, "ground truth CSV")->required();
    det->add_option("--out-dir", *out_dir, "output directory")->required();
    det->add_option("--iou-threshold", *iou_thr, "match threshold");
    det->callback([=, &action] {
      action = [=] { cmd_eval_det(*pred, *gt, *out_dir, *iou_thr); };
    });
  }
  {
    auto* eff = eval->add_subcommand("efficiency", "efficiency indexes");
    auto models = std::make_shared<std::string>();
    eff->add_option("--models", *models, "model info CSV")->required();
    eff->callback([=, &action] {
      action = [=] { cmd_eval_efficiency(*models); };
    });
  }
  {
    auto* scores = eval->add_subcommand("scores", "observer score statistics");
    auto tables = std::make_shared<std::string>();
    auto paired = std::make_shared<std::string>();
    scores->add_option("--tables", *tables, "score tally CSV");
    scores->add_option("--paired", *paired, "paired score CSV");
    scores->callback([=, &action] {
      action = [=] { cmd_eval_scores(*tables, *paired); };
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  if (!action) return kExitUsage;
  return run_guarded(action);
}
