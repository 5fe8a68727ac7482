#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "omct/detections.hpp"
#include "omct/errors.hpp"
#include "omct/text_io.hpp"
#include "omct/volume.hpp"

namespace omct {

// ---------------------------------------------------------------------------
// box overlap

struct Rect {
  double x_min = 0.0, y_min = 0.0, x_max = 0.0, y_max = 0.0;
};

/// Predictions are center+size squares; evaluation works on rectangles.
inline Rect to_rect(const DetectionRecord& r) {
  const double h = r.box_size / 2.0;
  return {r.cx - h, r.cy - h, r.cx + h, r.cy + h};
}

inline Rect to_rect(const GroundTruthBox& b) {
  return {b.x_min, b.y_min, b.x_max, b.y_max};
}

inline double iou(const Rect& a, const Rect& b) {
  const double iw =
      std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih =
      std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double area_a = (a.x_max - a.x_min) * (a.y_max - a.y_min);
  const double area_b = (b.x_max - b.x_min) * (b.y_max - b.y_min);
  return inter / (area_a + area_b - inter);
}

// ---------------------------------------------------------------------------
// detection evaluation

struct CurvePoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long tp = 0;
  long fp = 0;
  long fn = 0;
};

namespace detail {

/// Class-filtered predictions ranked by descending confidence with a
/// deterministic tie order, plus a per-prediction true-positive flag from
/// greedy matching. A prediction may only match an unmatched ground truth
/// of the same case and slice; among those it takes the highest IoU at or
/// above the threshold.
struct RankedMatches {
  std::vector<const DetectionRecord*> ranked;
  std::vector<char> is_tp;
  long gt_count = 0;
};

inline RankedMatches rank_and_match(const std::vector<DetectionRecord>& preds,
                                    const std::vector<GroundTruthBox>& gts,
                                    LandmarkClass cls, double iou_threshold) {
  RankedMatches rm;
  for (const auto& p : preds)
    if (p.cls == cls) rm.ranked.push_back(&p);
  std::sort(rm.ranked.begin(), rm.ranked.end(),
            [](const DetectionRecord* a, const DetectionRecord* b) {
              if (a->confidence != b->confidence)
                return a->confidence > b->confidence;
              return std::tie(a->case_id, a->slice_index, a->cx, a->cy,
                              a->box_size) <
                     std::tie(b->case_id, b->slice_index, b->cx, b->cy,
                              b->box_size);
            });

  std::vector<const GroundTruthBox*> class_gts;
  for (const auto& g : gts)
    if (g.cls == cls) class_gts.push_back(&g);
  rm.gt_count = static_cast<long>(class_gts.size());

  std::vector<char> gt_used(class_gts.size(), 0);
  rm.is_tp.assign(rm.ranked.size(), 0);
  for (std::size_t i = 0; i < rm.ranked.size(); ++i) {
    const Rect pr = to_rect(*rm.ranked[i]);
    double best = 0.0;
    std::size_t best_j = class_gts.size();
    for (std::size_t j = 0; j < class_gts.size(); ++j) {
      if (gt_used[j]) continue;
      const auto& g = *class_gts[j];
      if (g.case_id != rm.ranked[i]->case_id ||
          g.slice_index != rm.ranked[i]->slice_index)
        continue;
      const double v = iou(pr, to_rect(g));
      if (v >= iou_threshold && v > best) {
        best = v;
        best_j = j;
      }
    }
    if (best_j < class_gts.size()) {
      gt_used[best_j] = 1;
      rm.is_tp[i] = 1;
    }
  }
  return rm;
}

}  // namespace detail

/// Area under the non-increasing precision envelope over recall
/// (all-points interpolation). Zero when there is no ground truth.
inline double average_precision(const std::vector<DetectionRecord>& preds,
                                const std::vector<GroundTruthBox>& gts,
                                LandmarkClass cls,
                                double iou_threshold = 0.5) {
  const auto rm = detail::rank_and_match(preds, gts, cls, iou_threshold);
  if (rm.gt_count == 0) return 0.0;

  const std::size_t n = rm.ranked.size();
  std::vector<double> recall(n), precision(n);
  long tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (rm.is_tp[i]) ++tp;
    recall[i] = static_cast<double>(tp) / static_cast<double>(rm.gt_count);
    precision[i] =
        static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  std::vector<double> envelope(n);
  double running = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    running = std::max(running, precision[i]);
    envelope[i] = running;
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (rm.is_tp[i]) {
      ap += (recall[i] - prev_recall) * envelope[i];
      prev_recall = recall[i];
    }
  }
  return ap;
}

/// Precision/recall/F1 swept over confidence thresholds 0.01..0.99.
/// Precision is 1.0 when nothing is kept; recall is 1.0 when there is no
/// ground truth to find.
inline std::vector<CurvePoint> pr_f1_curves(
    const std::vector<DetectionRecord>& preds,
    const std::vector<GroundTruthBox>& gts, LandmarkClass cls,
    double iou_threshold = 0.5) {
  const auto rm = detail::rank_and_match(preds, gts, cls, iou_threshold);
  std::vector<CurvePoint> out;
  out.reserve(99);
  for (int t = 1; t <= 99; ++t) {
    const double threshold = t / 100.0;
    CurvePoint p;
    p.threshold = threshold;
    long kept = 0;
    // kept predictions form a prefix of the ranked list, so the greedy
    // matching decisions for them are unchanged
    for (std::size_t i = 0; i < rm.ranked.size(); ++i) {
      if (rm.ranked[i]->confidence < threshold) continue;
      ++kept;
      if (rm.is_tp[i]) ++p.tp;
    }
    p.fp = kept - p.tp;
    p.fn = rm.gt_count - p.tp;
    p.precision =
        kept == 0 ? 1.0
                  : static_cast<double>(p.tp) / static_cast<double>(kept);
    p.recall = rm.gt_count == 0
                   ? 1.0
                   : static_cast<double>(p.tp) /
                         static_cast<double>(rm.gt_count);
    p.f1 = (p.precision + p.recall) == 0.0
               ? 0.0
               : 2.0 * p.precision * p.recall / (p.precision + p.recall);
    out.push_back(p);
  }
  return out;
}

struct EvalReport {
  std::array<double, 4> per_class_ap{};
  double map = 0.0;
  std::array<std::vector<CurvePoint>, 4> curves;

  double ap(LandmarkClass cls) const {
    return per_class_ap[static_cast<int>(cls)];
  }
  const std::vector<CurvePoint>& curve(LandmarkClass cls) const {
    return curves[static_cast<int>(cls)];
  }
};

inline EvalReport mean_average_precision(
    const std::vector<DetectionRecord>& preds,
    const std::vector<GroundTruthBox>& gts, double iou_threshold = 0.5) {
  EvalReport r;
  double sum = 0.0;
  for (auto cls : kAllLandmarkClasses) {
    const int i = static_cast<int>(cls);
    r.per_class_ap[i] = average_precision(preds, gts, cls, iou_threshold);
    r.curves[i] = pr_f1_curves(preds, gts, cls, iou_threshold);
    sum += r.per_class_ap[i];
  }
  r.map = sum / 4.0;
  return r;
}

// ---------------------------------------------------------------------------
// efficiency indexes

struct ModelInfo {
  std::string name;
  double map = 0.0;
  double gflops = 0.0;
  double params_millions = 0.0;
};

/// mAP per million parameters.
inline double pei(const ModelInfo& m) { return m.map / m.params_millions; }

/// mAP per GFLOPS.
inline double cpei(const ModelInfo& m) { return m.map / m.gflops; }

inline constexpr const char* kModelInfoHeader =
    "name,map,gflops,params_millions";

inline std::vector<ModelInfo> read_model_infos(
    const std::filesystem::path& path) {
  std::vector<ModelInfo> out;
  detail::read_csv(
      path, kModelInfoHeader, 4,
      [&](int line_no, const std::vector<std::string>& f) {
        ModelInfo m;
        m.name = f[0];
        if (m.name.empty())
          throw detail::line_error(path, line_no, "empty model name");
        if (!parse_double(f[1], m.map) || m.map < 0.0 || m.map > 1.0)
          throw detail::line_error(path, line_no,
                                   "map must be in [0,1]: '" + f[1] + "'");
        if (!parse_double(f[2], m.gflops) || m.gflops <= 0.0)
          throw detail::line_error(path, line_no,
                                   "gflops must be positive: '" + f[2] + "'");
        if (!parse_double(f[3], m.params_millions) || m.params_millions <= 0.0)
          throw detail::line_error(
              path, line_no, "params_millions must be positive: '" + f[3] + "'");
        out.push_back(std::move(m));
      });
  return out;
}

// ---------------------------------------------------------------------------
// volume similarity

struct VolumeSimilarity {
  double mse = 0.0;
  double psnr = 0.0;
  double mean_ssim = 0.0;
};

namespace detail {

/// Mean SSIM over 8x8 sliding windows of one axial slice, computed from
/// per-slice integral images. Falls back to one whole-slice window when a
/// dimension is below 8.
inline double slice_ssim(const Volume& a, const Volume& b, int z) {
  constexpr double kL = 4095.0;
  constexpr double kC1 = (0.01 * kL) * (0.01 * kL);
  constexpr double kC2 = (0.03 * kL) * (0.03 * kL);
  const int nx = a.nx(), ny = a.ny();
  const int wx = std::min(nx, 8), wy = std::min(ny, 8);

  const int sx = nx + 1;
  std::vector<double> ia((nx + 1) * (ny + 1), 0.0), ib = ia, iaa = ia,
                      ibb = ia, iab = ia;
  for (int y = 0; y < ny; ++y)
    for (int x = 0; x < nx; ++x) {
      const double va = a.at(x, y, z), vb = b.at(x, y, z);
      const int i = (x + 1) + sx * (y + 1);
      const int left = x + sx * (y + 1), up = (x + 1) + sx * y,
                diag = x + sx * y;
      ia[i] = va + ia[left] + ia[up] - ia[diag];
      ib[i] = vb + ib[left] + ib[up] - ib[diag];
      iaa[i] = va * va + iaa[left] + iaa[up] - iaa[diag];
      ibb[i] = vb * vb + ibb[left] + ibb[up] - ibb[diag];
      iab[i] = va * vb + iab[left] + iab[up] - iab[diag];
    }
  const auto window_sum = [&](const std::vector<double>& t, int x0, int y0) {
    return t[(x0 + wx) + sx * (y0 + wy)] - t[x0 + sx * (y0 + wy)] -
           t[(x0 + wx) + sx * y0] + t[x0 + sx * y0];
  };

  const double inv_n = 1.0 / (static_cast<double>(wx) * wy);
  double total = 0.0;
  long windows = 0;
  for (int y0 = 0; y0 + wy <= ny; ++y0)
    for (int x0 = 0; x0 + wx <= nx; ++x0) {
      const double mu_a = window_sum(ia, x0, y0) * inv_n;
      const double mu_b = window_sum(ib, x0, y0) * inv_n;
      const double var_a = window_sum(iaa, x0, y0) * inv_n - mu_a * mu_a;
      const double var_b = window_sum(ibb, x0, y0) * inv_n - mu_b * mu_b;
      const double cov = window_sum(iab, x0, y0) * inv_n - mu_a * mu_b;
      total += (2.0 * mu_a * mu_b + kC1) * (2.0 * cov + kC2) /
               ((mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2));
      ++windows;
    }
  return total / static_cast<double>(windows);
}

}  // namespace detail

inline VolumeSimilarity volume_similarity(const Volume& a, const Volume& b) {
  if (a.geometry().dims != b.geometry().dims)
    throw std::invalid_argument("volume_similarity: dimension mismatch");
  VolumeSimilarity s;
  double sum_sq = 0.0;
  const auto& va = a.voxels();
  const auto& vb = b.voxels();
  for (std::size_t i = 0; i < va.size(); ++i) {
    const double d = static_cast<double>(va[i]) - static_cast<double>(vb[i]);
    sum_sq += d * d;
  }
  s.mse = sum_sq / static_cast<double>(va.size());
  s.psnr = s.mse == 0.0
               ? std::numeric_limits<double>::infinity()
               : 10.0 * std::log10(4095.0 * 4095.0 / s.mse);
  double ssim_sum = 0.0;
  for (int z = 0; z < a.nz(); ++z) ssim_sum += detail::slice_ssim(a, b, z);
  s.mean_ssim = ssim_sum / static_cast<double>(a.nz());
  return s;
}

// ---------------------------------------------------------------------------
// observer scores

/// Tally of 1..5 ratings from one observer over one reconstruction arm.
struct ScoreTable {
  std::string observer;
  std::array<long, 5> counts{};
  std::optional<double> reported_mean;

  long total() const {
    long t = 0;
    for (long c : counts) t += c;
    return t;
  }
};

struct ScoreSummary {
  double mean = 0.0;
  double sd = 0.0;
  double viable_fraction = 0.0;
  long total = 0;
};

/// Mean and population SD of the expanded score multiset; viable means a
/// score of 3 or higher.
inline ScoreSummary score_summary(const ScoreTable& t) {
  ScoreSummary s;
  s.total = t.total();
  if (s.total <= 0)
    throw std::invalid_argument("score_summary: empty score table");
  for (long c : t.counts)
    if (c < 0)
      throw std::invalid_argument("score_summary: negative count");
  long weighted = 0;
  for (int i = 0; i < 5; ++i) weighted += (i + 1) * t.counts[i];
  s.mean = static_cast<double>(weighted) / static_cast<double>(s.total);
  double ss = 0.0;
  for (int i = 0; i < 5; ++i) {
    const double d = (i + 1) - s.mean;
    ss += static_cast<double>(t.counts[i]) * d * d;
  }
  s.sd = std::sqrt(ss / static_cast<double>(s.total));
  s.viable_fraction =
      static_cast<double>(t.counts[2] + t.counts[3] + t.counts[4]) /
      static_cast<double>(s.total);
  return s;
}

inline constexpr const char* kScoreTableHeader =
    "observer,c1,c2,c3,c4,c5";
inline constexpr const char* kScoreTableHeaderWithMean =
    "observer,c1,c2,c3,c4,c5,reported_mean";

inline std::vector<ScoreTable> read_score_tables(
    const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  std::vector<ScoreTable> out;
  bool saw_header = false;
  bool has_mean = false;
  for_each_data_line(text, [&](int line_no, const std::string& line) {
    if (!saw_header) {
      if (line == kScoreTableHeader)
        has_mean = false;
      else if (line == kScoreTableHeaderWithMean)
        has_mean = true;
      else
        throw detail::line_error(path, line_no,
                                 "expected score table header, got '" + line +
                                     "'");
      saw_header = true;
      return;
    }
    const auto f = split(line, ',');
    const int want = has_mean ? 7 : 6;
    if (static_cast<int>(f.size()) != want)
      throw detail::line_error(path, line_no,
                               "expected " + std::to_string(want) +
                                   " fields, got " +
                                   std::to_string(f.size()));
    ScoreTable t;
    t.observer = f[0];
    if (t.observer.empty())
      throw detail::line_error(path, line_no, "empty observer label");
    for (int i = 0; i < 5; ++i) {
      long long c = 0;
      if (!parse_long(f[1 + i], c) || c < 0)
        throw detail::line_error(
            path, line_no, "count must be a non-negative integer: '" +
                               f[1 + i] + "'");
      t.counts[i] = static_cast<long>(c);
    }
    if (t.total() == 0)
      throw detail::line_error(path, line_no, "all counts are zero");
    if (has_mean) {
      double m = 0.0;
      if (!parse_double(f[6], m))
        throw detail::line_error(path, line_no,
                                 "bad reported_mean: '" + f[6] + "'");
      t.reported_mean = m;
    }
    out.push_back(std::move(t));
  });
  if (!saw_header) throw parse_error(path.string() + ": missing header line");
  return out;
}

// ---------------------------------------------------------------------------
// paired-score statistics

struct PairedScores {
  std::vector<std::string> case_ids;
  std::vector<double> x;
  std::vector<double> y;
};

inline constexpr const char* kPairedScoreHeader = "case_id,x,y";

inline PairedScores read_paired_scores(const std::filesystem::path& path) {
  PairedScores out;
  detail::read_csv(path, kPairedScoreHeader, 3,
                   [&](int line_no, const std::vector<std::string>& f) {
                     double x = 0.0, y = 0.0;
                     if (f[0].empty())
                       throw detail::line_error(path, line_no,
                                                "empty case id");
                     if (!parse_double(f[1], x))
                       throw detail::line_error(path, line_no,
                                                "bad value: '" + f[1] + "'");
                     if (!parse_double(f[2], y))
                       throw detail::line_error(path, line_no,
                                                "bad value: '" + f[2] + "'");
                     out.case_ids.push_back(f[0]);
                     out.x.push_back(x);
                     out.y.push_back(y);
                   });
  return out;
}

enum class WilcoxonMethod { exact, normal_approximation };

struct WilcoxonResult {
  double w = 0.0;
  double p_two_sided = 1.0;
  WilcoxonMethod method = WilcoxonMethod::exact;
  int n_nonzero = 0;
};

/// Two-sided Wilcoxon signed-rank test on paired samples. Zero differences
/// are dropped; |differences| get average ranks on ties; W = min(W+, W-).
/// Exact p enumerates all sign assignments when n <= 25 (doubled ranks are
/// integers, so a subset-sum table is exact); otherwise a normal
/// approximation with tie-corrected variance and continuity correction.
inline WilcoxonResult wilcoxon_signed_rank(
    const std::vector<double>& x, const std::vector<double>& y,
    std::optional<WilcoxonMethod> force_method = std::nullopt) {
  if (x.size() != y.size() || x.empty())
    throw std::invalid_argument(
        "wilcoxon_signed_rank: paired lists must have equal nonzero length");
  std::vector<double> diffs;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    if (d != 0.0) diffs.push_back(d);
  }
  if (diffs.empty()) throw all_zero_differences_error();

  const int n = static_cast<int>(diffs.size());
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return std::abs(diffs[a]) < std::abs(diffs[b]);
  });

  // doubled average ranks stay integral: a tie block spanning sorted
  // positions p..q gets rank (p+q)/2, so twice that is p+q
  std::vector<long> doubled_rank(n, 0);
  std::vector<long> tie_sizes;
  for (int i = 0; i < n;) {
    int j = i;
    while (j < n &&
           std::abs(diffs[order[j]]) == std::abs(diffs[order[i]]))
      ++j;
    const long doubled = (i + 1) + j;  // (first + last) one-based
    for (int k = i; k < j; ++k) doubled_rank[order[k]] = doubled;
    tie_sizes.push_back(j - i);
    i = j;
  }

  long dw_plus = 0, dw_minus = 0;
  for (int i = 0; i < n; ++i)
    (diffs[i] > 0.0 ? dw_plus : dw_minus) += doubled_rank[i];

  WilcoxonResult res;
  res.n_nonzero = n;
  res.w = static_cast<double>(std::min(dw_plus, dw_minus)) / 2.0;
  res.method = force_method.value_or(n <= 25
                                         ? WilcoxonMethod::exact
                                         : WilcoxonMethod::normal_approximation);

  if (res.method == WilcoxonMethod::exact) {
    const long total = dw_plus + dw_minus;  // == n(n+1)
    std::vector<std::uint64_t> ways(total + 1, 0);
    ways[0] = 1;
    for (int i = 0; i < n; ++i) {
      const long r = doubled_rank[i];
      for (long t = total; t >= r; --t) ways[t] += ways[t - r];
    }
    const double denom = std::ldexp(1.0, n);  // 2^n
    double below = 0.0, above = 0.0;
    for (long t = 0; t <= total; ++t) {
      if (t <= dw_plus) below += static_cast<double>(ways[t]);
      if (t >= dw_plus) above += static_cast<double>(ways[t]);
    }
    res.p_two_sided =
        std::min(1.0, 2.0 * std::min(below, above) / denom);
  } else {
    const double nd = n;
    const double mu = nd * (nd + 1.0) / 4.0;
    double tie_term = 0.0;
    for (long t : tie_sizes)
      tie_term += static_cast<double>(t) * t * t - t;
    const double sigma2 =
        nd * (nd + 1.0) * (2.0 * nd + 1.0) / 24.0 - tie_term / 48.0;
    const double sigma = std::sqrt(sigma2);
    // W <= mu by construction; continuity correction shifts toward the mean
    const double z = (res.w - mu + 0.5) / sigma;
    res.p_two_sided =
        std::min(1.0, std::erfc(-z / std::sqrt(2.0)));
  }
  return res;
}

}  // namespace omct
