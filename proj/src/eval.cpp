#include "afrpn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

namespace afrpn {

using nlohmann::json;

namespace {

double pair_iou(const TextInstance& gt, const Proposal& p, IouMode mode) {
  if (mode == IouMode::kAabb) return iou_aabb(aabb(gt.rect.quad), p.box);
  return iou_quad(gt.rect.quad, p.quad);
}

constexpr std::array<double, 10> kArThresholds = {0.50, 0.55, 0.60, 0.65, 0.70,
                                                  0.75, 0.80, 0.85, 0.90, 0.95};

// Per non-ignored GT, the best IoU among the top-k proposals.
std::vector<double> best_iou_per_gt(const std::vector<TextInstance>& gts,
                                    const std::vector<Proposal>& proposals,
                                    int k, IouMode mode) {
  std::vector<double> best;
  const size_t top = std::min<size_t>(static_cast<size_t>(std::max(0, k)),
                                      proposals.size());
  for (const TextInstance& gt : gts) {
    if (gt.ignore) continue;
    double b = 0.0;
    for (size_t i = 0; i < top; ++i)
      b = std::max(b, pair_iou(gt, proposals[i], mode));
    best.push_back(b);
  }
  return best;
}

}  // namespace

double recall_at(const std::vector<TextInstance>& gts,
                 const std::vector<Proposal>& proposals, int k, double iou_t,
                 IouMode mode) {
  const std::vector<double> best = best_iou_per_gt(gts, proposals, k, mode);
  if (best.empty()) return 1.0;  // no (non-ignored) GT
  int64_t covered = 0;
  for (double b : best)
    if (b >= iou_t) ++covered;
  return static_cast<double>(covered) / static_cast<double>(best.size());
}

double average_recall(const std::vector<TextInstance>& gts,
                      const std::vector<Proposal>& proposals, int k, IouMode mode) {
  double sum = 0.0;
  for (double t : kArThresholds) sum += recall_at(gts, proposals, k, t, mode);
  return sum / static_cast<double>(kArThresholds.size());
}

PrfResult detection_prf(const std::vector<Detection>& detections,
                        const std::vector<TextInstance>& gts, double iou_t,
                        IouMode mode) {
  std::vector<int> order(detections.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return detections[static_cast<size_t>(a)].score >
           detections[static_cast<size_t>(b)].score;
  });

  std::vector<bool> matched(gts.size(), false);
  PrfResult r;
  for (const TextInstance& gt : gts)
    if (!gt.ignore) ++r.considered_gt;

  for (int di : order) {
    const Detection& det = detections[static_cast<size_t>(di)];
    int best = -1;
    double best_iou = 0.0;
    for (size_t gi = 0; gi < gts.size(); ++gi) {
      if (gts[gi].ignore || matched[gi]) continue;
      const double iou = mode == IouMode::kAabb
                             ? iou_aabb(aabb(gts[gi].rect.quad), aabb(det.quad))
                             : iou_quad(gts[gi].rect.quad, det.quad);
      if (iou > best_iou) {
        best_iou = iou;
        best = static_cast<int>(gi);
      }
    }
    if (best >= 0 && best_iou >= iou_t) {
      matched[static_cast<size_t>(best)] = true;
      ++r.tp;
      continue;
    }
    // Covered only by an ignored GT: excluded from both counts.
    bool on_ignored = false;
    for (const TextInstance& gt : gts) {
      if (!gt.ignore) continue;
      const double iou = mode == IouMode::kAabb
                             ? iou_aabb(aabb(gt.rect.quad), aabb(det.quad))
                             : iou_quad(gt.rect.quad, det.quad);
      if (iou >= iou_t) {
        on_ignored = true;
        break;
      }
    }
    if (!on_ignored) ++r.fp;
  }

  const int64_t considered_det = r.tp + r.fp;
  r.precision = considered_det > 0 ? static_cast<double>(r.tp) / considered_det : 0.0;
  r.recall = r.considered_gt > 0 ? static_cast<double>(r.tp) / r.considered_gt : 0.0;
  r.f = (r.precision + r.recall) > 0.0
            ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
            : 0.0;
  return r;
}

RecallReport build_report(const std::vector<ImageEvalInput>& images, IouMode mode,
                          const std::vector<int>& ks) {
  RecallReport report;
  for (int k : ks) report.rows.push_back({k, 0.0, 0.0, 0.0});

  // covered[ki][ti] pooled over all images
  std::vector<std::vector<int64_t>> covered(ks.size(),
                                            std::vector<int64_t>(kArThresholds.size(), 0));
  int64_t total_gt = 0;
  for (const ImageEvalInput& img : images) {
    for (const TextInstance& gt : img.gts)
      if (gt.ignore) ++report.ignored_count;
    for (size_t ki = 0; ki < ks.size(); ++ki) {
      const std::vector<double> best =
          best_iou_per_gt(img.gts, img.proposals, ks[ki], mode);
      if (ki == 0) total_gt += static_cast<int64_t>(best.size());
      for (size_t ti = 0; ti < kArThresholds.size(); ++ti)
        for (double b : best)
          if (b >= kArThresholds[ti]) ++covered[ki][ti];
    }
  }
  report.gt_count = total_gt;
  for (size_t ki = 0; ki < ks.size(); ++ki) {
    RecallRow& row = report.rows[ki];
    if (total_gt == 0) {
      row.r50 = row.r75 = row.ar = 1.0;
      continue;
    }
    double ar = 0.0;
    for (size_t ti = 0; ti < kArThresholds.size(); ++ti) {
      const double rec = static_cast<double>(covered[ki][ti]) / total_gt;
      ar += rec;
      if (kArThresholds[ti] == 0.50) row.r50 = rec;
      if (kArThresholds[ti] == 0.75) row.r75 = rec;
    }
    row.ar = ar / static_cast<double>(kArThresholds.size());
  }
  return report;
}

std::string RecallReport::to_json() const {
  json rows_json = json::array();
  for (const RecallRow& r : rows)
    rows_json.push_back({{"k", r.k}, {"r50", r.r50}, {"r75", r.r75}, {"ar", r.ar}});
  json j = {{"schema", "afrpn-recall-report/1"},
            {"rows", rows_json},
            {"gt_count", gt_count},
            {"ignored_count", ignored_count}};
  return j.dump(2);
}

std::string RecallReport::to_table() const {
  std::ostringstream os;
  char buf[128];
  os << "  k     R@0.5   R@0.75  AR(.50:.05:.95)\n";
  for (const RecallRow& r : rows) {
    std::snprintf(buf, sizeof buf, "  %-5d %-7.3f %-7.3f %-7.3f\n", r.k, r.r50,
                  r.r75, r.ar);
    os << buf;
  }
  os << "  gt=" << gt_count << " ignored=" << ignored_count << "\n";
  return os.str();
}

}  // namespace afrpn
