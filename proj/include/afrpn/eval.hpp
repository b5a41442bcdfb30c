#pragma once

#include <string>
#include <vector>

#include "afrpn/proposals.hpp"

namespace afrpn {

// Proposal-quality recall: R@k at fixed IoU thresholds plus the average
// recall over 0.50:0.05:0.95, pooled over the dataset's ground truth.
struct RecallRow {
  int k = 0;
  double r50 = 0.0;  // recall at IoU 0.5
  double r75 = 0.0;  // recall at IoU 0.75
  double ar = 0.0;   // mean over the 10 thresholds
};

struct RecallReport {
  std::vector<RecallRow> rows;  // k in {50, 100, 300}
  int64_t gt_count = 0;         // non-ignored
  int64_t ignored_count = 0;

  std::string to_json() const;
  std::string to_table() const;  // aligned plain text
};

// Fraction of non-ignored GT covered (IoU >= iou_t) by some proposal among
// the top-k (proposals must come sorted by descending score). Recall is
// per-GT existence, not one-to-one. Defined as 1 when there is no GT.
double recall_at(const std::vector<TextInstance>& gts,
                 const std::vector<Proposal>& proposals, int k, double iou_t,
                 IouMode mode);

// Mean of recall_at over thresholds {0.50, 0.55, ..., 0.95}.
double average_recall(const std::vector<TextInstance>& gts,
                      const std::vector<Proposal>& proposals, int k,
                      IouMode mode);

struct PrfResult {
  double precision = 0.0;
  double recall = 0.0;
  double f = 0.0;
  int64_t tp = 0, fp = 0, considered_gt = 0;
};

// Greedy one-to-one matching in descending score order; detections whose
// only match is an ignored GT count neither as TP nor FP.
PrfResult detection_prf(const std::vector<Detection>& detections,
                        const std::vector<TextInstance>& gts, double iou_t = 0.5,
                        IouMode mode = IouMode::kQuad);

struct ImageEvalInput {
  std::vector<TextInstance> gts;
  std::vector<Proposal> proposals;  // sorted by descending score
};

// Dataset-level pooling: recalls are covered-GT counts over pooled GT
// counts, not per-image means.
RecallReport build_report(const std::vector<ImageEvalInput>& images, IouMode mode,
                          const std::vector<int>& ks = {50, 100, 300});

}  // namespace afrpn
