#pragma once

#include <optional>
#include <string>
#include <vector>

#include "afrpn/labeling.hpp"
#include "afrpn/model.hpp"

namespace afrpn {

struct Proposal {
  Quad quad;
  double score = 0.0;  // softmax textness probability
  int level = 0;       // source pyramid level index
  AABB box;            // cached aabb(quad)
};

struct Detection {
  Quad quad;
  double score = 0.0;
};

enum class IouMode { kAabb, kQuad };

// Emits one proposal per cell whose textness probability reaches
// score_floor; degenerate decodes are dropped. Order: level-major,
// row-major.
std::vector<Proposal> decode_dense(const AfrpnOutputs& outputs,
                                   const PyramidSpec& spec, double score_floor);

// Greedy NMS by descending score (ties by lower input index); a candidate
// is kept iff its IoU with every kept box is <= threshold. Output sorted by
// descending score.
std::vector<Proposal> nms(const std::vector<Proposal>& proposals,
                          double iou_threshold = 0.7,
                          IouMode mode = IouMode::kAabb);

// Top-N1 per module -> pooled -> aabb NMS at 0.7 -> top-N2.
std::vector<Proposal> select_for_stage2(
    const std::vector<std::vector<Proposal>>& per_module_proposals,
    int n1 = 2000, int n2 = 300, double nms_iou = 0.7);

// Scale routing by the shorter side of each proposal's min-enclosing rect;
// shorter sides below the smallest range go to the lowest level.
std::vector<std::vector<Proposal>> route_proposals(
    const std::vector<Proposal>& proposals, const PyramidSpec& spec);

enum class Stage2Label { kPositive, kNegative, kExcluded };

struct Stage2Assignment {
  Stage2Label label = Stage2Label::kExcluded;
  int matched_gt = -1;            // valid for positives
  std::array<double, 8> target{}; // valid for positives
};

// IoU computed on axis-aligned boxes of the proposal quad and the GT
// min-enclosing rects: positive above 0.5 (matched to the argmax GT),
// negative below 0.3 on all, otherwise excluded; argmax on an ignore-flagged
// GT excludes the proposal. Positive targets normalize the offsets from the
// proposal's aabb center to the matched rect vertices by aabb width/height.
std::vector<Stage2Assignment> assign_stage2_labels(
    const std::vector<Proposal>& proposals,
    const std::vector<TextInstance>& instances, double pos_iou = 0.5,
    double neg_iou = 0.3);

// Inverse of the stage-2 encoding: vertex_i = center + (Pw*dx_i, Ph*dy_i).
Quad decode_stage2(const Proposal& proposal, const std::array<double, 8>& offsets);

// Greedy NMS with exact polygon IoU.
std::vector<Detection> skewed_nms(const std::vector<Detection>& detections,
                                  double iou_threshold = 0.3);

// JSON-lines record: {"id":...,"quad":[x1,y1,...,y4],"score":s,"level":"P2"}.
std::string proposal_to_json(const Proposal& p, const std::string& scene_id);
Proposal proposal_from_json(const std::string& line, std::string* scene_id);
std::string detection_to_json(const Detection& d, const std::string& scene_id);
Detection detection_from_json(const std::string& line, std::string* scene_id);

}  // namespace afrpn
