#include "afrpn/proposals.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

namespace afrpn {

using nlohmann::json;

std::vector<Proposal> decode_dense(const AfrpnOutputs& outputs,
                                   const PyramidSpec& spec, double score_floor) {
  if (static_cast<int>(outputs.scores.size()) != spec.level_count())
    throw ShapeError("decode_dense: level count mismatch");
  std::vector<Proposal> out;
  for (int lev = 0; lev < spec.level_count(); ++lev) {
    const Tensor& sc = outputs.scores[lev];
    const Tensor& off = outputs.offsets[lev];
    if (sc.ndim() != 4 || sc.dim(0) != 1 || sc.dim(1) != 2 || off.ndim() != 4 ||
        off.dim(1) != 8 || off.dim(2) != sc.dim(2) || off.dim(3) != sc.dim(3))
      throw ShapeError("decode_dense: head output shape mismatch");
    const int h = sc.dim(2), w = sc.dim(3);
    const LevelSpec& ls = spec.levels[static_cast<size_t>(lev)];
    for (int row = 0; row < h; ++row) {
      for (int col = 0; col < w; ++col) {
        const double z0 = sc.at4(0, 0, row, col);
        const double z1 = sc.at4(0, 1, row, col);
        const double m = std::max(z0, z1);
        const double p1 =
            std::exp(z1 - m) / (std::exp(z0 - m) + std::exp(z1 - m));
        if (p1 < score_floor) continue;
        const Point2 pt = map_sliding_point(ls, row, col, h, w);
        std::array<double, 8> t;
        for (int k = 0; k < 8; ++k) t[static_cast<size_t>(k)] = off.at4(0, k, row, col);
        try {
          Proposal p;
          p.quad = decode_targets(pt, t, ls.norm);
          p.score = p1;
          p.level = lev;
          p.box = aabb(p.quad);
          out.push_back(std::move(p));
        } catch (const DegenerateQuad&) {
          // dropped
        }
      }
    }
  }
  return out;
}

namespace {

std::vector<int> score_order(const std::vector<Proposal>& ps) {
  std::vector<int> idx(ps.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return ps[static_cast<size_t>(a)].score > ps[static_cast<size_t>(b)].score;
  });
  return idx;
}

double proposal_iou(const Proposal& a, const Proposal& b, IouMode mode) {
  return mode == IouMode::kAabb ? iou_aabb(a.box, b.box) : iou_quad(a.quad, b.quad);
}

}  // namespace

std::vector<Proposal> nms(const std::vector<Proposal>& proposals,
                          double iou_threshold, IouMode mode) {
  std::vector<Proposal> kept;
  for (int i : score_order(proposals)) {
    const Proposal& cand = proposals[static_cast<size_t>(i)];
    bool suppressed = false;
    for (const Proposal& k : kept) {
      if (proposal_iou(cand, k, mode) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(cand);
  }
  return kept;
}

std::vector<Proposal> select_for_stage2(
    const std::vector<std::vector<Proposal>>& per_module_proposals, int n1,
    int n2, double nms_iou) {
  std::vector<Proposal> pooled;
  for (const std::vector<Proposal>& module : per_module_proposals) {
    std::vector<int> order = score_order(module);
    const int take = std::min<int>(n1, static_cast<int>(order.size()));
    for (int i = 0; i < take; ++i)
      pooled.push_back(module[static_cast<size_t>(order[static_cast<size_t>(i)])]);
  }
  std::vector<Proposal> kept = nms(pooled, nms_iou, IouMode::kAabb);
  if (static_cast<int>(kept.size()) > n2) kept.resize(static_cast<size_t>(n2));
  return kept;
}

std::vector<std::vector<Proposal>> route_proposals(
    const std::vector<Proposal>& proposals, const PyramidSpec& spec) {
  std::vector<std::vector<Proposal>> groups(static_cast<size_t>(spec.level_count()));
  for (const Proposal& p : proposals) {
    const double s = min_enclosing_rect(p.quad).short_side();
    int lev = 0;  // below the smallest range -> lowest level
    for (int i = 0; i < spec.level_count(); ++i) {
      if (s >= spec.levels[static_cast<size_t>(i)].scale_lo &&
          s < spec.levels[static_cast<size_t>(i)].scale_hi) {
        lev = i;
        break;
      }
    }
    groups[static_cast<size_t>(lev)].push_back(p);
  }
  return groups;
}

std::vector<Stage2Assignment> assign_stage2_labels(
    const std::vector<Proposal>& proposals,
    const std::vector<TextInstance>& instances, double pos_iou, double neg_iou) {
  std::vector<AABB> gt_box(instances.size());
  for (size_t i = 0; i < instances.size(); ++i)
    gt_box[i] = aabb(instances[i].rect.quad);

  std::vector<Stage2Assignment> out(proposals.size());
  for (size_t pi = 0; pi < proposals.size(); ++pi) {
    const Proposal& p = proposals[pi];
    const double pw = p.box.width();
    const double ph = p.box.height();
    if (!(pw > 0.0) || !(ph > 0.0))
      throw DegenerateQuad("assign_stage2_labels: zero-size proposal aabb");

    int best = -1;
    double best_iou = 0.0;
    for (size_t gi = 0; gi < instances.size(); ++gi) {
      const double iou = iou_aabb(p.box, gt_box[gi]);
      if (iou > best_iou) {
        best_iou = iou;
        best = static_cast<int>(gi);
      }
    }

    Stage2Assignment& a = out[pi];
    if (best >= 0 && instances[static_cast<size_t>(best)].ignore) {
      a.label = Stage2Label::kExcluded;
    } else if (best >= 0 && best_iou > pos_iou) {
      a.label = Stage2Label::kPositive;
      a.matched_gt = best;
      const Point2 c = p.box.center();
      const Quad& g = instances[static_cast<size_t>(best)].rect.quad;
      for (int i = 0; i < 4; ++i) {
        a.target[static_cast<size_t>(2 * i)] = (g.v[static_cast<size_t>(i)].x - c.x) / pw;
        a.target[static_cast<size_t>(2 * i + 1)] = (g.v[static_cast<size_t>(i)].y - c.y) / ph;
      }
    } else if (best_iou < neg_iou) {
      a.label = Stage2Label::kNegative;
    } else {
      a.label = Stage2Label::kExcluded;
    }
  }
  return out;
}

Quad decode_stage2(const Proposal& proposal, const std::array<double, 8>& offsets) {
  const Point2 c = proposal.box.center();
  const double pw = proposal.box.width();
  const double ph = proposal.box.height();
  std::array<Point2, 4> v;
  for (int i = 0; i < 4; ++i)
    v[static_cast<size_t>(i)] = Point2(c.x + pw * offsets[static_cast<size_t>(2 * i)],
                                       c.y + ph * offsets[static_cast<size_t>(2 * i + 1)]);
  return canonicalize(v);
}

std::vector<Detection> skewed_nms(const std::vector<Detection>& detections,
                                  double iou_threshold) {
  std::vector<int> idx(detections.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return detections[static_cast<size_t>(a)].score > detections[static_cast<size_t>(b)].score;
  });
  std::vector<Detection> kept;
  for (int i : idx) {
    const Detection& cand = detections[static_cast<size_t>(i)];
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (iou_quad(cand.quad, k.quad) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(cand);
  }
  return kept;
}

namespace {

json quad_to_json(const Quad& q) {
  json arr = json::array();
  for (int i = 0; i < 4; ++i) {
    arr.push_back(q.v[static_cast<size_t>(i)].x);
    arr.push_back(q.v[static_cast<size_t>(i)].y);
  }
  return arr;
}

Quad quad_from_json(const json& arr) {
  if (!arr.is_array() || arr.size() != 8)
    throw FormatError("quad field must hold 8 numbers");
  std::array<Point2, 4> v;
  for (int i = 0; i < 4; ++i)
    v[static_cast<size_t>(i)] =
        Point2(arr[static_cast<size_t>(2 * i)].get<double>(),
               arr[static_cast<size_t>(2 * i + 1)].get<double>());
  return canonicalize(v);
}

const char* kLevelNames[3] = {"P2", "P3", "P4"};

}  // namespace

std::string proposal_to_json(const Proposal& p, const std::string& scene_id) {
  json j = {{"id", scene_id},
            {"quad", quad_to_json(p.quad)},
            {"score", p.score},
            {"level", kLevelNames[p.level]}};
  return j.dump();
}

Proposal proposal_from_json(const std::string& line, std::string* scene_id) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad proposal line: ") + e.what());
  }
  Proposal p;
  p.quad = quad_from_json(j.at("quad"));
  p.score = j.at("score").get<double>();
  const std::string lev = j.value("level", "P2");
  p.level = lev == "P4" ? 2 : lev == "P3" ? 1 : 0;
  p.box = aabb(p.quad);
  if (scene_id) *scene_id = j.value("id", "");
  return p;
}

std::string detection_to_json(const Detection& d, const std::string& scene_id) {
  json j = {{"id", scene_id}, {"quad", quad_to_json(d.quad)}, {"score", d.score}};
  return j.dump();
}

Detection detection_from_json(const std::string& line, std::string* scene_id) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad detection line: ") + e.what());
  }
  Detection d;
  d.quad = quad_from_json(j.at("quad"));
  d.score = j.at("score").get<double>();
  if (scene_id) *scene_id = j.value("id", "");
  return d;
}

}  // namespace afrpn
