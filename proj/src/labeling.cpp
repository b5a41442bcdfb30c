#include "afrpn/labeling.hpp"

#include <cmath>
#include <limits>

namespace afrpn {

PyramidSpec PyramidSpec::standard(double norm_p4) {
  const double inf = std::numeric_limits<double>::infinity();
  PyramidSpec spec;
  spec.levels = {{"P2", 4, 4.0, 24.0, 24.0},
                 {"P3", 8, 24.0, 48.0, 48.0},
                 {"P4", 16, 48.0, inf, norm_p4}};
  spec.validate();
  return spec;
}

void PyramidSpec::validate() const {
  if (levels.empty()) throw Error("PyramidSpec: no levels");
  for (size_t i = 0; i < levels.size(); ++i) {
    const LevelSpec& l = levels[i];
    if (l.stride <= 0) throw Error("PyramidSpec: stride must be positive");
    if (!(l.norm > 0.0)) throw Error("PyramidSpec: norm must be positive");
    if (!(l.scale_lo < l.scale_hi)) throw Error("PyramidSpec: empty scale range");
    if (i > 0) {
      if (levels[i - 1].stride >= l.stride)
        throw Error("PyramidSpec: strides must be strictly increasing");
      if (levels[i - 1].scale_hi != l.scale_lo)
        throw Error("PyramidSpec: scale ranges must be contiguous");
    }
  }
}

TextInstance make_text_instance(const Quad& quad, bool ignore,
                                std::optional<std::string> transcription) {
  TextInstance inst;
  inst.quad = canonicalize(quad);
  inst.rect = min_enclosing_rect(inst.quad);
  inst.core = shrink_rect(inst.rect);
  inst.ignore = ignore;
  inst.transcription = std::move(transcription);
  return inst;
}

void grid_size(const LevelSpec& level, int image_h, int image_w, int* grid_h,
               int* grid_w) {
  *grid_h = (image_h + level.stride - 1) / level.stride;
  *grid_w = (image_w + level.stride - 1) / level.stride;
}

Point2 map_sliding_point(const LevelSpec& level, int row, int col, int grid_h,
                         int grid_w) {
  if (row < 0 || row >= grid_h || col < 0 || col >= grid_w)
    throw IndexError("map_sliding_point: cell outside the level grid");
  const double s = static_cast<double>(level.stride);
  return {col * s + s * 0.5, row * s + s * 0.5};
}

int assign_scale_group(const TextInstance& inst, const PyramidSpec& spec) {
  const double s = inst.rect.short_side();
  for (int i = 0; i < spec.level_count(); ++i) {
    if (s >= spec.levels[i].scale_lo && s < spec.levels[i].scale_hi) return i;
  }
  return kOutOfRange;
}

std::array<double, 8> encode_targets(const Point2& p_t, const OrientedRect& rect,
                                     double norm) {
  if (!(norm > 0.0)) throw InvalidNorm("encode_targets: norm must be positive");
  std::array<double, 8> t;
  for (int i = 0; i < 4; ++i) {
    t[2 * i] = (rect.quad.v[i].x - p_t.x) / norm;
    t[2 * i + 1] = (rect.quad.v[i].y - p_t.y) / norm;
  }
  return t;
}

Quad decode_targets(const Point2& p_t, const std::array<double, 8>& offsets,
                    double norm) {
  if (!(norm > 0.0)) throw InvalidNorm("decode_targets: norm must be positive");
  std::array<Point2, 4> v;
  for (int i = 0; i < 4; ++i)
    v[i] = Point2(p_t.x + norm * offsets[2 * i], p_t.y + norm * offsets[2 * i + 1]);
  return canonicalize(v);
}

LabelMap generate_labels(const std::vector<TextInstance>& instances, int image_h,
                         int image_w, const PyramidSpec& spec) {
  if (image_h <= 0 || image_w <= 0)
    throw Error("generate_labels: image size must be positive");

  const int n = static_cast<int>(instances.size());
  std::vector<int> level_of(n);
  std::vector<AABB> rect_box(n);
  std::vector<Point2> rect_center(n);
  for (int i = 0; i < n; ++i) {
    level_of[i] = assign_scale_group(instances[i], spec);
    rect_box[i] = aabb(instances[i].rect.quad);
    rect_center[i] = instances[i].rect.center();
  }

  LabelMap map;
  map.levels.resize(spec.level_count());
  for (int lev = 0; lev < spec.level_count(); ++lev) {
    const LevelSpec& ls = spec.levels[lev];
    LevelLabels& out = map.levels[lev];
    grid_size(ls, image_h, image_w, &out.h, &out.w);
    out.cls.assign(static_cast<size_t>(out.h) * out.w, CellLabel::kNegative);
    out.targets.assign(static_cast<size_t>(out.h) * out.w * 8, 0.0);
    out.instance_id.assign(static_cast<size_t>(out.h) * out.w, -1);

    for (int row = 0; row < out.h; ++row) {
      for (int col = 0; col < out.w; ++col) {
        const Point2 p = map_sliding_point(ls, row, col, out.h, out.w);
        int winner = -1;
        double winner_d2 = 0.0;
        bool in_any_rect = false;
        for (int i = 0; i < n; ++i) {
          const AABB& b = rect_box[i];
          if (p.x < b.xmin - kBoundaryEps || p.x > b.xmax + kBoundaryEps ||
              p.y < b.ymin - kBoundaryEps || p.y > b.ymax + kBoundaryEps)
            continue;
          if (!point_in_polygon(p, instances[i].rect.quad)) continue;
          in_any_rect = true;
          if (instances[i].ignore || level_of[i] != lev) continue;
          if (!point_in_polygon(p, instances[i].core.quad)) continue;
          const Point2 d = rect_center[i] - p;
          const double d2 = dot(d, d);
          if (winner < 0 || d2 < winner_d2) {
            winner = i;
            winner_d2 = d2;
          }
        }
        const int cell = out.idx(row, col);
        if (winner >= 0) {
          out.cls[cell] = CellLabel::kPositive;
          out.instance_id[cell] = winner;
          const std::array<double, 8> t =
              encode_targets(p, instances[winner].rect, ls.norm);
          for (int k = 0; k < 8; ++k) out.targets[cell * 8 + k] = t[k];
        } else if (in_any_rect) {
          out.cls[cell] = CellLabel::kIgnore;
        }
      }
    }
  }
  return map;
}

}  // namespace afrpn
