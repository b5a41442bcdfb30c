#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "afrpn/geometry.hpp"

namespace afrpn {

// One feature pyramid level: stride in raw-image px, half-open scale range
// [scale_lo, scale_hi) over instance shorter sides, and the regression norm.
struct LevelSpec {
  std::string name;
  int stride = 0;
  double scale_lo = 0.0;
  double scale_hi = 0.0;  // +inf on the top level
  double norm = 0.0;
};

struct PyramidSpec {
  std::vector<LevelSpec> levels;

  // P2/P3/P4 with strides 4/8/16, scale ranges [4,24)/[24,48)/[48,inf),
  // norms 24/48/norm_p4. The default norm_p4 is half the analytic receptive
  // field of the default model's top-level head (see Model::receptive_field);
  // callers with a non-default model should pass their own value.
  static PyramidSpec standard(double norm_p4 = 77.5);

  void validate() const;  // strictly increasing strides, contiguous ranges
  int level_count() const { return static_cast<int>(levels.size()); }
};

constexpr int kOutOfRange = -1;  // shorter side below the smallest range

struct TextInstance {
  Quad quad;
  OrientedRect rect;  // min-enclosing oriented rectangle of quad
  OrientedRect core;  // rect shrunk by 0.5 (short) and 0.8 (long)
  bool ignore = false;
  std::optional<std::string> transcription;
};

// Builds the derived rect/core; throws DegenerateQuad for bad annotations.
TextInstance make_text_instance(const Quad& quad, bool ignore = false,
                                std::optional<std::string> transcription = {});

enum class CellLabel : uint8_t { kNegative = 0, kIgnore = 1, kPositive = 2 };

struct LevelLabels {
  int h = 0;
  int w = 0;
  std::vector<CellLabel> cls;        // h*w
  std::vector<double> targets;       // h*w*8, meaningful at positives
  std::vector<int32_t> instance_id;  // h*w, -1 except at positives

  int idx(int row, int col) const { return row * w + col; }
};

struct LabelMap {
  std::vector<LevelLabels> levels;
};

// Grid dims of a level for an image of the given size.
void grid_size(const LevelSpec& level, int image_h, int image_w, int* grid_h,
               int* grid_w);

// Cell-center sliding point: ((col+0.5)*stride, (row+0.5)*stride).
Point2 map_sliding_point(const LevelSpec& level, int row, int col, int grid_h,
                         int grid_w);

// Index of the unique level whose scale range contains rect.short_side, or
// kOutOfRange when the shorter side falls below every range.
int assign_scale_group(const TextInstance& inst, const PyramidSpec& spec);

// Offsets from p_t to the rect's canonical vertices, divided by norm:
// (dx1,dy1,...,dx4,dy4).
std::array<double, 8> encode_targets(const Point2& p_t, const OrientedRect& rect,
                                     double norm);

// Inverse of encode_targets; canonicalizes, so degenerate decodes throw.
Quad decode_targets(const Point2& p_t, const std::array<double, 8>& offsets,
                    double norm);

// Dense per-level labels. A cell is POSITIVE iff its sliding point lies in
// the core of an instance assigned to that level (overlaps resolved to the
// nearest rect center, ties to the lower index); otherwise IGNORE iff inside
// any instance's enclosing rect; otherwise NEGATIVE.
LabelMap generate_labels(const std::vector<TextInstance>& instances, int image_h,
                         int image_w, const PyramidSpec& spec);

}  // namespace afrpn
