#pragma once

#include <string>
#include <vector>

#include "afrpn/labeling.hpp"
#include "afrpn/tensor.hpp"

namespace afrpn {

struct Scene {
  Tensor image;  // (3,H,W), values in [0,1]
  std::vector<TextInstance> instances;
  std::string id;

  int height() const { return image.dim(1); }
  int width() const { return image.dim(2); }
};

// Rotated solid bars with additive Gaussian noise on a noisy background.
// Scenes are a pure function of (seed, index).
struct SynthConfig {
  int image_h = 256;
  int image_w = 256;  // must be multiples of 16
  int min_instances = 2;
  int max_instances = 6;
  double min_short_side = 8.0;
  double max_short_side = 120.0;
  double min_aspect = 1.2;
  double max_aspect = 3.0;
  double max_orientation_deg = 60.0;  // sampled in [-max, max]
  double fill_lo = 0.55;
  double fill_hi = 0.95;
  double background_lo = 0.05;
  double background_hi = 0.35;
  double ignore_prob = 0.05;
  double noise_sigma = 0.02;
  uint64_t seed = 7;

  void validate() const;
};

Scene gen_scene(const SynthConfig& cfg, int index);

// ICDAR-style "x1,y1,...,y4[,script],transcription" lines. Bad lines are
// reported, not fatal: parsing continues and issues carry line numbers.
struct ParseIssue {
  int line = 0;
  std::string kind;  // "ParseError" or "DegenerateQuad"
  std::string message;
};
struct ParseResult {
  std::vector<TextInstance> instances;
  std::vector<ParseIssue> issues;
};
ParseResult parse_icdar_gt(const std::string& text);

// One line per instance, full-precision coordinates; "###" transcriptions
// mark ignored instances.
std::string serialize_icdar_gt(const std::vector<TextInstance>& instances);

// Bilinear resize so the shorter side equals S, then pad to multiples of 16
// by edge replication; quads scale by the same factor.
Scene resize_shorter_side(const Scene& scene, int s);

// Binary PPM (P6, color) and PGM (P5, gray), maxval 255.
void save_ppm(const std::string& path, const Tensor& image);
Tensor load_ppm(const std::string& path);
void save_pgm(const std::string& path, const std::vector<uint8_t>& pixels, int h, int w);

struct SvgBox {
  Quad quad;
  std::string stroke = "#00ff00";
  std::string fill = "none";
  double stroke_width = 1.0;
  double opacity = 1.0;
};
// Image-sized SVG with the raster embedded as a data URI plus one polygon
// per box.
std::string render_svg(const Scene& scene, const std::vector<SvgBox>& boxes);

// Dataset layout: <dir>/img_<n>.ppm + <dir>/gt_img_<n>.txt (+ manifest.json).
struct DatasetEntry {
  std::string id;
  std::string image_path;
  std::string gt_path;
};
void write_scene(const std::string& dir, const Scene& scene);
Scene load_scene(const std::string& dir, const std::string& id);
std::vector<DatasetEntry> list_dataset(const std::string& dir);

}  // namespace afrpn
