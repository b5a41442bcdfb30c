#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "afrpn/labeling.hpp"
#include "afrpn/layers.hpp"

namespace afrpn {

struct LightHeadConfig {
  int k = 7;                  // PS-ROI grid; thin map has k*k*d channels
  int per_bin_channels = 2;   // d
  int separable_kernel = 15;  // the 15x1 / 1x15 pair
  int fc_units = 256;
};

// Defaults are desk-scale; the reference-scale values (512 FPN channels,
// d=10 for a 490-channel thin map, 2048 FC units) are config choices.
struct ModelConfig {
  int fpn_channels = 32;
  std::array<int, 4> backbone_widths = {12, 16, 24, 32};  // C1..C4
  int head_width = 32;
  LightHeadConfig lighthead;
  // "he": sqrt(2/fan_in) for hidden layers, 0.01 for prediction layers.
  // "gaussian": std 0.01 everywhere.
  std::string init_scheme = "he";

  int thin_channels() const { return lighthead.k * lighthead.k * lighthead.per_bin_channels; }
  void validate() const;
  int64_t parameter_count() const;  // closed form, checked against the build
};

// Per-level dense head outputs: textness logits and vertex offsets.
struct AfrpnOutputs {
  std::vector<Tensor> scores;   // (N,2,H,W) per level
  std::vector<Tensor> offsets;  // (N,8,H,W) per level
};

struct ConvLayer {
  Parameter w, b;
  int stride = 1, pad_h = 0, pad_w = 0;

  Tensor forward(const Tensor& x) const {
    return conv2d_forward(x, w.value, b.value, stride, pad_h, pad_w);
  }
  Tensor backward(const Tensor& x, const Tensor& gy, bool need_gx = true) {
    Tensor gx;
    conv2d_backward(x, w.value, stride, pad_h, pad_w, gy, need_gx ? &gx : nullptr,
                    &w.grad, &b.grad);
    return gx;
  }
};

struct LinearLayer {
  Parameter w, b;

  Tensor forward(const Tensor& x) const { return linear_forward(x, w.value, b.value); }
  Tensor backward(const Tensor& x, const Tensor& gy, bool need_gx = true) {
    Tensor gx;
    linear_backward(x, w.value, gy, need_gx ? &gx : nullptr, &w.grad, &b.grad);
    return gx;
  }
};

// Toy backbone + FPN neck (P2/P3/P4, strides 4/8/16) + three detection
// heads + three per-level light heads. One instance per thread.
class Model {
 public:
  static constexpr int kNumLevels = 3;
  static constexpr std::array<int, kNumLevels> kStrides = {4, 8, 16};

  Model(const ModelConfig& cfg, uint64_t seed);
  ~Model();
  Model(Model&&) noexcept;
  Model& operator=(Model&&) noexcept;

  const ModelConfig& config() const { return cfg_; }
  std::vector<Parameter*> parameters();  // stable order
  void zero_grad();

  // Dense pass; input (N,3,H,W) with H,W multiples of 16. Caches
  // activations for the backward passes.
  AfrpnOutputs forward(const Tensor& image);

  struct RoiOutputs {
    Tensor cls;  // (R,2)
    Tensor reg;  // (R,8)
  };
  // Stage-2 pass for rois already routed to `level`; requires forward()
  // first. Rois are raw-image AABBs; empty input yields empty output.
  RoiOutputs lighthead_forward(int level, const std::vector<AABB>& rois);

  // Backward: accumulate head/light-head gradients per level, then run the
  // shared neck+backbone backward once.
  void begin_backward();
  void head_backward(int level, const Tensor& gscore, const Tensor& goffset);
  void lighthead_backward(int level, const Tensor& gcls, const Tensor& greg);
  void end_backward(bool want_input_grad = false);
  const Tensor& input_grad() const { return input_grad_; }

  // Analytic receptive field (input px) of one output unit of the
  // detection-head 3x3 conv on the given level.
  int receptive_field(int level) const;

 private:
  struct Head {
    ConvLayer conv;   // 3x3, relu
    ConvLayer score;  // 1x1 -> 2
    ConvLayer offset; // 1x1 -> 8
  };
  struct LightHead {
    ConvLayer sep_a;  // 15x1, relu
    ConvLayer sep_b;  // 1x15 -> k*k*d, relu
    LinearLayer fc;   // k*k*d -> fc_units, relu
    LinearLayer cls;  // -> 2
    LinearLayer reg;  // -> 8
  };

  struct Cache;  // forward activations
  void backbone_fpn_backward(bool want_input_grad);

  ModelConfig cfg_;
  std::vector<ConvLayer> backbone_;  // 8 convs: stem a/b, stage1..3 a/b
  std::array<ConvLayer, kNumLevels> lateral_;
  std::array<ConvLayer, kNumLevels> smooth_;
  std::array<Head, kNumLevels> head_;
  std::array<LightHead, kNumLevels> lighthead_;

  std::unique_ptr<Cache> cache_;
  Tensor input_grad_;
};

// Standard pyramid spec with norm(P4) = alpha * receptive_field(P4).
PyramidSpec pyramid_for_model(const Model& m, double alpha = 0.5);

}  // namespace afrpn
