#pragma once

#include <vector>

#include "afrpn/geometry.hpp"
#include "afrpn/tensor.hpp"

namespace afrpn {

// Layer catalog with hand-written backward passes. Every backward here is
// covered by the finite-difference harness in gradcheck.hpp.

// Cross-correlation. x: (N,Cin,H,W), w: (Cout,Cin,kh,kw), b: (Cout).
// Output spatial dims: floor((H + 2*pad_h - kh)/stride) + 1, same for W.
Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                      int stride, int pad_h, int pad_w);

// Gradients w.r.t. input, weights and bias; gw/gb accumulate, gx is
// overwritten. Any output pointer may be null to skip that gradient.
void conv2d_backward(const Tensor& x, const Tensor& w, int stride, int pad_h,
                     int pad_w, const Tensor& gy, Tensor* gx, Tensor* gw,
                     Tensor* gb);

Tensor relu_forward(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& gy);  // subgradient 0 at 0

// Each cell replicated 2x2; backward sums each 2x2 block.
Tensor upsample_nearest2_forward(const Tensor& x);
Tensor upsample_nearest2_backward(const Tensor& gy);

// x: (N,F), w: (O,F), b: (O) -> (N,O).
Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b);
void linear_backward(const Tensor& x, const Tensor& w, const Tensor& gy,
                     Tensor* gx, Tensor* gw, Tensor* gb);

// Weighted mean cross-entropy over K samples. logits: (K,C), labels in
// [0,C), weights >= 0. Probabilities are cached for the backward pass.
struct SoftmaxCECache {
  double loss = 0.0;
  Tensor probs;  // (K,C)
  double weight_sum = 0.0;
};
SoftmaxCECache softmax_ce_forward(const Tensor& logits,
                                  const std::vector<int>& labels,
                                  const std::vector<double>& weights);
Tensor softmax_ce_backward(const SoftmaxCECache& cache,
                           const std::vector<int>& labels,
                           const std::vector<double>& weights);

// Per element 0.5*x^2 for |x|<1 else |x|-0.5, summed over the row, weighted
// mean over rows. pred/target: (K,D).
double smooth_l1_forward(const Tensor& pred, const Tensor& target,
                         const std::vector<double>& weights);
Tensor smooth_l1_backward(const Tensor& pred, const Tensor& target,
                          const std::vector<double>& weights);

// Position-sensitive ROI pooling. feat: (k*k*d, H, W) in feature-map cells,
// roi in raw-image px (projected by level_stride). Output (k,k,d); bin
// boundaries floor/ceil-rounded outward and clamped; empty bins yield 0.
struct PsRoiCache {
  int k = 0, d = 0, fh = 0, fw = 0;
  std::vector<int> ys, ye, xs, xe;  // per-bin cell ranges, k*k entries
};
Tensor ps_roi_pool_forward(const Tensor& feat, const AABB& roi, int k,
                           int level_stride, PsRoiCache* cache);
void ps_roi_pool_backward(const PsRoiCache& cache, const Tensor& gy,
                          Tensor* gfeat);  // accumulates

// buf <- momentum*buf + (grad + weight_decay*value); value <- value - lr*buf.
void sgd_step(const std::vector<Parameter*>& params, double lr,
              double momentum = 0.9, double weight_decay = 0.0005);

}  // namespace afrpn
