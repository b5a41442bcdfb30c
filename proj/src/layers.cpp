#include "afrpn/layers.hpp"

#include <algorithm>
#include <cmath>

namespace afrpn {
namespace {

// C[M,N] += A[M,K] * B[K,N]
void gemm_nn(int M, int N, int K, const double* A, const double* B, double* C) {
  for (int m = 0; m < M; ++m) {
    double* c = C + static_cast<size_t>(m) * N;
    const double* a = A + static_cast<size_t>(m) * K;
    for (int k = 0; k < K; ++k) {
      const double av = a[k];
      if (av == 0.0) continue;
      const double* b = B + static_cast<size_t>(k) * N;
      for (int n = 0; n < N; ++n) c[n] += av * b[n];
    }
  }
}

// C[M,J] += A[M,K] * B[J,K]^T
void gemm_nt(int M, int J, int K, const double* A, const double* B, double* C) {
  for (int m = 0; m < M; ++m) {
    const double* a = A + static_cast<size_t>(m) * K;
    double* c = C + static_cast<size_t>(m) * J;
    for (int j = 0; j < J; ++j) {
      const double* b = B + static_cast<size_t>(j) * K;
      double s = 0.0;
      for (int k = 0; k < K; ++k) s += a[k] * b[k];
      c[j] += s;
    }
  }
}

// C[K,N] += A[M,K]^T * B[M,N]
void gemm_tn(int M, int K, int N, const double* A, const double* B, double* C) {
  for (int m = 0; m < M; ++m) {
    const double* a = A + static_cast<size_t>(m) * K;
    const double* b = B + static_cast<size_t>(m) * N;
    for (int k = 0; k < K; ++k) {
      const double av = a[k];
      if (av == 0.0) continue;
      double* c = C + static_cast<size_t>(k) * N;
      for (int n = 0; n < N; ++n) c[n] += av * b[n];
    }
  }
}

void conv_out_dims(const Tensor& x, const Tensor& w, int stride, int pad_h,
                   int pad_w, int* oh, int* ow) {
  if (x.ndim() != 4 || w.ndim() != 4)
    throw ShapeError("conv2d: expected 4-d input and weights");
  if (x.dim(1) != w.dim(1))
    throw ShapeError("conv2d: channel mismatch, input " + shape_str(x.shape) +
                     " vs weights " + shape_str(w.shape));
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  const int h = x.dim(2), ww = x.dim(3), kh = w.dim(2), kw = w.dim(3);
  *oh = (h + 2 * pad_h - kh) / stride + 1;
  *ow = (ww + 2 * pad_w - kw) / stride + 1;
  if (*oh < 1 || *ow < 1)
    throw ShapeError("conv2d: kernel larger than padded input");
}

// col: (Cin*kh*kw) x (oh*ow), zero padding.
void im2col(const double* x, int c_in, int h, int w, int kh, int kw, int stride,
            int pad_h, int pad_w, int oh, int ow, double* col) {
  const size_t plane = static_cast<size_t>(h) * w;
  size_t r = 0;
  for (int c = 0; c < c_in; ++c) {
    const double* xc = x + c * plane;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx, ++r) {
        double* out = col + r * static_cast<size_t>(oh) * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad_h + ky;
          double* row = out + static_cast<size_t>(oy) * ow;
          if (iy < 0 || iy >= h) {
            std::fill(row, row + ow, 0.0);
            continue;
          }
          const double* xr = xc + static_cast<size_t>(iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad_w + kx;
            row[ox] = (ix < 0 || ix >= w) ? 0.0 : xr[ix];
          }
        }
      }
    }
  }
}

void col2im_acc(const double* col, int c_in, int h, int w, int kh, int kw,
                int stride, int pad_h, int pad_w, int oh, int ow, double* x) {
  const size_t plane = static_cast<size_t>(h) * w;
  size_t r = 0;
  for (int c = 0; c < c_in; ++c) {
    double* xc = x + c * plane;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx, ++r) {
        const double* in = col + r * static_cast<size_t>(oh) * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad_h + ky;
          if (iy < 0 || iy >= h) continue;
          const double* row = in + static_cast<size_t>(oy) * ow;
          double* xr = xc + static_cast<size_t>(iy) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad_w + kx;
            if (ix >= 0 && ix < w) xr[ix] += row[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                      int stride, int pad_h, int pad_w) {
  int oh = 0, ow = 0;
  conv_out_dims(x, w, stride, pad_h, pad_w, &oh, &ow);
  const int n = x.dim(0), c_in = x.dim(1), h = x.dim(2), iw = x.dim(3);
  const int c_out = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (b.ndim() != 1 || b.dim(0) != c_out)
    throw ShapeError("conv2d: bias shape mismatch");

  Tensor y({n, c_out, oh, ow});
  const int ckk = c_in * kh * kw;
  const int ohw = oh * ow;
  std::vector<double> col(static_cast<size_t>(ckk) * ohw);
  for (int s = 0; s < n; ++s) {
    const double* xs = x.ptr() + static_cast<size_t>(s) * c_in * h * iw;
    double* ys = y.ptr() + static_cast<size_t>(s) * c_out * ohw;
    im2col(xs, c_in, h, iw, kh, kw, stride, pad_h, pad_w, oh, ow, col.data());
    for (int c = 0; c < c_out; ++c)
      std::fill(ys + static_cast<size_t>(c) * ohw, ys + static_cast<size_t>(c + 1) * ohw,
                b.data[c]);
    gemm_nn(c_out, ohw, ckk, w.ptr(), col.data(), ys);
  }
  return y;
}

void conv2d_backward(const Tensor& x, const Tensor& w, int stride, int pad_h,
                     int pad_w, const Tensor& gy, Tensor* gx, Tensor* gw,
                     Tensor* gb) {
  int oh = 0, ow = 0;
  conv_out_dims(x, w, stride, pad_h, pad_w, &oh, &ow);
  const int n = x.dim(0), c_in = x.dim(1), h = x.dim(2), iw = x.dim(3);
  const int c_out = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (gy.ndim() != 4 || gy.dim(0) != n || gy.dim(1) != c_out ||
      gy.dim(2) != oh || gy.dim(3) != ow)
    throw ShapeError("conv2d_backward: output-gradient shape mismatch");

  if (gx && !gx->same_shape(x)) *gx = Tensor(x.shape, 0.0);
  if (gx) gx->fill(0.0);

  const int ckk = c_in * kh * kw;
  const int ohw = oh * ow;
  std::vector<double> col(static_cast<size_t>(ckk) * ohw);
  std::vector<double> gcol;
  if (gx) gcol.resize(static_cast<size_t>(ckk) * ohw);

  for (int s = 0; s < n; ++s) {
    const double* xs = x.ptr() + static_cast<size_t>(s) * c_in * h * iw;
    const double* gys = gy.ptr() + static_cast<size_t>(s) * c_out * ohw;
    if (gw || gx)
      im2col(xs, c_in, h, iw, kh, kw, stride, pad_h, pad_w, oh, ow, col.data());
    if (gw) gemm_nt(c_out, ckk, ohw, gys, col.data(), gw->ptr());
    if (gb) {
      for (int c = 0; c < c_out; ++c) {
        const double* g = gys + static_cast<size_t>(c) * ohw;
        double sum = 0.0;
        for (int i = 0; i < ohw; ++i) sum += g[i];
        gb->data[c] += sum;
      }
    }
    if (gx) {
      std::fill(gcol.begin(), gcol.end(), 0.0);
      gemm_tn(c_out, ckk, ohw, w.ptr(), gys, gcol.data());
      double* gxs = gx->ptr() + static_cast<size_t>(s) * c_in * h * iw;
      col2im_acc(gcol.data(), c_in, h, iw, kh, kw, stride, pad_h, pad_w, oh, ow, gxs);
    }
  }
}

Tensor relu_forward(const Tensor& x) {
  Tensor y(x.shape);
  for (size_t i = 0; i < x.data.size(); ++i) y.data[i] = std::max(0.0, x.data[i]);
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& gy) {
  if (!x.same_shape(gy)) throw ShapeError("relu_backward: shape mismatch");
  Tensor gx(x.shape);
  for (size_t i = 0; i < x.data.size(); ++i)
    gx.data[i] = x.data[i] > 0.0 ? gy.data[i] : 0.0;
  return gx;
}

Tensor upsample_nearest2_forward(const Tensor& x) {
  if (x.ndim() != 4) throw ShapeError("upsample_nearest2: expected 4-d input");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y({n, c, 2 * h, 2 * w});
  for (int s = 0; s < n; ++s)
    for (int ch = 0; ch < c; ++ch)
      for (int iy = 0; iy < h; ++iy)
        for (int ix = 0; ix < w; ++ix) {
          const double v = x.at4(s, ch, iy, ix);
          y.at4(s, ch, 2 * iy, 2 * ix) = v;
          y.at4(s, ch, 2 * iy, 2 * ix + 1) = v;
          y.at4(s, ch, 2 * iy + 1, 2 * ix) = v;
          y.at4(s, ch, 2 * iy + 1, 2 * ix + 1) = v;
        }
  return y;
}

Tensor upsample_nearest2_backward(const Tensor& gy) {
  if (gy.ndim() != 4 || gy.dim(2) % 2 != 0 || gy.dim(3) % 2 != 0)
    throw ShapeError("upsample_nearest2_backward: bad gradient shape");
  const int n = gy.dim(0), c = gy.dim(1), h = gy.dim(2) / 2, w = gy.dim(3) / 2;
  Tensor gx({n, c, h, w});
  for (int s = 0; s < n; ++s)
    for (int ch = 0; ch < c; ++ch)
      for (int iy = 0; iy < h; ++iy)
        for (int ix = 0; ix < w; ++ix)
          gx.at4(s, ch, iy, ix) = gy.at4(s, ch, 2 * iy, 2 * ix) +
                                  gy.at4(s, ch, 2 * iy, 2 * ix + 1) +
                                  gy.at4(s, ch, 2 * iy + 1, 2 * ix) +
                                  gy.at4(s, ch, 2 * iy + 1, 2 * ix + 1);
  return gx;
}

Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.ndim() != 2 || w.ndim() != 2 || x.dim(1) != w.dim(1))
    throw ShapeError("linear: shape mismatch " + shape_str(x.shape) + " vs " +
                     shape_str(w.shape));
  if (b.ndim() != 1 || b.dim(0) != w.dim(0))
    throw ShapeError("linear: bias shape mismatch");
  const int n = x.dim(0), f = x.dim(1), o = w.dim(0);
  Tensor y({n, o});
  for (int s = 0; s < n; ++s)
    for (int j = 0; j < o; ++j) y.at2(s, j) = b.data[j];
  gemm_nt(n, o, f, x.ptr(), w.ptr(), y.ptr());
  return y;
}

void linear_backward(const Tensor& x, const Tensor& w, const Tensor& gy,
                     Tensor* gx, Tensor* gw, Tensor* gb) {
  const int n = x.dim(0), f = x.dim(1), o = w.dim(0);
  if (gy.ndim() != 2 || gy.dim(0) != n || gy.dim(1) != o)
    throw ShapeError("linear_backward: output-gradient shape mismatch");
  if (gx) {
    if (!gx->same_shape(x)) *gx = Tensor(x.shape, 0.0);
    gx->fill(0.0);
    gemm_nn(n, f, o, gy.ptr(), w.ptr(), gx->ptr());
  }
  if (gw) gemm_tn(n, o, f, gy.ptr(), x.ptr(), gw->ptr());
  if (gb)
    for (int s = 0; s < n; ++s)
      for (int j = 0; j < o; ++j) gb->data[j] += gy.at2(s, j);
}

SoftmaxCECache softmax_ce_forward(const Tensor& logits,
                                  const std::vector<int>& labels,
                                  const std::vector<double>& weights) {
  if (logits.ndim() != 2) throw ShapeError("softmax_ce: expected (K,C) logits");
  const int k = logits.dim(0), c = logits.dim(1);
  if (k == 0) throw EmptyBatch("softmax_ce: empty batch");
  if (static_cast<int>(labels.size()) != k || static_cast<int>(weights.size()) != k)
    throw ShapeError("softmax_ce: labels/weights size mismatch");

  SoftmaxCECache cache;
  cache.probs = Tensor({k, c});
  double loss = 0.0, wsum = 0.0;
  for (int i = 0; i < k; ++i) {
    const double* z = logits.ptr() + static_cast<size_t>(i) * c;
    double zmax = z[0];
    for (int j = 1; j < c; ++j) zmax = std::max(zmax, z[j]);
    double denom = 0.0;
    for (int j = 0; j < c; ++j) denom += std::exp(z[j] - zmax);
    const double logdenom = std::log(denom);
    for (int j = 0; j < c; ++j)
      cache.probs.at2(i, j) = std::exp(z[j] - zmax - logdenom);
    const int lab = labels[i];
    if (lab < 0 || lab >= c) throw ShapeError("softmax_ce: label out of range");
    loss += weights[i] * (logdenom - (z[lab] - zmax));
    wsum += weights[i];
  }
  cache.weight_sum = wsum;
  cache.loss = wsum > 0.0 ? loss / wsum : 0.0;
  return cache;
}

Tensor softmax_ce_backward(const SoftmaxCECache& cache,
                           const std::vector<int>& labels,
                           const std::vector<double>& weights) {
  const int k = cache.probs.dim(0), c = cache.probs.dim(1);
  Tensor g({k, c});
  if (cache.weight_sum <= 0.0) return g;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < c; ++j) {
      const double onehot = labels[i] == j ? 1.0 : 0.0;
      g.at2(i, j) = weights[i] * (cache.probs.at2(i, j) - onehot) / cache.weight_sum;
    }
  return g;
}

double smooth_l1_forward(const Tensor& pred, const Tensor& target,
                         const std::vector<double>& weights) {
  if (!pred.same_shape(target) || pred.ndim() != 2)
    throw ShapeError("smooth_l1: shape mismatch");
  const int k = pred.dim(0), d = pred.dim(1);
  if (static_cast<int>(weights.size()) != k)
    throw ShapeError("smooth_l1: weights size mismatch");
  double loss = 0.0, wsum = 0.0;
  for (int i = 0; i < k; ++i) {
    double row = 0.0;
    for (int j = 0; j < d; ++j) {
      const double x = pred.at2(i, j) - target.at2(i, j);
      const double a = std::abs(x);
      row += a < 1.0 ? 0.5 * x * x : a - 0.5;
    }
    loss += weights[i] * row;
    wsum += weights[i];
  }
  return wsum > 0.0 ? loss / wsum : 0.0;
}

Tensor smooth_l1_backward(const Tensor& pred, const Tensor& target,
                          const std::vector<double>& weights) {
  const int k = pred.dim(0), d = pred.dim(1);
  Tensor g({k, d});
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  if (wsum <= 0.0) return g;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < d; ++j) {
      const double x = pred.at2(i, j) - target.at2(i, j);
      const double dd = std::abs(x) < 1.0 ? x : (x > 0.0 ? 1.0 : -1.0);
      g.at2(i, j) = weights[i] * dd / wsum;
    }
  return g;
}

Tensor ps_roi_pool_forward(const Tensor& feat, const AABB& roi, int k,
                           int level_stride, PsRoiCache* cache) {
  if (feat.ndim() != 3) throw ShapeError("ps_roi_pool: expected (C,H,W) features");
  const int c = feat.dim(0), fh = feat.dim(1), fw = feat.dim(2);
  if (k < 1 || c % (k * k) != 0)
    throw ShapeError("ps_roi_pool: channels not divisible by k^2");
  const int d = c / (k * k);

  const double s = static_cast<double>(level_stride);
  const double x0 = roi.xmin / s, x1 = roi.xmax / s;
  const double y0 = roi.ymin / s, y1 = roi.ymax / s;
  if (!(x1 > x0) || !(y1 > y0))
    throw Error("ps_roi_pool: empty roi after projection");
  const double bw = (x1 - x0) / k, bh = (y1 - y0) / k;

  PsRoiCache local;
  PsRoiCache& cc = cache ? *cache : local;
  cc.k = k;
  cc.d = d;
  cc.fh = fh;
  cc.fw = fw;
  cc.ys.assign(static_cast<size_t>(k) * k, 0);
  cc.ye.assign(static_cast<size_t>(k) * k, 0);
  cc.xs.assign(static_cast<size_t>(k) * k, 0);
  cc.xe.assign(static_cast<size_t>(k) * k, 0);

  Tensor out({k, k, d});
  const size_t plane = static_cast<size_t>(fh) * fw;
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      const int bin = i * k + j;
      int ys = static_cast<int>(std::floor(y0 + i * bh));
      int ye = static_cast<int>(std::ceil(y0 + (i + 1) * bh));
      int xs = static_cast<int>(std::floor(x0 + j * bw));
      int xe = static_cast<int>(std::ceil(x0 + (j + 1) * bw));
      ys = std::clamp(ys, 0, fh);
      ye = std::clamp(ye, 0, fh);
      xs = std::clamp(xs, 0, fw);
      xe = std::clamp(xe, 0, fw);
      cc.ys[bin] = ys;
      cc.ye[bin] = ye;
      cc.xs[bin] = xs;
      cc.xe[bin] = xe;
      const int count = std::max(0, ye - ys) * std::max(0, xe - xs);
      if (count == 0) continue;  // empty bin -> 0
      for (int ch = 0; ch < d; ++ch) {
        const double* plane_ptr = feat.ptr() + (static_cast<size_t>(bin) * d + ch) * plane;
        double sum = 0.0;
        for (int y = ys; y < ye; ++y)
          for (int x = xs; x < xe; ++x) sum += plane_ptr[static_cast<size_t>(y) * fw + x];
        out.data[(static_cast<size_t>(i) * k + j) * d + ch] = sum / count;
      }
    }
  }
  return out;
}

void ps_roi_pool_backward(const PsRoiCache& cache, const Tensor& gy,
                          Tensor* gfeat) {
  const int k = cache.k, d = cache.d, fh = cache.fh, fw = cache.fw;
  if (gy.ndim() != 3 || gy.dim(0) != k || gy.dim(1) != k || gy.dim(2) != d)
    throw ShapeError("ps_roi_pool_backward: gradient shape mismatch");
  if (gfeat->ndim() != 3 || gfeat->dim(0) != k * k * d || gfeat->dim(1) != fh ||
      gfeat->dim(2) != fw)
    throw ShapeError("ps_roi_pool_backward: feature-gradient shape mismatch");
  const size_t plane = static_cast<size_t>(fh) * fw;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      const int bin = i * k + j;
      const int ys = cache.ys[bin], ye = cache.ye[bin];
      const int xs = cache.xs[bin], xe = cache.xe[bin];
      const int count = std::max(0, ye - ys) * std::max(0, xe - xs);
      if (count == 0) continue;
      for (int ch = 0; ch < d; ++ch) {
        const double g =
            gy.data[(static_cast<size_t>(i) * k + j) * d + ch] / count;
        double* plane_ptr = gfeat->ptr() + (static_cast<size_t>(bin) * d + ch) * plane;
        for (int y = ys; y < ye; ++y)
          for (int x = xs; x < xe; ++x) plane_ptr[static_cast<size_t>(y) * fw + x] += g;
      }
    }
}

void sgd_step(const std::vector<Parameter*>& params, double lr, double momentum,
              double weight_decay) {
  for (Parameter* p : params) {
    double* v = p->value.ptr();
    double* g = p->grad.ptr();
    double* m = p->momentum.ptr();
    const size_t n = p->value.data.size();
    for (size_t i = 0; i < n; ++i) {
      m[i] = momentum * m[i] + (g[i] + weight_decay * v[i]);
      v[i] -= lr * m[i];
    }
  }
}

}  // namespace afrpn
