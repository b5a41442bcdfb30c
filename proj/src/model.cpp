#include "afrpn/model.hpp"

#include <cmath>
#include <memory>

namespace afrpn {

void ModelConfig::validate() const {
  if (fpn_channels < 1 || head_width < 1) throw Error("ModelConfig: widths must be >= 1");
  for (int w : backbone_widths)
    if (w < 1) throw Error("ModelConfig: backbone widths must be >= 1");
  const LightHeadConfig& lh = lighthead;
  if (lh.k < 1 || lh.per_bin_channels < 1 || lh.fc_units < 1)
    throw Error("ModelConfig: light-head sizes must be >= 1");
  if (lh.separable_kernel < 1 || lh.separable_kernel % 2 == 0)
    throw Error("ModelConfig: separable kernel must be odd");
  if (init_scheme != "he" && init_scheme != "gaussian")
    throw Error("ModelConfig: unknown init scheme " + init_scheme);
}

namespace {

int64_t conv_params(int cin, int cout, int kh, int kw) {
  return static_cast<int64_t>(cout) * cin * kh * kw + cout;
}

constexpr double kPredictionInitStd = 0.01;

}  // namespace

int64_t ModelConfig::parameter_count() const {
  const auto& bw = backbone_widths;
  int64_t n = conv_params(3, bw[0], 3, 3) + conv_params(bw[0], bw[0], 3, 3);
  for (int s = 1; s < 4; ++s)
    n += conv_params(bw[s - 1], bw[s], 3, 3) + conv_params(bw[s], bw[s], 3, 3);
  const int f = fpn_channels;
  for (int l = 0; l < 3; ++l) {
    n += conv_params(bw[l + 1], f, 1, 1);  // lateral on C2..C4
    n += conv_params(f, f, 3, 3);          // smooth
    n += conv_params(f, head_width, 3, 3) + conv_params(head_width, 2, 1, 1) +
         conv_params(head_width, 8, 1, 1);
    const int sk = lighthead.separable_kernel;
    const int thin = thin_channels();
    n += conv_params(f, f, sk, 1) + conv_params(f, thin, 1, sk);
    n += static_cast<int64_t>(lighthead.fc_units) * thin + lighthead.fc_units;
    n += static_cast<int64_t>(2) * lighthead.fc_units + 2;
    n += static_cast<int64_t>(8) * lighthead.fc_units + 8;
  }
  return n;
}

struct Model::Cache {
  Tensor input;
  // Backbone pre-relu and post-relu activations, in build order.
  std::vector<Tensor> bz, ba;
  std::array<Tensor, kNumLevels> m;  // pre-smooth pyramid maps
  std::array<Tensor, kNumLevels> p;
  std::array<Tensor, kNumLevels> head_z, head_a;
  std::array<Tensor, kNumLevels> p_grad;  // accumulated during backward

  struct LevelRois {
    bool active = false;
    std::vector<AABB> rois;
    Tensor sa_z, sa_a, sb_z, thin;  // thin is post-relu, shape (C,H,W)
    std::vector<PsRoiCache> pool;
    Tensor pooled_flat;  // (R, k*k*d)
    Tensor fc_z, fc_a;
  };
  std::array<LevelRois, kNumLevels> roi;
  bool backward_active = false;
};

namespace {

ConvLayer make_conv(const std::string& name, int cin, int cout, int kh, int kw,
                    int stride, int pad_h, int pad_w, double init_std, Rng& rng) {
  ConvLayer c;
  c.w = Parameter(name + ".w", Tensor::gaussian({cout, cin, kh, kw}, init_std, rng));
  c.b = Parameter(name + ".b", Tensor({cout}, 0.0));
  c.stride = stride;
  c.pad_h = pad_h;
  c.pad_w = pad_w;
  return c;
}

LinearLayer make_linear(const std::string& name, int in, int out, double init_std,
                        Rng& rng) {
  LinearLayer l;
  l.w = Parameter(name + ".w", Tensor::gaussian({out, in}, init_std, rng));
  l.b = Parameter(name + ".b", Tensor({out}, 0.0));
  return l;
}

double hidden_std(const ModelConfig& cfg, int fan_in) {
  if (cfg.init_scheme == "gaussian") return kPredictionInitStd;
  return std::sqrt(2.0 / fan_in);
}

}  // namespace

Model::~Model() = default;
Model::Model(Model&&) noexcept = default;
Model& Model::operator=(Model&&) noexcept = default;

Model::Model(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const auto& bw = cfg_.backbone_widths;
  const int f = cfg_.fpn_channels;

  auto bb = [&](const std::string& name, int cin, int cout, int stride) {
    return make_conv(name, cin, cout, 3, 3, stride, 1, 1,
                     hidden_std(cfg_, cin * 9), rng);
  };
  backbone_.push_back(bb("backbone.stem.conv1", 3, bw[0], 2));
  backbone_.push_back(bb("backbone.stem.conv2", bw[0], bw[0], 1));
  for (int s = 1; s < 4; ++s) {
    const std::string base = "backbone.stage" + std::to_string(s);
    backbone_.push_back(bb(base + ".conv1", bw[s - 1], bw[s], 2));
    backbone_.push_back(bb(base + ".conv2", bw[s], bw[s], 1));
  }

  const char* levels[kNumLevels] = {"P2", "P3", "P4"};
  for (int l = 0; l < kNumLevels; ++l) {
    const std::string lv = levels[l];
    lateral_[l] = make_conv("fpn.lateral." + lv, bw[l + 1], f, 1, 1, 1, 0, 0,
                            hidden_std(cfg_, bw[l + 1]), rng);
    smooth_[l] = make_conv("fpn.smooth." + lv, f, f, 3, 3, 1, 1, 1,
                           hidden_std(cfg_, f * 9), rng);
    head_[l].conv = make_conv("head." + lv + ".conv", f, cfg_.head_width, 3, 3, 1,
                              1, 1, hidden_std(cfg_, f * 9), rng);
    head_[l].score = make_conv("head." + lv + ".score", cfg_.head_width, 2, 1, 1,
                               1, 0, 0, kPredictionInitStd, rng);
    head_[l].offset = make_conv("head." + lv + ".offset", cfg_.head_width, 8, 1,
                                1, 1, 0, 0, kPredictionInitStd, rng);
    const int sk = cfg_.lighthead.separable_kernel;
    const int half = sk / 2;
    const int thin = cfg_.thin_channels();
    lighthead_[l].sep_a = make_conv("lighthead." + lv + ".sep_a", f, f, sk, 1, 1,
                                    half, 0, hidden_std(cfg_, f * sk), rng);
    lighthead_[l].sep_b = make_conv("lighthead." + lv + ".sep_b", f, thin, 1, sk,
                                    1, 0, half, hidden_std(cfg_, f * sk), rng);
    lighthead_[l].fc = make_linear("lighthead." + lv + ".fc", thin,
                                   cfg_.lighthead.fc_units,
                                   hidden_std(cfg_, thin), rng);
    lighthead_[l].cls = make_linear("lighthead." + lv + ".cls",
                                    cfg_.lighthead.fc_units, 2,
                                    kPredictionInitStd, rng);
    lighthead_[l].reg = make_linear("lighthead." + lv + ".reg",
                                    cfg_.lighthead.fc_units, 8,
                                    kPredictionInitStd, rng);
  }
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out;
  auto add_conv = [&](ConvLayer& c) {
    out.push_back(&c.w);
    out.push_back(&c.b);
  };
  auto add_linear = [&](LinearLayer& l) {
    out.push_back(&l.w);
    out.push_back(&l.b);
  };
  for (ConvLayer& c : backbone_) add_conv(c);
  for (int l = 0; l < kNumLevels; ++l) {
    add_conv(lateral_[l]);
    add_conv(smooth_[l]);
  }
  for (int l = 0; l < kNumLevels; ++l) {
    add_conv(head_[l].conv);
    add_conv(head_[l].score);
    add_conv(head_[l].offset);
  }
  for (int l = 0; l < kNumLevels; ++l) {
    add_conv(lighthead_[l].sep_a);
    add_conv(lighthead_[l].sep_b);
    add_linear(lighthead_[l].fc);
    add_linear(lighthead_[l].cls);
    add_linear(lighthead_[l].reg);
  }
  return out;
}

void Model::zero_grad() {
  for (Parameter* p : parameters()) p->zero_grad();
}

AfrpnOutputs Model::forward(const Tensor& image) {
  if (image.ndim() != 4 || image.dim(1) != 3)
    throw ShapeError("Model::forward: expected (N,3,H,W) input");
  if (image.dim(2) % 16 != 0 || image.dim(3) % 16 != 0)
    throw ShapeError("Model::forward: input dims must be multiples of 16");

  cache_ = std::make_unique<Cache>();
  Cache& c = *cache_;
  c.input = image;

  c.bz.reserve(backbone_.size());
  c.ba.reserve(backbone_.size());
  const Tensor* x = &c.input;
  for (ConvLayer& conv : backbone_) {
    c.bz.push_back(conv.forward(*x));
    c.ba.push_back(relu_forward(c.bz.back()));
    x = &c.ba.back();
  }
  // ba indices: 1 -> C1, 3 -> C2, 5 -> C3, 7 -> C4.
  const Tensor& c2 = c.ba[3];
  const Tensor& c3 = c.ba[5];
  const Tensor& c4 = c.ba[7];

  c.m[2] = lateral_[2].forward(c4);
  c.m[1] = lateral_[1].forward(c3);
  c.m[1].add_(upsample_nearest2_forward(c.m[2]));
  c.m[0] = lateral_[0].forward(c2);
  c.m[0].add_(upsample_nearest2_forward(c.m[1]));

  AfrpnOutputs out;
  out.scores.resize(kNumLevels);
  out.offsets.resize(kNumLevels);
  for (int l = 0; l < kNumLevels; ++l) {
    c.p[l] = smooth_[l].forward(c.m[l]);
    c.head_z[l] = head_[l].conv.forward(c.p[l]);
    c.head_a[l] = relu_forward(c.head_z[l]);
    out.scores[l] = head_[l].score.forward(c.head_a[l]);
    out.offsets[l] = head_[l].offset.forward(c.head_a[l]);
  }
  return out;
}

Model::RoiOutputs Model::lighthead_forward(int level, const std::vector<AABB>& rois) {
  if (!cache_) throw Error("lighthead_forward: run forward() first");
  if (level < 0 || level >= kNumLevels) throw IndexError("lighthead_forward: bad level");
  Cache::LevelRois& lr = cache_->roi[level];
  LightHead& lh = lighthead_[level];

  if (!lr.active) {
    lr.sa_z = lh.sep_a.forward(cache_->p[level]);
    lr.sa_a = relu_forward(lr.sa_z);
    lr.sb_z = lh.sep_b.forward(lr.sa_a);
    Tensor thin = relu_forward(lr.sb_z);
    // (1,C,H,W) -> (C,H,W) for pooling
    thin.shape = {thin.dim(1), thin.dim(2), thin.dim(3)};
    lr.thin = std::move(thin);
    lr.active = true;
  }

  const int r = static_cast<int>(rois.size());
  const int k = cfg_.lighthead.k;
  const int d = cfg_.lighthead.per_bin_channels;
  RoiOutputs out;
  if (r == 0) {
    out.cls.shape = {0, 2};
    out.reg.shape = {0, 8};
    return out;
  }

  lr.rois = rois;
  lr.pool.resize(static_cast<size_t>(r));
  lr.pooled_flat = Tensor({r, k * k * d});
  for (int i = 0; i < r; ++i) {
    Tensor pooled = ps_roi_pool_forward(lr.thin, rois[static_cast<size_t>(i)], k,
                                        kStrides[level], &lr.pool[static_cast<size_t>(i)]);
    for (int j = 0; j < k * k * d; ++j)
      lr.pooled_flat.at2(i, j) = pooled.data[static_cast<size_t>(j)];
  }
  lr.fc_z = lh.fc.forward(lr.pooled_flat);
  lr.fc_a = relu_forward(lr.fc_z);
  out.cls = lh.cls.forward(lr.fc_a);
  out.reg = lh.reg.forward(lr.fc_a);
  return out;
}

void Model::begin_backward() {
  if (!cache_) throw Error("begin_backward: run forward() first");
  Cache& c = *cache_;
  for (int l = 0; l < kNumLevels; ++l) c.p_grad[l] = Tensor(c.p[l].shape, 0.0);
  c.backward_active = true;
}

void Model::head_backward(int level, const Tensor& gscore, const Tensor& goffset) {
  Cache& c = *cache_;
  if (!c.backward_active) throw Error("head_backward: call begin_backward() first");
  Head& h = head_[level];
  Tensor ga(c.head_a[level].shape, 0.0);
  if (gscore.numel() > 0) ga.add_(h.score.backward(c.head_a[level], gscore));
  if (goffset.numel() > 0) ga.add_(h.offset.backward(c.head_a[level], goffset));
  const Tensor gz = relu_backward(c.head_z[level], ga);
  c.p_grad[level].add_(h.conv.backward(c.p[level], gz));
}

void Model::lighthead_backward(int level, const Tensor& gcls, const Tensor& greg) {
  Cache& c = *cache_;
  if (!c.backward_active) throw Error("lighthead_backward: call begin_backward() first");
  Cache::LevelRois& lr = c.roi[level];
  if (!lr.active || lr.rois.empty())
    throw Error("lighthead_backward: no cached roi forward for this level");
  LightHead& lh = lighthead_[level];

  Tensor gfc_a(lr.fc_a.shape, 0.0);
  if (gcls.numel() > 0) gfc_a.add_(lh.cls.backward(lr.fc_a, gcls));
  if (greg.numel() > 0) gfc_a.add_(lh.reg.backward(lr.fc_a, greg));
  const Tensor gfc_z = relu_backward(lr.fc_z, gfc_a);
  const Tensor gpooled = lh.fc.backward(lr.pooled_flat, gfc_z);

  const int k = cfg_.lighthead.k;
  const int d = cfg_.lighthead.per_bin_channels;
  Tensor gthin(lr.thin.shape, 0.0);
  Tensor gy({k, k, d});
  for (size_t i = 0; i < lr.rois.size(); ++i) {
    for (int j = 0; j < k * k * d; ++j)
      gy.data[static_cast<size_t>(j)] = gpooled.at2(static_cast<int>(i), j);
    ps_roi_pool_backward(lr.pool[i], gy, &gthin);
  }

  // (C,H,W) -> (1,C,H,W) to run the conv backwards
  Tensor gthin4 = std::move(gthin);
  gthin4.shape = {1, gthin4.dim(0), gthin4.dim(1), gthin4.dim(2)};
  const Tensor gsb_z = relu_backward(lr.sb_z, gthin4);
  const Tensor gsa_a = lh.sep_b.backward(lr.sa_a, gsb_z);
  const Tensor gsa_z = relu_backward(lr.sa_z, gsa_a);
  c.p_grad[level].add_(lh.sep_a.backward(c.p[level], gsa_z));
}

void Model::end_backward(bool want_input_grad) {
  Cache& c = *cache_;
  if (!c.backward_active) throw Error("end_backward: call begin_backward() first");
  backbone_fpn_backward(want_input_grad);
  c.backward_active = false;
}

void Model::backbone_fpn_backward(bool want_input_grad) {
  Cache& c = *cache_;
  // Smooth convs: p[l] = smooth(m[l])
  std::array<Tensor, kNumLevels> gm;
  for (int l = 0; l < kNumLevels; ++l)
    gm[l] = smooth_[l].backward(c.m[l], c.p_grad[l]);
  // Top-down adds: m1 += up(m2), m0 += up(m1)
  gm[1].add_(upsample_nearest2_backward(gm[0]));
  gm[2].add_(upsample_nearest2_backward(gm[1]));

  const Tensor& c2 = c.ba[3];
  const Tensor& c3 = c.ba[5];
  const Tensor& c4 = c.ba[7];
  Tensor gc4 = lateral_[2].backward(c4, gm[2]);
  Tensor gc3 = lateral_[1].backward(c3, gm[1]);
  Tensor gc2 = lateral_[0].backward(c2, gm[0]);

  // Backbone chain in reverse; lateral grads join at stage outputs.
  Tensor g = std::move(gc4);
  for (int i = static_cast<int>(backbone_.size()) - 1; i >= 0; --i) {
    if (i == 5) g.add_(gc3);  // C3 = ba[5]
    if (i == 3) g.add_(gc2);  // C2 = ba[3]
    const Tensor gz = relu_backward(c.bz[static_cast<size_t>(i)], g);
    const Tensor& input = i == 0 ? c.input : c.ba[static_cast<size_t>(i - 1)];
    const bool need_gx = i > 0 || want_input_grad;
    g = backbone_[static_cast<size_t>(i)].backward(input, gz, need_gx);
  }
  if (want_input_grad) input_grad_ = std::move(g);
}

int Model::receptive_field(int level) const {
  if (level < 0 || level >= kNumLevels) throw IndexError("receptive_field: bad level");
  // Per entry backbone stage C2/C3/C4: (kernel, stride) pairs, then the
  // lateral 1x1, (entry - level) nearest upsamples, the 3x3 smooth and the
  // 3x3 head conv. RF grows by (k-1)*jump per conv; upsample halves jump.
  double best = 0.0;
  for (int entry = 0; entry <= 2; ++entry) {
    if (entry < level) continue;  // no path from a shallower entry
    double rf = 1.0, jump = 1.0;
    const int convs = 4 + 2 * entry;  // stem(2) + 2 per stage up to C(entry+2)
    for (int i = 0; i < convs; ++i) {
      rf += 2.0 * jump;  // 3x3
      if (i % 2 == 0) jump *= 2.0;
    }
    for (int u = 0; u < entry - level; ++u) jump *= 0.5;
    rf += 2.0 * jump;  // smooth 3x3
    rf += 2.0 * jump;  // head 3x3
    best = std::max(best, rf);
  }
  return static_cast<int>(std::lround(best));
}

PyramidSpec pyramid_for_model(const Model& m, double alpha) {
  return PyramidSpec::standard(alpha * m.receptive_field(2));
}

}  // namespace afrpn
