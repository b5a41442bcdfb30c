#pragma once

#include <array>
#include <ostream>
#include <vector>

#include "afrpn/data_io.hpp"
#include "afrpn/model.hpp"
#include "afrpn/proposals.hpp"

namespace afrpn {

struct TrainConfig {
  int iterations = 2000;
  double lr = 0.001;
  std::vector<int> decay_steps = {1200, 1800};
  double decay_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  int rpn_pos = 128, rpn_neg = 128;      // per detection module
  int frcnn_pos = 64, frcnn_neg = 64;    // per Fast R-CNN detector
  double lambda_rpn_cls = 1.0, lambda_rpn_loc = 3.0;
  double lambda_frcnn_cls = 1.0, lambda_frcnn_loc = 1.0;
  bool ohem = true;        // stage 2 only; top ohem_batch by loss, no quota
  int ohem_batch = 128;    // per level
  double score_floor = 0.1;  // dense-decode floor for proposal harvesting
  int n1 = 2000, n2 = 300;
  double nms_iou = 0.7;
  uint64_t seed = 1;

  void validate() const;
  double lr_at(int iteration) const;  // step schedule
};

struct TrainLogRecord {
  int iteration = 0;
  std::array<double, 3> rpn_cls{}, rpn_loc{};      // per module
  std::array<double, 3> frcnn_cls{}, frcnn_loc{};  // per level, e2e only
  double total = 0.0;
  double lr = 0.0;
  double wall_time_s = 0.0;
  bool ohem = false;

  std::string to_json() const;
};

struct SampleSet {
  std::vector<int> pos, neg;  // cell or proposal indices
  int size() const { return static_cast<int>(pos.size() + neg.size()); }
};

// Uniform sample without replacement; short positive quotas are refilled
// with extra negatives so the batch totals n_pos+n_neg when possible.
// IGNORE cells are never sampled; throws EmptyBatch when no negatives exist.
SampleSet sample_sliding_points(const LevelLabels& labels, int n_pos, int n_neg,
                                Rng& rng);

// Same quota-and-fill rule over stage-2 assignments; excluded proposals are
// never sampled.
SampleSet sample_proposals(const std::vector<Stage2Assignment>& assignments,
                           int n_pos, int n_neg, Rng& rng);

// Indices of the B highest-loss candidates, ties by lower index.
std::vector<int> ohem_select(const std::vector<double>& losses, int b);

// Classification + regression loss of one detection module on a sampled
// batch; optionally scatters gradients back onto the dense maps.
struct RpnModuleLoss {
  double cls = 0.0, loc = 0.0, total = 0.0;
  Tensor gscore;   // (1,2,H,W) when want_grads
  Tensor goffset;  // (1,8,H,W) when want_grads
};
RpnModuleLoss rpn_module_loss(const Tensor& score_map, const Tensor& offset_map,
                              const LevelLabels& labels, const SampleSet& batch,
                              double lambda_cls, double lambda_loc,
                              bool want_grads);

// Same multi-task form for the per-roi stage-2 outputs (rows of cls/reg).
struct FrcnnLoss {
  double cls = 0.0, loc = 0.0, total = 0.0;
  Tensor gcls;  // (R,2) when want_grads
  Tensor greg;  // (R,8) when want_grads
};
FrcnnLoss frcnn_loss(const Tensor& cls_out, const Tensor& reg_out,
                     const std::vector<Stage2Assignment>& assignments,
                     const std::vector<int>& batch_indices, double lambda_cls,
                     double lambda_loc, bool want_grads);

class SceneProvider {
 public:
  virtual ~SceneProvider() = default;
  virtual int size() const = 0;
  virtual Scene get(int index) const = 0;
};

class SynthProvider : public SceneProvider {
 public:
  SynthProvider(SynthConfig cfg, int count, int index_offset = 0)
      : cfg_(cfg), count_(count), offset_(index_offset) {}
  int size() const override { return count_; }
  Scene get(int index) const override { return gen_scene(cfg_, offset_ + index); }

 private:
  SynthConfig cfg_;
  int count_;
  int offset_;
};

class DirProvider : public SceneProvider {
 public:
  explicit DirProvider(const std::string& dir);
  int size() const override { return static_cast<int>(entries_.size()); }
  Scene get(int index) const override;

 private:
  std::string dir_;
  std::vector<DatasetEntry> entries_;
};

struct TrainResult {
  std::vector<TrainLogRecord> log;
};

// One scene per iteration (sequential order), SGD with the step schedule.
// Deterministic given cfg.seed. NaN losses abort with NumericError after a
// diagnostic log line.
TrainResult train_afrpn(const SceneProvider& data, const TrainConfig& cfg,
                        Model& model, const PyramidSpec& spec,
                        std::ostream* log_stream = nullptr,
                        int start_iteration = 0);

// Joint fine-tuning: AF-RPN losses plus the routed stage-2 path. Proposal
// coordinates are constants for stage-2 gradients (approximate end-to-end).
TrainResult train_end2end(const SceneProvider& data, const TrainConfig& cfg,
                          Model& model, const PyramidSpec& spec,
                          std::ostream* log_stream = nullptr,
                          int start_iteration = 0);

// Shared by training and inference: dense decode -> per-module top-N1 ->
// pooled NMS -> top-N2.
std::vector<Proposal> harvest_proposals(const AfrpnOutputs& outputs,
                                        const PyramidSpec& spec,
                                        const TrainConfig& cfg);

// Clamp a stage-2 roi to the image; rois thinner than 1 px are rejected.
std::optional<AABB> clamp_roi(const AABB& box, int image_h, int image_w);

}  // namespace afrpn
