#include "afrpn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "afrpn/layers.hpp"

namespace afrpn {

using nlohmann::json;

void TrainConfig::validate() const {
  if (iterations < 0) throw Error("TrainConfig: negative iteration count");
  if (!(lr > 0.0)) throw Error("TrainConfig: lr must be positive");
  if (rpn_pos <= 0 || rpn_neg <= 0 || frcnn_pos <= 0 || frcnn_neg <= 0)
    throw Error("TrainConfig: batch quotas must be positive");
  if (lambda_rpn_cls < 0 || lambda_rpn_loc < 0 || lambda_frcnn_cls < 0 ||
      lambda_frcnn_loc < 0)
    throw Error("TrainConfig: loss weights must be >= 0");
  if (ohem_batch <= 0) throw Error("TrainConfig: ohem batch must be positive");
}

double TrainConfig::lr_at(int iteration) const {
  double out = lr;
  for (int step : decay_steps)
    if (iteration >= step) out *= decay_factor;
  return out;
}

std::string TrainLogRecord::to_json() const {
  json j = {{"iteration", iteration},
            {"rpn_cls", rpn_cls},
            {"rpn_loc", rpn_loc},
            {"frcnn_cls", frcnn_cls},
            {"frcnn_loc", frcnn_loc},
            {"total", total},
            {"lr", lr},
            {"wall_time_s", wall_time_s},
            {"ohem", ohem}};
  return j.dump();
}

namespace {

// First `take` entries of a partial Fisher-Yates shuffle.
std::vector<int> sample_k(std::vector<int>& pool, int take, Rng& rng) {
  take = std::min<int>(take, static_cast<int>(pool.size()));
  for (int i = 0; i < take; ++i) {
    const int j = i + static_cast<int>(rng.below(pool.size() - static_cast<size_t>(i)));
    std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
  }
  return std::vector<int>(pool.begin(), pool.begin() + take);
}

SampleSet sample_with_fill(std::vector<int>& positives, std::vector<int>& negatives,
                           int n_pos, int n_neg, Rng& rng) {
  if (negatives.empty()) throw EmptyBatch("sampling: no negatives available");
  SampleSet out;
  out.pos = sample_k(positives, n_pos, rng);
  const int want_neg = n_pos + n_neg - static_cast<int>(out.pos.size());
  out.neg = sample_k(negatives, want_neg, rng);
  return out;
}

}  // namespace

SampleSet sample_sliding_points(const LevelLabels& labels, int n_pos, int n_neg,
                                Rng& rng) {
  std::vector<int> positives, negatives;
  const int cells = labels.h * labels.w;
  for (int i = 0; i < cells; ++i) {
    if (labels.cls[static_cast<size_t>(i)] == CellLabel::kPositive)
      positives.push_back(i);
    else if (labels.cls[static_cast<size_t>(i)] == CellLabel::kNegative)
      negatives.push_back(i);
  }
  return sample_with_fill(positives, negatives, n_pos, n_neg, rng);
}

SampleSet sample_proposals(const std::vector<Stage2Assignment>& assignments,
                           int n_pos, int n_neg, Rng& rng) {
  std::vector<int> positives, negatives;
  for (size_t i = 0; i < assignments.size(); ++i) {
    if (assignments[i].label == Stage2Label::kPositive)
      positives.push_back(static_cast<int>(i));
    else if (assignments[i].label == Stage2Label::kNegative)
      negatives.push_back(static_cast<int>(i));
  }
  return sample_with_fill(positives, negatives, n_pos, n_neg, rng);
}

std::vector<int> ohem_select(const std::vector<double>& losses, int b) {
  std::vector<int> idx(losses.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int c) {
    return losses[static_cast<size_t>(a)] > losses[static_cast<size_t>(c)];
  });
  if (static_cast<int>(idx.size()) > b) idx.resize(static_cast<size_t>(b));
  return idx;
}

RpnModuleLoss rpn_module_loss(const Tensor& score_map, const Tensor& offset_map,
                              const LevelLabels& labels, const SampleSet& batch,
                              double lambda_cls, double lambda_loc,
                              bool want_grads) {
  const int h = score_map.dim(2), w = score_map.dim(3);
  if (h != labels.h || w != labels.w)
    throw ShapeError("rpn_module_loss: map/label grid mismatch");

  const int k = batch.size();
  Tensor logits({std::max(k, 1), 2});
  std::vector<int> cls_labels(static_cast<size_t>(std::max(k, 1)), 0);
  std::vector<double> cls_weights(static_cast<size_t>(std::max(k, 1)), 1.0);
  std::vector<int> cells;
  cells.reserve(static_cast<size_t>(k));
  for (int i : batch.pos) cells.push_back(i);
  for (int i : batch.neg) cells.push_back(i);
  for (int i = 0; i < k; ++i) {
    const int cell = cells[static_cast<size_t>(i)];
    logits.at2(i, 0) = score_map.at4(0, 0, cell / w, cell % w);
    logits.at2(i, 1) = score_map.at4(0, 1, cell / w, cell % w);
    cls_labels[static_cast<size_t>(i)] =
        i < static_cast<int>(batch.pos.size()) ? 1 : 0;
  }
  if (k == 0) throw EmptyBatch("rpn_module_loss: empty batch");

  RpnModuleLoss out;
  SoftmaxCECache ce = softmax_ce_forward(logits, cls_labels, cls_weights);
  out.cls = ce.loss;

  const int p = static_cast<int>(batch.pos.size());
  Tensor pred({std::max(p, 1), 8});
  Tensor target({std::max(p, 1), 8});
  std::vector<double> loc_weights(static_cast<size_t>(std::max(p, 1)), 1.0);
  for (int i = 0; i < p; ++i) {
    const int cell = batch.pos[static_cast<size_t>(i)];
    for (int j = 0; j < 8; ++j) {
      pred.at2(i, j) = offset_map.at4(0, j, cell / w, cell % w);
      target.at2(i, j) = labels.targets[static_cast<size_t>(cell) * 8 + j];
    }
  }
  out.loc = p > 0 ? smooth_l1_forward(pred, target, loc_weights) : 0.0;
  out.total = lambda_cls * out.cls + lambda_loc * out.loc;

  if (want_grads) {
    out.gscore = Tensor(score_map.shape, 0.0);
    out.goffset = Tensor(offset_map.shape, 0.0);
    Tensor glogits = softmax_ce_backward(ce, cls_labels, cls_weights);
    for (int i = 0; i < k; ++i) {
      const int cell = cells[static_cast<size_t>(i)];
      out.gscore.at4(0, 0, cell / w, cell % w) = lambda_cls * glogits.at2(i, 0);
      out.gscore.at4(0, 1, cell / w, cell % w) = lambda_cls * glogits.at2(i, 1);
    }
    if (p > 0) {
      Tensor gpred = smooth_l1_backward(pred, target, loc_weights);
      for (int i = 0; i < p; ++i) {
        const int cell = batch.pos[static_cast<size_t>(i)];
        for (int j = 0; j < 8; ++j)
          out.goffset.at4(0, j, cell / w, cell % w) = lambda_loc * gpred.at2(i, j);
      }
    }
  }
  return out;
}

FrcnnLoss frcnn_loss(const Tensor& cls_out, const Tensor& reg_out,
                     const std::vector<Stage2Assignment>& assignments,
                     const std::vector<int>& batch_indices, double lambda_cls,
                     double lambda_loc, bool want_grads) {
  const int k = static_cast<int>(batch_indices.size());
  if (k == 0) throw EmptyBatch("frcnn_loss: empty batch");

  Tensor logits({k, 2});
  std::vector<int> labels(static_cast<size_t>(k));
  std::vector<double> weights(static_cast<size_t>(k), 1.0);
  std::vector<int> positive_rows;
  for (int i = 0; i < k; ++i) {
    const int r = batch_indices[static_cast<size_t>(i)];
    logits.at2(i, 0) = cls_out.at2(r, 0);
    logits.at2(i, 1) = cls_out.at2(r, 1);
    const bool pos = assignments[static_cast<size_t>(r)].label == Stage2Label::kPositive;
    labels[static_cast<size_t>(i)] = pos ? 1 : 0;
    if (pos) positive_rows.push_back(i);
  }

  FrcnnLoss out;
  SoftmaxCECache ce = softmax_ce_forward(logits, labels, weights);
  out.cls = ce.loss;

  const int p = static_cast<int>(positive_rows.size());
  Tensor pred({std::max(p, 1), 8});
  Tensor target({std::max(p, 1), 8});
  std::vector<double> loc_weights(static_cast<size_t>(std::max(p, 1)), 1.0);
  for (int i = 0; i < p; ++i) {
    const int r = batch_indices[static_cast<size_t>(positive_rows[static_cast<size_t>(i)])];
    for (int j = 0; j < 8; ++j) {
      pred.at2(i, j) = reg_out.at2(r, j);
      target.at2(i, j) = assignments[static_cast<size_t>(r)].target[static_cast<size_t>(j)];
    }
  }
  out.loc = p > 0 ? smooth_l1_forward(pred, target, loc_weights) : 0.0;
  out.total = lambda_cls * out.cls + lambda_loc * out.loc;

  if (want_grads) {
    out.gcls = Tensor(cls_out.shape, 0.0);
    out.greg = Tensor(reg_out.shape, 0.0);
    Tensor glogits = softmax_ce_backward(ce, labels, weights);
    for (int i = 0; i < k; ++i) {
      const int r = batch_indices[static_cast<size_t>(i)];
      out.gcls.at2(r, 0) += lambda_cls * glogits.at2(i, 0);
      out.gcls.at2(r, 1) += lambda_cls * glogits.at2(i, 1);
    }
    if (p > 0) {
      Tensor gpred = smooth_l1_backward(pred, target, loc_weights);
      for (int i = 0; i < p; ++i) {
        const int r =
            batch_indices[static_cast<size_t>(positive_rows[static_cast<size_t>(i)])];
        for (int j = 0; j < 8; ++j) out.greg.at2(r, j) += lambda_loc * gpred.at2(i, j);
      }
    }
  }
  return out;
}

DirProvider::DirProvider(const std::string& dir) : dir_(dir) {
  entries_ = list_dataset(dir);
  if (entries_.empty()) throw IoError("DirProvider: no scenes in " + dir);
}

Scene DirProvider::get(int index) const {
  return load_scene(dir_, entries_[static_cast<size_t>(index)].id);
}

std::vector<Proposal> harvest_proposals(const AfrpnOutputs& outputs,
                                        const PyramidSpec& spec,
                                        const TrainConfig& cfg) {
  const std::vector<Proposal> dense = decode_dense(outputs, spec, cfg.score_floor);
  std::vector<std::vector<Proposal>> per_module(
      static_cast<size_t>(spec.level_count()));
  for (const Proposal& p : dense)
    per_module[static_cast<size_t>(p.level)].push_back(p);
  return select_for_stage2(per_module, cfg.n1, cfg.n2, cfg.nms_iou);
}

std::optional<AABB> clamp_roi(const AABB& box, int image_h, int image_w) {
  AABB r;
  r.xmin = std::clamp(box.xmin, 0.0, static_cast<double>(image_w));
  r.xmax = std::clamp(box.xmax, 0.0, static_cast<double>(image_w));
  r.ymin = std::clamp(box.ymin, 0.0, static_cast<double>(image_h));
  r.ymax = std::clamp(box.ymax, 0.0, static_cast<double>(image_h));
  if (r.width() < 1.0 || r.height() < 1.0) return std::nullopt;
  return r;
}

namespace {

Tensor image_batch(const Scene& scene) {
  Tensor x = scene.image;
  x.shape = {1, x.dim(0), x.dim(1), x.dim(2)};
  return x;
}

struct IterationStats {
  TrainLogRecord record;
  bool finite = true;
};

void write_log(std::ostream* stream, const std::string& line) {
  if (stream) (*stream) << line << "\n";
}

}  // namespace

TrainResult train_afrpn(const SceneProvider& data, const TrainConfig& cfg,
                        Model& model, const PyramidSpec& spec,
                        std::ostream* log_stream, int start_iteration) {
  cfg.validate();
  if (data.size() == 0) throw Error("train_afrpn: empty dataset");
  TrainResult result;
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<Parameter*> params = model.parameters();

  for (int it = start_iteration; it < cfg.iterations; ++it) {
    const Scene scene = data.get(it % data.size());
    const LabelMap labels =
        generate_labels(scene.instances, scene.height(), scene.width(), spec);
    Rng rng = Rng::child(cfg.seed, static_cast<uint64_t>(it));

    const AfrpnOutputs outputs = model.forward(image_batch(scene));

    TrainLogRecord rec;
    rec.iteration = it;
    rec.lr = cfg.lr_at(it);
    model.zero_grad();
    model.begin_backward();
    double total = 0.0;
    for (int lev = 0; lev < spec.level_count(); ++lev) {
      const SampleSet batch = sample_sliding_points(
          labels.levels[static_cast<size_t>(lev)], cfg.rpn_pos, cfg.rpn_neg, rng);
      RpnModuleLoss loss = rpn_module_loss(
          outputs.scores[static_cast<size_t>(lev)],
          outputs.offsets[static_cast<size_t>(lev)],
          labels.levels[static_cast<size_t>(lev)], batch, cfg.lambda_rpn_cls,
          cfg.lambda_rpn_loc, true);
      rec.rpn_cls[static_cast<size_t>(lev)] = loss.cls;
      rec.rpn_loc[static_cast<size_t>(lev)] = loss.loc;
      total += loss.total;
      model.head_backward(lev, loss.gscore, loss.goffset);
    }
    rec.total = total;
    rec.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (!std::isfinite(total)) {
      write_log(log_stream,
                json{{"event", "nan_abort"}, {"iteration", it}}.dump());
      throw NumericError("train_afrpn: non-finite loss at iteration " +
                         std::to_string(it));
    }
    model.end_backward();
    sgd_step(params, rec.lr, cfg.momentum, cfg.weight_decay);

    write_log(log_stream, rec.to_json());
    result.log.push_back(rec);
  }
  return result;
}

TrainResult train_end2end(const SceneProvider& data, const TrainConfig& cfg,
                          Model& model, const PyramidSpec& spec,
                          std::ostream* log_stream, int start_iteration) {
  cfg.validate();
  if (data.size() == 0) throw Error("train_end2end: empty dataset");
  TrainResult result;
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<Parameter*> params = model.parameters();

  for (int it = start_iteration; it < cfg.iterations; ++it) {
    const Scene scene = data.get(it % data.size());
    const LabelMap labels =
        generate_labels(scene.instances, scene.height(), scene.width(), spec);
    Rng rng = Rng::child(cfg.seed, static_cast<uint64_t>(it));

    const AfrpnOutputs outputs = model.forward(image_batch(scene));

    TrainLogRecord rec;
    rec.iteration = it;
    rec.lr = cfg.lr_at(it);
    rec.ohem = cfg.ohem;
    model.zero_grad();
    model.begin_backward();
    double total = 0.0;

    for (int lev = 0; lev < spec.level_count(); ++lev) {
      const SampleSet batch = sample_sliding_points(
          labels.levels[static_cast<size_t>(lev)], cfg.rpn_pos, cfg.rpn_neg, rng);
      RpnModuleLoss loss = rpn_module_loss(
          outputs.scores[static_cast<size_t>(lev)],
          outputs.offsets[static_cast<size_t>(lev)],
          labels.levels[static_cast<size_t>(lev)], batch, cfg.lambda_rpn_cls,
          cfg.lambda_rpn_loc, true);
      rec.rpn_cls[static_cast<size_t>(lev)] = loss.cls;
      rec.rpn_loc[static_cast<size_t>(lev)] = loss.loc;
      total += loss.total;
      model.head_backward(lev, loss.gscore, loss.goffset);
    }

    // Stage 2: proposals are constants; gradients reach the light heads and
    // the pyramid maps only.
    const std::vector<Proposal> selected = harvest_proposals(outputs, spec, cfg);
    const std::vector<std::vector<Proposal>> routed = route_proposals(selected, spec);
    for (int lev = 0; lev < spec.level_count(); ++lev) {
      const std::vector<Proposal>& group = routed[static_cast<size_t>(lev)];
      if (group.empty()) continue;
      std::vector<Stage2Assignment> assigns =
          assign_stage2_labels(group, scene.instances);

      // Candidates: labeled proposals with usable rois.
      std::vector<int> candidates;
      std::vector<AABB> rois;
      std::vector<Stage2Assignment> cand_assigns;
      for (size_t i = 0; i < group.size(); ++i) {
        if (assigns[i].label == Stage2Label::kExcluded) continue;
        const std::optional<AABB> roi =
            clamp_roi(group[i].box, scene.height(), scene.width());
        if (!roi) continue;
        candidates.push_back(static_cast<int>(i));
        rois.push_back(*roi);
        cand_assigns.push_back(assigns[i]);
      }
      if (cand_assigns.empty()) continue;

      std::vector<int> batch_rows;
      Model::RoiOutputs roi_out;
      if (cfg.ohem) {
        roi_out = model.lighthead_forward(lev, rois);
        std::vector<double> cand_losses(cand_assigns.size(), 0.0);
        for (size_t i = 0; i < cand_assigns.size(); ++i) {
          const std::vector<int> one{static_cast<int>(i)};
          const FrcnnLoss l =
              frcnn_loss(roi_out.cls, roi_out.reg, cand_assigns, one,
                         cfg.lambda_frcnn_cls, cfg.lambda_frcnn_loc, false);
          cand_losses[i] = l.total;
        }
        batch_rows = ohem_select(cand_losses, cfg.ohem_batch);
      } else {
        SampleSet sampled;
        try {
          sampled = sample_proposals(cand_assigns, cfg.frcnn_pos, cfg.frcnn_neg, rng);
        } catch (const EmptyBatch&) {
          continue;  // nothing negative at this level for this scene
        }
        batch_rows = sampled.pos;
        batch_rows.insert(batch_rows.end(), sampled.neg.begin(), sampled.neg.end());
        // Forward only the sampled rois.
        std::vector<AABB> batch_rois;
        std::vector<Stage2Assignment> batch_assigns;
        for (int row : batch_rows) {
          batch_rois.push_back(rois[static_cast<size_t>(row)]);
          batch_assigns.push_back(cand_assigns[static_cast<size_t>(row)]);
        }
        roi_out = model.lighthead_forward(lev, batch_rois);
        cand_assigns = std::move(batch_assigns);
        batch_rows.resize(cand_assigns.size());
        std::iota(batch_rows.begin(), batch_rows.end(), 0);
      }

      FrcnnLoss loss =
          frcnn_loss(roi_out.cls, roi_out.reg, cand_assigns, batch_rows,
                     cfg.lambda_frcnn_cls, cfg.lambda_frcnn_loc, true);
      rec.frcnn_cls[static_cast<size_t>(lev)] = loss.cls;
      rec.frcnn_loc[static_cast<size_t>(lev)] = loss.loc;
      total += loss.total;
      model.lighthead_backward(lev, loss.gcls, loss.greg);
    }

    rec.total = total;
    rec.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (!std::isfinite(total)) {
      write_log(log_stream,
                json{{"event", "nan_abort"}, {"iteration", it}}.dump());
      throw NumericError("train_end2end: non-finite loss at iteration " +
                         std::to_string(it));
    }
    model.end_backward();
    sgd_step(params, rec.lr, cfg.momentum, cfg.weight_decay);

    write_log(log_stream, rec.to_json());
    result.log.push_back(rec);
  }
  return result;
}

}  // namespace afrpn
