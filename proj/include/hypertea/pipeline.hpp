#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hypertea/backbone.hpp"
#include "hypertea/checkpoint.hpp"
#include "hypertea/config.hpp"
#include "hypertea/detect.hpp"
#include "hypertea/eval.hpp"
#include "hypertea/gtem.hpp"
#include "hypertea/ltem.hpp"
#include "hypertea/optim.hpp"
#include "hypertea/synthdata.hpp"
#include "hypertea/tam.hpp"

namespace hypertea {

// Full detector: shared per-frame backbone, global and local temporal
// enhancement in parallel, cross-attention alignment, anchor-free head.
// The ablation variants bypass the fusion stage and feed the head from a
// single temporal stream.
template <typename T>
struct HyperTeaModel {
  PipelineConfig cfg;
  Backbone<T> backbone;
  Gtem<T> gtem;
  Ltem<T> ltem;
  Tam<T> tam;
  DetectHead<T> head;

  HyperTeaModel(const PipelineConfig& cfg_, Rng& rng)
      : cfg(cfg_),
        backbone(BackboneConfig{cfg_.in_channels, cfg_.widths}, rng),
        gtem(cfg_.widths.back(), cfg_.frames, cfg_.tau, rng),
        ltem(cfg_.widths.back(), cfg_.ltem_layers, cfg_.patch_size, cfg_.tau, rng),
        tam(cfg_.widths.back(), cfg_.patch_size, rng),
        head(cfg_.widths.back(), backbone.config.out_stride(), rng) {}

  // clip: [T, in_channels, H, W] -> keyframe prediction on the stride-8 grid
  RawPrediction<T> forward(const Tensor<T>& clip, bool training = true) {
    if (clip.dim(0) != cfg.frames)
      throw NumericsError("model: clip length does not match configured frame count");
    Tensor<T> f_s = backbone.forward(clip, training);  // [T, C, h, w]
    Tensor<T> fused;
    if (cfg.variant == "gtem_only") {
      Tensor<T> g_st = gtem.forward(f_s, training);
      fused = slice_batch(g_st, g_st.dim(0) - 1);
    } else if (cfg.variant == "ltem_only") {
      fused = ltem.forward(f_s, training);
    } else {
      Tensor<T> g_st = gtem.forward(f_s, training);
      Tensor<T> l_st = ltem.forward(f_s, training);
      fused = tam.forward(g_st, l_st);
    }
    return head.forward(fused, training);
  }

  ParamRegistry<T> collect() {
    ParamRegistry<T> reg;
    backbone.collect("backbone", reg);
    if (cfg.variant != "ltem_only") gtem.collect("gtem", reg);
    if (cfg.variant != "gtem_only") ltem.collect("ltem", reg);
    if (cfg.variant == "full") tam.collect("tam", reg);
    head.collect("head", reg);
    return reg;
  }
};

// ---- in-memory dataset ----

struct Dataset {
  std::vector<std::string> ids;
  std::vector<FrameSequence> seqs;
};

inline Dataset load_dataset(const std::string& root, const std::vector<std::string>& ids) {
  Dataset ds;
  for (const auto& id : ids) {
    ds.ids.push_back(id);
    ds.seqs.push_back(load_sequence(root + "/" + id));
  }
  return ds;
}

// One training/eval sample: the T-frame window ending at `end_frame` of
// sequence `seq`. Windows reaching before the first frame repeat it.
struct ClipRef {
  int64_t seq = 0;
  int64_t end_frame = 0;
};

template <typename T>
Tensor<T> make_clip(const FrameSequence& seq, int64_t end_frame, int64_t t_window) {
  const int64_t px = seq.width * seq.height;
  std::vector<T> data(t_window * px);
  for (int64_t k = 0; k < t_window; ++k) {
    int64_t t = std::max<int64_t>(0, end_frame - (t_window - 1) + k);
    const auto& frame = seq.frames[t];
    for (int64_t i = 0; i < px; ++i)
      data[k * px + i] = static_cast<T>(frame[i] / 255.0);  // store scale -> [0,1]
  }
  return Tensor<T>::from({t_window, 1, seq.height, seq.width}, std::move(data));
}

// ---- evaluation over a dataset split ----

struct EvalSummary {
  double map50 = 0;
  Prf1 at_conf;       // counting metrics at the decode confidence threshold
  Prf1 at_best_f1;    // counting metrics at the F1-optimal threshold
  double best_f1_threshold = 0;
  std::vector<SweepPoint> curve;
};

// Inference normalizes each clip by its own window statistics, matching the
// normalization the network was trained under (serial per-clip forward
// passes). Normalization buffers are snapshotted and restored so scoring has
// no side effects and is order-independent.
template <typename T>
RawPrediction<T> predict_window(HyperTeaModel<T>& model, const FrameSequence& seq, int64_t t) {
  ParamRegistry<T> reg = model.collect();
  BufferSnapshot<T> snap(reg);
  Tensor<T> clip = make_clip<T>(seq, t, model.cfg.frames);
  auto pred = model.forward(clip, true);
  snap.restore();
  return pred;
}

template <typename T>
EvalSummary evaluate_model(HyperTeaModel<T>& model, const Dataset& ds) {
  NoGradGuard guard;
  std::vector<RankedDetection> ranked;
  std::vector<std::vector<Box>> gts;
  int64_t frame_id = 0;
  MatchResult at_conf_total;
  for (const auto& seq : ds.seqs) {
    for (int64_t t = 0; t < static_cast<int64_t>(seq.frames.size()); ++t) {
      auto pred = predict_window(model, seq, t);
      auto dets = nms(decode(pred, model.cfg.conf_thresh), model.cfg.nms_iou);
      for (const auto& d : dets) ranked.push_back({frame_id, d.box, d.score});
      gts.push_back(seq.boxes[t]);
      auto m = match(dets, seq.boxes[t]);
      at_conf_total.tp += m.tp;
      at_conf_total.fp += m.fp;
      at_conf_total.fn += m.fn;
      ++frame_id;
    }
  }
  EvalSummary summary;
  summary.map50 = average_precision(ranked, gts);
  summary.at_conf = prf1(at_conf_total);
  summary.curve = pr_curve(ranked, gts);

  // Best-F1 operating point from the sweep (precision/recall at each
  // distinct threshold).
  for (const auto& row : summary.curve) {
    Prf1 p;
    p.precision = row.precision;
    p.recall = row.recall;
    p.f1 = (p.precision + p.recall) > 0
               ? 2.0 * p.precision * p.recall / (p.precision + p.recall)
               : 0.0;
    if (p.f1 > summary.at_best_f1.f1) {
      summary.at_best_f1 = p;
      summary.best_f1_threshold = row.score;
    }
  }
  return summary;
}

// ---- training ----

struct EpochRecord {
  int64_t epoch = 0;
  double mean_loss = 0;
  EvalSummary val;
};

struct TrainResult {
  std::vector<double> step_losses;   // scaled total loss per optimizer step
  std::vector<EpochRecord> history;
  double best_map50 = 0;
  int64_t best_epoch = -1;
  int64_t steps = 0;
};

namespace detail_pipeline {

inline nlohmann::ordered_json prf1_json(const Prf1& p) {
  return {{"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1}};
}

inline nlohmann::ordered_json summary_json(const EvalSummary& s) {
  nlohmann::ordered_json j;
  j["map50"] = s.map50;
  j["pr_at_conf"] = prf1_json(s.at_conf);
  j["pr_at_best_f1"] = prf1_json(s.at_best_f1);
  j["best_f1_threshold"] = s.best_f1_threshold;
  return j;
}

}  // namespace detail_pipeline

// Serial SGD trainer: per-clip forward/backward with gradient accumulation
// across the configured batch, stepwise LR decay, per-epoch validation, and
// best-by-mAP checkpointing. Deterministic for a fixed config and seed.
template <typename T>
class Trainer {
 public:
  Trainer(const PipelineConfig& cfg, std::string out_dir)
      : cfg_(cfg),
        out_dir_(std::move(out_dir)),
        init_rng_(cfg.seed),
        model_(cfg, init_rng_),
        opt_(model_.collect(), SgdConfig<T>{static_cast<T>(cfg.lr), static_cast<T>(cfg.momentum),
                                            static_cast<T>(cfg.weight_decay)}) {
    std::filesystem::create_directories(out_dir_);
  }

  HyperTeaModel<T>& model() { return model_; }
  Sgd<T>& optimizer() { return opt_; }
  int64_t step() const { return step_; }
  int64_t epoch() const { return epoch_; }

  void save(const std::string& path) {
    save_checkpoint(path, opt_.registry(), &opt_.velocity(), step_, epoch_);
  }

  void load(const std::string& path) {
    ParamRegistry<T> reg = opt_.registry();
    auto meta = load_checkpoint(path, reg, &opt_.velocity());
    step_ = meta.step;
    epoch_ = meta.epoch;
  }

  // One optimizer update from a batch of clips; returns the scaled loss.
  double train_step(const Dataset& ds, const std::vector<ClipRef>& batch, int64_t total_steps) {
    opt_.zero_grad();
    double loss_value = 0;
    for (const auto& ref : batch) {
      const auto& seq = ds.seqs[ref.seq];
      Tensor<T> clip = make_clip<T>(seq, ref.end_frame, cfg_.frames);
      auto pred = model_.forward(clip, true);
      auto targets = assign_targets(seq.boxes[ref.end_frame], pred.grid_h(), pred.grid_w(),
                                    pred.stride);
      auto loss = compute_loss(pred, targets,
                               LossWeights{cfg_.lambda_reg, cfg_.lambda_cls, cfg_.lambda_obj});
      Tensor<T> scaled = mul_scalar(loss.total, T(1) / static_cast<T>(batch.size()));
      scaled.backward();
      loss_value += static_cast<double>(scaled.item());
    }
    opt_.step(lr_at_step(static_cast<T>(cfg_.lr), step_, total_steps));
    ++step_;
    return loss_value;
  }

  // Full run: epochs x shuffled clips, validation after each epoch, metrics
  // and checkpoints under the output directory.
  TrainResult fit(const Dataset& train_ds, const Dataset& val_ds,
                  const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    std::vector<ClipRef> clips;
    for (int64_t s = 0; s < static_cast<int64_t>(train_ds.seqs.size()); ++s)
      for (int64_t t = 0; t < static_cast<int64_t>(train_ds.seqs[s].frames.size()); ++t)
        clips.push_back({s, t});
    if (clips.empty()) throw NumericsError("train: empty dataset");

    const int64_t batches_per_epoch =
        (static_cast<int64_t>(clips.size()) + cfg_.batch - 1) / cfg_.batch;
    const int64_t total_steps = std::max<int64_t>(1, cfg_.epochs * batches_per_epoch);

    TrainResult result;
    for (; epoch_ < cfg_.epochs; ++epoch_) {
      // Per-epoch shuffle seeded by (run seed, epoch): reproducible and
      // independent of resume points.
      Rng shuffle_rng(cfg_.seed * 0x9E3779B97F4A7C15ull + static_cast<uint64_t>(epoch_) + 1);
      shuffle_rng.shuffle(clips);

      double epoch_loss = 0;
      int64_t epoch_batches = 0;
      for (size_t off = 0; off < clips.size(); off += cfg_.batch) {
        std::vector<ClipRef> batch(clips.begin() + off,
                                   clips.begin() + std::min(clips.size(), off + cfg_.batch));
        double loss = train_step(train_ds, batch, total_steps);
        result.step_losses.push_back(loss);
        epoch_loss += loss;
        ++epoch_batches;
      }

      EpochRecord rec;
      rec.epoch = epoch_;
      rec.mean_loss = epoch_batches ? epoch_loss / static_cast<double>(epoch_batches) : 0.0;
      if (!val_ds.seqs.empty()) rec.val = evaluate_model(model_, val_ds);
      result.history.push_back(rec);

      save(out_dir_ + "/last.ckpt");
      if (rec.val.map50 >= result.best_map50 || result.best_epoch < 0) {
        result.best_map50 = rec.val.map50;
        result.best_epoch = epoch_;
        save(out_dir_ + "/best.ckpt");
      }
      write_metrics(result);
      if (on_epoch) on_epoch(rec);
    }
    if (cfg_.epochs == 0) {
      save(out_dir_ + "/last.ckpt");
      save(out_dir_ + "/best.ckpt");
      write_metrics(result);
    }
    result.steps = step_;
    return result;
  }

  void write_metrics(const TrainResult& result) const {
    nlohmann::ordered_json j;
    j["schema"] = "hypertea-metrics/1";
    j["variant"] = cfg_.variant;
    j["seed"] = cfg_.seed;
    j["steps"] = step_;
    j["epochs"] = nlohmann::ordered_json::array();
    for (const auto& rec : result.history) {
      nlohmann::ordered_json e;
      e["epoch"] = rec.epoch;
      e["mean_loss"] = rec.mean_loss;
      e["val"] = detail_pipeline::summary_json(rec.val);
      j["epochs"].push_back(e);
    }
    j["best_epoch"] = result.best_epoch;
    j["best_map50"] = result.best_map50;
    j["step_losses"] = result.step_losses;
    std::ofstream out(out_dir_ + "/metrics.json");
    if (!out) throw NumericsError("train: cannot open " + out_dir_ + "/metrics.json");
    out << j.dump(2) << "\n";
  }

 private:
  PipelineConfig cfg_;
  std::string out_dir_;
  Rng init_rng_;
  HyperTeaModel<T> model_;
  Sgd<T> opt_;
  int64_t step_ = 0;
  int64_t epoch_ = 0;
};

// Standalone evaluation artifact writer (metrics.json + pr_curve.csv).
template <typename T>
EvalSummary evaluate_to_dir(HyperTeaModel<T>& model, const Dataset& ds,
                            const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  EvalSummary s = evaluate_model(model, ds);
  nlohmann::ordered_json j;
  j["schema"] = "hypertea-eval/1";
  j["num_sequences"] = ds.seqs.size();
  j["metrics"] = detail_pipeline::summary_json(s);
  std::ofstream out(out_dir + "/metrics.json");
  if (!out) throw NumericsError("eval: cannot open " + out_dir + "/metrics.json");
  out << j.dump(2) << "\n";
  write_pr_curve_csv(out_dir + "/pr_curve.csv", s.curve);
  return s;
}

}  // namespace hypertea
