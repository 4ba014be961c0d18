// Command-line entry point for the detection toolkit: dataset generation,
// training, evaluation, single-sequence inference, gradient verification,
// and PR-curve rendering. Every subcommand writes its artifacts under its
// --out directory. Exit codes: 0 success, 1 validation/runtime failure
// (single-line "error: ..." on stderr), 2 usage errors such as unknown flags.
#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "hypertea/gradsuite.hpp"
#include "hypertea/pipeline.hpp"

namespace {

using namespace hypertea;

// Verbosity from the HYPERTEA_LOG environment variable:
// quiet (0) | info (1, default) | debug (2).
int log_level() {
  const char* env = std::getenv("HYPERTEA_LOG");
  if (!env) return 1;
  const std::string v(env);
  if (v == "quiet") return 0;
  if (v == "debug") return 2;
  return 1;
}

std::string sibling_config_path(const std::string& ckpt) {
  return (std::filesystem::path(ckpt).parent_path() / "config.txt").string();
}

// Builds the model from its config and loads checkpoint weights. Momentum
// buffers are training state and are not needed here.
HyperTeaModel<float> load_model(const PipelineConfig& cfg, const std::string& ckpt) {
  Rng rng(cfg.seed);
  HyperTeaModel<float> model(cfg, rng);
  ParamRegistry<float> reg = model.collect();
  std::vector<std::vector<float>>* no_velocity = nullptr;
  load_checkpoint(ckpt, reg, no_velocity);
  return model;
}

void draw_box_outline(std::vector<double>& frame, int64_t width, int64_t height, const Box& b) {
  const auto clampx = [&](double v) {
    return std::min<int64_t>(width - 1, std::max<int64_t>(0, std::llround(v)));
  };
  const auto clampy = [&](double v) {
    return std::min<int64_t>(height - 1, std::max<int64_t>(0, std::llround(v)));
  };
  const int64_t x1 = clampx(b.x1), x2 = clampx(b.x2);
  const int64_t y1 = clampy(b.y1), y2 = clampy(b.y2);
  for (int64_t x = x1; x <= x2; ++x) frame[y1 * width + x] = frame[y2 * width + x] = 255.0;
  for (int64_t y = y1; y <= y2; ++y) frame[y * width + x1] = frame[y * width + x2] = 255.0;
}

void run_gen_data(const std::string& out, int64_t sequences, int64_t val,
                  const SceneConfig& scene, uint64_t seed) {
  DatasetIndex idx = generate_dataset(out, sequences, val, scene, seed);
  if (log_level() > 0)
    std::cout << "wrote " << idx.train.size() << " train + " << idx.val.size()
              << " val sequences under " << out << "\n";
}

void run_train(const std::string& config_path, const std::string& data, const std::string& out,
               const std::string& resume, bool has_epochs_override, int64_t epochs_override) {
  PipelineConfig cfg = load_config(config_path);
  if (has_epochs_override) {
    if (epochs_override < 0) throw NumericsError("train: --epochs must be >= 0");
    cfg.epochs = epochs_override;
  }
  DatasetIndex idx = load_index(data);
  Dataset train_ds = load_dataset(data, idx.train);
  Dataset val_ds = load_dataset(data, idx.val);

  Trainer<float> trainer(cfg, out);
  save_config(cfg, out + "/config.txt");
  if (!resume.empty()) trainer.load(resume);

  const int lvl = log_level();
  TrainResult result = trainer.fit(train_ds, val_ds, [&](const EpochRecord& rec) {
    if (lvl < 1) return;
    std::printf("epoch %lld  loss %.6f  val mAP50 %.4f  F1 %.4f\n",
                static_cast<long long>(rec.epoch), rec.mean_loss, rec.val.map50,
                rec.val.at_best_f1.f1);
    std::fflush(stdout);
  });
  if (lvl > 0)
    std::printf("done: %lld steps, best mAP50 %.4f at epoch %lld -> %s\n",
                static_cast<long long>(result.steps), result.best_map50,
                static_cast<long long>(result.best_epoch), out.c_str());
}

void run_eval(const std::string& ckpt, const std::string& data, const std::string& out,
              std::string config_path, const std::string& split) {
  if (config_path.empty()) config_path = sibling_config_path(ckpt);
  PipelineConfig cfg = load_config(config_path);
  HyperTeaModel<float> model = load_model(cfg, ckpt);

  DatasetIndex idx = load_index(data);
  std::vector<std::string> ids;
  if (split == "train" || split == "all") ids.insert(ids.end(), idx.train.begin(), idx.train.end());
  if (split == "val" || split == "all") ids.insert(ids.end(), idx.val.begin(), idx.val.end());
  Dataset ds = load_dataset(data, ids);

  EvalSummary s = evaluate_to_dir(model, ds, out);
  if (log_level() > 0)
    std::printf("mAP50 %.4f  best F1 %.4f @ conf %.4f  (%zu sequences) -> %s/metrics.json\n",
                s.map50, s.at_best_f1.f1, s.best_f1_threshold, ds.seqs.size(), out.c_str());
}

void run_infer(const std::string& ckpt, const std::string& seq_dir, const std::string& out,
               std::string config_path, bool overlay) {
  if (config_path.empty()) config_path = sibling_config_path(ckpt);
  PipelineConfig cfg = load_config(config_path);
  HyperTeaModel<float> model = load_model(cfg, ckpt);
  FrameSequence seq = load_sequence(seq_dir);

  std::filesystem::create_directories(out);
  std::ofstream jl(out + "/detections.jsonl");
  if (!jl) throw NumericsError("infer: cannot open " + out + "/detections.jsonl");

  NoGradGuard guard;
  for (int64_t t = 0; t < static_cast<int64_t>(seq.frames.size()); ++t) {
    auto pred = predict_window(model, seq, t);
    DetectionSet dets = nms(decode(pred, cfg.conf_thresh), cfg.nms_iou);

    nlohmann::ordered_json rec;
    rec["frame"] = t;
    auto boxes = nlohmann::ordered_json::array();
    auto scores = nlohmann::ordered_json::array();
    for (const auto& d : dets) {
      boxes.push_back({d.box.x1, d.box.y1, d.box.x2, d.box.y2});
      scores.push_back(d.score);
    }
    rec["boxes"] = boxes;
    rec["scores"] = scores;
    jl << rec.dump() << "\n";

    if (overlay) {
      std::vector<double> frame = seq.frames[t];
      for (const auto& d : dets) draw_box_outline(frame, seq.width, seq.height, d.box);
      char name[32];
      std::snprintf(name, sizeof(name), "overlay_%04lld.pgm", static_cast<long long>(t));
      write_pgm(out + "/" + name, frame, seq.width, seq.height);
    }
  }
  if (log_level() > 0)
    std::cout << "wrote detections for " << seq.frames.size() << " frames -> " << out
              << "/detections.jsonl\n";
}

int run_gradcheck(const std::string& module) {
  bool all_ok = true;
  for (const GradSuiteResult& r : run_grad_suite(module)) {
    std::printf("gradcheck %-8s  max_rel_err %.3e  mean %.3e  checked %lld  %s\n",
                r.module.c_str(), r.report.max_rel_err, r.report.mean_rel_err,
                static_cast<long long>(r.report.checked), r.ok ? "PASS" : "FAIL");
    if (!r.ok) {
      std::printf("  worst: %s (analytic %.6e vs numeric %.6e)\n", r.report.worst.c_str(),
                  r.report.worst_analytic, r.report.worst_numeric);
      all_ok = false;
    }
  }
  return all_ok ? 0 : 1;
}

// Rasterizes a precision/recall CSV into a square grayscale image: recall on
// the horizontal axis, precision on the vertical, dark curve on white.
void run_plot(const std::string& in_path, const std::string& out_path, int64_t size) {
  if (size < 32) throw NumericsError("plot: --size must be >= 32");
  std::ifstream in(in_path);
  if (!in) throw NumericsError("plot: cannot open " + in_path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("threshold,", 0) != 0)
    throw NumericsError("plot: " + in_path + " is not a pr_curve.csv");

  std::vector<std::pair<double, double>> pts;  // (recall, precision)
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    double thr = 0, prec = 0, rec = 0;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &thr, &prec, &rec) != 3)
      throw NumericsError("plot: malformed row: " + line);
    pts.emplace_back(rec, prec);
  }

  const int64_t n = size, margin = n / 16;
  std::vector<double> img(static_cast<size_t>(n * n), 255.0);
  const auto px = [&](double r) { return margin + r * static_cast<double>(n - 1 - 2 * margin); };
  const auto py = [&](double p) {
    return static_cast<double>(n - 1 - margin) - p * static_cast<double>(n - 1 - 2 * margin);
  };
  for (int64_t x = margin; x <= n - 1 - margin; ++x) img[(n - 1 - margin) * n + x] = 0.0;
  for (int64_t y = margin; y <= n - 1 - margin; ++y) img[y * n + margin] = 0.0;

  const auto plot_segment = [&](double x0, double y0, double x1, double y1) {
    const int64_t steps =
        1 + static_cast<int64_t>(std::max(std::fabs(x1 - x0), std::fabs(y1 - y0)));
    for (int64_t i = 0; i <= steps; ++i) {
      const double a = static_cast<double>(i) / static_cast<double>(steps);
      const int64_t x = std::llround(x0 + a * (x1 - x0));
      const int64_t y = std::llround(y0 + a * (y1 - y0));
      if (x >= 0 && x < n && y >= 0 && y < n) img[y * n + x] = 0.0;
    }
  };
  for (size_t i = 0; i < pts.size(); ++i) {
    const double x = px(pts[i].first), y = py(pts[i].second);
    plot_segment(x, y, x, y);
    if (i > 0) plot_segment(px(pts[i - 1].first), py(pts[i - 1].second), x, y);
  }
  write_pgm(out_path, img, n, n);
  if (log_level() > 0)
    std::cout << "plotted " << pts.size() << " points -> " << out_path << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hypertea: moving infrared small-target detection toolkit"};
  app.require_subcommand(1);
  int rc = 0;

  // gen-data -----------------------------------------------------------
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic labeled dataset");
  std::string gen_out;
  int64_t gen_sequences = 200, gen_val = 50;
  uint64_t gen_seed = 0;
  SceneConfig scene;
  gen->add_option("--out", gen_out, "Dataset directory to create")->required();
  gen->add_option("--sequences", gen_sequences, "Total number of sequences");
  gen->add_option("--val", gen_val, "Trailing sequences held out as the validation split");
  gen->add_option("--mse", scene.target_mse, "Requested consecutive-frame MSE (0-255 scale)");
  gen->add_option("--scr", scene.scr, "Target signal-to-clutter ratio");
  gen->add_option("--width", scene.width, "Frame width in pixels (multiple of 8)");
  gen->add_option("--height", scene.height, "Frame height in pixels (multiple of 8)");
  gen->add_option("--frames", scene.frames, "Frames per sequence");
  gen->add_option("--targets", scene.num_targets, "Targets per sequence (1-3)");
  gen->add_option("--sigma-min", scene.sigma_min, "Smallest target extent in pixels");
  gen->add_option("--sigma-max", scene.sigma_max, "Largest target extent in pixels");
  gen->add_option("--octaves", scene.noise_octaves, "Background noise octaves");
  gen->add_option("--drift", scene.drift_speed, "Background drift in pixels per frame");
  gen->add_option("--evolve", scene.evolve_speed, "Background decorrelation rate per frame");
  gen->add_option("--jitter", scene.jitter, "Per-frame target center jitter in pixels");
  gen->add_option("--speed-min", scene.target_speed_min, "Slowest target motion (px/frame)");
  gen->add_option("--speed-max", scene.target_speed_max, "Fastest target motion (px/frame)");
  gen->add_option("--seed", gen_seed, "Dataset seed");
  gen->callback([&] { run_gen_data(gen_out, gen_sequences, gen_val, scene, gen_seed); });

  // train ---------------------------------------------------------------
  auto* tr = app.add_subcommand("train", "Train a detector on a generated dataset");
  std::string tr_config, tr_data, tr_out, tr_resume;
  int64_t tr_epochs = -1;
  tr->add_option("--config", tr_config, "Key/value configuration file")->required();
  tr->add_option("--data", tr_data, "Dataset directory (from gen-data)")->required();
  tr->add_option("--out", tr_out, "Run directory for checkpoints and metrics")->required();
  tr->add_option("--resume", tr_resume, "Checkpoint to resume from");
  tr->add_option("--epochs", tr_epochs, "Override the configured epoch count");
  tr->callback([&] {
    run_train(tr_config, tr_data, tr_out, tr_resume, tr->count("--epochs") > 0, tr_epochs);
  });

  // eval ----------------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  std::string ev_ckpt, ev_data, ev_out, ev_config, ev_split = "val";
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint to evaluate")->required();
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--out", ev_out, "Directory for metrics.json and pr_curve.csv")->required();
  ev->add_option("--config", ev_config, "Model config (default: config.txt beside the checkpoint)");
  ev->add_option("--split", ev_split, "Dataset split to evaluate")
      ->check(CLI::IsMember({"val", "train", "all"}));
  ev->callback([&] { run_eval(ev_ckpt, ev_data, ev_out, ev_config, ev_split); });

  // infer ---------------------------------------------------------------
  auto* inf = app.add_subcommand("infer", "Run detection over one sequence directory");
  std::string inf_ckpt, inf_seq, inf_out, inf_config;
  bool inf_overlay = false;
  inf->add_option("--ckpt", inf_ckpt, "Checkpoint to run")->required();
  inf->add_option("--seq", inf_seq, "Sequence directory (frames + annotations)")->required();
  inf->add_option("--out", inf_out, "Directory for detections.jsonl")->required();
  inf->add_option("--config", inf_config,
                  "Model config (default: config.txt beside the checkpoint)");
  inf->add_flag("--overlay", inf_overlay, "Also write box-overlay PGM images");
  inf->callback([&] { run_infer(inf_ckpt, inf_seq, inf_out, inf_config, inf_overlay); });

  // gradcheck -----------------------------------------------------------
  auto* gc = app.add_subcommand("gradcheck", "Verify analytic gradients against finite differences");
  std::string gc_module = "all";
  gc->add_option("--module", gc_module, "Module fixture to check")
      ->check(CLI::IsMember({"all", "hcu", "ltem", "gtem", "tam", "head"}));
  gc->callback([&] { rc = run_gradcheck(gc_module); });

  // plot ------------------------------------------------------------------
  auto* pl = app.add_subcommand("plot", "Render a pr_curve.csv as a PGM image");
  std::string pl_in, pl_out;
  int64_t pl_size = 256;
  pl->add_option("--in", pl_in, "pr_curve.csv produced by eval")->required();
  pl->add_option("--out", pl_out, "Output PGM path")->required();
  pl->add_option("--size", pl_size, "Image side length in pixels");
  pl->callback([&] { run_plot(pl_in, pl_out, pl_size); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help family
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}
