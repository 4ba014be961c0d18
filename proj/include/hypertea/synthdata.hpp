#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hypertea/detect.hpp"
#include "hypertea/eval.hpp"
#include "hypertea/rng.hpp"

namespace hypertea {

// Configuration for one synthetic moving-infrared sequence: dim Gaussian
// blobs on linear trajectories over a drifting multi-octave noise background,
// with the background amplitude calibrated to a requested inter-frame MSE.
struct SceneConfig {
  int64_t width = 64, height = 64;
  int64_t frames = 5;
  int64_t num_targets = 1;       // 1..3
  double sigma_min = 0.7;        // blob extent in pixels
  double sigma_max = 2.0;
  double scr = 3.0;              // (peak - local mean) / local std contrast proxy
  int64_t noise_octaves = 3;
  double drift_speed = 0.8;      // background drift, pixels per frame
  double evolve_speed = 0.35;    // temporal decorrelation of the noise field
  double jitter = 0.3;           // per-frame target center jitter, pixels
  double target_speed_min = 0.2; // target motion, pixels per frame
  double target_speed_max = 0.9;
  double target_mse = 33.0;      // requested consecutive-frame MSE (0-255 scale)
  uint64_t seed = 0;
};

// T rendered frames (8-bit values stored as doubles) plus per-frame boxes.
struct FrameSequence {
  int64_t width = 0, height = 0;
  std::vector<std::vector<double>> frames;
  std::vector<std::vector<Box>> boxes;
};

namespace detail_synth {

inline uint64_t mix64(uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Hash-addressed lattice value in [0,1): any integer coordinate, no storage.
inline double lattice(uint64_t seed, int64_t octave, int64_t ix, int64_t iy, int64_t iz) {
  uint64_t h = mix64(seed ^ mix64(static_cast<uint64_t>(octave) + 0x51ED270B1ull));
  h = mix64(h ^ mix64(static_cast<uint64_t>(ix)));
  h = mix64(h ^ mix64(static_cast<uint64_t>(iy)));
  h = mix64(h ^ mix64(static_cast<uint64_t>(iz)));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// Trilinear value noise over (x, y, z): z is the temporal axis with unit
// lattice spacing, so advancing z decorrelates the field smoothly.
inline double value_noise(uint64_t seed, int64_t octave, double x, double y, double z,
                          double cell) {
  double gx = x / cell, gy = y / cell;
  int64_t ix = static_cast<int64_t>(std::floor(gx)), iy = static_cast<int64_t>(std::floor(gy));
  int64_t iz = static_cast<int64_t>(std::floor(z));
  double fx = gx - static_cast<double>(ix), fy = gy - static_cast<double>(iy);
  double fz = z - static_cast<double>(iz);
  double ux = fx * fx * (3.0 - 2.0 * fx), uy = fy * fy * (3.0 - 2.0 * fy);
  double uz = fz * fz * (3.0 - 2.0 * fz);
  double plane[2];
  for (int64_t dz = 0; dz < 2; ++dz) {
    double v00 = lattice(seed, octave, ix, iy, iz + dz);
    double v10 = lattice(seed, octave, ix + 1, iy, iz + dz);
    double v01 = lattice(seed, octave, ix, iy + 1, iz + dz);
    double v11 = lattice(seed, octave, ix + 1, iy + 1, iz + dz);
    double a = v00 + (v10 - v00) * ux, b = v01 + (v11 - v01) * ux;
    plane[dz] = a + (b - a) * uy;
  }
  return plane[0] + (plane[1] - plane[0]) * uz;
}

// Centered multi-octave noise in [-0.5, 0.5], largest cell 32 px.
inline double octave_noise(uint64_t seed, int64_t octaves, double x, double y, double z) {
  double total = 0.0, wsum = 0.0, w = 1.0, cell = 32.0;
  for (int64_t o = 0; o < octaves; ++o) {
    total += w * value_noise(seed, o, x, y, z, cell);
    wsum += w;
    w *= 0.5;
    cell *= 0.5;
  }
  return octaves > 0 ? total / wsum - 0.5 : 0.0;
}

struct Trajectory {
  double x0 = 0, y0 = 0, vx = 0, vy = 0, sigma = 1.0;
  std::vector<double> jx, jy;  // per-frame jitter
};

}  // namespace detail_synth

// Deterministic per seed. Throws when a target cannot stay in bounds for all
// T frames at its sampled velocity.
inline FrameSequence generate(const SceneConfig& cfg) {
  if (cfg.width % 8 != 0 || cfg.height % 8 != 0)
    throw NumericsError("generate: extents must be divisible by 8");
  if (cfg.frames < 1) throw NumericsError("generate: need at least one frame");
  if (cfg.num_targets < 1 || cfg.num_targets > 3)
    throw NumericsError("generate: targets per sequence must be 1..3");

  Rng rng(cfg.seed);
  const double w = static_cast<double>(cfg.width), h = static_cast<double>(cfg.height);
  const int64_t t_frames = cfg.frames;

  // Sample every random quantity up front; the calibration loop below must
  // re-render identically except for the background amplitude.
  double drift_angle = rng.uniform() * 2.0 * 3.14159265358979323846;
  double drift_x = cfg.drift_speed * std::cos(drift_angle);
  double drift_y = cfg.drift_speed * std::sin(drift_angle);

  std::vector<detail_synth::Trajectory> targets;
  for (int64_t k = 0; k < cfg.num_targets; ++k) {
    detail_synth::Trajectory tr;
    tr.sigma = cfg.sigma_min + rng.uniform() * (cfg.sigma_max - cfg.sigma_min);
    double speed = cfg.target_speed_min +
                   rng.uniform() * (cfg.target_speed_max - cfg.target_speed_min);
    double ang = rng.uniform() * 2.0 * 3.14159265358979323846;
    tr.vx = speed * std::cos(ang);
    tr.vy = speed * std::sin(ang);
    double margin = 2.0 * tr.sigma + cfg.jitter;
    double span_x = tr.vx * static_cast<double>(t_frames - 1);
    double span_y = tr.vy * static_cast<double>(t_frames - 1);
    double lo_x = margin + std::max(0.0, -span_x), hi_x = w - 1.0 - margin - std::max(0.0, span_x);
    double lo_y = margin + std::max(0.0, -span_y), hi_y = h - 1.0 - margin - std::max(0.0, span_y);
    if (hi_x < lo_x || hi_y < lo_y)
      throw NumericsError("generate: target cannot stay in bounds over the time window");
    tr.x0 = lo_x + rng.uniform() * (hi_x - lo_x);
    tr.y0 = lo_y + rng.uniform() * (hi_y - lo_y);
    for (int64_t t = 0; t < t_frames; ++t) {
      tr.jx.push_back((rng.uniform() * 2.0 - 1.0) * cfg.jitter);
      tr.jy.push_back((rng.uniform() * 2.0 - 1.0) * cfg.jitter);
    }
    targets.push_back(std::move(tr));
  }

  const double base_level = 90.0;

  auto render = [&](double amp) {
    FrameSequence seq;
    seq.width = cfg.width;
    seq.height = cfg.height;
    for (int64_t t = 0; t < t_frames; ++t) {
      std::vector<double> frame(cfg.width * cfg.height);
      double ox = drift_x * static_cast<double>(t), oy = drift_y * static_cast<double>(t);
      double oz = cfg.evolve_speed * static_cast<double>(t);
      for (int64_t y = 0; y < cfg.height; ++y)
        for (int64_t x = 0; x < cfg.width; ++x)
          frame[y * cfg.width + x] =
              base_level + amp * detail_synth::octave_noise(cfg.seed, cfg.noise_octaves,
                                                            static_cast<double>(x) + ox,
                                                            static_cast<double>(y) + oy, oz);

      std::vector<Box> frame_boxes;
      for (const auto& tr : targets) {
        double cx = tr.x0 + tr.vx * static_cast<double>(t) + tr.jx[t];
        double cy = tr.y0 + tr.vy * static_cast<double>(t) + tr.jy[t];
        int64_t icx = static_cast<int64_t>(std::llround(cx));
        int64_t icy = static_cast<int64_t>(std::llround(cy));

        // Contrast from an 11x11 window around the center, excluding the 5x5
        // core the blob will occupy.
        double ring_sum = 0.0, ring_sq = 0.0;
        int64_t ring_n = 0;
        for (int64_t dy = -5; dy <= 5; ++dy)
          for (int64_t dx = -5; dx <= 5; ++dx) {
            if (std::abs(dx) <= 2 && std::abs(dy) <= 2) continue;
            int64_t px = std::clamp<int64_t>(icx + dx, 0, cfg.width - 1);
            int64_t py = std::clamp<int64_t>(icy + dy, 0, cfg.height - 1);
            double v = frame[py * cfg.width + px];
            ring_sum += v;
            ring_sq += v * v;
            ++ring_n;
          }
        double ring_mean = ring_sum / static_cast<double>(ring_n);
        double ring_var = std::max(0.0, ring_sq / static_cast<double>(ring_n) - ring_mean * ring_mean);
        // Floor the contrast scale at one gray level so flat backgrounds
        // still yield visible targets.
        double blob_amp = cfg.scr * std::max(std::sqrt(ring_var), 1.0);

        int64_t reach = static_cast<int64_t>(std::ceil(4.0 * tr.sigma));
        for (int64_t dy = -reach; dy <= reach; ++dy)
          for (int64_t dx = -reach; dx <= reach; ++dx) {
            int64_t px = icx + dx, py = icy + dy;
            if (px < 0 || px >= cfg.width || py < 0 || py >= cfg.height) continue;
            double ddx = static_cast<double>(px) - cx, ddy = static_cast<double>(py) - cy;
            frame[py * cfg.width + px] +=
                blob_amp * std::exp(-(ddx * ddx + ddy * ddy) / (2.0 * tr.sigma * tr.sigma));
          }

        double r = 3.0 * tr.sigma;
        frame_boxes.push_back(Box{std::max(0.0, cx - r), std::max(0.0, cy - r),
                                  std::min(w, cx + r), std::min(h, cy + r)});
      }
      for (auto& v : frame) v = std::clamp(std::round(v), 0.0, 255.0);
      seq.frames.push_back(std::move(frame));
      seq.boxes.push_back(std::move(frame_boxes));
    }
    return seq;
  };

  // Iterative amplitude calibration against the measured inter-frame MSE.
  double amp = 20.0;
  FrameSequence best = render(amp);
  if (t_frames >= 2 && cfg.target_mse > 0.0 && cfg.noise_octaves > 0 &&
      (cfg.drift_speed > 0.0 || cfg.evolve_speed > 0.0)) {
    for (int iter = 0; iter < 12; ++iter) {
      double measured = sequence_mse(best.frames);
      if (measured > 0.92 * cfg.target_mse && measured < 1.08 * cfg.target_mse) break;
      amp *= std::sqrt(cfg.target_mse / std::max(measured, 1e-6));
      best = render(amp);
    }
  }
  return best;
}

// ---- disk format: one binary PGM per frame + per-sequence JSON annotations.

inline void write_pgm(const std::string& path, const std::vector<double>& frame, int64_t width,
                      int64_t height) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw NumericsError("write_pgm: cannot open " + path);
  out << "P5\n" << width << " " << height << "\n255\n";
  std::vector<unsigned char> bytes(frame.size());
  for (size_t i = 0; i < frame.size(); ++i)
    bytes[i] = static_cast<unsigned char>(std::clamp(frame[i], 0.0, 255.0));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<double> read_pgm(const std::string& path, int64_t& width, int64_t& height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NumericsError("read_pgm: cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5") throw NumericsError("read_pgm: not a binary PGM: " + path);
  int64_t maxval = 0;
  in >> width >> height >> maxval;
  if (maxval != 255) throw NumericsError("read_pgm: expected 8-bit data: " + path);
  in.get();  // single whitespace after the header
  std::vector<unsigned char> bytes(width * height);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw NumericsError("read_pgm: truncated file: " + path);
  std::vector<double> frame(bytes.size());
  for (size_t i = 0; i < bytes.size(); ++i) frame[i] = static_cast<double>(bytes[i]);
  return frame;
}

inline void export_sequence(const FrameSequence& seq, const std::string& dir,
                            const std::string& seq_id) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::ordered_json ann;
  ann["sequence"] = seq_id;
  ann["width"] = seq.width;
  ann["height"] = seq.height;
  ann["frames"] = nlohmann::ordered_json::array();
  for (size_t t = 0; t < seq.frames.size(); ++t) {
    std::string name = std::to_string(t) + ".pgm";
    write_pgm(dir + "/" + name, seq.frames[t], seq.width, seq.height);
    nlohmann::ordered_json fr;
    fr["frame"] = t;
    fr["file"] = name;
    fr["boxes"] = nlohmann::ordered_json::array();
    for (const auto& b : seq.boxes[t]) fr["boxes"].push_back({b.x1, b.y1, b.x2, b.y2});
    ann["frames"].push_back(fr);
  }
  std::ofstream out(dir + "/ann.json");
  if (!out) throw NumericsError("export_sequence: cannot open " + dir + "/ann.json");
  out << ann.dump(2) << "\n";
}

inline FrameSequence load_sequence(const std::string& dir) {
  std::ifstream in(dir + "/ann.json");
  if (!in) throw NumericsError("load_sequence: cannot open " + dir + "/ann.json");
  nlohmann::json ann = nlohmann::json::parse(in);
  FrameSequence seq;
  seq.width = ann.at("width").get<int64_t>();
  seq.height = ann.at("height").get<int64_t>();
  for (const auto& fr : ann.at("frames")) {
    int64_t width = 0, height = 0;
    seq.frames.push_back(read_pgm(dir + "/" + fr.at("file").get<std::string>(), width, height));
    if (width != seq.width || height != seq.height)
      throw NumericsError("load_sequence: frame extent mismatch in " + dir);
    std::vector<Box> frame_boxes;
    for (const auto& b : fr.at("boxes")) frame_boxes.push_back(Box{b[0], b[1], b[2], b[3]});
    seq.boxes.push_back(std::move(frame_boxes));
  }
  return seq;
}

struct DatasetIndex {
  std::vector<std::string> train, val;
};

// Writes <root>/<seq_id>/{<t>.pgm, ann.json} for n sequences plus an index
// splitting the trailing val_count sequences into the validation set.
inline DatasetIndex generate_dataset(const std::string& root, int64_t n_sequences,
                                     int64_t val_count, const SceneConfig& base,
                                     uint64_t seed) {
  if (n_sequences < 1 || val_count < 0 || val_count > n_sequences)
    throw NumericsError("generate_dataset: bad sequence counts");
  namespace fs = std::filesystem;
  fs::create_directories(root);
  DatasetIndex index;
  for (int64_t i = 0; i < n_sequences; ++i) {
    SceneConfig cfg = base;
    cfg.seed = seed + static_cast<uint64_t>(i) * 0x10001ull;
    char id[24];
    std::snprintf(id, sizeof(id), "seq%04lld", static_cast<long long>(i));
    export_sequence(generate(cfg), root + "/" + id, id);
    if (i < n_sequences - val_count)
      index.train.push_back(id);
    else
      index.val.push_back(id);
  }
  nlohmann::ordered_json j;
  j["train"] = index.train;
  j["val"] = index.val;
  std::ofstream out(root + "/index.json");
  if (!out) throw NumericsError("generate_dataset: cannot open " + root + "/index.json");
  out << j.dump(2) << "\n";
  return index;
}

inline DatasetIndex load_index(const std::string& root) {
  std::ifstream in(root + "/index.json");
  if (!in) throw NumericsError("load_index: cannot open " + root + "/index.json");
  nlohmann::json j = nlohmann::json::parse(in);
  DatasetIndex index;
  for (const auto& s : j.at("train")) index.train.push_back(s.get<std::string>());
  for (const auto& s : j.at("val")) index.val.push_back(s.get<std::string>());
  return index;
}

}  // namespace hypertea
