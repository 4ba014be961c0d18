#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "hypertea/tensor.hpp"

namespace hypertea {

// Every tunable of the end-to-end pipeline in one flat key/value record.
// Defaults are the reference operating point; desk presets override epochs
// and widths only.
struct PipelineConfig {
  int64_t frames = 5;                        // clip length T
  int64_t in_channels = 1;
  std::vector<int64_t> widths = {16, 32, 64};  // backbone stage widths
  double tau = 8.0;                          // hypergraph distance threshold
  int64_t ltem_layers = 1;
  int64_t patch_size = 2;
  double lambda_reg = 5.0;
  double lambda_cls = 1.0;
  double lambda_obj = 1.0;
  double lr = 0.01;
  double momentum = 0.937;
  double weight_decay = 5e-4;
  int64_t batch = 4;
  int64_t epochs = 50;
  double nms_iou = 0.65;
  double conf_thresh = 0.001;
  std::string variant = "full";              // full | gtem_only | ltem_only
  uint64_t seed = 0;
};

namespace detail_config {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::vector<int64_t> parse_int_list(const std::string& s, const std::string& key) {
  std::vector<int64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw NumericsError("config: empty element in key '" + key + "'");
    out.push_back(std::stoll(item));
  }
  if (out.empty()) throw NumericsError("config: empty list for key '" + key + "'");
  return out;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail_config

// `key = value` lines; '#' starts a comment; unknown keys are a hard error so
// typos cannot silently skew a run.
inline PipelineConfig parse_config(const std::string& text) {
  PipelineConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail_config::trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw NumericsError("config: line " + std::to_string(line_no) + " is not 'key = value'");
    std::string key = detail_config::trim(line.substr(0, eq));
    std::string value = detail_config::trim(line.substr(eq + 1));
    if (value.empty()) throw NumericsError("config: empty value for key '" + key + "'");

    if (key == "frames") cfg.frames = std::stoll(value);
    else if (key == "in_channels") cfg.in_channels = std::stoll(value);
    else if (key == "widths") cfg.widths = detail_config::parse_int_list(value, key);
    else if (key == "tau") cfg.tau = std::stod(value);
    else if (key == "ltem_layers") cfg.ltem_layers = std::stoll(value);
    else if (key == "patch_size") cfg.patch_size = std::stoll(value);
    else if (key == "lambda_reg") cfg.lambda_reg = std::stod(value);
    else if (key == "lambda_cls") cfg.lambda_cls = std::stod(value);
    else if (key == "lambda_obj") cfg.lambda_obj = std::stod(value);
    else if (key == "lr") cfg.lr = std::stod(value);
    else if (key == "momentum") cfg.momentum = std::stod(value);
    else if (key == "weight_decay") cfg.weight_decay = std::stod(value);
    else if (key == "batch") cfg.batch = std::stoll(value);
    else if (key == "epochs") cfg.epochs = std::stoll(value);
    else if (key == "nms_iou") cfg.nms_iou = std::stod(value);
    else if (key == "conf_thresh") cfg.conf_thresh = std::stod(value);
    else if (key == "variant") cfg.variant = value;
    else if (key == "seed") cfg.seed = std::stoull(value);
    else throw NumericsError("config: unknown key '" + key + "'");
  }
  if (cfg.frames < 1) throw NumericsError("config: frames must be >= 1");
  if (cfg.epochs < 0) throw NumericsError("config: epochs must be >= 0");
  if (cfg.variant != "full" && cfg.variant != "gtem_only" && cfg.variant != "ltem_only")
    throw NumericsError("config: unknown variant '" + cfg.variant + "'");
  return cfg;
}

// Fixed key order, so serialize(parse(serialize(c))) is byte-identical.
inline std::string serialize_config(const PipelineConfig& cfg) {
  using detail_config::format_double;
  std::string out;
  out += "frames = " + std::to_string(cfg.frames) + "\n";
  out += "in_channels = " + std::to_string(cfg.in_channels) + "\n";
  out += "widths = ";
  for (size_t i = 0; i < cfg.widths.size(); ++i)
    out += (i ? "," : "") + std::to_string(cfg.widths[i]);
  out += "\n";
  out += "tau = " + format_double(cfg.tau) + "\n";
  out += "ltem_layers = " + std::to_string(cfg.ltem_layers) + "\n";
  out += "patch_size = " + std::to_string(cfg.patch_size) + "\n";
  out += "lambda_reg = " + format_double(cfg.lambda_reg) + "\n";
  out += "lambda_cls = " + format_double(cfg.lambda_cls) + "\n";
  out += "lambda_obj = " + format_double(cfg.lambda_obj) + "\n";
  out += "lr = " + format_double(cfg.lr) + "\n";
  out += "momentum = " + format_double(cfg.momentum) + "\n";
  out += "weight_decay = " + format_double(cfg.weight_decay) + "\n";
  out += "batch = " + std::to_string(cfg.batch) + "\n";
  out += "epochs = " + std::to_string(cfg.epochs) + "\n";
  out += "nms_iou = " + format_double(cfg.nms_iou) + "\n";
  out += "conf_thresh = " + format_double(cfg.conf_thresh) + "\n";
  out += "variant = " + cfg.variant + "\n";
  out += "seed = " + std::to_string(cfg.seed) + "\n";
  return out;
}

inline PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NumericsError("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

inline void save_config(const PipelineConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw NumericsError("config: cannot open " + path);
  out << serialize_config(cfg);
}

}  // namespace hypertea
