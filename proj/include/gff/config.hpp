#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gff/data.hpp"
#include "gff/network.hpp"
#include "gff/train.hpp"

namespace gff {

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::int64_t parse_i64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return static_cast<std::int64_t>(x);
  } catch (const std::exception&) {
    throw UsageError("expected an integer for '" + key + "', got '" + v + "'");
  }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    // stoull would silently wrap negative input around 2^64.
    if (v.find('-') != std::string::npos) throw std::invalid_argument(v);
    std::size_t used = 0;
    const unsigned long long x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return static_cast<std::uint64_t>(x);
  } catch (const std::exception&) {
    throw UsageError("expected an unsigned integer for '" + key + "', got '" + v + "'");
  }
}

inline double parse_f64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw UsageError("expected a number for '" + key + "', got '" + v + "'");
  }
}

inline bool parse_onoff(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw UsageError("expected on|off for '" + key + "', got '" + v + "'");
}

inline std::vector<std::int64_t> parse_i64_list(const std::string& key, const std::string& v) {
  std::vector<std::int64_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty())
      throw UsageError("empty element in integer list for '" + key + "', got '" + v + "'");
    out.push_back(parse_i64(key, item));
  }
  if (out.empty()) throw UsageError("expected a comma-separated integer list for '" + key + "'");
  return out;
}

}  // namespace detail

/// Every tunable of the toolkit in one flat bag. Config files and --key
/// value command-line overrides share the same key names; unknown keys
/// are rejected.
struct RunConfig {
  // model
  std::int64_t width = 32;
  std::int64_t classes = 5;
  double aux_weight = 0.4;
  std::string fusion = "gff";
  bool dfp = true;
  bool dfp_literal_indexing = false;
  bool dfp_include_context = true;
  std::vector<std::int64_t> ppm_bins{1, 2, 3, 6};
  std::vector<std::int64_t> backbone_widths{16, 32, 64, 128};
  // optimization
  std::int64_t iterations = 2000;
  std::int64_t batch = 8;
  double base_lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  // augmentation
  std::int64_t crop = 64;
  double scale_lo = 0.75;
  double scale_hi = 2.0;
  double flip_prob = 0.5;
  double jitter = 10.0;
  // scene synthesis
  std::int64_t image_size = 64;
  std::int64_t train_count = 128;
  std::int64_t test_count = 32;
  // Scene composition defaults live on SceneSpec; mirrored here so they are
  // overridable like every other key without drifting out of sync.
  double noise_sigma = SceneSpec{}.noise_sigma;
  std::int64_t buildings = SceneSpec{}.buildings;
  std::int64_t cars = SceneSpec{}.cars;
  std::int64_t poles = SceneSpec{}.poles;
  std::int64_t lights = SceneSpec{}.lights;
  // run plumbing
  std::uint64_t seed = 1;
  std::int64_t threads = 1;
  std::string out = "out";
  std::string data;        // dataset directory (defaults to <out>/data/<split>)
  std::string checkpoint;  // checkpoint directory for eval/gates/ablate
  bool multiscale = false;
  std::string level = "all";  // ablation target: "all" or a 1-based level
  std::string ids;            // sample ids for gate export, comma separated

  void set(const std::string& key, const std::string& value) {
    using namespace detail;
    if (key == "width") width = parse_i64(key, value);
    else if (key == "classes") classes = parse_i64(key, value);
    else if (key == "aux_weight") aux_weight = parse_f64(key, value);
    else if (key == "fusion") fusion = to_string(fusion_from_string(value));
    else if (key == "dfp") dfp = parse_onoff(key, value);
    else if (key == "dfp_literal_indexing") dfp_literal_indexing = parse_onoff(key, value);
    else if (key == "dfp_include_context") dfp_include_context = parse_onoff(key, value);
    else if (key == "ppm_bins") ppm_bins = parse_i64_list(key, value);
    else if (key == "backbone_widths") backbone_widths = parse_i64_list(key, value);
    else if (key == "iterations") iterations = parse_i64(key, value);
    else if (key == "batch") batch = parse_i64(key, value);
    else if (key == "base_lr") base_lr = parse_f64(key, value);
    else if (key == "momentum") momentum = parse_f64(key, value);
    else if (key == "weight_decay") weight_decay = parse_f64(key, value);
    else if (key == "crop") crop = parse_i64(key, value);
    else if (key == "scale_lo") scale_lo = parse_f64(key, value);
    else if (key == "scale_hi") scale_hi = parse_f64(key, value);
    else if (key == "flip_prob") flip_prob = parse_f64(key, value);
    else if (key == "jitter") jitter = parse_f64(key, value);
    else if (key == "image_size") image_size = parse_i64(key, value);
    else if (key == "train_count") train_count = parse_i64(key, value);
    else if (key == "test_count") test_count = parse_i64(key, value);
    else if (key == "noise_sigma") noise_sigma = parse_f64(key, value);
    else if (key == "buildings") buildings = parse_i64(key, value);
    else if (key == "cars") cars = parse_i64(key, value);
    else if (key == "poles") poles = parse_i64(key, value);
    else if (key == "lights") lights = parse_i64(key, value);
    else if (key == "seed") seed = parse_u64(key, value);
    else if (key == "threads") threads = parse_i64(key, value);
    else if (key == "out") out = value;
    else if (key == "data") data = value;
    else if (key == "checkpoint") checkpoint = value;
    else if (key == "multiscale") multiscale = parse_onoff(key, value);
    else if (key == "level") level = value;
    else if (key == "ids") ids = value;
    else throw UsageError("unknown configuration key '" + key + "'");
  }

  ModelConfig model_config() const {
    ModelConfig mc;
    mc.width = width;
    mc.classes = classes;
    mc.aux_weight = aux_weight;
    mc.fusion = fusion_from_string(fusion);
    mc.dfp = dfp;
    mc.dfp_literal_indexing = dfp_literal_indexing;
    mc.dfp_include_context = dfp_include_context;
    mc.ppm_bins = ppm_bins;
    mc.backbone_widths = backbone_widths;
    mc.validate();
    return mc;
  }

  SceneSpec scene_spec() const {
    SceneSpec sp;
    sp.h = image_size;
    sp.w = image_size;
    sp.buildings = static_cast<int>(buildings);
    sp.cars = static_cast<int>(cars);
    sp.poles = static_cast<int>(poles);
    sp.lights = static_cast<int>(lights);
    sp.noise_sigma = noise_sigma;
    sp.seed = seed;
    return sp;
  }

  TrainConfig train_config() const {
    TrainConfig tc;
    tc.optim.base_lr = base_lr;
    tc.optim.momentum = momentum;
    tc.optim.weight_decay = weight_decay;
    tc.optim.total_iters = iterations;
    tc.aug.scale_lo = scale_lo;
    tc.aug.scale_hi = scale_hi;
    tc.aug.flip_prob = flip_prob;
    tc.aug.jitter = jitter;
    tc.aug.crop = crop;
    tc.iterations = iterations;
    tc.batch = batch;
    tc.seed = seed;
    return tc;
  }
};

/// Flat `key = value` lines; `#` starts a comment; blank lines ignored.
inline void load_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError(path + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw UsageError(path + ":" + std::to_string(lineno) + ": empty key");
    cfg.set(key, value);
  }
}

}  // namespace gff
