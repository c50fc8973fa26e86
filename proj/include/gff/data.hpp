#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gff/io.hpp"
#include "gff/rng.hpp"
#include "gff/tensor.hpp"

namespace gff {

constexpr std::int32_t kIgnoreLabel = 255;
constexpr std::int64_t kClasses = 5;
inline constexpr const char* kClassNames[kClasses] = {"background", "building", "car", "pole",
                                                      "light"};

struct Sample {
  Tensor<float> image;  // [3,H,W], values in [0,255]
  Labels labels;        // [1,H,W], classes 0..4 or the ignore label
};

/// Toy-city scenes: large buildings, mid-size cars, 1-2 px poles with small
/// lights on top — a deliberate mix of coarse and thin structure. Shapes
/// are painted in a fixed z-order (building < car < pole < light), so the
/// topmost shape owns each pixel and labels are exact.
struct SceneSpec {
  std::int64_t h = 64, w = 64;
  int buildings = 1;
  int cars = 2;
  int poles = 4;
  int lights = 4;        // attached to the tops of the first `lights` poles
  double noise_sigma = 1.0;
  std::uint64_t seed = 1;
};

namespace detail {

struct ClassColor {
  float r, g, b;
};

// Flat per-class colors, separated enough to survive pixel noise.
inline ClassColor class_color(std::int32_t cls) {
  switch (cls) {
    case 0: return {96.f, 112.f, 96.f};    // background: muted green-gray
    case 1: return {156.f, 64.f, 56.f};    // building: brick red
    case 2: return {56.f, 72.f, 180.f};    // car: blue
    case 3: return {228.f, 224.f, 64.f};   // pole: bright yellow
    default: return {235.f, 70.f, 225.f};  // light: magenta
  }
}

}  // namespace detail

/// One deterministic scene. The RNG draw sequence is fixed, so a given
/// (spec.seed, split, index) triple always produces identical bytes.
inline Sample generate_sample(const SceneSpec& spec, const std::string& split,
                              std::int64_t index) {
  check(spec.h >= 32 && spec.w >= 32, "scene extents must be at least 32");
  const std::int64_t H = spec.h, W = spec.w;
  Rng rng(derive_seed(spec.seed, "scene/" + split, static_cast<std::uint64_t>(index)));

  Labels labels(1, H, W, 0);
  auto paint = [&](std::int64_t r0, std::int64_t r1, std::int64_t c0, std::int64_t c1,
                   std::int32_t cls) {
    r0 = std::max<std::int64_t>(r0, 0);
    c0 = std::max<std::int64_t>(c0, 0);
    r1 = std::min(r1, H);
    c1 = std::min(c1, W);
    for (std::int64_t r = r0; r < r1; ++r)
      for (std::int64_t c = c0; c < c1; ++c) labels.at(0, r, c) = cls;
  };

  // Shapes are placed by rejection sampling so instances rarely overlap:
  // clean class-vs-background boundaries keep the toy task crisply decodable.
  // Buildings and cars fall back to overlapping placement when no clear spot
  // turns up (the z-order keeps labels unambiguous); poles are skipped instead,
  // because the thin-width guarantee must hold unconditionally.
  auto region_clear = [&](std::int64_t r0, std::int64_t r1, std::int64_t c0,
                          std::int64_t c1) {
    r0 = std::max<std::int64_t>(r0, 0);
    c0 = std::max<std::int64_t>(c0, 0);
    r1 = std::min(r1, H);
    c1 = std::min(c1, W);
    for (std::int64_t r = r0; r < r1; ++r)
      for (std::int64_t c = c0; c < c1; ++c)
        if (labels.at(0, r, c) != 0) return false;
    return true;
  };

  for (int i = 0; i < spec.buildings; ++i) {
    // Clamped so the smallest legal scene (32x32) still fits a building.
    const std::int64_t bw = std::min(rng.uniform_int(22, 30), W - 2);
    const std::int64_t bh = std::min(rng.uniform_int(26, 34), H - 2);
    for (int attempt = 0; attempt < 200; ++attempt) {
      const std::int64_t c0 = rng.uniform_int(0, W - bw), r0 = rng.uniform_int(0, H - bh);
      if (attempt < 199 && !region_clear(r0 - 2, r0 + bh + 2, c0 - 2, c0 + bw + 2)) continue;
      paint(r0, r0 + bh, c0, c0 + bw, 1);
      break;
    }
  }
  for (int i = 0; i < spec.cars; ++i) {
    const std::int64_t a = rng.uniform_int(8, 10), b = rng.uniform_int(5, 6);
    for (int attempt = 0; attempt < 200; ++attempt) {
      const std::int64_t cc = rng.uniform_int(a, W - 1 - a), cr = rng.uniform_int(b, H - 1 - b);
      if (attempt < 199 && !region_clear(cr - b - 2, cr + b + 3, cc - a - 2, cc + a + 3))
        continue;
      for (std::int64_t r = cr - b; r <= cr + b; ++r)
        for (std::int64_t c = cc - a; c <= cc + a; ++c) {
          const double dr = static_cast<double>(r - cr) / static_cast<double>(b);
          const double dc = static_cast<double>(c - cc) / static_cast<double>(a);
          if (dr * dr + dc * dc <= 1.0) labels.at(0, r, c) = 2;
        }
      break;
    }
  }
  // Poles keep a horizontal gap of at least 3 empty columns between each
  // other so pole components never merge past the 2 px width guarantee, and
  // claim enough clear rows above for their light.
  std::vector<std::int64_t> pole_x, pole_top, pole_w;
  for (int i = 0; i < spec.poles; ++i) {
    const std::int64_t pw = rng.bernoulli(0.15) ? 1 : 2;
    for (int attempt = 0; attempt < 200; ++attempt) {
      const std::int64_t x = rng.uniform_int(2, W - 3 - pw);
      bool clear = true;
      for (std::size_t j = 0; j < pole_x.size(); ++j) {
        if (std::abs(x - pole_x[j]) < 3 + std::max(pw, pole_w[j])) {
          clear = false;
          break;
        }
      }
      if (!clear) continue;
      const std::int64_t ph = rng.uniform_int(10, 14);
      const std::int64_t top = rng.uniform_int(3, H - 1 - ph);
      // Late attempts waive the free-standing requirement (but never the
      // pole gap rule) so cramped scenes still meet the every-scene-has-a-pole
      // invariant; the z-order keeps labels unambiguous when overlap happens.
      if (attempt < 150 && !region_clear(top - 3, top + ph + 2, x - 2, x + pw + 2)) continue;
      paint(top, top + ph, x, x + pw, 3);
      pole_x.push_back(x);
      pole_top.push_back(top);
      pole_w.push_back(pw);
      break;
    }
  }
  check(!pole_x.empty(), "scene generation failed to place any pole");
  for (int i = 0; i < spec.lights && i < static_cast<int>(pole_x.size()); ++i) {
    const std::int64_t s = rng.bernoulli(0.1) ? 2 : 3;
    const std::int64_t c0 = std::clamp<std::int64_t>(pole_x[i] + pole_w[i] / 2 - s / 2, 0, W - s);
    const std::int64_t r0 = std::max<std::int64_t>(pole_top[i] - s + 1, 0);
    paint(r0, r0 + s, c0, c0 + s, 4);
  }

  Tensor<float> image({3, H, W});
  float* img = image.data();
  for (std::int64_t r = 0; r < H; ++r) {
    for (std::int64_t c = 0; c < W; ++c) {
      const auto col = detail::class_color(labels.at(0, r, c));
      const float noise_r = static_cast<float>(rng.normal() * spec.noise_sigma);
      const float noise_g = static_cast<float>(rng.normal() * spec.noise_sigma);
      const float noise_b = static_cast<float>(rng.normal() * spec.noise_sigma);
      img[0 * H * W + r * W + c] = std::clamp(col.r + noise_r, 0.f, 255.f);
      img[1 * H * W + r * W + c] = std::clamp(col.g + noise_g, 0.f, 255.f);
      img[2 * H * W + r * W + c] = std::clamp(col.b + noise_b, 0.f, 255.f);
    }
  }
  return {image, labels};
}

/// `split` feeds the per-sample seed stream, so train and test draws are
/// disjoint by construction.
inline std::vector<Sample> generate_dataset(const SceneSpec& spec, const std::string& split,
                                            std::int64_t n) {
  check(n >= 1, "dataset size must be positive");
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) out.push_back(generate_sample(spec, split, i));
  return out;
}

inline Tensor<float> labels_to_tensor(const Labels& l) {
  Tensor<float> t({l.h, l.w});
  for (std::int64_t i = 0; i < l.numel(); ++i)
    t.data()[i] = static_cast<float>(l.v[static_cast<std::size_t>(i)]);
  return t;
}

inline Labels tensor_to_labels(const Tensor<float>& t) {
  check(t.ndim() == 2, "label tensor must be [H,W]");
  Labels l(1, t.dim(0), t.dim(1));
  for (std::int64_t i = 0; i < l.numel(); ++i) {
    const float v = t.data()[i];
    const auto iv = static_cast<std::int32_t>(std::lround(v));
    check(static_cast<float>(iv) == v && iv >= 0, "non-integral label value in tensor");
    l.v[static_cast<std::size_t>(i)] = iv;
  }
  return l;
}

/// On-disk layout: `index.txt` (one id per line) plus `{id}_img.gfft` /
/// `{id}_lbl.gfft`; labels travel as f32 values, exact for 0..255.
inline void save_dataset(const std::filesystem::path& dir, const std::vector<Sample>& samples) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
  std::ofstream index(dir / "index.txt");
  if (!index) throw IoError("cannot write " + (dir / "index.txt").string());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "%05zu", i);
    index << id << "\n";
    write_tensor(dir / (std::string(id) + "_img.gfft"), samples[i].image);
    write_tensor(dir / (std::string(id) + "_lbl.gfft"), labels_to_tensor(samples[i].labels));
  }
  if (!index) throw IoError("write failed: " + (dir / "index.txt").string());
}

inline std::vector<std::string> read_index(const std::filesystem::path& dir) {
  std::ifstream index(dir / "index.txt");
  if (!index) throw IoError("cannot open dataset index " + (dir / "index.txt").string());
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(index, line)) {
    if (!line.empty()) ids.push_back(line);
  }
  check(!ids.empty(), "dataset index is empty: " + dir.string());
  return ids;
}

inline Sample load_sample(const std::filesystem::path& dir, const std::string& id) {
  Sample s;
  s.image = read_tensor<float>(dir / (id + "_img.gfft"));
  check(s.image.ndim() == 3 && s.image.dim(0) == 3, "sample image must be [3,H,W]");
  s.labels = tensor_to_labels(read_tensor<float>(dir / (id + "_lbl.gfft")));
  check(s.labels.h == s.image.dim(1) && s.labels.w == s.image.dim(2),
        "label extent differs from image extent for sample " + id);
  return s;
}

inline std::vector<Sample> load_dataset(const std::filesystem::path& dir) {
  std::vector<Sample> out;
  for (const auto& id : read_index(dir)) out.push_back(load_sample(dir, id));
  return out;
}

}  // namespace gff
