#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include "gff/data.hpp"
#include "gff/metrics.hpp"
#include "gff/network.hpp"

namespace gff {

/// base · (1 − iter/total)^power.
inline double poly_lr(std::int64_t iter, std::int64_t total, double base, double power = 0.9) {
  check(total > 0 && iter >= 0 && iter <= total, "poly schedule needs 0 <= iter <= total");
  return base * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(total), power);
}

struct OptimConfig {
  double base_lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::int64_t total_iters = 2000;
};

/// v ← momentum·v + grad + decay·param; param ← param − lr·v. Decay skips
/// entries flagged decay=false (biases, normalization affine parameters).
/// A parameter whose gradient buffer was never touched this step treats it
/// as zero.
template <typename T>
void sgd_step(ParamStore<T>& store, const OptimConfig& oc, std::int64_t iter) {
  const T lr = static_cast<T>(poly_lr(iter, oc.total_iters, oc.base_lr));
  const T mom = static_cast<T>(oc.momentum);
  for (auto& e : store.entries()) {
    if (!e.learnable) continue;
    if (!e.velocity.defined()) e.velocity = Tensor<T>::zeros(e.value.shape());
    const T wd = e.decay ? static_cast<T>(oc.weight_decay) : T(0);
    T* p = e.value.data();
    T* v = e.velocity.data();
    const T* g = e.value.has_grad() ? e.value.grad() : nullptr;
    for (std::int64_t i = 0; i < e.value.numel(); ++i) {
      const T gi = g ? g[i] : T(0);
      v[i] = mom * v[i] + gi + wd * p[i];
      p[i] -= lr * v[i];
    }
  }
}

struct AugmentConfig {
  double scale_lo = 0.75, scale_hi = 2.0;
  double flip_prob = 0.5;
  double jitter = 10.0;  // additive, per channel, on the 0-255 scale
  std::int64_t crop = 64;
};

namespace detail {

inline Labels labels_resize_nearest(const Labels& in, std::int64_t oh, std::int64_t ow) {
  Labels out(1, oh, ow);
  for (std::int64_t r = 0; r < oh; ++r) {
    const std::int64_t sr = std::min<std::int64_t>(
        in.h - 1, static_cast<std::int64_t>((static_cast<double>(r) + 0.5) *
                                            static_cast<double>(in.h) / static_cast<double>(oh)));
    for (std::int64_t c = 0; c < ow; ++c) {
      const std::int64_t sc = std::min<std::int64_t>(
          in.w - 1,
          static_cast<std::int64_t>((static_cast<double>(c) + 0.5) * static_cast<double>(in.w) /
                                    static_cast<double>(ow)));
      out.at(0, r, c) = in.at(0, sr, sc);
    }
  }
  return out;
}

}  // namespace detail

/// Applies, in order: random scale (image bilinear, labels nearest),
/// horizontal flip, per-channel additive jitter (image only, clamped to
/// [0,255]), and a random crop, zero-padding the image and ignore-padding
/// the labels when the scaled sample is smaller than the crop. Exactly
/// seven RNG draws per call, whatever the outcome of each step.
inline Sample augment(const Sample& in, const AugmentConfig& cfg, Rng& rng) {
  check(cfg.scale_lo > 0 && cfg.scale_hi >= cfg.scale_lo, "bad scale range");
  const std::int64_t H = in.image.dim(1), W = in.image.dim(2);
  check(in.labels.h == H && in.labels.w == W, "label extent differs from image");

  const double u = rng.uniform(cfg.scale_lo, cfg.scale_hi);             // draw 1
  const bool flip = rng.bernoulli(cfg.flip_prob);                       // draw 2
  const double jr = rng.uniform(-cfg.jitter, cfg.jitter);               // draw 3
  const double jg = rng.uniform(-cfg.jitter, cfg.jitter);               // draw 4
  const double jb = rng.uniform(-cfg.jitter, cfg.jitter);               // draw 5

  std::int64_t sh = std::max<std::int64_t>(1, std::llround(static_cast<double>(H) * u));
  std::int64_t sw = std::max<std::int64_t>(1, std::llround(static_cast<double>(W) * u));
  Tensor<float> img;
  Labels lab;
  if (sh == H && sw == W) {
    img = in.image.clone();
    lab = in.labels;
  } else {
    Tensor<float> batched({1, 3, H, W});
    std::copy_n(in.image.data(), in.image.numel(), batched.data());
    Tensor<float> scaled = bilinear_resample<float>(nullptr, batched, sh, sw);
    img = Tensor<float>({3, sh, sw});
    std::copy_n(scaled.data(), scaled.numel(), img.data());
    lab = detail::labels_resize_nearest(in.labels, sh, sw);
  }

  if (flip) {
    float* p = img.data();
    for (std::int64_t ch = 0; ch < 3; ++ch)
      for (std::int64_t r = 0; r < sh; ++r) {
        float* row = p + (ch * sh + r) * sw;
        std::reverse(row, row + sw);
      }
    for (std::int64_t r = 0; r < sh; ++r) {
      auto* row = lab.v.data() + r * sw;
      std::reverse(row, row + sw);
    }
  }

  {
    const double js[3] = {jr, jg, jb};
    float* p = img.data();
    for (std::int64_t ch = 0; ch < 3; ++ch) {
      const float d = static_cast<float>(js[ch]);
      for (std::int64_t i = 0; i < sh * sw; ++i) {
        float& v = p[ch * sh * sw + i];
        v = std::clamp(v + d, 0.f, 255.f);
      }
    }
  }

  const std::int64_t ph = std::max(sh, cfg.crop), pw = std::max(sw, cfg.crop);
  const std::int64_t oy = rng.uniform_int(0, ph - cfg.crop);            // draw 6
  const std::int64_t ox = rng.uniform_int(0, pw - cfg.crop);            // draw 7

  Sample out;
  out.image = Tensor<float>::zeros({3, cfg.crop, cfg.crop});
  out.labels = Labels(1, cfg.crop, cfg.crop, kIgnoreLabel);
  for (std::int64_t r = 0; r < cfg.crop; ++r) {
    const std::int64_t srcr = r + oy;
    if (srcr >= sh) continue;
    for (std::int64_t c = 0; c < cfg.crop; ++c) {
      const std::int64_t srcc = c + ox;
      if (srcc >= sw) continue;
      for (std::int64_t ch = 0; ch < 3; ++ch)
        out.image.data()[(ch * cfg.crop + r) * cfg.crop + c] =
            img.data()[(ch * sh + srcr) * sw + srcc];
      out.labels.at(0, r, c) = lab.at(0, srcr, srcc);
    }
  }
  return out;
}

struct TrainConfig {
  OptimConfig optim;
  AugmentConfig aug;
  std::int64_t iterations = 2000;
  std::int64_t batch = 8;
  std::uint64_t seed = 1;
};

struct IterationLog {
  std::int64_t iter;
  double lr, loss_main, loss_aux, loss_total;
};

/// Deterministic training loop: shuffled sequential epochs, one optimizer
/// step per iteration, every random draw tied to the seed. A non-finite
/// loss aborts with a parameter-norm diagnostic.
template <typename T>
std::vector<IterationLog> train(const Model<T>& model, ParamStore<T>& store,
                                const std::vector<Sample>& data, const TrainConfig& tc,
                                std::ostream* csv = nullptr) {
  check(!data.empty(), "training dataset is empty");
  check(tc.batch >= 1 && tc.iterations >= 1, "batch and iteration counts must be positive");
  OptimConfig oc = tc.optim;
  oc.total_iters = tc.iterations;
  if (csv) *csv << "iter,lr,loss_main,loss_aux,loss_total\n";

  std::vector<std::size_t> order(data.size());
  std::vector<IterationLog> log;
  log.reserve(static_cast<std::size_t>(tc.iterations));
  const std::int64_t n = static_cast<std::int64_t>(data.size());

  for (std::int64_t it = 0; it < tc.iterations; ++it) {
    Tensor<T> images({tc.batch, 3, tc.aug.crop, tc.aug.crop});
    Labels labels(tc.batch, tc.aug.crop, tc.aug.crop);
    for (std::int64_t s = 0; s < tc.batch; ++s) {
      const std::int64_t global = it * tc.batch + s;
      if (global % n == 0) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng erng(derive_seed(tc.seed, "epoch", static_cast<std::uint64_t>(global / n)));
        erng.shuffle(order.begin(), order.end());
      }
      Rng arng(derive_seed(tc.seed, "augment", static_cast<std::uint64_t>(global)));
      Sample aug = augment(data[order[static_cast<std::size_t>(global % n)]], tc.aug, arng);
      const std::int64_t plane = 3 * tc.aug.crop * tc.aug.crop;
      for (std::int64_t i = 0; i < plane; ++i)
        images.data()[s * plane + i] = static_cast<T>(aug.image.data()[i]);
      std::copy(aug.labels.v.begin(), aug.labels.v.end(),
                labels.v.begin() + s * tc.aug.crop * tc.aug.crop);
    }

    Tape<T> tape;
    ModelOutput<T> out = model(&tape, images, /*training=*/true);
    Tensor<T> loss_main = softmax_cross_entropy(&tape, out.main_logits, labels, kIgnoreLabel);
    Tensor<T> loss_aux = softmax_cross_entropy(&tape, out.aux_logits, labels, kIgnoreLabel);
    Tensor<T> total =
        add(&tape, loss_main, scale(&tape, loss_aux, static_cast<T>(model.cfg.aux_weight)));

    const double lt = static_cast<double>(total.data()[0]);
    if (!std::isfinite(lt)) {
      std::string report = "non-finite total loss at iteration " + std::to_string(it) + ";";
      for (const auto& e : store.entries()) {
        if (!e.learnable) continue;
        double sq = 0;
        for (std::int64_t i = 0; i < e.value.numel(); ++i) {
          const double v = static_cast<double>(e.value.data()[i]);
          sq += v * v;
        }
        report += " " + e.name + "=" + std::to_string(std::sqrt(sq));
      }
      throw NumericError(report);
    }

    store.zero_grads();
    tape.backward(total);
    sgd_step(store, oc, it);

    const IterationLog row{it, poly_lr(it, oc.total_iters, oc.base_lr),
                           static_cast<double>(loss_main.data()[0]),
                           static_cast<double>(loss_aux.data()[0]), lt};
    log.push_back(row);
    if (csv)
      *csv << row.iter << "," << row.lr << "," << row.loss_main << "," << row.loss_aux << ","
           << row.loss_total << "\n";
  }
  return log;
}

/// Averaged softmax probability maps over the given scales; each scaled
/// size is rounded to a multiple of 8. With scales={1} this reduces to a
/// plain single-scale softmax forward.
template <typename T>
Tensor<T> infer_multiscale(const Model<T>& model, const Tensor<T>& image,
                           const std::vector<double>& scales,
                           const std::vector<bool>& zero_gates = {}) {
  check(!scales.empty(), "need at least one inference scale");
  check(image.ndim() == 4, "inference image must be [N,3,H,W]");
  const std::int64_t H = image.dim(2), W = image.dim(3);
  Tensor<T> acc;
  for (double s : scales) {
    const std::int64_t sh = std::max<std::int64_t>(
        8, std::llround(static_cast<double>(H) * s / 8.0) * 8);
    const std::int64_t sw = std::max<std::int64_t>(
        8, std::llround(static_cast<double>(W) * s / 8.0) * 8);
    Tensor<T> scaled = sh == H && sw == W ? image : bilinear_resample<T>(nullptr, image, sh, sw);
    ModelOutput<T> out = model(nullptr, scaled, /*training=*/false, zero_gates);
    Tensor<T> probs = softmax_channels(out.main_logits);
    if (sh != H || sw != W) probs = bilinear_resample<T>(nullptr, probs, H, W);
    if (!acc.defined()) {
      acc = probs;
    } else {
      T* a = acc.data();
      const T* p = probs.data();
      for (std::int64_t i = 0; i < acc.numel(); ++i) a[i] += p[i];
    }
  }
  if (scales.size() > 1) {
    const T inv = T(1) / static_cast<T>(scales.size());
    T* a = acc.data();
    for (std::int64_t i = 0; i < acc.numel(); ++i) a[i] *= inv;
  }
  return acc;
}

struct EvalResult {
  ConfusionMatrix cm{1};
  double miou = 0.0;
  double pixel_acc = 0.0;
  std::vector<double> per_class;
};

template <typename T>
EvalResult evaluate(const Model<T>& model, const std::vector<Sample>& data,
                    const std::vector<double>& scales = {1.0},
                    const std::vector<bool>& zero_gates = {}) {
  check(!data.empty(), "evaluation dataset is empty");
  ConfusionMatrix cm(model.cfg.classes);
  for (const auto& s : data) {
    const std::int64_t H = s.image.dim(1), W = s.image.dim(2);
    Tensor<T> img({1, 3, H, W});
    for (std::int64_t i = 0; i < s.image.numel(); ++i)
      img.data()[i] = static_cast<T>(s.image.data()[i]);
    Tensor<T> probs = infer_multiscale(model, img, scales, zero_gates);
    cm.add(argmax_predict(probs), s.labels, kIgnoreLabel);
  }
  EvalResult r;
  r.cm = cm;
  r.miou = cm.miou();
  r.pixel_acc = cm.pixel_acc();
  r.per_class = cm.per_class_iou();
  return r;
}

}  // namespace gff
