#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "gff/tensor.hpp"

namespace gff {

/// K×K pixel confusion counts, rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::int64_t k) : k_(k), m_(static_cast<std::size_t>(k * k), 0) {
    check(k >= 1, "confusion matrix needs at least one class");
  }

  std::int64_t classes() const { return k_; }
  std::int64_t at(std::int64_t gt, std::int64_t pred) const {
    return m_[static_cast<std::size_t>(gt * k_ + pred)];
  }

  void add(const Labels& pred, const Labels& gt, std::int32_t ignore_label = 255) {
    check(pred.n == gt.n && pred.h == gt.h && pred.w == gt.w,
          "prediction and ground-truth maps must be shape-equal");
    for (std::size_t i = 0; i < gt.v.size(); ++i) {
      const std::int32_t g = gt.v[i];
      if (g == ignore_label) continue;
      check(g >= 0 && g < k_, "ground-truth label " + std::to_string(g) + " outside [0," +
                                  std::to_string(k_) + ")");
      const std::int32_t p = pred.v[i];
      check(p >= 0 && p < k_,
            "prediction " + std::to_string(p) + " outside [0," + std::to_string(k_) + ")");
      ++m_[static_cast<std::size_t>(g * k_ + p)];
    }
  }

  void merge(const ConfusionMatrix& other) {
    check(other.k_ == k_, "cannot merge confusion matrices of different class counts");
    for (std::size_t i = 0; i < m_.size(); ++i) m_[i] += other.m_[i];
  }

  std::int64_t total() const {
    std::int64_t t = 0;
    for (auto v : m_) t += v;
    return t;
  }

  /// IoU_k = TP/(TP+FP+FN); classes whose union is zero get NaN and are
  /// excluded from the mean.
  std::vector<double> per_class_iou() const {
    require_scored();
    std::vector<double> iou(static_cast<std::size_t>(k_));
    for (std::int64_t c = 0; c < k_; ++c) {
      const std::int64_t tp = at(c, c);
      std::int64_t fp = 0, fn = 0;
      for (std::int64_t o = 0; o < k_; ++o) {
        if (o == c) continue;
        fp += at(o, c);
        fn += at(c, o);
      }
      const std::int64_t uni = tp + fp + fn;
      iou[static_cast<std::size_t>(c)] =
          uni == 0 ? std::numeric_limits<double>::quiet_NaN()
                   : static_cast<double>(tp) / static_cast<double>(uni);
    }
    return iou;
  }

  double miou() const {
    const auto iou = per_class_iou();
    double s = 0.0;
    std::int64_t n = 0;
    for (double v : iou) {
      if (std::isnan(v)) continue;
      s += v;
      ++n;
    }
    check(n > 0, "no class has a nonzero union; mean IoU undefined");
    return s / static_cast<double>(n);
  }

  double pixel_acc() const {
    require_scored();
    std::int64_t diag = 0;
    for (std::int64_t c = 0; c < k_; ++c) diag += at(c, c);
    return static_cast<double>(diag) / static_cast<double>(total());
  }

 private:
  void require_scored() const {
    check(total() > 0, "confusion matrix is empty (no scored pixels)");
  }

  std::int64_t k_;
  std::vector<std::int64_t> m_;
};

/// Per-pixel argmax over the channel axis; ties resolve to the lowest
/// class index.
template <typename T>
Labels argmax_predict(const Tensor<T>& logits) {
  check(logits.ndim() == 4 && logits.dim(1) >= 1, "argmax expects [N,K,H,W] logits");
  const std::int64_t N = logits.dim(0), K = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  Labels out(N, H, W);
  const T* p = logits.data();
  const std::int64_t HW = H * W;
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t i = 0; i < HW; ++i) {
      const T* px = p + n * K * HW + i;
      std::int32_t best = 0;
      T bv = px[0];
      for (std::int64_t k = 1; k < K; ++k) {
        if (px[k * HW] > bv) {
          bv = px[k * HW];
          best = static_cast<std::int32_t>(k);
        }
      }
      out.v[static_cast<std::size_t>(n * HW + i)] = best;
    }
  }
  return out;
}

}  // namespace gff
