#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "gff/conv.hpp"
#include "gff/parallel.hpp"
#include "gff/tensor.hpp"

namespace gff {

namespace detail {

enum class BroadcastMode { none, b_single_channel, a_single_channel };

/// Elementwise binary ops accept equal shapes, or two 4-D maps that differ
/// only in the channel extent where one side has a single channel (a gate
/// map applied across all channels).
template <typename T>
BroadcastMode broadcast_mode(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() == b.shape()) return BroadcastMode::none;
  const bool four = a.ndim() == 4 && b.ndim() == 4;
  if (four && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3)) {
    if (b.dim(1) == 1) return BroadcastMode::b_single_channel;
    if (a.dim(1) == 1) return BroadcastMode::a_single_channel;
  }
  throw DataError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " vs " +
                  shape_str(b.shape()));
}

}  // namespace detail

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  const auto mode = detail::broadcast_mode(a, b, "add");
  const Tensor<T>& wide = mode == detail::BroadcastMode::a_single_channel ? b : a;
  Tensor<T> out(wide.shape());
  const T* ap = a.data();
  const T* bp = b.data();
  T* op = out.data();
  if (mode == detail::BroadcastMode::none) {
    for (std::int64_t i = 0; i < out.numel(); ++i) op[i] = ap[i] + bp[i];
  } else {
    const T* narrow = mode == detail::BroadcastMode::b_single_channel ? bp : ap;
    const T* full = mode == detail::BroadcastMode::b_single_channel ? ap : bp;
    const std::int64_t N = wide.dim(0), C = wide.dim(1), HW = wide.dim(2) * wide.dim(3);
    for (std::int64_t n = 0; n < N; ++n) {
      const T* nrow = narrow + n * HW;
      for (std::int64_t c = 0; c < C; ++c) {
        const T* frow = full + (n * C + c) * HW;
        T* orow = op + (n * C + c) * HW;
        for (std::int64_t i = 0; i < HW; ++i) orow[i] = frow[i] + nrow[i];
      }
    }
  }
  if (tape && (a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    auto da = a.impl();
    auto db = b.impl();
    auto dout = out.impl();
    out.impl()->node = tape->record([da, db, dout, mode]() {
      if (!dout->grad) return;
      const T* g = dout->grad.get();
      auto accumulate = [&](TensorData<T>& d) {
        T* gd = ensure_grad(d);
        if (d.size == dout->size) {
          for (std::int64_t i = 0; i < d.size; ++i) gd[i] += g[i];
        } else {
          const std::int64_t N = dout->shape[0], C = dout->shape[1],
                             HW = dout->shape[2] * dout->shape[3];
          for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t c = 0; c < C; ++c) {
              const T* grow = g + (n * C + c) * HW;
              T* gdrow = gd + n * HW;
              for (std::int64_t i = 0; i < HW; ++i) gdrow[i] += grow[i];
            }
        }
      };
      if (da->requires_grad) accumulate(*da);
      if (db->requires_grad) accumulate(*db);
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
  const auto mode = detail::broadcast_mode(a, b, "mul");
  const Tensor<T>& wide = mode == detail::BroadcastMode::a_single_channel ? b : a;
  Tensor<T> out(wide.shape());
  const T* ap = a.data();
  const T* bp = b.data();
  T* op = out.data();
  if (mode == detail::BroadcastMode::none) {
    for (std::int64_t i = 0; i < out.numel(); ++i) op[i] = ap[i] * bp[i];
  } else {
    const T* narrow = mode == detail::BroadcastMode::b_single_channel ? bp : ap;
    const T* full = mode == detail::BroadcastMode::b_single_channel ? ap : bp;
    const std::int64_t N = wide.dim(0), C = wide.dim(1), HW = wide.dim(2) * wide.dim(3);
    for (std::int64_t n = 0; n < N; ++n) {
      const T* nrow = narrow + n * HW;
      for (std::int64_t c = 0; c < C; ++c) {
        const T* frow = full + (n * C + c) * HW;
        T* orow = op + (n * C + c) * HW;
        for (std::int64_t i = 0; i < HW; ++i) orow[i] = frow[i] * nrow[i];
      }
    }
  }
  if (tape) {
    tape->add_macs(static_cast<std::uint64_t>(out.numel()));
    if (a.requires_grad() || b.requires_grad()) {
      out.set_requires_grad(true);
      auto da = a.impl();
      auto db = b.impl();
      auto dout = out.impl();
      out.impl()->node = tape->record([da, db, dout, mode]() {
        if (!dout->grad) return;
        const T* g = dout->grad.get();
        const T* av = da->values.get();
        const T* bv = db->values.get();
        // d(a*b)/da = b, d(a*b)/db = a; the single-channel side collects a
        // sum over the broadcast channel axis, in ascending channel order.
        auto accumulate = [&](TensorData<T>& d, const T* other) {
          T* gd = ensure_grad(d);
          if (d.size == dout->size) {
            for (std::int64_t i = 0; i < d.size; ++i) gd[i] += g[i] * other[i];
          } else {
            const std::int64_t N = dout->shape[0], C = dout->shape[1],
                               HW = dout->shape[2] * dout->shape[3];
            for (std::int64_t n = 0; n < N; ++n)
              for (std::int64_t c = 0; c < C; ++c) {
                const T* grow = g + (n * C + c) * HW;
                const T* orow = other + (n * C + c) * HW;
                T* gdrow = gd + n * HW;
                for (std::int64_t i = 0; i < HW; ++i) gdrow[i] += grow[i] * orow[i];
              }
          }
        };
        // When one side is single-channel, the full-shaped partner multiplies
        // against the broadcast values row by row.
        auto accumulate_full = [&](TensorData<T>& d, const T* narrow) {
          T* gd = ensure_grad(d);
          const std::int64_t N = dout->shape[0], C = dout->shape[1],
                             HW = dout->shape[2] * dout->shape[3];
          for (std::int64_t n = 0; n < N; ++n) {
            const T* nrow = narrow + n * HW;
            for (std::int64_t c = 0; c < C; ++c) {
              const T* grow = g + (n * C + c) * HW;
              T* gdrow = gd + (n * C + c) * HW;
              for (std::int64_t i = 0; i < HW; ++i) gdrow[i] += grow[i] * nrow[i];
            }
          }
        };
        switch (mode) {
          case detail::BroadcastMode::none:
            if (da->requires_grad) accumulate(*da, bv);
            if (db->requires_grad) accumulate(*db, av);
            break;
          case detail::BroadcastMode::b_single_channel:
            if (da->requires_grad) accumulate_full(*da, bv);
            if (db->requires_grad) accumulate(*db, av);
            break;
          case detail::BroadcastMode::a_single_channel:
            if (da->requires_grad) accumulate(*da, bv);
            if (db->requires_grad) accumulate_full(*db, av);
            break;
        }
      });
    }
  }
  return out;
}

template <typename T>
Tensor<T> add_scalar(Tape<T>* tape, const Tensor<T>& x, T c) {
  Tensor<T> out(x.shape());
  const T* xp = x.data();
  T* op = out.data();
  for (std::int64_t i = 0; i < x.numel(); ++i) op[i] = xp[i] + c;
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    auto dx = x.impl();
    auto dout = out.impl();
    out.impl()->node = tape->record([dx, dout]() {
      if (!dout->grad) return;
      const T* g = dout->grad.get();
      T* gx = ensure_grad(*dx);
      for (std::int64_t i = 0; i < dx->size; ++i) gx[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& x, T c) {
  Tensor<T> out(x.shape());
  const T* xp = x.data();
  T* op = out.data();
  for (std::int64_t i = 0; i < x.numel(); ++i) op[i] = c * xp[i];
  if (tape) {
    tape->add_macs(static_cast<std::uint64_t>(x.numel()));
    if (x.requires_grad()) {
      out.set_requires_grad(true);
      auto dx = x.impl();
      auto dout = out.impl();
      out.impl()->node = tape->record([dx, dout, c]() {
        if (!dout->grad) return;
        const T* g = dout->grad.get();
        T* gx = ensure_grad(*dx);
        for (std::int64_t i = 0; i < dx->size; ++i) gx[i] += c * g[i];
      });
    }
  }
  return out;
}

/// Sum over all elements, in ascending memory order, to a scalar [1].
template <typename T>
Tensor<T> sum(Tape<T>* tape, const Tensor<T>& x) {
  T acc = T(0);
  const T* xp = x.data();
  for (std::int64_t i = 0; i < x.numel(); ++i) acc += xp[i];
  Tensor<T> out = Tensor<T>::scalar(acc);
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    auto dx = x.impl();
    auto dout = out.impl();
    out.impl()->node = tape->record([dx, dout]() {
      if (!dout->grad) return;
      const T g = dout->grad[0];
      T* gx = ensure_grad(*dx);
      for (std::int64_t i = 0; i < dx->size; ++i) gx[i] += g;
    });
  }
  return out;
}

/// max(x, 0); the derivative at exactly 0 is taken as 0.
template <typename T>
Tensor<T> relu(Tape<T>* tape, const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const T* xp = x.data();
  T* op = out.data();
  for (std::int64_t i = 0; i < x.numel(); ++i) op[i] = xp[i] > T(0) ? xp[i] : T(0);
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    auto dx = x.impl();
    auto dout = out.impl();
    out.impl()->node = tape->record([dx, dout]() {
      if (!dout->grad) return;
      const T* g = dout->grad.get();
      const T* xv = dx->values.get();
      T* gx = ensure_grad(*dx);
      for (std::int64_t i = 0; i < dx->size; ++i) {
        if (xv[i] > T(0)) gx[i] += g[i];
      }
    });
  }
  return out;
}

/// Logistic function 1/(1 + exp(-x)). Saturates cleanly at 0 and 1 for
/// large |x| (exp overflow/underflow resolve to the correct limit).
template <typename T>
Tensor<T> sigmoid(Tape<T>* tape, const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const T* xp = x.data();
  T* op = out.data();
  for (std::int64_t i = 0; i < x.numel(); ++i) op[i] = T(1) / (T(1) + std::exp(-xp[i]));
  if (tape && x.requires_grad()) {
    out.set_requires_grad(true);
    auto dx = x.impl();
    auto dout = out.impl();
    out.impl()->node = tape->record([dx, dout]() {
      if (!dout->grad) return;
      const T* g = dout->grad.get();
      const T* s = dout->values.get();
      T* gx = ensure_grad(*dx);
      for (std::int64_t i = 0; i < dx->size; ++i) gx[i] += g[i] * s[i] * (T(1) - s[i]);
    });
  }
  return out;
}

/// Bilinear interpolation to a new spatial size with half-pixel-aligned
/// sample centers: src = (dst + 0.5) * in/out - 0.5, borders clamped.
/// Resampling to the identical size reproduces the input bit-exactly.
template <typename T>
Tensor<T> bilinear_resample(Tape<T>* tape, const Tensor<T>& x, std::int64_t out_h,
                            std::int64_t out_w) {
  check(x.ndim() == 4, "bilinear_resample input must be [N,C,H,W]");
  check(out_h >= 1 && out_w >= 1, "bilinear_resample target extents must be positive");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<T> out({N, C, out_h, out_w});

  auto make_axis = [](std::int64_t in, std::int64_t outn, std::vector<std::int64_t>& i0,
                      std::vector<std::int64_t>& i1, std::vector<T>& w0, std::vector<T>& w1) {
    i0.resize(static_cast<std::size_t>(outn));
    i1.resize(static_cast<std::size_t>(outn));
    w0.resize(static_cast<std::size_t>(outn));
    w1.resize(static_cast<std::size_t>(outn));
    const double scale = static_cast<double>(in) / static_cast<double>(outn);
    for (std::int64_t o = 0; o < outn; ++o) {
      const double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
      std::int64_t lo = static_cast<std::int64_t>(std::floor(src));
      double f = src - static_cast<double>(lo);
      if (lo < 0) {
        lo = 0;
        f = 0.0;
      }
      if (lo >= in - 1) {
        lo = in - 1;
        f = 0.0;
      }
      i0[static_cast<std::size_t>(o)] = lo;
      i1[static_cast<std::size_t>(o)] = std::min(lo + 1, in - 1);
      w1[static_cast<std::size_t>(o)] = static_cast<T>(f);
      w0[static_cast<std::size_t>(o)] = static_cast<T>(1.0 - f);
    }
  };
  std::vector<std::int64_t> h0, h1, v0, v1;
  std::vector<T> wh0, wh1, ww0, ww1;
  make_axis(H, out_h, h0, h1, wh0, wh1);
  make_axis(W, out_w, v0, v1, ww0, ww1);

  const T* xp = x.data();
  T* op = out.data();
  parallel_for(N * C, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t slab = lo; slab < hi; ++slab) {
      const T* xplane = xp + slab * H * W;
      T* oplane = op + slab * out_h * out_w;
      for (std::int64_t oh = 0; oh < out_h; ++oh) {
        const T* top = xplane + h0[static_cast<std::size_t>(oh)] * W;
        const T* bot = xplane + h1[static_cast<std::size_t>(oh)] * W;
        const T a0 = wh0[static_cast<std::size_t>(oh)], a1 = wh1[static_cast<std::size_t>(oh)];
        T* orow = oplane + oh * out_w;
        for (std::int64_t ow = 0; ow < out_w; ++ow) {
          const std::size_t o = static_cast<std::size_t>(ow);
          orow[ow] = a0 * (ww0[o] * top[v0[o]] + ww1[o] * top[v1[o]]) +
                     a1 * (ww0[o] * bot[v0[o]] + ww1[o] * bot[v1[o]]);
        }
      }
    }
  });

  if (tape) {
    tape->add_macs(static_cast<std::uint64_t>(out.numel()) * 4u);
    if (x.requires_grad()) {
      out.set_requires_grad(true);
      auto dx = x.impl();
      auto dout = out.impl();
      out.impl()->node =
          tape->record([dx, dout, h0, h1, v0, v1, wh0, wh1, ww0, ww1, N, C, H, W, out_h, out_w]() {
            if (!dout->grad) return;
            const T* g = dout->grad.get();
            T* gx = ensure_grad(*dx);
            parallel_for(N * C, [&](std::int64_t lo, std::int64_t hi) {
              for (std::int64_t slab = lo; slab < hi; ++slab) {
                T* gxplane = gx + slab * H * W;
                const T* gplane = g + slab * out_h * out_w;
                for (std::int64_t oh = 0; oh < out_h; ++oh) {
                  T* top = gxplane + h0[static_cast<std::size_t>(oh)] * W;
                  T* bot = gxplane + h1[static_cast<std::size_t>(oh)] * W;
                  const T a0 = wh0[static_cast<std::size_t>(oh)];
                  const T a1 = wh1[static_cast<std::size_t>(oh)];
                  const T* grow = gplane + oh * out_w;
                  for (std::int64_t ow = 0; ow < out_w; ++ow) {
                    const std::size_t o = static_cast<std::size_t>(ow);
                    const T gv = grow[ow];
                    top[v0[o]] += a0 * ww0[o] * gv;
                    top[v1[o]] += a0 * ww1[o] * gv;
                    bot[v0[o]] += a1 * ww0[o] * gv;
                    bot[v1[o]] += a1 * ww1[o] * gv;
                  }
                }
              }
            });
          });
    }
  }
  return out;
}

/// Adaptive average pooling to a [bins_h, bins_w] grid. Bin i covers rows
/// [floor(i*H/B), floor((i+1)*H/B)): a non-overlapping exact cover of the
/// input, so bins tile the map without gaps.
template <typename T>
Tensor<T> avg_pool_adaptive(Tape<T>* tape, const Tensor<T>& x, std::int64_t bins_h,
                            std::int64_t bins_w) {
  check(x.ndim() == 4, "avg_pool_adaptive input must be [N,C,H,W]");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  check(bins_h >= 1 && bins_h <= H && bins_w >= 1 && bins_w <= W,
        "avg_pool_adaptive bins must lie in [1, input extent]: bins (" + std::to_string(bins_h) +
            "," + std::to_string(bins_w) + ") vs input (" + std::to_string(H) + "," +
            std::to_string(W) + ")");
  Tensor<T> out({N, C, bins_h, bins_w});
  const T* xp = x.data();
  T* op = out.data();
  auto edge = [](std::int64_t i, std::int64_t in, std::int64_t bins) { return i * in / bins; };
  for (std::int64_t slab = 0; slab < N * C; ++slab) {
    const T* xplane = xp + slab * H * W;
    T* oplane = op + slab * bins_h * bins_w;
    for (std::int64_t bh = 0; bh < bins_h; ++bh) {
      const std::int64_t r0 = edge(bh, H, bins_h), r1 = edge(bh + 1, H, bins_h);
      for (std::int64_t bw = 0; bw < bins_w; ++bw) {
        const std::int64_t c0 = edge(bw, W, bins_w), c1 = edge(bw + 1, W, bins_w);
        T acc = T(0);
        for (std::int64_t r = r0; r < r1; ++r) {
          const T* row = xplane + r * W;
          for (std::int64_t c = c0; c < c1; ++c) acc += row[c];
        }
        oplane[bh * bins_w + bw] = acc / static_cast<T>((r1 - r0) * (c1 - c0));
      }
    }
  }
  if (tape) {
    tape->add_macs(static_cast<std::uint64_t>(x.numel()));
    if (x.requires_grad()) {
      out.set_requires_grad(true);
      auto dx = x.impl();
      auto dout = out.impl();
      out.impl()->node = tape->record([dx, dout, N, C, H, W, bins_h, bins_w, edge]() {
        if (!dout->grad) return;
        const T* g = dout->grad.get();
        T* gx = ensure_grad(*dx);
        for (std::int64_t slab = 0; slab < N * C; ++slab) {
          T* gxplane = gx + slab * H * W;
          const T* gplane = g + slab * bins_h * bins_w;
          for (std::int64_t bh = 0; bh < bins_h; ++bh) {
            const std::int64_t r0 = edge(bh, H, bins_h), r1 = edge(bh + 1, H, bins_h);
            for (std::int64_t bw = 0; bw < bins_w; ++bw) {
              const std::int64_t c0 = edge(bw, W, bins_w), c1 = edge(bw + 1, W, bins_w);
              const T gv = gplane[bh * bins_w + bw] / static_cast<T>((r1 - r0) * (c1 - c0));
              for (std::int64_t r = r0; r < r1; ++r) {
                T* row = gxplane + r * W;
                for (std::int64_t c = c0; c < c1; ++c) row[c] += gv;
              }
            }
          }
        }
      });
    }
  }
  return out;
}

/// Batch normalization over [N,H,W] per channel. Training mode normalizes
/// with the biased batch variance and refreshes running statistics with the
/// unbiased estimate: running <- (1-momentum)*running + momentum*batch.
/// Eval mode normalizes with the running statistics as constants.
template <typename T>
Tensor<T> batch_norm(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, Tensor<T> running_mean, Tensor<T> running_var,
                     bool training, T momentum = T(0.1), T eps = T(1e-5)) {
  check(x.ndim() == 4, "batch_norm input must be [N,C,H,W]");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  check(gamma.ndim() == 1 && gamma.dim(0) == C && beta.ndim() == 1 && beta.dim(0) == C,
        "batch_norm scale/shift must be [C]");
  check(running_mean.ndim() == 1 && running_mean.dim(0) == C && running_var.ndim() == 1 &&
            running_var.dim(0) == C,
        "batch_norm running stats must be [C]");
  const std::int64_t M = N * H * W;
  if (training) {
    check(M >= 2, "batch_norm training mode needs at least 2 values per channel, got " +
                      std::to_string(M));
  }

  Tensor<T> out(x.shape());
  // Normalized activations are kept for the backward rule.
  auto xhat = std::make_shared<std::vector<T>>(static_cast<std::size_t>(x.numel()));
  auto invstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(C));
  const T* xp = x.data();
  const T* gp = gamma.data();
  const T* bp = beta.data();
  T* op = out.data();
  T* xh = xhat->data();
  const std::int64_t HW = H * W;

  for (std::int64_t c = 0; c < C; ++c) {
    T mean, var;
    if (training) {
      T acc = T(0);
      for (std::int64_t n = 0; n < N; ++n) {
        const T* plane = xp + (n * C + c) * HW;
        for (std::int64_t i = 0; i < HW; ++i) acc += plane[i];
      }
      mean = acc / static_cast<T>(M);
      T vacc = T(0);
      for (std::int64_t n = 0; n < N; ++n) {
        const T* plane = xp + (n * C + c) * HW;
        for (std::int64_t i = 0; i < HW; ++i) {
          const T d = plane[i] - mean;
          vacc += d * d;
        }
      }
      var = vacc / static_cast<T>(M);
      const T unbiased = vacc / static_cast<T>(M - 1);
      running_mean.data()[c] = (T(1) - momentum) * running_mean.data()[c] + momentum * mean;
      running_var.data()[c] = (T(1) - momentum) * running_var.data()[c] + momentum * unbiased;
    } else {
      mean = running_mean.data()[c];
      var = running_var.data()[c];
    }
    const T is = T(1) / std::sqrt(var + eps);
    (*invstd)[static_cast<std::size_t>(c)] = is;
    const T gc = gp[c], bc = bp[c];
    for (std::int64_t n = 0; n < N; ++n) {
      const T* plane = xp + (n * C + c) * HW;
      T* hplane = xh + (n * C + c) * HW;
      T* oplane = op + (n * C + c) * HW;
      for (std::int64_t i = 0; i < HW; ++i) {
        const T h = (plane[i] - mean) * is;
        hplane[i] = h;
        oplane[i] = gc * h + bc;
      }
    }
  }

  if (tape) {
    tape->add_macs(static_cast<std::uint64_t>(x.numel()) * 2u);
    if (x.requires_grad() || gamma.requires_grad() || beta.requires_grad()) {
      out.set_requires_grad(true);
      auto dx = x.impl();
      auto dg = gamma.impl();
      auto db = beta.impl();
      auto dout = out.impl();
      out.impl()->node = tape->record([dx, dg, db, dout, xhat, invstd, training, N, C, HW, M]() {
        if (!dout->grad) return;
        const T* g = dout->grad.get();
        const T* xh = xhat->data();
        const T* gv = dg->values.get();
        for (std::int64_t c = 0; c < C; ++c) {
          T gsum = T(0), ghsum = T(0);
          for (std::int64_t n = 0; n < N; ++n) {
            const T* grow = g + (n * C + c) * HW;
            const T* hrow = xh + (n * C + c) * HW;
            for (std::int64_t i = 0; i < HW; ++i) {
              gsum += grow[i];
              ghsum += grow[i] * hrow[i];
            }
          }
          if (dg->requires_grad) ensure_grad(*dg)[c] += ghsum;
          if (db->requires_grad) ensure_grad(*db)[c] += gsum;
          if (dx->requires_grad) {
            T* gx = ensure_grad(*dx);
            const T is = (*invstd)[static_cast<std::size_t>(c)];
            if (training) {
              // Batch statistics depend on x, so their derivatives feed back:
              // dL/dx = gamma*invstd/M * (M*g - sum(g) - xhat*sum(g*xhat)).
              const T k = gv[c] * is / static_cast<T>(M);
              for (std::int64_t n = 0; n < N; ++n) {
                const T* grow = g + (n * C + c) * HW;
                const T* hrow = xh + (n * C + c) * HW;
                T* gxrow = gx + (n * C + c) * HW;
                for (std::int64_t i = 0; i < HW; ++i)
                  gxrow[i] += k * (static_cast<T>(M) * grow[i] - gsum - hrow[i] * ghsum);
              }
            } else {
              const T k = gv[c] * is;
              for (std::int64_t n = 0; n < N; ++n) {
                const T* grow = g + (n * C + c) * HW;
                T* gxrow = gx + (n * C + c) * HW;
                for (std::int64_t i = 0; i < HW; ++i) gxrow[i] += k * grow[i];
              }
            }
          }
        }
      });
    }
  }
  return out;
}

/// Concatenation of 4-D maps along the channel axis; all inputs must agree
/// on batch and spatial extents.
template <typename T>
Tensor<T> concat_channels(Tape<T>* tape, const std::vector<Tensor<T>>& xs) {
  check(!xs.empty(), "concat_channels needs at least one input");
  const std::int64_t N = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
  std::int64_t Ctotal = 0;
  for (const auto& x : xs) {
    check(x.ndim() == 4 && x.dim(0) == N && x.dim(2) == H && x.dim(3) == W,
          "concat_channels inputs must share [N,*,H,W]; got " + shape_str(x.shape()) + " vs " +
              shape_str(xs[0].shape()));
    Ctotal += x.dim(1);
  }
  Tensor<T> out({N, Ctotal, H, W});
  T* op = out.data();
  const std::int64_t HW = H * W;
  for (std::int64_t n = 0; n < N; ++n) {
    T* dst = op + n * Ctotal * HW;
    for (const auto& x : xs) {
      const std::int64_t chunk = x.dim(1) * HW;
      std::memcpy(dst, x.data() + n * chunk, static_cast<std::size_t>(chunk) * sizeof(T));
      dst += chunk;
    }
  }
  bool any_grad = false;
  for (const auto& x : xs) any_grad = any_grad || x.requires_grad();
  if (tape && any_grad) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorData<T>>> parts;
    parts.reserve(xs.size());
    for (const auto& x : xs) parts.push_back(x.impl());
    auto dout = out.impl();
    out.impl()->node = tape->record([parts, dout, N, Ctotal, HW]() {
      if (!dout->grad) return;
      const T* g = dout->grad.get();
      for (std::int64_t n = 0; n < N; ++n) {
        const T* src = g + n * Ctotal * HW;
        for (const auto& part : parts) {
          const std::int64_t chunk = part->shape[1] * HW;
          if (part->requires_grad) {
            T* gp = ensure_grad(*part) + n * chunk;
            for (std::int64_t i = 0; i < chunk; ++i) gp[i] += src[i];
          }
          src += chunk;
        }
      }
    });
  }
  return out;
}

/// Channel-axis softmax of [N,K,H,W] logits, no autodiff; used when
/// averaging predictions across scales at inference time.
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& x) {
  check(x.ndim() == 4, "softmax_channels input must be [N,K,H,W]");
  const std::int64_t N = x.dim(0), K = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<T> out(x.shape());
  const T* xp = x.data();
  T* op = out.data();
  const std::int64_t HW = H * W;
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t i = 0; i < HW; ++i) {
      const T* px = xp + n * K * HW + i;
      T* po = op + n * K * HW + i;
      T m = px[0];
      for (std::int64_t k = 1; k < K; ++k) m = std::max(m, px[k * HW]);
      T z = T(0);
      for (std::int64_t k = 0; k < K; ++k) {
        const T e = std::exp(px[k * HW] - m);
        po[k * HW] = e;
        z += e;
      }
      for (std::int64_t k = 0; k < K; ++k) po[k * HW] /= z;
    }
  }
  return out;
}

/// Mean softmax cross-entropy over labeled pixels. logits: [N,K,H,W],
/// labels: [N,H,W] with values in [0,K) or ignore_label. Pixels carrying
/// the ignore label contribute neither loss nor gradient; a batch with no
/// labeled pixel at all is a data error.
template <typename T>
Tensor<T> softmax_cross_entropy(Tape<T>* tape, const Tensor<T>& logits, const Labels& labels,
                                std::int32_t ignore_label = 255) {
  check(logits.ndim() == 4, "cross-entropy logits must be [N,K,H,W]");
  const std::int64_t N = logits.dim(0), K = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  check(labels.n == N && labels.h == H && labels.w == W,
        "cross-entropy label map must be [N,H,W] matching the logits");

  auto probs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(logits.numel()));
  const T* xp = logits.data();
  T* pp = probs->data();
  const std::int64_t HW = H * W;
  T loss = T(0);
  std::int64_t count = 0;
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t i = 0; i < HW; ++i) {
      const std::int32_t y = labels.v[static_cast<std::size_t>(n * HW + i)];
      if (y == ignore_label) continue;
      check(y >= 0 && y < K, "label " + std::to_string(y) + " outside [0," + std::to_string(K) +
                                 ") and not the ignore label");
      const T* px = xp + n * K * HW + i;
      T* pr = pp + n * K * HW + i;
      T m = px[0];
      for (std::int64_t k = 1; k < K; ++k) m = std::max(m, px[k * HW]);
      T z = T(0);
      for (std::int64_t k = 0; k < K; ++k) {
        const T e = std::exp(px[k * HW] - m);
        pr[k * HW] = e;
        z += e;
      }
      for (std::int64_t k = 0; k < K; ++k) pr[k * HW] /= z;
      loss += m + std::log(z) - px[y * HW];
      ++count;
    }
  }
  check(count > 0, "cross-entropy batch has no labeled pixels (all carry the ignore label)");
  loss /= static_cast<T>(count);

  Tensor<T> out = Tensor<T>::scalar(loss);
  if (tape && logits.requires_grad()) {
    out.set_requires_grad(true);
    auto dx = logits.impl();
    auto dout = out.impl();
    auto lab = std::make_shared<Labels>(labels);
    out.impl()->node = tape->record([dx, dout, probs, lab, ignore_label, N, K, HW, count]() {
      if (!dout->grad) return;
      const T g = dout->grad[0] / static_cast<T>(count);
      const T* pp = probs->data();
      T* gx = ensure_grad(*dx);
      for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t i = 0; i < HW; ++i) {
          const std::int32_t y = lab->v[static_cast<std::size_t>(n * HW + i)];
          if (y == ignore_label) continue;
          const T* pr = pp + n * K * HW + i;
          T* gr = gx + n * K * HW + i;
          for (std::int64_t k = 0; k < K; ++k)
            gr[k * HW] += g * (pr[k * HW] - (k == y ? T(1) : T(0)));
        }
      }
    });
  }
  return out;
}

}  // namespace gff
