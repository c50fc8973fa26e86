#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "gff/parallel.hpp"
#include "gff/tensor.hpp"

namespace gff {

struct ConvSpec {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
};

namespace detail {

/// y[i] += a * x[i], vectorizable without reassociation.
template <typename T>
inline void axpy(T* y, const T* x, T a, std::int64_t n) {
#pragma omp simd
  for (std::int64_t i = 0; i < n; ++i) y[i] += a * x[i];
}

/// v[i] += g[i] * x[i]: positional multiply-accumulate into a row buffer.
/// Reductions go through these buffers so the horizontal sum happens once
/// per kernel tap rather than once per row.
template <typename T>
inline void mac1(T* v, const T* g, const T* x, std::int64_t n) {
#pragma omp simd
  for (std::int64_t i = 0; i < n; ++i) v[i] += g[i] * x[i];
}

/// Full 3x3 stencil row: all nine taps applied in one pass. x0..x2 are the
/// three input rows, w the nine kernel weights (row-major), s0..s2 the
/// column offsets of the taps within each row.
template <typename T>
inline void conv_row3x3(T* y, const T* x0, const T* x1, const T* x2, const T* w, std::int64_t s0,
                        std::int64_t s1, std::int64_t s2, std::int64_t n) {
  const T w00 = w[0], w01 = w[1], w02 = w[2];
  const T w10 = w[3], w11 = w[4], w12 = w[5];
  const T w20 = w[6], w21 = w[7], w22 = w[8];
#pragma omp simd
  for (std::int64_t i = 0; i < n; ++i)
    y[i] += w00 * x0[i + s0] + w01 * x0[i + s1] + w02 * x0[i + s2] + w10 * x1[i + s0] +
            w11 * x1[i + s1] + w12 * x1[i + s2] + w20 * x2[i + s0] + w21 * x2[i + s1] +
            w22 * x2[i + s2];
}

/// Nine positional multiply-accumulates (the full 3x3 weight-gradient
/// stencil) sharing one pass over g. Buffer k = v + k*vstride receives tap
/// (row k/3, column k%3).
template <typename T>
inline void mac9(T* v, std::int64_t vstride, const T* g, const T* x0, const T* x1, const T* x2,
                 std::int64_t s0, std::int64_t s1, std::int64_t s2, std::int64_t n) {
  T* v00 = v;
  T* v01 = v + vstride;
  T* v02 = v + 2 * vstride;
  T* v10 = v + 3 * vstride;
  T* v11 = v + 4 * vstride;
  T* v12 = v + 5 * vstride;
  T* v20 = v + 6 * vstride;
  T* v21 = v + 7 * vstride;
  T* v22 = v + 8 * vstride;
#pragma omp simd
  for (std::int64_t i = 0; i < n; ++i) {
    const T gi = g[i];
    v00[i] += gi * x0[i + s0];
    v01[i] += gi * x0[i + s1];
    v02[i] += gi * x0[i + s2];
    v10[i] += gi * x1[i + s0];
    v11[i] += gi * x1[i + s1];
    v12[i] += gi * x1[i + s2];
    v20[i] += gi * x2[i + s0];
    v21[i] += gi * x2[i + s1];
    v22[i] += gi * x2[i + s2];
  }
}

/// Valid output range [lo, hi] for one kernel tap: positions where
/// o*stride - padding + k*dilation lands inside [0, in_extent).
inline void tap_range(std::int64_t in_extent, std::int64_t out_extent, int stride, int padding,
                      int tap_offset, std::int64_t& lo, std::int64_t& hi) {
  const std::int64_t t = padding - tap_offset;
  lo = t <= 0 ? 0 : (t + stride - 1) / stride;
  const std::int64_t u = in_extent - 1 - tap_offset + padding;
  hi = u < 0 ? -1 : std::min(out_extent - 1, u / stride);
}

/// Copies planes [count, H, W] into a zero-padded buffer with `pad` extra
/// rows/columns on each side, one plane per work item so writes stay
/// disjoint across threads.
template <typename T>
std::vector<T> pad_planes(const T* src, std::int64_t count, std::int64_t H, std::int64_t W,
                          std::int64_t pad) {
  const std::int64_t Hp = H + 2 * pad, Wp = W + 2 * pad;
  std::vector<T> out(static_cast<std::size_t>(count * Hp * Wp));
  parallel_for(count, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t c = lo; c < hi; ++c) {
      T* dst = out.data() + c * Hp * Wp;
      std::fill_n(dst, Hp * Wp, T(0));
      const T* sp = src + c * H * W;
      for (std::int64_t r = 0; r < H; ++r)
        std::copy_n(sp + r * W, W, dst + (r + pad) * Wp + pad);
    }
  });
  return out;
}

}  // namespace detail

/// 2-D cross-correlation with zero padding (deep-learning convention, no
/// kernel flip). x: [N,Cin,H,W], w: [Cout,Cin,kh,kw], b: [Cout].
/// Output extent: floor((H + 2*padding - dilation*(kh-1) - 1)/stride) + 1.
template <typename T>
Tensor<T> conv2d(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 ConvSpec spec = {}) {
  check(x.ndim() == 4, "conv2d input must be [N,Cin,H,W], got " + shape_str(x.shape()));
  check(w.ndim() == 4, "conv2d weight must be [Cout,Cin,kh,kw], got " + shape_str(w.shape()));
  check(b.ndim() == 1 && b.dim(0) == w.dim(0), "conv2d bias must be [Cout]");
  check(w.dim(1) == x.dim(1), "conv2d channel mismatch: weight expects " +
                                  std::to_string(w.dim(1)) + " input channels, got " +
                                  std::to_string(x.dim(1)));
  check(spec.stride >= 1 && spec.padding >= 0 && spec.dilation >= 1, "bad conv spec");
  const std::int64_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  check(kh % 2 == 1 && kw % 2 == 1, "conv2d kernel extents must be odd");
  const std::int64_t Ho = (H + 2 * spec.padding - spec.dilation * (kh - 1) - 1) / spec.stride + 1;
  const std::int64_t Wo = (W + 2 * spec.padding - spec.dilation * (kw - 1) - 1) / spec.stride + 1;
  check(H + 2 * spec.padding >= spec.dilation * (kh - 1) + 1 &&
            W + 2 * spec.padding >= spec.dilation * (kw - 1) + 1,
        "conv2d kernel larger than padded input");

  Tensor<T> out({N, Cout, Ho, Wo});
  const T* xp = x.data();
  const T* wp = w.data();
  const T* bp = b.data();
  T* op = out.data();
  const int s = spec.stride, p = spec.padding, d = spec.dilation;

  // Fast paths: full-plane passes for 1x1 kernels, and full-width 9-tap row
  // passes over explicitly zero-padded planes for 3x3 kernels at stride 1
  // (the bulk of the network's work). Everything else takes the generic
  // per-tap loops with range clipping.
  const bool fast1 = (kh == 1 && kw == 1 && s == 1 && p == 0);
  const bool fast3 = (kh == 3 && kw == 3 && s == 1);

  if (fast3) {
    const std::vector<T> xpad = detail::pad_planes(xp, N * Cin, H, W, p);
    const std::int64_t Wp = W + 2 * p;
    parallel_for(N * Cout, [&](std::int64_t lo, std::int64_t hi) {
      for (std::int64_t slab = lo; slab < hi; ++slab) {
        const std::int64_t n = slab / Cout, co = slab % Cout;
        T* plane = op + slab * Ho * Wo;
        std::fill_n(plane, Ho * Wo, bp[co]);
        for (std::int64_t ci = 0; ci < Cin; ++ci) {
          const T* xpl = xpad.data() + (n * Cin + ci) * (H + 2 * p) * Wp;
          const T* wk = wp + (co * Cin + ci) * 9;
          for (std::int64_t oh = 0; oh < Ho; ++oh)
            detail::conv_row3x3(plane + oh * Wo, xpl + oh * Wp, xpl + (oh + d) * Wp,
                                xpl + (oh + 2 * d) * Wp, wk, 0, d, 2 * d, Wo);
        }
      }
    });
  } else {
    parallel_for(N * Cout, [&](std::int64_t lo, std::int64_t hi) {
      for (std::int64_t slab = lo; slab < hi; ++slab) {
        const std::int64_t n = slab / Cout, co = slab % Cout;
        T* plane = op + slab * Ho * Wo;
        std::fill_n(plane, Ho * Wo, bp[co]);
        if (fast1) {
          for (std::int64_t ci = 0; ci < Cin; ++ci)
            detail::axpy(plane, xp + (n * Cin + ci) * H * W, wp[co * Cin + ci], H * W);
          continue;
        }
        for (std::int64_t ci = 0; ci < Cin; ++ci) {
          const T* xplane = xp + (n * Cin + ci) * H * W;
          const T* wk = wp + (co * Cin + ci) * kh * kw;
          for (std::int64_t fh = 0; fh < kh; ++fh) {
            std::int64_t oh_lo, oh_hi;
            detail::tap_range(H, Ho, s, p, static_cast<int>(fh) * d, oh_lo, oh_hi);
            for (std::int64_t fw = 0; fw < kw; ++fw) {
              const T wv = wk[fh * kw + fw];
              std::int64_t ow_lo, ow_hi;
              detail::tap_range(W, Wo, s, p, static_cast<int>(fw) * d, ow_lo, ow_hi);
              if (ow_hi < ow_lo) continue;
              const std::int64_t shift = fw * d - p;
              for (std::int64_t oh = oh_lo; oh <= oh_hi; ++oh) {
                const T* xrow = xplane + (oh * s - p + fh * d) * W;
                T* orow = plane + oh * Wo;
                if (s == 1) {
                  detail::axpy(orow + ow_lo, xrow + ow_lo + shift, wv, ow_hi - ow_lo + 1);
                } else {
                  for (std::int64_t ow = ow_lo; ow <= ow_hi; ++ow)
                    orow[ow] += wv * xrow[ow * s + shift];
                }
              }
            }
          }
        }
      }
    });
  }

  if (tape) {
    tape->add_macs(static_cast<std::uint64_t>(N * Cout * Ho * Wo) *
                   static_cast<std::uint64_t>(Cin * kh * kw));
    if (x.requires_grad() || w.requires_grad() || b.requires_grad()) {
      out.set_requires_grad(true);
      auto dx = x.impl();
      auto dw = w.impl();
      auto db = b.impl();
      auto dout = out.impl();
      out.impl()->node = tape->record([dx, dw, db, dout, s, p, d, N, Cin, Cout, H, W, Ho, Wo, kh,
                                       kw, fast1, fast3]() {
        if (!dout->grad) return;
        const T* go = dout->grad.get();
        if (db->requires_grad) {
          T* gb = ensure_grad(*db);
          for (std::int64_t co = 0; co < Cout; ++co) {
            T acc = T(0);
            for (std::int64_t n = 0; n < N; ++n) {
              const T* plane = go + (n * Cout + co) * Ho * Wo;
#pragma omp simd reduction(+ : acc)
              for (std::int64_t i = 0; i < Ho * Wo; ++i) acc += plane[i];
            }
            gb[co] += acc;
          }
        }
        if (dw->requires_grad) {
          T* gw = ensure_grad(*dw);
          const T* xp = dx->values.get();
          std::vector<T> xpad;
          if (fast3) xpad = detail::pad_planes(xp, N * Cin, H, W, p);
          const std::int64_t Wp = W + 2 * p;
          parallel_for(Cout * Cin, [&](std::int64_t lo, std::int64_t hi) {
            std::vector<T> vacc(static_cast<std::size_t>(9 * std::max<std::int64_t>(Wo, 1)));
            for (std::int64_t pair = lo; pair < hi; ++pair) {
              const std::int64_t co = pair / Cin, ci = pair % Cin;
              T* gwk = gw + pair * kh * kw;
              if (fast1) {
                T* v = vacc.data();
                std::fill_n(v, Wo, T(0));
                for (std::int64_t n = 0; n < N; ++n) {
                  const T* xplane = xp + (n * Cin + ci) * H * W;
                  const T* gplane = go + (n * Cout + co) * Ho * Wo;
                  for (std::int64_t oh = 0; oh < Ho; ++oh)
                    detail::mac1(v, gplane + oh * Wo, xplane + oh * W, Wo);
                }
                T acc = T(0);
                for (std::int64_t i = 0; i < Wo; ++i) acc += v[i];
                gwk[0] += acc;
                continue;
              }
              if (fast3) {
                T* v = vacc.data();
                std::fill_n(v, 9 * Wo, T(0));
                for (std::int64_t n = 0; n < N; ++n) {
                  const T* xpl = xpad.data() + (n * Cin + ci) * (H + 2 * p) * Wp;
                  const T* gplane = go + (n * Cout + co) * Ho * Wo;
                  for (std::int64_t oh = 0; oh < Ho; ++oh)
                    detail::mac9(v, Wo, gplane + oh * Wo, xpl + oh * Wp, xpl + (oh + d) * Wp,
                                 xpl + (oh + 2 * d) * Wp, 0, d, 2 * d, Wo);
                }
                for (int k = 0; k < 9; ++k) {
                  T acc = T(0);
                  const T* vk = v + k * Wo;
                  for (std::int64_t i = 0; i < Wo; ++i) acc += vk[i];
                  gwk[k] += acc;
                }
                continue;
              }
              for (std::int64_t fh = 0; fh < kh; ++fh) {
                std::int64_t oh_lo, oh_hi;
                detail::tap_range(H, Ho, s, p, static_cast<int>(fh) * d, oh_lo, oh_hi);
                if (oh_hi < oh_lo) continue;
                for (std::int64_t fw = 0; fw < kw; ++fw) {
                  std::int64_t ow_lo, ow_hi;
                  detail::tap_range(W, Wo, s, p, static_cast<int>(fw) * d, ow_lo, ow_hi);
                  if (ow_hi < ow_lo) continue;
                  const std::int64_t shift = fw * d - p;
                  T acc = T(0);
                  if (s == 1) {
                    const std::int64_t len = ow_hi - ow_lo + 1;
                    T* v = vacc.data();
                    std::fill_n(v, len, T(0));
                    for (std::int64_t n = 0; n < N; ++n) {
                      const T* xplane = xp + (n * Cin + ci) * H * W;
                      const T* gplane = go + (n * Cout + co) * Ho * Wo;
                      for (std::int64_t oh = oh_lo; oh <= oh_hi; ++oh)
                        detail::mac1(v, gplane + oh * Wo + ow_lo,
                                     xplane + (oh - p + fh * d) * W + ow_lo + shift, len);
                    }
                    for (std::int64_t i = 0; i < len; ++i) acc += v[i];
                  } else {
                    for (std::int64_t n = 0; n < N; ++n) {
                      const T* xplane = xp + (n * Cin + ci) * H * W;
                      const T* gplane = go + (n * Cout + co) * Ho * Wo;
                      for (std::int64_t oh = oh_lo; oh <= oh_hi; ++oh) {
                        const T* xrow = xplane + (oh * s - p + fh * d) * W;
                        const T* grow = gplane + oh * Wo;
                        for (std::int64_t ow = ow_lo; ow <= ow_hi; ++ow)
                          acc += grow[ow] * xrow[ow * s + shift];
                      }
                    }
                  }
                  gwk[fh * kw + fw] += acc;
                }
              }
            }
          });
        }
        if (dx->requires_grad) {
          T* gx = ensure_grad(*dx);
          const T* wp = dw->values.get();
          if (fast3) {
            // Gather form over a zero-padded gradient plane: input position
            // j reads output rows j + p + Q - fh*d, all guaranteed in range
            // once the plane is padded by Q on each side.
            const std::int64_t Q = std::max<std::int64_t>(0, 2 * static_cast<std::int64_t>(d) - p);
            const std::vector<T> gopad = detail::pad_planes(go, N * Cout, Ho, Wo, Q);
            const std::int64_t Wq = Wo + 2 * Q;
            const std::int64_t roff = p + Q;  // row/column offset of tap 0
            parallel_for(N * Cin, [&](std::int64_t lo, std::int64_t hi) {
              for (std::int64_t slab = lo; slab < hi; ++slab) {
                const std::int64_t n = slab / Cin, ci = slab % Cin;
                T* gxplane = gx + slab * H * W;
                for (std::int64_t co = 0; co < Cout; ++co) {
                  const T* gpl = gopad.data() + (n * Cout + co) * (Ho + 2 * Q) * Wq;
                  const T* wk = wp + (co * Cin + ci) * 9;
                  for (std::int64_t j = 0; j < H; ++j)
                    detail::conv_row3x3(gxplane + j * W, gpl + (j + roff) * Wq,
                                        gpl + (j + roff - d) * Wq, gpl + (j + roff - 2 * d) * Wq,
                                        wk, roff, roff - d, roff - 2 * d, W);
                }
              }
            });
          } else {
            parallel_for(N * Cin, [&](std::int64_t lo, std::int64_t hi) {
              for (std::int64_t slab = lo; slab < hi; ++slab) {
                const std::int64_t n = slab / Cin, ci = slab % Cin;
                T* gxplane = gx + slab * H * W;
                for (std::int64_t co = 0; co < Cout; ++co) {
                  const T* gplane = go + (n * Cout + co) * Ho * Wo;
                  const T* wk = wp + (co * Cin + ci) * kh * kw;
                  if (fast1) {
                    detail::axpy(gxplane, gplane, wk[0], H * W);
                    continue;
                  }
                  for (std::int64_t fh = 0; fh < kh; ++fh) {
                    std::int64_t oh_lo, oh_hi;
                    detail::tap_range(H, Ho, s, p, static_cast<int>(fh) * d, oh_lo, oh_hi);
                    for (std::int64_t fw = 0; fw < kw; ++fw) {
                      const T wv = wk[fh * kw + fw];
                      std::int64_t ow_lo, ow_hi;
                      detail::tap_range(W, Wo, s, p, static_cast<int>(fw) * d, ow_lo, ow_hi);
                      if (ow_hi < ow_lo) continue;
                      const std::int64_t shift = fw * d - p;
                      for (std::int64_t oh = oh_lo; oh <= oh_hi; ++oh) {
                        T* gxrow = gxplane + (oh * s - p + fh * d) * W;
                        const T* grow = gplane + oh * Wo;
                        if (s == 1) {
                          detail::axpy(gxrow + ow_lo + shift, grow + ow_lo, wv, ow_hi - ow_lo + 1);
                        } else {
                          for (std::int64_t ow = ow_lo; ow <= ow_hi; ++ow)
                            gxrow[ow * s + shift] += wv * grow[ow];
                        }
                      }
                    }
                  }
                }
              }
            });
          }
        }
      });
    }
  }
  return out;
}

}  // namespace gff
