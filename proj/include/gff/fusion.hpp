#pragma once

#include <string>
#include <vector>

#include "gff/layers.hpp"

namespace gff {

enum class Fusion { concat, addition, fpn, gated_fpn, gff };

inline Fusion fusion_from_string(const std::string& s) {
  if (s == "concat") return Fusion::concat;
  if (s == "addition") return Fusion::addition;
  if (s == "fpn") return Fusion::fpn;
  if (s == "gated_fpn") return Fusion::gated_fpn;
  if (s == "gff") return Fusion::gff;
  throw UsageError("unknown fusion strategy '" + s +
                   "' (expected concat|addition|fpn|gated_fpn|gff)");
}

inline std::string to_string(Fusion f) {
  switch (f) {
    case Fusion::concat: return "concat";
    case Fusion::addition: return "addition";
    case Fusion::fpn: return "fpn";
    case Fusion::gated_fpn: return "gated_fpn";
    case Fusion::gff: return "gff";
  }
  return "?";
}

inline bool fusion_gated(Fusion f) { return f == Fusion::gated_fpn || f == Fusion::gff; }

/// A feature pyramid is a list of [N,C,H,W] maps ordered from the finest
/// level (index 0, level 1) to the coarsest; extents never increase with
/// the level index.
template <typename T>
void check_pyramid(const std::vector<Tensor<T>>& p) {
  check(!p.empty(), "empty feature pyramid");
  for (std::size_t l = 0; l < p.size(); ++l) {
    check(p[l].ndim() == 4, "pyramid level " + std::to_string(l + 1) + " must be [N,C,H,W]");
    if (l == 0) continue;
    check(p[l].dim(0) == p[0].dim(0) && p[l].dim(1) == p[0].dim(1),
          "pyramid levels must share batch and channel extents");
    check(p[l].dim(2) <= p[l - 1].dim(2) && p[l].dim(3) <= p[l - 1].dim(3),
          "pyramid resolution must not increase with depth");
  }
}

/// Bilinear alignment to a target extent; a no-op (the same handle, no
/// cost) when the extents already match.
template <typename T>
Tensor<T> align_to(Tape<T>* t, const Tensor<T>& x, std::int64_t h, std::int64_t w) {
  if (x.dim(2) == h && x.dim(3) == w) return x;
  return bilinear_resample(t, x, h, w);
}

/// Per-level gate: 1x1 convolution to a single channel, then sigmoid.
/// Weights and bias start at zero, so untrained gates sit at the neutral
/// value 0.5 everywhere.
template <typename T>
struct GateHead {
  Conv2dLayer<T> conv;

  GateHead() = default;
  GateHead(ParamStore<T>& ps, const std::string& name, std::int64_t c)
      : conv(ps, name, c, 1, 1, 1, 1, /*zero_init=*/true) {}

  Tensor<T> operator()(Tape<T>* t, const Tensor<T>& x) const { return sigmoid(t, conv(t, x)); }
};

/// X̃_l = (1+G_l)·X_l + (1−G_l)·Σ_{i≠l} G_i·X_i, with the sum taken in
/// ascending level order and every cross-level gate/feature pair resampled
/// to the receiving level before the product. Gates broadcast over
/// channels. Callers pass precomputed gate maps so analyses can substitute
/// forced values.
template <typename T>
std::vector<Tensor<T>> gff_combine(Tape<T>* t, const std::vector<Tensor<T>>& p,
                                   const std::vector<Tensor<T>>& gates) {
  check_pyramid(p);
  check(gates.size() == p.size(), "gff needs one gate per level");
  const std::size_t L = p.size();
  std::vector<Tensor<T>> fused(L);
  for (std::size_t l = 0; l < L; ++l) {
    const std::int64_t h = p[l].dim(2), w = p[l].dim(3);
    Tensor<T> own = mul(t, add_scalar(t, gates[l], T(1)), p[l]);
    Tensor<T> received;
    for (std::size_t i = 0; i < L; ++i) {
      if (i == l) continue;
      Tensor<T> term = mul(t, align_to(t, gates[i], h, w), align_to(t, p[i], h, w));
      received = received.defined() ? add(t, received, term) : term;
    }
    Tensor<T> damp = add_scalar(t, scale(t, gates[l], T(-1)), T(1));  // 1 - G_l
    fused[l] = L == 1 ? own : add(t, own, mul(t, damp, received));
  }
  return fused;
}

/// Gating restricted to the single top-down edge of an FPN:
/// X̃_L = X_L; X̃_l = (1+G_l)·X_l + (1−G_l)·G_{l+1}·up(X̃_{l+1}).
template <typename T>
std::vector<Tensor<T>> gated_fpn_combine(Tape<T>* t, const std::vector<Tensor<T>>& p,
                                         const std::vector<Tensor<T>>& gates) {
  check_pyramid(p);
  check(gates.size() == p.size(), "gated fpn needs one gate per level");
  const std::size_t L = p.size();
  std::vector<Tensor<T>> fused(L);
  fused[L - 1] = p[L - 1];
  for (std::size_t l = L - 1; l-- > 0;) {
    const std::int64_t h = p[l].dim(2), w = p[l].dim(3);
    Tensor<T> own = mul(t, add_scalar(t, gates[l], T(1)), p[l]);
    Tensor<T> top = mul(t, align_to(t, gates[l + 1], h, w), align_to(t, fused[l + 1], h, w));
    Tensor<T> damp = add_scalar(t, scale(t, gates[l], T(-1)), T(1));
    fused[l] = add(t, own, mul(t, damp, top));
  }
  return fused;
}

template <typename T>
std::vector<Tensor<T>> fpn_combine(Tape<T>* t, const std::vector<Tensor<T>>& p) {
  check_pyramid(p);
  const std::size_t L = p.size();
  std::vector<Tensor<T>> fused(L);
  fused[L - 1] = p[L - 1];
  for (std::size_t l = L - 1; l-- > 0;)
    fused[l] = add(t, align_to(t, fused[l + 1], p[l].dim(2), p[l].dim(3)), p[l]);
  return fused;
}

template <typename T>
std::vector<Tensor<T>> addition_combine(Tape<T>* t, const std::vector<Tensor<T>>& p) {
  check_pyramid(p);
  std::vector<Tensor<T>> fused(p.size());
  for (std::size_t l = 0; l < p.size(); ++l) {
    Tensor<T> acc = align_to(t, p[0], p[l].dim(2), p[l].dim(3));
    for (std::size_t i = 1; i < p.size(); ++i)
      acc = add(t, acc, align_to(t, p[i], p[l].dim(2), p[l].dim(3)));
    fused[l] = acc;
  }
  return fused;
}

/// Concatenates every level (aligned) at each receiving level; the first
/// refinement conv afterwards maps L·C back to the common width.
template <typename T>
std::vector<Tensor<T>> concat_combine(Tape<T>* t, const std::vector<Tensor<T>>& p) {
  check_pyramid(p);
  std::vector<Tensor<T>> fused(p.size());
  for (std::size_t l = 0; l < p.size(); ++l) {
    std::vector<Tensor<T>> parts;
    parts.reserve(p.size());
    for (std::size_t i = 0; i < p.size(); ++i)
      parts.push_back(align_to(t, p[i], p[l].dim(2), p[l].dim(3)));
    fused[l] = concat_channels(t, parts);
  }
  return fused;
}

template <typename T>
struct FusedResult {
  std::vector<Tensor<T>> levels;  // pre-refinement fused maps
  std::vector<Tensor<T>> gates;   // native-resolution gate maps; empty when ungated
};

/// Computes gates for the gated strategies (a `zero_gates[i]` entry forces
/// level i's gate map to constant 0 after the sigmoid — the ablation knob)
/// and dispatches to the chosen combination rule.
template <typename T>
FusedResult<T> fuse(Tape<T>* t, Fusion kind, const std::vector<Tensor<T>>& p,
                    const std::vector<GateHead<T>>& gate_heads,
                    const std::vector<bool>& zero_gates = {}) {
  check_pyramid(p);
  FusedResult<T> r;
  if (fusion_gated(kind)) {
    check(gate_heads.size() == p.size(), "one gate head per pyramid level required");
    check(zero_gates.empty() || zero_gates.size() == p.size(),
          "gate override mask must cover every level");
    r.gates.reserve(p.size());
    for (std::size_t l = 0; l < p.size(); ++l) {
      if (!zero_gates.empty() && zero_gates[l]) {
        r.gates.push_back(Tensor<T>::zeros({p[l].dim(0), 1, p[l].dim(2), p[l].dim(3)}));
      } else {
        r.gates.push_back(gate_heads[l](t, p[l]));
      }
    }
  }
  switch (kind) {
    case Fusion::concat: r.levels = concat_combine(t, p); break;
    case Fusion::addition: r.levels = addition_combine(t, p); break;
    case Fusion::fpn: r.levels = fpn_combine(t, p); break;
    case Fusion::gated_fpn: r.levels = gated_fpn_combine(t, p, r.gates); break;
    case Fusion::gff: r.levels = gff_combine(t, p, r.gates); break;
  }
  return r;
}

}  // namespace gff
