#pragma once

#include <string>
#include <vector>

#include "gff/context.hpp"
#include "gff/fusion.hpp"
#include "gff/layers.hpp"

namespace gff {

struct ModelConfig {
  std::int64_t width = 32;    // common channel width after reduction
  std::int64_t classes = 5;   // K
  double aux_weight = 0.4;    // auxiliary loss weight
  Fusion fusion = Fusion::gff;
  bool dfp = true;
  bool dfp_literal_indexing = false;
  bool dfp_include_context = true;
  std::vector<std::int64_t> ppm_bins{1, 2, 3, 6};
  std::vector<std::int64_t> backbone_widths{16, 32, 64, 128};

  void validate() const {
    check(width >= 1, "common width must be positive");
    check(classes >= 2, "need at least two classes");
    check(aux_weight >= 0.0, "auxiliary weight must be non-negative");
    check(backbone_widths.size() == 4, "backbone expects exactly 4 stage widths");
    for (auto w : backbone_widths) check(w >= 1, "backbone widths must be positive");
  }
};

/// Stem + 4 stages of two 3x3 conv blocks; cumulative strides {2,4,8,8}
/// relative to the input (the stem halves, stages 2 and 3 halve again,
/// stage 4 holds resolution with dilation 2).
template <typename T>
struct Backbone {
  struct Stage {
    ConvBnRelu<T> a, b;
  };
  ConvBnRelu<T> stem;
  std::vector<Stage> stages;

  Backbone() = default;
  Backbone(ParamStore<T>& ps, const std::string& name, const std::vector<std::int64_t>& widths) {
    stem = ConvBnRelu<T>(ps, name + ".stem", 3, widths[0], 3, 2);
    std::int64_t cin = widths[0];
    for (int s = 0; s < 4; ++s) {
      const int stride = (s == 1 || s == 2) ? 2 : 1;
      const int dil = s == 3 ? 2 : 1;
      const std::string sn = name + ".stage" + std::to_string(s + 1);
      stages.push_back({ConvBnRelu<T>(ps, sn + "a", cin, widths[s], 3, stride, dil),
                        ConvBnRelu<T>(ps, sn + "b", widths[s], widths[s], 3, 1, dil)});
      cin = widths[s];
    }
  }

  std::vector<Tensor<T>> operator()(Tape<T>* t, const Tensor<T>& x, bool training) const {
    check(x.ndim() == 4 && x.dim(1) == 3, "backbone input must be [N,3,H,W]");
    check(x.dim(2) % 8 == 0 && x.dim(3) % 8 == 0,
          "input extents must be divisible by 8, got " + shape_str(x.shape()));
    Tensor<T> h = stem(t, x, training);
    std::vector<Tensor<T>> pyramid;
    pyramid.reserve(stages.size());
    for (const auto& st : stages) {
      h = st.b(t, st.a(t, h, training), training);
      pyramid.push_back(h);
    }
    return pyramid;
  }
};

template <typename T>
struct ModelOutput {
  Tensor<T> main_logits;          // [N,K,H,W], input resolution
  Tensor<T> aux_logits;           // [N,K,H,W], input resolution
  std::vector<Tensor<T>> gates;   // native-resolution gate maps; empty when ungated
  std::vector<Tensor<T>> fused;   // pre-refinement fused pyramid, for inspection
};

/// Full assembly: backbone → per-level 1x1 reductions to the common width →
/// pooled context y_0 on the top level → fusion → per-level two-conv
/// refinement → dense stages (optional) → collect → 1x1 classifier at
/// level-1 resolution → bilinear upsample to the input size. The auxiliary
/// classifier reads the stage-3 backbone feature directly. Without the
/// dense stages, the head reads the refined levels plus y_0 so the pooled
/// context contributes in every configuration.
template <typename T>
struct Model {
  ModelConfig cfg;
  Backbone<T> backbone;
  std::vector<ConvBnRelu<T>> reduce;
  Ppm<T> ppm;
  std::vector<GateHead<T>> gate_heads;
  std::vector<ConvBnRelu<T>> refine_a, refine_b;
  Dfp<T> dfp;
  Conv2dLayer<T> classifier, aux_head;

  Model(ParamStore<T>& ps, ModelConfig c) : cfg(std::move(c)) {
    cfg.validate();
    backbone = Backbone<T>(ps, "backbone", cfg.backbone_widths);
    const std::int64_t C = cfg.width;
    for (int l = 0; l < 4; ++l)
      reduce.emplace_back(ps, "reduce.l" + std::to_string(l + 1), cfg.backbone_widths[l], C, 1);
    ppm = Ppm<T>(ps, "ppm", C, cfg.ppm_bins);
    if (fusion_gated(cfg.fusion))
      for (int l = 0; l < 4; ++l)
        gate_heads.emplace_back(ps, "gate.l" + std::to_string(l + 1), C);
    const std::int64_t fused_c = cfg.fusion == Fusion::concat ? 4 * C : C;
    for (int l = 0; l < 4; ++l) {
      const std::string rn = "refine.l" + std::to_string(l + 1);
      refine_a.emplace_back(ps, rn + "a", fused_c, C, 3);
      refine_b.emplace_back(ps, rn + "b", C, C, 3);
    }
    if (cfg.dfp)
      dfp = Dfp<T>(ps, "dfp", C, 4, cfg.dfp_literal_indexing, cfg.dfp_include_context);
    const std::int64_t head_c = head_width();
    classifier = Conv2dLayer<T>(ps, "classifier", head_c, cfg.classes, 1);
    aux_head = Conv2dLayer<T>(ps, "aux", cfg.backbone_widths[2], cfg.classes, 1);
  }

  // Dense outputs (4·C) when the dense stages run; refined levels + y_0
  // (5·C) otherwise.
  std::int64_t head_width() const { return (cfg.dfp ? 4 : 5) * cfg.width; }

  ModelOutput<T> operator()(Tape<T>* t, const Tensor<T>& image, bool training,
                            const std::vector<bool>& zero_gates = {}) const {
    // Pixels arrive in [0,255]; map to [-1,1].
    Tensor<T> x = add_scalar(t, scale(t, image, T(1) / T(127.5)), T(-1));
    auto pyramid = backbone(t, x, training);
    std::vector<Tensor<T>> red(4);
    for (std::size_t l = 0; l < 4; ++l) red[l] = reduce[l](t, pyramid[l], training);
    Tensor<T> y0 = ppm(t, red[3], training);
    FusedResult<T> fr = fuse(t, cfg.fusion, red, gate_heads, zero_gates);
    std::vector<Tensor<T>> refined(4);
    for (std::size_t l = 0; l < 4; ++l)
      refined[l] = refine_b[l](t, refine_a[l](t, fr.levels[l], training), training);
    Tensor<T> head_in;
    if (cfg.dfp) {
      head_in = collect_to_finest(t, dfp(t, y0, refined, training));
    } else {
      head_in = collect_to_finest(t, {refined[0], refined[1], refined[2], refined[3], y0});
    }
    Tensor<T> main = bilinear_resample(t, classifier(t, head_in), image.dim(2), image.dim(3));
    Tensor<T> aux = bilinear_resample(t, aux_head(t, pyramid[2]), image.dim(2), image.dim(3));
    return {main, aux, fr.gates, fr.levels};
  }
};

struct CostReport {
  std::int64_t params = 0;
  std::uint64_t macs = 0;
};

/// Closed-form parameter and multiply-accumulate counts, mirroring the
/// forward wiring by pure shape arithmetic (conv: N·Cout·H'·W'·Cin·k²;
/// resample: 4/output, skipped when extents already match; elementwise
/// product and scaling: 1/output; normalization: 2/element; pooling:
/// 1/input element). Kept in lockstep with the ops' own accounting; a test
/// compares this against a live graph traversal.
inline CostReport count_params_flops(const ModelConfig& cfg, std::int64_t n, std::int64_t in_h,
                                     std::int64_t in_w) {
  cfg.validate();
  check(in_h % 8 == 0 && in_w % 8 == 0, "input extents must be divisible by 8");
  CostReport r;
  struct Ext {
    std::int64_t h, w;
  };
  auto conv = [&r, n](std::int64_t cin, std::int64_t cout, int k, Ext& e, int stride = 1) {
    e = {(e.h - 1) / stride + 1, (e.w - 1) / stride + 1};  // same padding, odd k
    r.params += cout * cin * k * k + cout;
    r.macs += static_cast<std::uint64_t>(n * cout * e.h * e.w) *
              static_cast<std::uint64_t>(cin * k * k);
  };
  auto bn = [&r, n](std::int64_t c, Ext e) {
    r.params += 2 * c;
    r.macs += static_cast<std::uint64_t>(2 * n * c * e.h * e.w);
  };
  auto resample = [&r, n](std::int64_t c, Ext from, Ext to) {
    if (from.h == to.h && from.w == to.w) return;
    r.macs += static_cast<std::uint64_t>(4 * n * c * to.h * to.w);
  };
  auto elementwise = [&r, n](std::int64_t c, Ext e) {  // one MAC per element
    r.macs += static_cast<std::uint64_t>(n * c * e.h * e.w);
  };

  const std::int64_t C = cfg.width, K = cfg.classes;
  const Ext input{in_h, in_w};
  // Normalization of the input: one scale pass.
  elementwise(3, input);
  // Backbone.
  Ext e = input;
  conv(3, cfg.backbone_widths[0], 3, e, 2);
  bn(cfg.backbone_widths[0], e);
  std::int64_t cin = cfg.backbone_widths[0];
  Ext levels[4];
  for (int s = 0; s < 4; ++s) {
    const int stride = (s == 1 || s == 2) ? 2 : 1;
    conv(cin, cfg.backbone_widths[s], 3, e, stride);
    bn(cfg.backbone_widths[s], e);
    conv(cfg.backbone_widths[s], cfg.backbone_widths[s], 3, e);
    bn(cfg.backbone_widths[s], e);
    cin = cfg.backbone_widths[s];
    levels[s] = e;
  }
  // Reductions.
  for (int l = 0; l < 4; ++l) {
    Ext le = levels[l];
    conv(cfg.backbone_widths[l], C, 1, le);
    bn(C, le);
  }
  // Pooled context on the top level.
  const Ext top = levels[3];
  for (auto b : cfg.ppm_bins) {
    check(b <= top.h && b <= top.w, "pooling bin exceeds top-level extent");
    r.macs += static_cast<std::uint64_t>(n * C * top.h * top.w);  // pooling pass
    Ext be{b, b};
    conv(C, C, 1, be);
    resample(C, be, top);
  }
  {
    Ext me = top;
    conv(static_cast<std::int64_t>(1 + cfg.ppm_bins.size()) * C, C, 3, me);
    bn(C, me);
  }
  // Fusion.
  const std::size_t L = 4;
  if (fusion_gated(cfg.fusion)) {
    for (std::size_t l = 0; l < L; ++l) {
      Ext ge = levels[l];
      conv(C, 1, 1, ge);
    }
  }
  switch (cfg.fusion) {
    case Fusion::addition:
      for (std::size_t l = 0; l < L; ++l)
        for (std::size_t i = 0; i < L; ++i) resample(C, levels[i], levels[l]);
      break;
    case Fusion::concat:
      for (std::size_t l = 0; l < L; ++l)
        for (std::size_t i = 0; i < L; ++i) resample(C, levels[i], levels[l]);
      break;
    case Fusion::fpn:
      for (std::size_t l = 0; l < L - 1; ++l) resample(C, levels[l + 1], levels[l]);
      break;
    case Fusion::gated_fpn:
      for (std::size_t l = 0; l < L - 1; ++l) {
        elementwise(C, levels[l]);               // (1+G_l)·X_l
        resample(1, levels[l + 1], levels[l]);   // gate up
        resample(C, levels[l + 1], levels[l]);   // feature up
        elementwise(C, levels[l]);               // G_{l+1}·up
        elementwise(1, levels[l]);               // 1−G_l
        elementwise(C, levels[l]);               // damped product
      }
      break;
    case Fusion::gff:
      for (std::size_t l = 0; l < L; ++l) {
        elementwise(C, levels[l]);  // (1+G_l)·X_l
        for (std::size_t i = 0; i < L; ++i) {
          if (i == l) continue;
          resample(1, levels[i], levels[l]);
          resample(C, levels[i], levels[l]);
          elementwise(C, levels[l]);  // G_i·X_i at the receiving level
        }
        elementwise(1, levels[l]);  // 1−G_l
        elementwise(C, levels[l]);  // damped received sum
      }
      break;
  }
  // Refinement.
  const std::int64_t fused_c = cfg.fusion == Fusion::concat ? 4 * C : C;
  for (std::size_t l = 0; l < L; ++l) {
    Ext re = levels[l];
    conv(fused_c, C, 3, re);
    bn(C, re);
    conv(C, C, 3, re);
    bn(C, re);
  }
  // Dense stages and head input.
  std::int64_t head_c;
  if (cfg.dfp) {
    for (std::size_t i = 1; i <= L; ++i) {
      if (cfg.dfp_include_context) resample(C, top, levels[i - 1]);
      const std::size_t upto = cfg.dfp_literal_indexing ? i - 1 : i;
      for (std::size_t j = 0; j < upto; ++j) resample(C, levels[j], levels[i - 1]);
      const std::int64_t feeds =
          (static_cast<std::int64_t>(upto) + (cfg.dfp_include_context ? 1 : 0)) * C;
      Ext de = levels[i - 1];
      conv(feeds, C, 3, de);
      bn(C, de);
    }
    for (std::size_t i = 0; i < L; ++i) resample(C, levels[i], levels[0]);
    head_c = 4 * C;
  } else {
    for (std::size_t i = 0; i < L; ++i) resample(C, levels[i], levels[0]);
    resample(C, top, levels[0]);
    head_c = 5 * C;
  }
  // Heads.
  Ext he = levels[0];
  conv(head_c, K, 1, he);
  resample(K, he, input);
  Ext ae = levels[2];
  conv(cfg.backbone_widths[2], K, 1, ae);
  resample(K, ae, input);
  return r;
}

}  // namespace gff
