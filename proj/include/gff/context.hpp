#pragma once

#include <string>
#include <vector>

#include "gff/fusion.hpp"
#include "gff/layers.hpp"

namespace gff {

/// Pyramid pooling: each bin size pools the map to bin×bin, projects with a
/// 1x1 conv, and upsamples back; branches are concatenated with the input
/// and merged by a 3x3 conv + norm + relu. Spatial extent is preserved.
template <typename T>
struct Ppm {
  std::vector<std::int64_t> bins;
  std::vector<Conv2dLayer<T>> branch;  // one 1x1 conv per bin, C -> C
  ConvBnRelu<T> merge;                 // (1 + #bins)·C -> C

  Ppm() = default;
  Ppm(ParamStore<T>& ps, const std::string& name, std::int64_t c, std::vector<std::int64_t> b)
      : bins(std::move(b)) {
    check(!bins.empty(), "pooling needs at least one bin size");
    for (std::size_t i = 0; i < bins.size(); ++i) {
      check(bins[i] >= 1, "bin sizes must be positive");
      check(i == 0 || bins[i] > bins[i - 1], "bin sizes must be strictly increasing");
      branch.emplace_back(ps, name + ".bin" + std::to_string(bins[i]), c, c, 1);
    }
    merge = ConvBnRelu<T>(ps, name + ".merge",
                          static_cast<std::int64_t>(1 + bins.size()) * c, c, 3);
  }

  Tensor<T> operator()(Tape<T>* t, const Tensor<T>& x, bool training) const {
    const std::int64_t h = x.dim(2), w = x.dim(3);
    check(bins.back() <= h && bins.back() <= w,
          "largest pooling bin " + std::to_string(bins.back()) + " exceeds input extent " +
              std::to_string(h) + "x" + std::to_string(w));
    std::vector<Tensor<T>> parts{x};
    for (std::size_t i = 0; i < bins.size(); ++i) {
      Tensor<T> pooled = avg_pool_adaptive(t, x, bins[i], bins[i]);
      parts.push_back(align_to(t, branch[i](t, pooled), h, w));
    }
    return merge(t, concat_channels(t, parts), training);
  }
};

/// Densely connected post-fusion stages. Stage i consumes the pooled
/// context y_0 and fused levels X̃_1..X̃_i (inclusive indexing, so the
/// coarsest level is consumed too); `literal_indexing` switches to the
/// X̃_1..X̃_{i-1} form. `include_context` drops y_0 from every concat when
/// false, which removes exactly 9·C² weights per stage.
template <typename T>
struct Dfp {
  bool literal_indexing = false;
  bool include_context = true;
  std::vector<ConvBnRelu<T>> stages;  // H_i: 3x3 conv + norm + relu, output width C

  Dfp() = default;
  Dfp(ParamStore<T>& ps, const std::string& name, std::int64_t c, std::size_t levels,
      bool literal, bool with_context)
      : literal_indexing(literal), include_context(with_context) {
    check(with_context || !literal,
          "literal indexing without the context input would leave stage 1 with no inputs");
    for (std::size_t i = 1; i <= levels; ++i) {
      const std::int64_t feeds = static_cast<std::int64_t>(literal ? i - 1 : i) +
                                 (with_context ? 1 : 0);
      stages.emplace_back(ps, name + ".h" + std::to_string(i), feeds * c, c, 3);
    }
  }

  /// y_i = H_i(concat(inputs)), every input aligned to level i's extent.
  std::vector<Tensor<T>> operator()(Tape<T>* t, const Tensor<T>& y0,
                                    const std::vector<Tensor<T>>& fused, bool training) const {
    check(fused.size() == stages.size(), "fused level count does not match stage count");
    std::vector<Tensor<T>> ys(fused.size());
    for (std::size_t i = 1; i <= fused.size(); ++i) {
      const std::int64_t h = fused[i - 1].dim(2), w = fused[i - 1].dim(3);
      std::vector<Tensor<T>> parts;
      if (include_context) parts.push_back(align_to(t, y0, h, w));
      const std::size_t upto = literal_indexing ? i - 1 : i;
      for (std::size_t j = 0; j < upto; ++j) parts.push_back(align_to(t, fused[j], h, w));
      ys[i - 1] = stages[i - 1](t, concat_channels(t, parts), training);
    }
    return ys;
  }
};

/// Aligns every map to the finest (first) entry's resolution and
/// concatenates along channels; this is what the prediction head reads.
template <typename T>
Tensor<T> collect_to_finest(Tape<T>* t, const std::vector<Tensor<T>>& maps) {
  check(!maps.empty(), "nothing to collect");
  const std::int64_t h = maps[0].dim(2), w = maps[0].dim(3);
  std::vector<Tensor<T>> parts;
  parts.reserve(maps.size());
  for (const auto& m : maps) parts.push_back(align_to(t, m, h, w));
  return concat_channels(t, parts);
}

}  // namespace gff
