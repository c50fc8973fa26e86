#pragma once

#include <string>

#include "gff/ops.hpp"
#include "gff/params.hpp"

namespace gff {

/// Square-kernel convolution block with "same" padding (dilation-aware) at
/// stride 1; stride 2 halves the spatial extent, rounding up.
template <typename T>
struct Conv2dLayer {
  Tensor<T> w, b;
  ConvSpec spec;

  Conv2dLayer() = default;
  Conv2dLayer(ParamStore<T>& ps, const std::string& name, std::int64_t cin, std::int64_t cout,
              int k, int stride = 1, int dilation = 1, bool zero_init = false)
      : spec{stride, dilation * (k - 1) / 2, dilation} {
    w = ps.create(name + ".w", {cout, cin, k, k}, zero_init ? Init::zeros : Init::he_uniform,
                  true, true);
    b = ps.create(name + ".b", {cout}, Init::zeros, true, false);
  }

  Tensor<T> operator()(Tape<T>* t, const Tensor<T>& x) const { return conv2d(t, x, w, b, spec); }
};

template <typename T>
struct BatchNormLayer {
  Tensor<T> gamma, beta, running_mean, running_var;

  BatchNormLayer() = default;
  BatchNormLayer(ParamStore<T>& ps, const std::string& name, std::int64_t c) {
    gamma = ps.create(name + ".gamma", {c}, Init::ones, true, false);
    beta = ps.create(name + ".beta", {c}, Init::zeros, true, false);
    running_mean = ps.create(name + ".running_mean", {c}, Init::zeros, false, false);
    running_var = ps.create(name + ".running_var", {c}, Init::ones, false, false);
  }

  Tensor<T> operator()(Tape<T>* t, const Tensor<T>& x, bool training) const {
    return batch_norm(t, x, gamma, beta, running_mean, running_var, training);
  }
};

template <typename T>
struct ConvBnRelu {
  Conv2dLayer<T> conv;
  BatchNormLayer<T> bn;

  ConvBnRelu() = default;
  ConvBnRelu(ParamStore<T>& ps, const std::string& name, std::int64_t cin, std::int64_t cout,
             int k, int stride = 1, int dilation = 1)
      : conv(ps, name + ".conv", cin, cout, k, stride, dilation), bn(ps, name + ".bn", cout) {}

  Tensor<T> operator()(Tape<T>* t, const Tensor<T>& x, bool training) const {
    return relu(t, bn(t, conv(t, x), training));
  }
};

}  // namespace gff
