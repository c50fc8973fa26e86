#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gff/rng.hpp"
#include "gff/tensor.hpp"

namespace gff {

struct GradCheckReport {
  double max_rel = 0.0;
  std::size_t tensor = 0;     // index into the checked input list
  std::int64_t index = -1;    // flat element index of the worst coordinate
  double analytic = 0.0;
  double numeric = 0.0;
  std::int64_t checked = 0;   // coordinates evaluated
};

/// Central-difference gradient verification, 64-bit only: perturbing in
/// float leaves too few significant digits for a 1e-4 comparison.
///
/// `forward` must rebuild the graph from the current contents of `inputs`
/// and return a scalar; it is called with a tape for the analytic pass and
/// with nullptr for the O(2·numel) finite-difference evaluations. When
/// `max_coords` is positive, at most that many coordinates per tensor are
/// probed, chosen by `seed` (deterministic).
///
/// Relative error per coordinate: |a−n| / max(1e-8, |a|+|n|).
template <typename Fwd>
GradCheckReport check_gradients(std::vector<Tensor<double>> inputs, Fwd&& forward,
                                double eps = 1e-3, std::int64_t max_coords = -1,
                                std::uint64_t seed = 0) {
  static_assert(std::is_invocable_r_v<Tensor<double>, Fwd, Tape<double>*>,
                "forward must map Tape<double>* to a scalar Tensor<double>");
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  Tape<double> tape;
  Tensor<double> out = forward(&tape);
  check(out.defined() && out.numel() == 1, "gradcheck forward must return a scalar");
  tape.backward(out);

  std::vector<std::vector<double>> analytic(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const double* g = inputs[i].grad();  // zeros when no path reached this input
    analytic[i].assign(g, g + inputs[i].numel());
  }

  GradCheckReport rep;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor<double>& t = inputs[ti];
    std::vector<std::int64_t> coords;
    if (max_coords > 0 && t.numel() > max_coords) {
      coords.resize(static_cast<std::size_t>(t.numel()));
      for (std::int64_t i = 0; i < t.numel(); ++i) coords[static_cast<std::size_t>(i)] = i;
      Rng rng(derive_seed(seed, "gradcheck", static_cast<std::uint64_t>(ti)));
      rng.shuffle(coords.begin(), coords.end());
      coords.resize(static_cast<std::size_t>(max_coords));
      std::sort(coords.begin(), coords.end());
    } else {
      coords.resize(static_cast<std::size_t>(t.numel()));
      for (std::int64_t i = 0; i < t.numel(); ++i) coords[static_cast<std::size_t>(i)] = i;
    }
    for (std::int64_t idx : coords) {
      double* v = t.data() + idx;
      const double saved = *v;
      *v = saved + eps;
      const double up = forward(nullptr).data()[0];
      *v = saved - eps;
      const double down = forward(nullptr).data()[0];
      *v = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[ti][static_cast<std::size_t>(idx)];
      const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      ++rep.checked;
      if (rel > rep.max_rel) {
        rep.max_rel = rel;
        rep.tensor = ti;
        rep.index = idx;
        rep.analytic = a;
        rep.numeric = numeric;
      }
    }
  }
  return rep;
}

}  // namespace gff
