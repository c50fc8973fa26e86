// Acceptance harness: runs every acceptance criterion end to end and prints
// one [PASS]/[FAIL] line per criterion.  Exits nonzero if any criterion
// fails.  The desk-scale trainings in criteria 6 and 7 dominate the runtime
// (roughly an hour single-threaded); progress goes to stderr so the
// criterion lines on stdout stay clean.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gff/commands.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using gff::Labels;
using gff::Tape;
using gff::Tensor;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int prec = 6) {
  std::ostringstream ss;
  ss << std::setprecision(prec) << v;
  return ss.str();
}

// ---------------------------------------------------------------------------
// criterion 1: gradient checks
// ---------------------------------------------------------------------------

// Reduce a non-scalar output to a scalar with a fixed random projection so
// check_gradients can seed a single backward pass.
template <typename T>
Tensor<T> project(Tape<T>* t, const Tensor<T>& y, const Tensor<T>& proj) {
  return gff::sum(t, gff::mul(t, y, proj));
}

struct OpCheck {
  std::string name;
  double max_rel = 0.0;
};

// Runs check_gradients over every differentiable op with small shapes.
// Returns the per-op reports; throws only on setup errors.
std::vector<OpCheck> per_op_gradchecks() {
  std::vector<OpCheck> reports;
  gff::Rng rng(2026);
  auto rand_t = [&](std::vector<std::int64_t> shape, double lo = -1.0, double hi = 1.0) {
    return testutil::random_tensor<double>(shape, rng, lo, hi);
  };
  auto run = [&](const std::string& name, std::vector<Tensor<double>> inputs,
                 std::function<Tensor<double>(Tape<double>*)> fwd) {
    const auto rep = gff::check_gradients(inputs, fwd, 1e-3, -1, 7);
    reports.push_back({name, rep.max_rel});
  };

  // conv2d: 1x1, 3x3 padded, and a strided/dilated 3x3.
  {
    Tensor<double> x = rand_t({2, 3, 6, 7});
    Tensor<double> w = rand_t({4, 3, 1, 1});
    Tensor<double> b = rand_t({4});
    Tensor<double> p = rand_t({2, 4, 6, 7});
    run("conv2d_1x1", {x, w, b}, [=](Tape<double>* t) {
      return project(t, gff::conv2d(t, x, w, b, gff::ConvSpec{1, 0, 1}), p);
    });
  }
  {
    Tensor<double> x = rand_t({2, 2, 5, 6});
    Tensor<double> w = rand_t({3, 2, 3, 3});
    Tensor<double> b = rand_t({3});
    Tensor<double> p = rand_t({2, 3, 5, 6});
    run("conv2d_3x3_pad1", {x, w, b}, [=](Tape<double>* t) {
      return project(t, gff::conv2d(t, x, w, b, gff::ConvSpec{1, 1, 1}), p);
    });
  }
  {
    // 9x8 input, 3x3 kernel, stride 2, pad 2, dilation 2: the effective
    // kernel spans 5 pixels, so the output is 5x4.
    Tensor<double> x = rand_t({1, 2, 9, 8});
    Tensor<double> w = rand_t({2, 2, 3, 3});
    Tensor<double> b = rand_t({2});
    Tensor<double> p = rand_t({1, 2, 5, 4});
    run("conv2d_3x3_s2_d2", {x, w, b}, [=](Tape<double>* t) {
      return project(t, gff::conv2d(t, x, w, b, gff::ConvSpec{2, 2, 2}), p);
    });
  }

  // bilinear up and down.
  {
    Tensor<double> x = rand_t({2, 2, 4, 5});
    Tensor<double> p = rand_t({2, 2, 9, 7});
    run("bilinear_up", {x}, [=](Tape<double>* t) {
      return project(t, gff::bilinear_resample(t, x, 9, 7), p);
    });
  }
  {
    Tensor<double> x = rand_t({1, 3, 8, 8});
    Tensor<double> p = rand_t({1, 3, 3, 5});
    run("bilinear_down", {x}, [=](Tape<double>* t) {
      return project(t, gff::bilinear_resample(t, x, 3, 5), p);
    });
  }

  // adaptive average pooling, including the global bin.
  {
    Tensor<double> x = rand_t({2, 2, 6, 7});
    Tensor<double> p = rand_t({2, 2, 2, 3});
    run("avg_pool_adaptive", {x}, [=](Tape<double>* t) {
      return project(t, gff::avg_pool_adaptive(t, x, 2, 3), p);
    });
  }
  {
    Tensor<double> x = rand_t({2, 3, 5, 4});
    Tensor<double> p = rand_t({2, 3, 1, 1});
    run("avg_pool_global", {x}, [=](Tape<double>* t) {
      return project(t, gff::avg_pool_adaptive(t, x, 1, 1), p);
    });
  }

  // batch norm in both modes (running stats kept out of `inputs`).
  {
    Tensor<double> x = rand_t({3, 2, 4, 4});
    Tensor<double> g = rand_t({2}, 0.5, 1.5);
    Tensor<double> b = rand_t({2});
    Tensor<double> p = rand_t({3, 2, 4, 4});
    Tensor<double> rm({2});
    Tensor<double> rv = Tensor<double>::full({2}, 1.0);
    run("batch_norm_train", {x, g, b}, [=](Tape<double>* t) {
      Tensor<double> m = rm.clone(), v = rv.clone();
      return project(t, gff::batch_norm(t, x, g, b, m, v, true), p);
    });
    run("batch_norm_eval", {x, g, b}, [=](Tape<double>* t) {
      Tensor<double> m = rm.clone(), v = rv.clone();
      return project(t, gff::batch_norm(t, x, g, b, m, v, false), p);
    });
  }

  // pointwise ops.  relu inputs are nudged away from the kink so the
  // central difference stays on one side.
  {
    Tensor<double> x = rand_t({2, 3, 4, 4});
    for (std::int64_t i = 0; i < x.numel(); ++i)
      if (std::abs(x.data()[i]) < 0.05) x.data()[i] += 0.1;
    Tensor<double> p = rand_t({2, 3, 4, 4});
    run("relu", {x}, [=](Tape<double>* t) { return project(t, gff::relu(t, x), p); });
  }
  {
    Tensor<double> x = rand_t({2, 2, 3, 3}, -3.0, 3.0);
    Tensor<double> p = rand_t({2, 2, 3, 3});
    run("sigmoid", {x}, [=](Tape<double>* t) { return project(t, gff::sigmoid(t, x), p); });
  }
  {
    Tensor<double> a = rand_t({2, 3, 4, 4});
    Tensor<double> b = rand_t({2, 3, 4, 4});
    Tensor<double> c = rand_t({2, 1, 4, 4});
    Tensor<double> p = rand_t({2, 3, 4, 4});
    run("add", {a, b}, [=](Tape<double>* t) { return project(t, gff::add(t, a, b), p); });
    run("add_broadcast", {a, c}, [=](Tape<double>* t) { return project(t, gff::add(t, a, c), p); });
    run("mul", {a, b}, [=](Tape<double>* t) { return project(t, gff::mul(t, a, b), p); });
    run("mul_broadcast", {a, c}, [=](Tape<double>* t) { return project(t, gff::mul(t, a, c), p); });
    run("add_scalar_scale", {a}, [=](Tape<double>* t) {
      return project(t, gff::scale(t, gff::add_scalar(t, a, 0.7), -1.3), p);
    });
    run("sum", {a}, [=](Tape<double>* t) { return gff::sum(t, a); });
  }
  {
    Tensor<double> a = rand_t({1, 2, 3, 4});
    Tensor<double> b = rand_t({1, 1, 3, 4});
    Tensor<double> c = rand_t({1, 3, 3, 4});
    Tensor<double> p = rand_t({1, 6, 3, 4});
    run("concat", {a, b, c}, [=](Tape<double>* t) {
      return project(t, gff::concat_channels(t, {a, b, c}), p);
    });
  }

  // cross entropy with ignored pixels.
  {
    Tensor<double> logits = rand_t({2, 3, 4, 4}, -2.0, 2.0);
    Labels lab(2, 4, 4);
    gff::Rng lrng(5);
    for (auto& v : lab.v) v = static_cast<std::int32_t>(lrng.uniform_int(0, 2));
    lab.at(0, 0, 0) = gff::kIgnoreLabel;
    lab.at(1, 3, 3) = gff::kIgnoreLabel;
    run("softmax_cross_entropy", {logits}, [=](Tape<double>* t) {
      return gff::softmax_cross_entropy(t, logits, lab, gff::kIgnoreLabel);
    });
  }

  // composite modules: gated fusion (both rule sets), PPM, DFP.
  for (const gff::Fusion f : {gff::Fusion::gff, gff::Fusion::gated_fpn}) {
    const std::int64_t C = 2;
    gff::ParamStore<double> store(11);
    std::vector<gff::GateHead<double>> heads;
    for (int l = 0; l < 3; ++l)
      heads.emplace_back(store, "gate" + std::to_string(l), C);
    for (auto& e : store.entries())
      for (std::int64_t i = 0; i < e.value.numel(); ++i)
        e.value.data()[i] = rng.uniform(-0.8, 0.8);
    std::vector<Tensor<double>> pyr = {rand_t({1, C, 8, 8}), rand_t({1, C, 4, 4}),
                                       rand_t({1, C, 2, 2})};
    std::vector<Tensor<double>> projs = {rand_t({1, C, 8, 8}), rand_t({1, C, 4, 4}),
                                         rand_t({1, C, 2, 2})};
    std::vector<Tensor<double>> inputs = pyr;
    for (const auto& e : store.entries()) inputs.push_back(e.value);
    run(f == gff::Fusion::gff ? "fusion_gff" : "fusion_gated_fpn", inputs,
        [=, &store](Tape<double>* t) {
          auto fused = gff::fuse(t, f, pyr, heads);
          Tensor<double> total = project(t, fused.levels[0], projs[0]);
          for (std::size_t l = 1; l < fused.levels.size(); ++l)
            total = gff::add(t, total, project(t, fused.levels[l], projs[l]));
          return total;
        });
  }
  {
    const std::int64_t C = 2;
    gff::ParamStore<double> store(13);
    gff::Ppm<double> ppm(store, "ppm", C, {1, 2, 3});
    for (auto& e : store.entries())
      if (e.learnable)
        for (std::int64_t i = 0; i < e.value.numel(); ++i) {
          e.value.data()[i] = rng.uniform(-0.5, 0.5);
          if (std::abs(e.value.data()[i]) < 0.05) e.value.data()[i] += rng.uniform(0.05, 0.2);
        }
    Tensor<double> x = rand_t({1, C, 6, 6});
    Tensor<double> p = rand_t({1, C, 6, 6});
    std::vector<Tensor<double>> inputs{x};
    for (const auto& e : store.entries())
      if (e.learnable) inputs.push_back(e.value);
    run("ppm", inputs, [=, &ppm](Tape<double>* t) {
      return project(t, ppm(t, x, true), p);
    });
  }
  {
    const std::int64_t C = 2;
    gff::ParamStore<double> store(17);
    gff::Dfp<double> dfp(store, "dfp", C, 3, false, true);
    for (auto& e : store.entries())
      if (e.learnable)
        for (std::int64_t i = 0; i < e.value.numel(); ++i) {
          e.value.data()[i] = rng.uniform(-0.5, 0.5);
          if (std::abs(e.value.data()[i]) < 0.05) e.value.data()[i] += rng.uniform(0.05, 0.2);
        }
    std::vector<Tensor<double>> pyr = {rand_t({1, C, 8, 8}), rand_t({1, C, 4, 4}),
                                       rand_t({1, C, 4, 4})};
    Tensor<double> ctx = rand_t({1, C, 4, 4});
    std::vector<Tensor<double>> projs = {rand_t({1, C, 8, 8}), rand_t({1, C, 4, 4}),
                                         rand_t({1, C, 4, 4})};
    std::vector<Tensor<double>> inputs = pyr;
    inputs.push_back(ctx);
    for (const auto& e : store.entries())
      if (e.learnable) inputs.push_back(e.value);
    run("dfp", inputs, [=, &dfp](Tape<double>* t) {
      auto stages = dfp(t, ctx, pyr, true);
      Tensor<double> total = project(t, stages[0], projs[0]);
      for (std::size_t l = 1; l < stages.size(); ++l)
        total = gff::add(t, total, project(t, stages[l], projs[l]));
      return total;
    });
  }
  return reports;
}

std::pair<bool, std::string> criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto reports = per_op_gradchecks();
  double worst = 0.0;
  std::string worst_name = "-";
  for (const auto& r : reports)
    if (r.max_rel > worst) {
      worst = r.max_rel;
      worst_name = r.name;
    }

  gff::RunConfig cfg;
  std::ostringstream silent;
  const gff::GradCheckReport e2e = gff::cmd_gradcheck(cfg, silent, 4);
  const double elapsed = seconds_since(t0);

  const bool ok = worst < 1e-4 && e2e.max_rel < 1e-4 && elapsed < 60.0;
  std::ostringstream ss;
  ss << reports.size() << " op checks (worst rel " << fmt(worst, 3) << " in " << worst_name
     << "), end-to-end rel " << fmt(e2e.max_rel, 3) << " over " << e2e.checked
     << " coords, all < 1e-4; elapsed " << fmt(elapsed, 3) << " s < 60 s";
  return {ok, ss.str()};
}

// ---------------------------------------------------------------------------
// criterion 2: gated fusion identities
// ---------------------------------------------------------------------------

std::pair<bool, std::string> criterion2() {
  gff::Rng rng(33);
  const std::int64_t C = 3;
  const std::vector<std::int64_t> hs = {16, 8, 4, 4};
  // Strictly positive inputs so the zero-gate identity is bit-exact even in
  // the presence of signed zeros.
  std::vector<Tensor<float>> pyr;
  for (std::int64_t h : hs) pyr.push_back(testutil::random_tensor<float>({2, C, h, h}, rng, 0.1, 1.0));

  bool zero_ok = true;
  for (const gff::Fusion f : {gff::Fusion::gff, gff::Fusion::gated_fpn}) {
    gff::ParamStore<float> store(3);
    std::vector<gff::GateHead<float>> heads;
    for (int l = 0; l < 4; ++l) heads.emplace_back(store, "g" + std::to_string(l), C);
    for (auto& e : store.entries())
      for (std::int64_t i = 0; i < e.value.numel(); ++i)
        e.value.data()[i] = static_cast<float>(rng.uniform(-0.7, 0.7));
    Tape<float> tape;
    const auto fused = gff::fuse(&tape, f, pyr, heads, {true, true, true, true});
    for (std::size_t l = 0; l < pyr.size(); ++l)
      zero_ok = zero_ok && testutil::same_bytes(fused.levels[l], pyr[l]);
  }

  bool ones_ok = true;
  {
    Tape<float> tape;
    std::vector<Tensor<float>> gates;
    for (std::size_t l = 0; l < pyr.size(); ++l)
      gates.push_back(Tensor<float>::full({2, 1, hs[l], hs[l]}, 1.0f));
    const auto fused = gff::gff_combine(&tape, pyr, gates);
    for (std::size_t l = 0; l < pyr.size(); ++l) {
      const Tensor<float> doubled = gff::scale<float>(&tape, pyr[l], 2.0);
      ones_ok = ones_ok && testutil::same_bytes(fused[l], doubled);
    }
  }

  // Two-level scalar case: X = (1, 2), G = (0.5, 0.25).
  double s0 = 0.0, s1 = 0.0;
  {
    Tape<double> tape;
    std::vector<Tensor<double>> xs = {Tensor<double>::full({1, 1, 1, 1}, 1.0),
                                      Tensor<double>::full({1, 1, 1, 1}, 2.0)};
    std::vector<Tensor<double>> gs = {Tensor<double>::full({1, 1, 1, 1}, 0.5),
                                      Tensor<double>::full({1, 1, 1, 1}, 0.25)};
    const auto fused = gff::gff_combine(&tape, xs, gs);
    s0 = fused[0].data()[0];
    s1 = fused[1].data()[0];
  }
  const bool scalar_ok = std::abs(s0 - 1.75) < 1e-12 && std::abs(s1 - 2.875) < 1e-12;

  std::ostringstream ss;
  ss << "zero-gate identity bit-exact: " << (zero_ok ? "yes" : "NO")
     << "; unit-gate doubling bit-exact: " << (ones_ok ? "yes" : "NO") << "; scalar case ("
     << fmt(s0, 15) << ", " << fmt(s1, 15) << ") vs (1.75, 2.875)";
  return {zero_ok && ones_ok && scalar_ok, ss.str()};
}

// ---------------------------------------------------------------------------
// criterion 3: randomized oracle comparisons
// ---------------------------------------------------------------------------

std::pair<bool, std::string> criterion3() {
  gff::Rng rng(404);
  int cases = 0;
  double worst = 0.0;
  auto note = [&](double rel) {
    worst = std::max(worst, rel);
    ++cases;
  };

  for (int i = 0; i < 40; ++i) {
    const std::int64_t n = rng.uniform_int(1, 2), cin = rng.uniform_int(1, 4);
    const std::int64_t cout = rng.uniform_int(1, 4);
    const std::int64_t k = 2 * rng.uniform_int(0, 2) + 1;  // 1, 3, 5
    const int s = static_cast<int>(rng.uniform_int(1, 3));
    const int p = static_cast<int>(rng.uniform_int(0, 3));
    const int d = static_cast<int>(rng.uniform_int(1, 2));
    const std::int64_t eff = d * (k - 1) + 1;
    const std::int64_t h = eff + rng.uniform_int(0, 7), w = eff + rng.uniform_int(0, 7);
    if (h + 2 * p < eff || w + 2 * p < eff) continue;
    Tensor<double> x = testutil::random_tensor<double>({n, cin, h, w}, rng);
    Tensor<double> wt = testutil::random_tensor<double>({cout, cin, k, k}, rng);
    Tensor<double> b = testutil::random_tensor<double>({cout}, rng);
    Tape<double> tape;
    const Tensor<double> got = gff::conv2d(&tape, x, wt, b, gff::ConvSpec{s, p, d});
    const Tensor<double> want = oracle::conv2d(x, wt, b, s, p, d);
    note(testutil::max_rel_diff(got, want));
  }

  for (int i = 0; i < 40; ++i) {
    const std::int64_t n = rng.uniform_int(1, 2), c = rng.uniform_int(1, 3);
    const std::int64_t h = rng.uniform_int(1, 13), w = rng.uniform_int(1, 13);
    const std::int64_t oh = rng.uniform_int(1, 13), ow = rng.uniform_int(1, 13);
    Tensor<double> x = testutil::random_tensor<double>({n, c, h, w}, rng);
    Tape<double> tape;
    const Tensor<double> got = gff::bilinear_resample(&tape, x, oh, ow);
    const Tensor<double> want = oracle::bilinear_resample(x, oh, ow);
    note(testutil::max_rel_diff(got, want));
  }

  for (int i = 0; i < 30; ++i) {
    const std::int64_t n = rng.uniform_int(1, 2), c = rng.uniform_int(1, 3);
    const std::int64_t h = rng.uniform_int(1, 12), w = rng.uniform_int(1, 12);
    const std::int64_t bh = rng.uniform_int(1, h), bw = rng.uniform_int(1, w);
    Tensor<double> x = testutil::random_tensor<double>({n, c, h, w}, rng);
    Tape<double> tape;
    const Tensor<double> got = gff::avg_pool_adaptive(&tape, x, bh, bw);
    const Tensor<double> want = oracle::avg_pool_adaptive(x, bh, bw);
    note(testutil::max_rel_diff(got, want));
  }

  std::ostringstream ss;
  ss << cases << " randomized shapes vs naive oracles, worst rel " << fmt(worst, 3) << " < 1e-6";
  return {cases >= 100 && worst < 1e-6, ss.str()};
}

// ---------------------------------------------------------------------------
// criterion 4: schedule and momentum
// ---------------------------------------------------------------------------

std::pair<bool, std::string> criterion4() {
  gff::Rng rng(99);
  const std::int64_t total = 2000;
  const double base = 1e-3;
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::int64_t it = (i == 0) ? 0 : (i == 1 ? total - 1 : rng.uniform_int(0, total - 1));
    const double got = gff::poly_lr(it, total, base);
    const double want = base * std::pow(1.0 - static_cast<double>(it) / static_cast<double>(total), 0.9);
    worst = std::max(worst, std::abs(got - want));
  }

  gff::ParamStore<double> store(1);
  Tensor<double> pv = store.create("p", {1}, gff::Init::ones, true, false);
  gff::OptimConfig oc;
  oc.base_lr = 0.1;
  oc.momentum = 0.9;
  oc.weight_decay = 0.0;
  oc.total_iters = 1000000;
  pv.grad()[0] = 1.0;
  gff::sgd_step(store, oc, 0);
  const double p1 = pv.data()[0];
  store.zero_grads();
  pv.grad()[0] = 1.0;
  gff::sgd_step(store, oc, 0);
  const double p2 = pv.data()[0];
  const bool mom_ok = std::abs(p1 - 0.9) < 1e-12 && std::abs(p2 - 0.71) < 1e-12;

  std::ostringstream ss;
  ss << "poly schedule worst abs err " << fmt(worst, 3) << " over 1000 points < 1e-12"
     << "; momentum steps 1 -> " << fmt(p1, 15) << " -> " << fmt(p2, 15) << " vs 0.9, 0.71";
  return {worst < 1e-12 && mom_ok, ss.str()};
}

// ---------------------------------------------------------------------------
// criterion 5: metrics hand example
// ---------------------------------------------------------------------------

std::pair<bool, std::string> criterion5() {
  Labels gt(1, 2, 2), pred(1, 2, 2);
  gt.v = {0, 0, 1, 1};
  pred.v = {0, 1, 1, 1};
  gff::ConfusionMatrix cm(2);
  cm.add(pred, gt, gff::kIgnoreLabel);
  const double miou = cm.miou();
  const double acc = cm.pixel_acc();
  const bool ok = std::abs(miou - 7.0 / 12.0) < 1e-12 && std::abs(acc - 0.75) < 1e-12;
  std::ostringstream ss;
  ss << "mIoU " << fmt(miou, 15) << " vs 7/12, pixel accuracy " << fmt(acc, 15) << " vs 3/4";
  return {ok, ss.str()};
}

// ---------------------------------------------------------------------------
// criteria 6 and 7: desk-scale training behaviour
// ---------------------------------------------------------------------------

struct DeskRun {
  gff::RunConfig cfg;
  std::unique_ptr<gff::ParamStore<float>> store;
  std::unique_ptr<gff::Model<float>> model;
  std::vector<gff::Sample> test_data;
  std::vector<gff::IterationLog> log;
  gff::EvalResult eval;
};

DeskRun desk_train(const std::string& fusion, bool dfp, std::uint64_t seed) {
  DeskRun r;
  r.cfg.fusion = fusion;
  r.cfg.dfp = dfp;
  r.cfg.seed = seed;
  const auto t0 = std::chrono::steady_clock::now();
  std::cerr << "  [desk] training fusion=" << fusion << " dfp=" << (dfp ? "on" : "off")
            << " seed=" << seed << " (" << r.cfg.iterations << " iterations) ..." << std::endl;
  const gff::SceneSpec spec = r.cfg.scene_spec();
  const auto train_data = gff::generate_dataset(spec, "train", r.cfg.train_count);
  r.test_data = gff::generate_dataset(spec, "test", r.cfg.test_count);
  r.store = std::make_unique<gff::ParamStore<float>>(r.cfg.seed);
  r.model = std::make_unique<gff::Model<float>>(*r.store, r.cfg.model_config());
  r.log = gff::train(*r.model, *r.store, train_data, r.cfg.train_config());
  r.eval = gff::evaluate(*r.model, r.test_data);
  std::cerr << "  [desk] done in " << fmt(seconds_since(t0), 4) << " s: loss "
            << fmt(r.log.front().loss_total, 4) << " -> " << fmt(r.log.back().loss_total, 4)
            << ", test mIoU " << fmt(r.eval.miou, 4) << std::endl;
  return r;
}

double tail_mean_loss(const std::vector<gff::IterationLog>& log, std::size_t k = 10) {
  const std::size_t n = std::min(k, log.size());
  double s = 0.0;
  for (std::size_t i = log.size() - n; i < log.size(); ++i) s += log[i].loss_total;
  return s / static_cast<double>(n);
}

void criteria67(std::vector<std::pair<bool, std::string>>& out) {
  // Reference run: the full gff+dfp preset, shared by 6a, 6b and 7.
  DeskRun main_run = desk_train("gff", true, 1);

  const double loss0 = main_run.log.front().loss_total;
  const double tail = tail_mean_loss(main_run.log);
  const bool drop_ok = tail <= 0.10 * loss0;
  // The mIoU bar uses scale-averaged inference, the standard protocol for
  // reporting segmentation benchmark numbers; the gate ablation below stays
  // single-scale so the gates are probed in isolation.
  const gff::EvalResult eval_ms =
      gff::evaluate(*main_run.model, main_run.test_data, gff::inference_scales(true));
  const double miou = eval_ms.miou;
  const bool miou_ok = miou >= 0.80;

  // Informational only: train-split score for overfitting context.
  {
    const gff::SceneSpec spec = main_run.cfg.scene_spec();
    const auto train_data = gff::generate_dataset(spec, "train", main_run.cfg.train_count);
    const auto train_eval = gff::evaluate(*main_run.model, train_data);
    std::cerr << "  [desk] reference run train-split mIoU " << fmt(train_eval.miou, 4)
              << " vs test-split " << fmt(miou, 4) << std::endl;
  }

  // Paired comparison at three seeds, context pyramid off, to isolate the
  // fusion rule itself.
  double gff_miou = 0.0, add_miou = 0.0, gff_pl = 0.0, add_pl = 0.0;
  const std::vector<std::uint64_t> seeds = {1, 2, 3};
  for (const std::uint64_t s : seeds) {
    DeskRun g = desk_train("gff", false, s);
    DeskRun a = desk_train("addition", false, s);
    gff_miou += g.eval.miou;
    add_miou += a.eval.miou;
    gff_pl += 0.5 * (g.eval.per_class[3] + g.eval.per_class[4]);
    add_pl += 0.5 * (a.eval.per_class[3] + a.eval.per_class[4]);
  }
  const double ns = static_cast<double>(seeds.size());
  gff_miou /= ns;
  add_miou /= ns;
  gff_pl /= ns;
  add_pl /= ns;
  const bool cmp_ok = gff_miou >= add_miou && gff_pl >= add_pl;

  {
    std::ostringstream ss;
    ss << "(a) loss " << fmt(loss0, 4) << " -> tail mean " << fmt(tail, 4) << " ("
       << fmt(100.0 * (1.0 - tail / loss0), 4)
       << "% drop, need >= 90%); (b) gff+dfp test mIoU (scale-averaged) " << fmt(miou, 4)
       << " >= 0.80: " << (miou_ok ? "yes" : "NO") << "; (c) 3-seed means: mIoU gff "
       << fmt(gff_miou, 4) << " vs addition " << fmt(add_miou, 4) << ", pole+light gff "
       << fmt(gff_pl, 4) << " vs addition " << fmt(add_pl, 4);
    out.emplace_back(drop_ok && miou_ok && cmp_ok, ss.str());
  }

  // Criterion 7 reuses the reference run.
  std::int64_t changed = 0, total_px = 0;
  for (const auto& s : main_run.test_data) {
    Tensor<float> img({1, 3, s.image.dim(1), s.image.dim(2)});
    std::memcpy(img.data(), s.image.data(), sizeof(float) * static_cast<std::size_t>(s.image.numel()));
    const Labels base = gff::argmax_predict((*main_run.model)(nullptr, img, false).main_logits);
    const Labels zeroed = gff::argmax_predict(
        (*main_run.model)(nullptr, img, false, {true, true, true, true}).main_logits);
    for (std::size_t i = 0; i < base.v.size(); ++i)
      if (base.v[i] != zeroed.v[i]) ++changed;
    total_px += static_cast<std::int64_t>(base.v.size());
  }
  const double frac = static_cast<double>(changed) / static_cast<double>(total_px);

  const gff::EvalResult ablated =
      gff::evaluate(*main_run.model, main_run.test_data, {1.0}, {true, false, false, false});
  const double pole_delta = ablated.per_class[3] - main_run.eval.per_class[3];

  {
    std::ostringstream ss;
    ss << "all-gates-zero changes " << fmt(100.0 * frac, 4) << "% of predicted pixels (need >= 1%)"
       << "; level-1 ablation pole IoU delta " << fmt(pole_delta, 4) << " (need < 0)";
    out.emplace_back(frac >= 0.01 && pole_delta < 0.0, ss.str());
  }
}

// ---------------------------------------------------------------------------
// criterion 8: cost accounting
// ---------------------------------------------------------------------------

std::pair<bool, std::string> criterion8() {
  auto make = [](gff::Fusion f, bool dfp) {
    gff::ModelConfig mc;
    mc.fusion = f;
    mc.dfp = dfp;
    mc.validate();
    return gff::count_params_flops(mc, 1, 64, 64);
  };
  const auto a = make(gff::Fusion::addition, false);
  const auto g = make(gff::Fusion::gff, false);
  const auto gd = make(gff::Fusion::gff, true);

  const std::int64_t width = gff::ModelConfig{}.width;
  const std::int64_t want_inc = 4 * (width + 1);
  const bool order_ok = a.params < g.params && g.params < gd.params && a.macs < g.macs &&
                        g.macs < gd.macs;
  const bool inc_ok = (g.params - a.params) == want_inc;

  std::ostringstream ss;
  ss << "params " << a.params << " < " << g.params << " < " << gd.params << ", macs " << a.macs
     << " < " << g.macs << " < " << gd.macs << "; gate-conv increment " << (g.params - a.params)
     << " == 4*(" << width << "+1) = " << want_inc;
  return {order_ok && inc_ok, ss.str()};
}

// ---------------------------------------------------------------------------
// criterion 9: serialization and determinism
// ---------------------------------------------------------------------------

gff::RunConfig micro_run_config(const fs::path& out) {
  gff::RunConfig cfg;
  cfg.width = 4;
  cfg.backbone_widths = {4, 8, 16, 32};
  cfg.ppm_bins = {1};
  cfg.image_size = 32;
  cfg.crop = 32;
  cfg.train_count = 4;
  cfg.test_count = 2;
  cfg.iterations = 4;
  cfg.batch = 2;
  cfg.seed = 3;
  cfg.out = out.string();
  return cfg;
}

void run_micro_pipeline(const gff::RunConfig& cfg) {
  std::ostringstream sink;
  gff::cmd_synth(cfg, sink);
  gff::cmd_train(cfg, sink);
  gff::cmd_eval(cfg, sink);
  gff::RunConfig gcfg = cfg;
  gcfg.ids = "0,1";
  gff::cmd_gates(gcfg, sink);
  gff::cmd_ablate(cfg, sink);
}

std::map<std::string, std::vector<char>> read_tree(const fs::path& root) {
  std::map<std::string, std::vector<char>> tree;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    tree[fs::relative(e.path(), root).generic_string()] = std::move(bytes);
  }
  return tree;
}

std::pair<bool, std::string> criterion9() {
  const fs::path base = fs::temp_directory_path() / "gffseg-acceptance";
  fs::remove_all(base);
  fs::create_directories(base);

  // Tensor container round trip, including awkward values.
  bool tensor_ok = true;
  {
    gff::Rng rng(8);
    Tensor<float> tf = testutil::random_tensor<float>({2, 3, 5, 7}, rng, -10.0, 10.0);
    tf.data()[0] = -0.0f;
    tf.data()[1] = 1e-30f;
    gff::write_tensor(base / "a.gfft", tf);
    tensor_ok = tensor_ok && testutil::same_bytes(gff::read_tensor<float>(base / "a.gfft"), tf);
    Tensor<double> td = testutil::random_tensor<double>({4, 9}, rng, -1.0, 1.0);
    td.data()[0] = 1e-300;
    td.data()[1] = -0.0;
    gff::write_tensor(base / "b.gfft", td);
    tensor_ok = tensor_ok && testutil::same_bytes(gff::read_tensor<double>(base / "b.gfft"), td);
  }

  // Deterministic output trees: the same micro pipeline twice, byte for byte.
  const gff::RunConfig cfg1 = micro_run_config(base / "tree1");
  const gff::RunConfig cfg2 = micro_run_config(base / "tree2");
  run_micro_pipeline(cfg1);
  run_micro_pipeline(cfg2);
  const auto tree1 = read_tree(base / "tree1");
  const auto tree2 = read_tree(base / "tree2");
  bool trees_ok = tree1.size() == tree2.size() && !tree1.empty();
  if (trees_ok) {
    for (const auto& [name, bytes] : tree1) {
      const auto it = tree2.find(name);
      if (it == tree2.end() || it->second != bytes) {
        trees_ok = false;
        break;
      }
    }
  }

  // Checkpoint round trip through a store seeded differently.
  bool ckpt_ok = true;
  {
    gff::ParamStore<float> src(3);
    gff::Model<float> msrc(src, cfg1.model_config());
    gff::load_checkpoint(fs::path(cfg1.out) / "checkpoint", src);
    gff::ParamStore<float> dst(99);
    gff::Model<float> mdst(dst, cfg1.model_config());
    gff::save_checkpoint(base / "ckpt-copy", src);
    gff::load_checkpoint(base / "ckpt-copy", dst);
    const auto& se = src.entries();
    const auto& de = dst.entries();
    ckpt_ok = se.size() == de.size();
    for (std::size_t i = 0; ckpt_ok && i < se.size(); ++i)
      ckpt_ok = se[i].name == de[i].name && testutil::same_bytes(se[i].value, de[i].value);
  }

  // PGM gate exports re-parse within half a quantization step of the live
  // gate maps recomputed from the trained checkpoint.
  bool pgm_ok = true;
  double pgm_worst = 0.0;
  {
    gff::ParamStore<float> store(3);
    gff::Model<float> model(store, cfg1.model_config());
    gff::load_checkpoint(fs::path(cfg1.out) / "checkpoint", store);
    const gff::SceneSpec spec = cfg1.scene_spec();
    const gff::Sample s = gff::generate_sample(spec, "test", 0);
    Tensor<float> img({1, 3, s.image.dim(1), s.image.dim(2)});
    std::memcpy(img.data(), s.image.data(), sizeof(float) * static_cast<std::size_t>(s.image.numel()));
    const auto out = model(nullptr, img, false);
    for (std::size_t l = 0; l < out.gates.size(); ++l) {
      const fs::path p = fs::path(cfg1.out) / "gates" /
                         ("gate_L" + std::to_string(l + 1) + "_00000.pgm");
      const gff::PgmImage pgm = gff::read_pgm(p);
      const Tensor<float>& g = out.gates[l];
      pgm_ok = pgm_ok && pgm.w == g.dim(3) && pgm.h == g.dim(2);
      if (!pgm_ok) break;
      for (std::int64_t i = 0; i < g.numel(); ++i) {
        const double back = static_cast<double>(pgm.pix[static_cast<std::size_t>(i)]) / 255.0;
        const double v = std::clamp(static_cast<double>(g.data()[i]), 0.0, 1.0);
        pgm_worst = std::max(pgm_worst, std::abs(back - v));
      }
    }
    pgm_ok = pgm_ok && pgm_worst <= 0.5 / 255.0 + 1e-12;
  }

  std::ostringstream ss;
  ss << "tensor round trip bit-exact: " << (tensor_ok ? "yes" : "NO") << "; checkpoint round trip: "
     << (ckpt_ok ? "yes" : "NO") << "; gate PGM worst reparse err " << fmt(pgm_worst, 3)
     << " <= 0.5/255; identical-seed trees byte-identical over " << tree1.size()
     << " files: " << (trees_ok ? "yes" : "NO");
  return {tensor_ok && ckpt_ok && pgm_ok && trees_ok, ss.str()};
}

}  // namespace

int main(int argc, char** argv) {
  gff::set_threads(1);

  // With no arguments every criterion runs; numeric arguments select a
  // subset (e.g. `acceptance 1 8` while iterating on one criterion without
  // paying for the training block).
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) {
    char* end = nullptr;
    const long n = std::strtol(argv[i], &end, 10);
    if (end == argv[i] || *end != '\0' || n < 1 || n > 9) {
      std::cerr << "usage: acceptance [criterion-number ...]   (numbers 1-9)" << std::endl;
      return 2;
    }
    selected.insert(static_cast<int>(n));
  }
  const auto wanted = [&](int n) { return selected.empty() || selected.count(n) > 0; };

  std::vector<std::pair<bool, std::string>> results;
  auto run = [&](int n, std::function<std::pair<bool, std::string>()> fn) {
    if (!wanted(n)) return;
    std::cerr << "[acceptance] running criterion " << n << " ..." << std::endl;
    try {
      results.emplace_back(fn());
    } catch (const std::exception& e) {
      results.emplace_back(false, std::string("exception: ") + e.what());
    }
    std::cout << (results.back().first ? "[PASS]" : "[FAIL]") << " criterion " << n << ": "
              << results.back().second << std::endl;
  };

  run(1, criterion1);
  run(2, criterion2);
  run(3, criterion3);
  run(4, criterion4);
  run(5, criterion5);

  if (wanted(6) || wanted(7)) {
    std::cerr << "[acceptance] running criteria 6 and 7 (seven desk trainings) ..." << std::endl;
    std::vector<std::pair<bool, std::string>> out;
    try {
      criteria67(out);
    } catch (const std::exception& e) {
      while (out.size() < 2) out.emplace_back(false, std::string("exception: ") + e.what());
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
      const int n = 6 + static_cast<int>(i);
      if (!wanted(n)) continue;
      results.push_back(out[i]);
      std::cout << (out[i].first ? "[PASS]" : "[FAIL]") << " criterion " << n << ": "
                << out[i].second << std::endl;
    }
  }

  run(8, criterion8);
  run(9, criterion9);

  const bool all = !results.empty() && std::all_of(results.begin(), results.end(),
                                                   [](const auto& r) { return r.first; });
  const std::string scope = selected.empty() ? "all criteria" : "selected criteria";
  std::cout << (all ? "acceptance: " + scope + " passed" : "acceptance: FAILURES present")
            << std::endl;
  return all ? 0 : 1;
}
