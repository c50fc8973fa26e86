#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "gff/config.hpp"
#include "gff/gradcheck.hpp"

namespace gff {

namespace detail {

inline std::filesystem::path dataset_dir(const RunConfig& cfg, const std::string& split) {
  const std::filesystem::path root =
      cfg.data.empty() ? std::filesystem::path(cfg.out) / "data" : std::filesystem::path(cfg.data);
  return root / split;
}

inline std::filesystem::path checkpoint_dir(const RunConfig& cfg) {
  return cfg.checkpoint.empty() ? std::filesystem::path(cfg.out) / "checkpoint"
                                : std::filesystem::path(cfg.checkpoint);
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

inline std::string sample_id(std::int64_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05lld", static_cast<long long>(i));
  return buf;
}

template <typename T>
Tensor<T> sample_to_batch(const Sample& s) {
  Tensor<T> img({1, 3, s.image.dim(1), s.image.dim(2)});
  for (std::int64_t i = 0; i < s.image.numel(); ++i)
    img.data()[i] = static_cast<T>(s.image.data()[i]);
  return img;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// synth

struct SynthStats {
  std::vector<std::string> splits;
  std::vector<std::vector<std::int64_t>> class_pixels;  // [split][class]
};

inline SynthStats cmd_synth(const RunConfig& cfg, std::ostream& os) {
  const SceneSpec sp = cfg.scene_spec();
  SynthStats stats;
  const std::pair<std::string, std::int64_t> splits[] = {{"train", cfg.train_count},
                                                         {"test", cfg.test_count}};
  for (const auto& [split, count] : splits) {
    auto samples = generate_dataset(sp, split, count);
    save_dataset(detail::dataset_dir(cfg, split), samples);
    std::vector<std::int64_t> pixels(static_cast<std::size_t>(kClasses), 0);
    for (const auto& s : samples)
      for (std::int32_t v : s.labels.v) pixels[static_cast<std::size_t>(v)]++;
    stats.splits.push_back(split);
    stats.class_pixels.push_back(pixels);
    os << split << ": " << count << " samples, " << sp.h << "x" << sp.w << "\n";
    for (std::int64_t k = 0; k < kClasses; ++k)
      os << "  " << kClassNames[k] << " " << pixels[static_cast<std::size_t>(k)] << "\n";
  }
  os << "dataset written to " << detail::dataset_dir(cfg, "train").parent_path().string() << "\n";
  return stats;
}

// ---------------------------------------------------------------------------
// train

struct TrainOutcome {
  std::vector<IterationLog> log;
  std::filesystem::path checkpoint;
  std::filesystem::path csv;
};

inline TrainOutcome cmd_train(const RunConfig& cfg, std::ostream& os) {
  const auto data = load_dataset(detail::dataset_dir(cfg, "train"));
  ParamStore<float> store(cfg.seed);
  Model<float> model(store, cfg.model_config());
  detail::ensure_dir(cfg.out);

  TrainOutcome outcome;
  outcome.csv = std::filesystem::path(cfg.out) / "train_log.csv";
  std::ofstream csv(outcome.csv);
  if (!csv) throw IoError("cannot write " + outcome.csv.string());
  os << "training fusion=" << cfg.fusion << " dfp=" << (cfg.dfp ? "on" : "off") << " iterations="
     << cfg.iterations << " batch=" << cfg.batch << " seed=" << cfg.seed << "\n";
  outcome.log = train(model, store, data, cfg.train_config(), &csv);

  outcome.checkpoint = detail::checkpoint_dir(cfg);
  save_checkpoint(outcome.checkpoint, store);
  os << "first loss " << outcome.log.front().loss_total << ", final loss "
     << outcome.log.back().loss_total << "\n";
  os << "checkpoint written to " << outcome.checkpoint.string() << "\n";
  return outcome;
}

// ---------------------------------------------------------------------------
// eval

inline std::vector<double> inference_scales(bool multiscale) {
  return multiscale ? std::vector<double>{0.75, 1.0, 1.25, 1.5, 1.75} : std::vector<double>{1.0};
}

inline EvalResult cmd_eval(const RunConfig& cfg, std::ostream& os) {
  const auto data = load_dataset(detail::dataset_dir(cfg, "test"));
  ParamStore<float> store(cfg.seed);
  Model<float> model(store, cfg.model_config());
  load_checkpoint(detail::checkpoint_dir(cfg), store);

  const EvalResult r = evaluate(model, data, inference_scales(cfg.multiscale));

  detail::ensure_dir(cfg.out);
  const auto csv_path = std::filesystem::path(cfg.out) / "eval.csv";
  std::ofstream csv(csv_path);
  if (!csv) throw IoError("cannot write " + csv_path.string());
  csv << "class,iou\n";
  csv << std::setprecision(17);
  for (std::int64_t k = 0; k < cfg.classes; ++k) {
    const char* name = k < kClasses ? kClassNames[k] : "class";
    csv << name << "," << r.per_class[static_cast<std::size_t>(k)] << "\n";
  }
  csv << "miou," << r.miou << "\n";
  csv << "pixel_acc," << r.pixel_acc << "\n";

  os << std::setprecision(6);
  for (std::int64_t k = 0; k < cfg.classes; ++k) {
    const char* name = k < kClasses ? kClassNames[k] : "class";
    os << name << " iou " << r.per_class[static_cast<std::size_t>(k)] << "\n";
  }
  os << "miou " << r.miou << "\n";
  os << "pixel_acc " << r.pixel_acc << "\n";
  return r;
}

// ---------------------------------------------------------------------------
// gradcheck

inline ModelConfig micro_config() {
  ModelConfig mc;
  mc.width = 4;
  mc.classes = 2;
  mc.fusion = Fusion::gff;
  mc.dfp = true;
  mc.ppm_bins = {1};
  mc.backbone_widths = {4, 8, 16, 32};
  mc.validate();
  return mc;
}

/// Central-difference check of the combined main+auxiliary loss on a tiny
/// model: every learnable tensor plus the input image, a few coordinates
/// each. The forward runs with frozen normalization statistics: on an 8x8
/// input the top pyramid levels are 1x1, so batch statistics would be taken
/// over two values per channel — a saturating v/sqrt(v^2+eps) regime whose
/// curvature drowns the finite-difference window. The eval path keeps the
/// identical graph wiring while normalization stays affine; the batch-stats
/// backward rule itself is covered by the dedicated per-op checks on
/// healthy extents.
inline GradCheckReport cmd_gradcheck(const RunConfig& cfg, std::ostream& os,
                                     std::int64_t max_coords = 4) {
  const ModelConfig mc = micro_config();
  ParamStore<double> store(cfg.seed);
  Model<double> model(store, mc);

  // Perturb every parameter away from its initializer. Zero-initialized
  // biases otherwise leave exact relu kinks at dead pixels (relu emits
  // exact zeros, a following conv of an all-zero window emits exactly its
  // zero bias), where the one-sided analytic convention and the central
  // difference legitimately disagree. Randomized frozen statistics also
  // make the normalization a generic affine map instead of the identity.
  Rng prng(derive_seed(cfg.seed, "gradcheck/param-offsets"));
  for (auto& e : store.entries()) {
    const bool is_var = e.name.size() >= 11 && e.name.rfind("running_var") == e.name.size() - 11;
    for (std::int64_t i = 0; i < e.value.numel(); ++i) {
      if (e.learnable)
        e.value.data()[i] += prng.uniform(-0.25, 0.25);
      else
        e.value.data()[i] = is_var ? prng.uniform(0.7, 1.5) : prng.uniform(-0.3, 0.3);
    }
  }

  Rng rng(derive_seed(cfg.seed, "gradcheck/input"));
  Tensor<double> img({2, 3, 8, 8});
  for (std::int64_t i = 0; i < img.numel(); ++i) img.data()[i] = rng.uniform(0.0, 255.0);
  Labels lab(2, 8, 8);
  for (auto& v : lab.v) v = static_cast<std::int32_t>(rng.uniform_int(0, mc.classes - 1));
  lab.at(0, 0, 0) = kIgnoreLabel;  // the ignore path must not leak gradient

  std::vector<Tensor<double>> inputs{img};
  for (const auto& e : store.entries())
    if (e.learnable) inputs.push_back(e.value);

  auto forward = [&](Tape<double>* t) -> Tensor<double> {
    ModelOutput<double> out = model(t, img, /*training=*/false);
    Tensor<double> lm = softmax_cross_entropy(t, out.main_logits, lab, kIgnoreLabel);
    Tensor<double> la = softmax_cross_entropy(t, out.aux_logits, lab, kIgnoreLabel);
    return add(t, lm, scale(t, la, mc.aux_weight));
  };
  const GradCheckReport rep =
      check_gradients(inputs, forward, 1e-3, max_coords, derive_seed(cfg.seed, "gradcheck/coords"));

  os << "checked " << rep.checked << " coordinates over " << inputs.size() << " tensors\n";
  os << std::setprecision(6) << "max relative error " << rep.max_rel << " (tensor " << rep.tensor
     << ", flat index " << rep.index << ", analytic " << rep.analytic << ", numeric "
     << rep.numeric << ")\n";
  if (!(rep.max_rel < 1e-4))
    throw NumericError("gradient check failed: max relative error " + std::to_string(rep.max_rel));
  os << "gradient check passed\n";
  return rep;
}

// ---------------------------------------------------------------------------
// gates

struct GateExport {
  std::int64_t id = 0;
  int level = 0;  // 1-based
  std::filesystem::path path;
  double mean = 0.0;
  double stddev = 0.0;
};

inline std::vector<std::int64_t> parse_sample_ids(const RunConfig& cfg) {
  if (cfg.ids.empty()) return {0};
  return detail::parse_i64_list("ids", cfg.ids);
}

inline std::vector<GateExport> cmd_gates(const RunConfig& cfg, std::ostream& os) {
  const auto data = load_dataset(detail::dataset_dir(cfg, "test"));
  ParamStore<float> store(cfg.seed);
  Model<float> model(store, cfg.model_config());
  load_checkpoint(detail::checkpoint_dir(cfg), store);
  if (!fusion_gated(model.cfg.fusion)) {
    os << "no gates: fusion '" << cfg.fusion << "' is ungated\n";
    return {};
  }

  const auto dir = std::filesystem::path(cfg.out) / "gates";
  detail::ensure_dir(dir);
  std::vector<GateExport> exports;
  for (std::int64_t id : parse_sample_ids(cfg)) {
    if (id < 0 || id >= static_cast<std::int64_t>(data.size()))
      throw DataError("sample id " + std::to_string(id) + " not found (test split has " +
                      std::to_string(data.size()) + " samples)");
    const Tensor<float> img = detail::sample_to_batch<float>(data[static_cast<std::size_t>(id)]);
    const ModelOutput<float> out = model(nullptr, img, /*training=*/false);
    for (std::size_t l = 0; l < out.gates.size(); ++l) {
      const Tensor<float>& g = out.gates[l];
      std::vector<std::uint8_t> pix(static_cast<std::size_t>(g.numel()));
      double sum = 0.0, sq = 0.0;
      for (std::int64_t i = 0; i < g.numel(); ++i) {
        const double v = static_cast<double>(g.data()[i]);
        pix[static_cast<std::size_t>(i)] =
            static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
        sum += v;
        sq += v * v;
      }
      const double n = static_cast<double>(g.numel());
      GateExport e;
      e.id = id;
      e.level = static_cast<int>(l) + 1;
      e.mean = sum / n;
      e.stddev = std::sqrt(std::max(0.0, sq / n - e.mean * e.mean));
      e.path = dir / ("gate_L" + std::to_string(e.level) + "_" + detail::sample_id(id) + ".pgm");
      write_pgm(e.path, g.dim(3), g.dim(2), pix);
      os << "sample " << id << " level " << e.level << ": mean " << std::setprecision(4) << e.mean
         << " std " << e.stddev << " -> " << e.path.string() << "\n";
      exports.push_back(e);
    }
  }
  return exports;
}

// ---------------------------------------------------------------------------
// ablate

struct AblateReport {
  bool gated = true;
  std::vector<bool> zero_gates;  // which levels were forced to zero
  std::int64_t changed = 0;
  std::int64_t total = 0;
  double fraction = 0.0;
  std::vector<std::int64_t> per_sample_changed;
  std::vector<double> iou_normal, iou_ablated, delta;
  double miou_normal = 0.0, miou_ablated = 0.0;
};

inline AblateReport cmd_ablate(const RunConfig& cfg, std::ostream& os) {
  const auto data = load_dataset(detail::dataset_dir(cfg, "test"));
  ParamStore<float> store(cfg.seed);
  Model<float> model(store, cfg.model_config());
  load_checkpoint(detail::checkpoint_dir(cfg), store);

  AblateReport rep;
  rep.gated = fusion_gated(model.cfg.fusion);
  rep.zero_gates.assign(4, false);
  if (rep.gated) {
    if (cfg.level == "all") {
      rep.zero_gates.assign(4, true);
    } else {
      const std::int64_t l = detail::parse_i64("level", cfg.level);
      if (l < 1 || l > 4) throw UsageError("ablation level out of range (1..4 or 'all')");
      rep.zero_gates[static_cast<std::size_t>(l - 1)] = true;
    }
  } else {
    os << "no gates: fusion '" << cfg.fusion << "' is ungated; predictions are unchanged\n";
  }

  const auto dir = std::filesystem::path(cfg.out) / "ablate";
  detail::ensure_dir(dir);
  ConfusionMatrix cm_normal(model.cfg.classes), cm_ablated(model.cfg.classes);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Sample& s = data[i];
    const Tensor<float> img = detail::sample_to_batch<float>(s);
    const Labels pred = argmax_predict(model(nullptr, img, false).main_logits);
    const Labels pred_ab =
        rep.gated ? argmax_predict(model(nullptr, img, false, rep.zero_gates).main_logits) : pred;
    cm_normal.add(pred, s.labels, kIgnoreLabel);
    cm_ablated.add(pred_ab, s.labels, kIgnoreLabel);

    std::int64_t changed = 0;
    std::vector<std::uint8_t> mask(pred.v.size(), 0);
    for (std::size_t p = 0; p < pred.v.size(); ++p)
      if (pred.v[p] != pred_ab.v[p]) {
        mask[p] = 255;
        ++changed;
      }
    rep.per_sample_changed.push_back(changed);
    rep.changed += changed;
    rep.total += pred.numel();
    const auto mask_path = dir / ("changed_" + detail::sample_id(static_cast<std::int64_t>(i)) +
                                  ".pgm");
    write_pgm(mask_path, pred.w, pred.h, mask);
    os << "sample " << i << ": " << changed << " / " << pred.numel() << " pixels changed\n";
  }
  rep.fraction = rep.total ? static_cast<double>(rep.changed) / static_cast<double>(rep.total) : 0;

  rep.iou_normal = cm_normal.per_class_iou();
  rep.iou_ablated = cm_ablated.per_class_iou();
  rep.miou_normal = cm_normal.miou();
  rep.miou_ablated = cm_ablated.miou();
  const auto csv_path = std::filesystem::path(cfg.out) / "ablate.csv";
  std::ofstream csv(csv_path);
  if (!csv) throw IoError("cannot write " + csv_path.string());
  csv << "class,iou_normal,iou_ablated,delta\n" << std::setprecision(17);
  os << std::setprecision(6);
  for (std::int64_t k = 0; k < model.cfg.classes; ++k) {
    const double a = rep.iou_normal[static_cast<std::size_t>(k)];
    const double b = rep.iou_ablated[static_cast<std::size_t>(k)];
    rep.delta.push_back(b - a);
    const char* name = k < kClasses ? kClassNames[k] : "class";
    csv << name << "," << a << "," << b << "," << (b - a) << "\n";
    os << name << ": iou " << a << " -> " << b << " (delta " << (b - a) << ")\n";
  }
  os << "changed pixels: " << rep.changed << " / " << rep.total << " (" << 100.0 * rep.fraction
     << "%)\n";
  os << "miou " << rep.miou_normal << " -> " << rep.miou_ablated << "\n";
  return rep;
}

// ---------------------------------------------------------------------------
// bench

struct BenchRow {
  std::string label;
  Fusion fusion;
  bool dfp;
  std::int64_t params;
  std::uint64_t macs;
};

inline std::vector<BenchRow> cmd_bench(const RunConfig& cfg, std::ostream& os) {
  struct Setting {
    const char* label;
    Fusion fusion;
    bool dfp;
  };
  const Setting settings[] = {{"addition", Fusion::addition, false},
                              {"gff", Fusion::gff, false},
                              {"gff+dfp", Fusion::gff, true}};
  std::vector<BenchRow> rows;
  os << "input " << cfg.image_size << "x" << cfg.image_size << ", width " << cfg.width << "\n";
  os << std::left << std::setw(12) << "config" << std::right << std::setw(14) << "params"
     << std::setw(18) << "macs" << "\n";
  for (const auto& s : settings) {
    ModelConfig mc = cfg.model_config();
    mc.fusion = s.fusion;
    mc.dfp = s.dfp;
    const CostReport r = count_params_flops(mc, 1, cfg.image_size, cfg.image_size);
    rows.push_back({s.label, s.fusion, s.dfp, r.params, r.macs});
    os << std::left << std::setw(12) << s.label << std::right << std::setw(14) << r.params
       << std::setw(18) << r.macs << "\n";
  }
  return rows;
}

}  // namespace gff
