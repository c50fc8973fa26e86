#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "gff/commands.hpp"
#include "gff/parallel.hpp"

namespace {

constexpr const char* kUsage = R"(gffseg — multi-level fusion segmentation toolkit

usage: gffseg <command> [--config PATH] [--key value ...]

commands:
  synth      generate the synthetic toy-city train/test splits
  train      train a model; writes checkpoint + CSV loss log
  eval       evaluate a checkpoint on the test split (add --multiscale)
  gradcheck  finite-difference audit of the end-to-end gradients
  gates      export per-level gate maps as PGM images (--ids 0,3,...)
  ablate     re-evaluate with gates forced to zero (--level N or all)
  bench      print parameter / multiply-accumulate cost table

common flags (any config key works as --key value; overrides win):
  --config PATH   flat key = value file, '#' comments
  --seed U64      master seed for data, init, and augmentation
  --fusion NAME   concat | addition | fpn | gated_fpn | gff
  --dfp on|off    dense post-fusion stages
  --iterations N  training iterations
  --batch N       training batch size
  --multiscale    average softmax maps over scales {0.75,1,1.25,1.5,1.75}
  --threads N     deterministic worker threads (default 1)
  --out DIR       output directory (default ./out)
)";

int run(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << kUsage;
    throw gff::UsageError("missing command");
  }
  const std::string cmd = argv[1];
  if (cmd == "help" || cmd == "--help" || cmd == "-h") {
    std::cout << kUsage;
    return 0;
  }

  std::vector<std::pair<std::string, std::string>> overrides;
  for (int i = 2; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg.rfind("--", 0) != 0)
      throw gff::UsageError("expected a --key, got '" + arg + "'");
    const std::string key = arg.substr(2);
    if (key == "multiscale") {
      overrides.emplace_back(key, "on");
      continue;
    }
    if (i + 1 >= argc) throw gff::UsageError("missing value for --" + key);
    overrides.emplace_back(key, argv[++i]);
  }

  gff::RunConfig cfg;
  for (const auto& [k, v] : overrides)
    if (k == "config") gff::load_config_file(cfg, v);
  for (const auto& [k, v] : overrides)
    if (k != "config") cfg.set(k, v);

  if (cfg.threads < 1) throw gff::UsageError("--threads must be at least 1");
  gff::set_threads(static_cast<int>(cfg.threads));

  if (cmd == "synth") cmd_synth(cfg, std::cout);
  else if (cmd == "train") cmd_train(cfg, std::cout);
  else if (cmd == "eval") cmd_eval(cfg, std::cout);
  else if (cmd == "gradcheck") cmd_gradcheck(cfg, std::cout);
  else if (cmd == "gates") cmd_gates(cfg, std::cout);
  else if (cmd == "ablate") cmd_ablate(cfg, std::cout);
  else if (cmd == "bench") cmd_bench(cfg, std::cout);
  else throw gff::UsageError("unknown command '" + cmd + "'");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const gff::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const gff::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const gff::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const gff::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
