#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "gff/io.hpp"
#include "gff/rng.hpp"
#include "gff/tensor.hpp"

namespace gff {

enum class Init { he_uniform, zeros, ones };

template <typename T>
struct ParamEntry {
  std::string name;
  Tensor<T> value;
  bool learnable = true;  // false for running statistics buffers
  bool decay = true;      // weight decay; off for biases and norm affine params
  Tensor<T> velocity;     // SGD momentum state, allocated lazily by the optimizer
};

/// Named parameter registry. Every tensor is initialized from its own RNG
/// stream derived from (root seed, name), so two models sharing a name
/// prefix get bit-identical values for the shared parameters regardless of
/// registration order or what other parameters exist.
template <typename T>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t root_seed) : root_(root_seed) {}

  /// Registers (or retrieves, shape-checked) a named tensor.
  Tensor<T> create(const std::string& name, Shape shape, Init init, bool learnable, bool decay) {
    if (auto it = index_.find(name); it != index_.end()) {
      ParamEntry<T>& e = entries_[it->second];
      check(e.value.shape() == shape,
            "parameter " + name + " re-registered with shape " + shape_str(shape) + " vs " +
                shape_str(e.value.shape()));
      return e.value;
    }
    Tensor<T> t(shape);
    switch (init) {
      case Init::zeros:
        std::fill_n(t.data(), t.numel(), T(0));
        break;
      case Init::ones:
        std::fill_n(t.data(), t.numel(), T(1));
        break;
      case Init::he_uniform: {
        check(shape.size() == 4, "fan-in init expects a conv weight [Cout,Cin,kh,kw]");
        const double fan_in = static_cast<double>(shape[1] * shape[2] * shape[3]);
        const double bound = std::sqrt(6.0 / fan_in);
        Rng rng(derive_seed(root_, "init/" + name));
        T* p = t.data();
        for (std::int64_t i = 0; i < t.numel(); ++i)
          p[i] = static_cast<T>(rng.uniform(-bound, bound));
        break;
      }
    }
    if (learnable) t.set_requires_grad(true);
    index_[name] = entries_.size();
    entries_.push_back({name, t, learnable, decay, Tensor<T>()});
    return t;
  }

  std::vector<ParamEntry<T>>& entries() { return entries_; }
  const std::vector<ParamEntry<T>>& entries() const { return entries_; }

  const ParamEntry<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &entries_[it->second];
  }

  std::int64_t learnable_count() const {
    std::int64_t n = 0;
    for (const auto& e : entries_)
      if (e.learnable) n += e.value.numel();
    return n;
  }

  void zero_grads() {
    for (auto& e : entries_) e.value.zero_grad();
  }

  std::uint64_t root_seed() const { return root_; }

 private:
  std::uint64_t root_;
  std::vector<ParamEntry<T>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Checkpoint layout: `manifest.txt` ("gffseg-checkpoint 1" header, then one
/// line per entry: name, rank, extents, in registration order) plus one
/// tensor dump per entry named `<entry>.gfft`. Running statistics are
/// included, so a reloaded model evaluates identically.
template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const ParamStore<T>& store) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  std::ofstream mf(dir / "manifest.txt");
  if (!mf) throw IoError("cannot write " + (dir / "manifest.txt").string());
  mf << "gffseg-checkpoint 1\n";
  for (const auto& e : store.entries()) {
    mf << e.name << " " << e.value.ndim();
    for (int i = 0; i < e.value.ndim(); ++i) mf << " " << e.value.dim(i);
    mf << "\n";
    write_tensor(dir / (e.name + ".gfft"), e.value);
  }
  if (!mf) throw IoError("write failed: " + (dir / "manifest.txt").string());
}

/// Loads values into an already-constructed store; every manifest entry
/// must exist with a matching shape and vice versa.
template <typename T>
void load_checkpoint(const std::filesystem::path& dir, ParamStore<T>& store) {
  std::ifstream mf(dir / "manifest.txt");
  if (!mf) throw IoError("cannot open checkpoint manifest " + (dir / "manifest.txt").string());
  std::string header;
  std::getline(mf, header);
  if (header != "gffseg-checkpoint 1")
    throw IoError("unrecognized checkpoint manifest header: '" + header + "'");
  std::size_t seen = 0;
  std::string line;
  while (std::getline(mf, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name;
    int ndim = 0;
    ls >> name >> ndim;
    if (!ls || ndim < 1 || ndim > 8) throw IoError("malformed manifest line: '" + line + "'");
    Shape shape(static_cast<std::size_t>(ndim));
    for (auto& e : shape) {
      ls >> e;
      if (!ls) throw IoError("malformed manifest line: '" + line + "'");
    }
    const ParamEntry<T>* entry = store.find(name);
    if (!entry) throw IoError("checkpoint parameter '" + name + "' does not exist in the model");
    if (entry->value.shape() != shape)
      throw IoError("checkpoint shape " + shape_str(shape) + " for '" + name +
                    "' does not match model shape " + shape_str(entry->value.shape()));
    Tensor<T> loaded = read_tensor<T>(dir / (name + ".gfft"));
    if (loaded.shape() != shape)
      throw IoError("tensor dump shape differs from manifest for '" + name + "'");
    std::copy_n(loaded.data(), loaded.numel(),
                const_cast<ParamEntry<T>*>(entry)->value.data());
    ++seen;
  }
  if (seen != store.entries().size())
    throw IoError("checkpoint holds " + std::to_string(seen) + " parameters, model expects " +
                  std::to_string(store.entries().size()));
}

}  // namespace gff
