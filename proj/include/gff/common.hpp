#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gff {

/// Error taxonomy used across the library. The CLI maps these onto exit
/// codes: UsageError -> 1, IoError/DataError -> 2, NumericError -> 3.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Tensor extents, outermost first. 4-D feature maps are laid out NCHW.
using Shape = std::vector<std::int64_t>;

inline std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw DataError(msg);
}

/// Numeric precision of a graph. All tensors in one graph share one mode;
/// gradient checking requires bits64.
enum class Precision : std::uint8_t { bits32 = 0, bits64 = 1 };

template <typename T>
constexpr Precision precision_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "tensor scalar type must be float or double");
  return std::is_same_v<T, float> ? Precision::bits32 : Precision::bits64;
}

}  // namespace gff
