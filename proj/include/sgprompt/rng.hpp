#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace sgprompt {

/// Seed for a named sub-stream of a master seed ("triplets", "tasks",
/// "init", "augment", ...). Distinct names give unrelated streams.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream);
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream, std::uint64_t index);

/// Deterministic generator. mt19937_64 output is fixed by the standard; the
/// bounded draws below avoid std::*_distribution, whose results differ
/// between standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, n). n must be positive.
  std::size_t uniform_index(std::size_t n);
  // Uniform in [lo, hi).
  double uniform_real(double lo, double hi);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[uniform_index(i)]);
    }
  }

  // First `count` entries of v become a uniform sample without replacement.
  template <class T>
  void partial_shuffle(std::vector<T>& v, std::size_t count) {
    for (std::size_t i = 0; i < count && i + 1 < v.size(); ++i) {
      std::swap(v[i], v[i + uniform_index(v.size() - i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace sgprompt
