#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace demoe {

/// Derives a child seed from a master seed and a stream name. Every random
/// consumer (split, init, noise, shuffle, bootstrap, generation) draws from its
/// own named substream so that components are independently reproducible.
std::uint64_t substream_seed(std::uint64_t master, std::string_view name);
std::uint64_t substream_seed(std::uint64_t master, std::string_view name, std::uint64_t index);

/// Portable random source. std::mt19937_64 has a fully specified output
/// sequence; the distributions below are implemented here instead of using the
/// implementation-defined std:: distributions, so draws match across toolchains.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();

  /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::size_t uniform_index(std::size_t n);

  /// Standard normal via the Box-Muller cosine branch (one normal per two uniforms).
  double normal();

  void fill_normal(std::span<double> out);

  template <class T>
  void shuffle(std::vector<T>& items)
  {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(items[i - 1], items[j]);
    }
  }

  /// Draws `count` distinct indices from [0, n) in draw order (partial Fisher-Yates).
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count);

private:
  std::mt19937_64 engine_;
};

}  // namespace demoe
