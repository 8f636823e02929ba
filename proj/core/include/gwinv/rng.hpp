#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace gwinv {

// Deterministic random source. std::mt19937_64 provides the raw stream; all
// distribution mappings (uniform, normal, integer) are implemented explicitly
// because the std::*_distribution classes are implementation-defined and would
// break byte-identical reproducibility across standard libraries.
//
// Named substreams let independent pipeline stages (truth field, observation
// noise, engine initialization, training shuffles) draw from disjoint streams
// derived from one master seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64();

  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Uniform on [lo, hi).
  double uniform(double lo, double hi);
  // Standard normal via Box-Muller; draws are cached in pairs.
  double normal();
  double normal(double mean, double stddev);
  // Uniform integer on [0, n). Requires n >= 1.
  std::uint64_t uniform_index(std::uint64_t n);

  std::vector<double> normal_vector(int n);

  // Fisher-Yates in-place shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derives an independent generator for the given stage name. Derivation
  // depends only on (seed, name), never on how much this stream has been
  // consumed.
  Rng substream(std::string_view name) const;
  Rng substream(std::string_view name, std::uint64_t index) const;

 private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

}  // namespace gwinv
