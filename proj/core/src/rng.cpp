#include "gwinv/rng.hpp"

#include <cmath>
#include <numbers>

#include "gwinv/common.hpp"

namespace gwinv {
namespace {

// splitmix64 finalizer; decorrelates derived seeds.
std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

std::uint64_t Rng::next_u64() { return gen_(); }

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  if (has_cached_normal_) {
    has_cached_normal_ = false;
    return cached_normal_;
  }
  // Box-Muller on u1 in (0, 1], u2 in [0, 1).
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * std::numbers::pi * u2;
  cached_normal_ = r * std::sin(a);
  has_cached_normal_ = true;
  return r * std::cos(a);
}

double Rng::normal(double mean, double stddev) {
  return mean + stddev * normal();
}

std::uint64_t Rng::uniform_index(std::uint64_t n) {
  if (n == 0) throw NumericError("uniform_index: empty range");
  // Modulo map; bias is ~n/2^64 and irrelevant at the sizes used here.
  return next_u64() % n;
}

std::vector<double> Rng::normal_vector(int n) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = normal();
  return v;
}

Rng Rng::substream(std::string_view name) const {
  std::uint64_t h = fnv1a64(name);
  return Rng(mix64(seed_ ^ mix64(h)));
}

Rng Rng::substream(std::string_view name, std::uint64_t index) const {
  std::uint64_t h = fnv1a64(name);
  return Rng(mix64(seed_ ^ mix64(h) ^ mix64(index * 0x9e3779b97f4a7c15ull + 1)));
}

}  // namespace gwinv
