#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "orbitkit/tensor.hpp"

namespace orbitkit {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Child stream seed for a named consumer. Adding a consumer never perturbs the others.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose) {
  std::uint64_t h = 0xCBF29CE484222325ull;  // FNV-1a
  for (unsigned char c : purpose) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return splitmix64(h ^ splitmix64(seed));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, std::string_view purpose) : engine_(derive_seed(seed, purpose)) {}

  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  std::int64_t integer(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
  }
  std::uint64_t next() { return engine_(); }

  template <typename Real>
  Tensor<Real> normal_tensor(Shape shape, double stddev = 1.0) {
    Tensor<Real> t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<Real>(stddev * normal());
    return t;
  }

  template <typename Real>
  Tensor<Real> uniform_tensor(Shape shape, double lo = -1.0, double hi = 1.0) {
    Tensor<Real> t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<Real>(uniform(lo, hi));
    return t;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace orbitkit
