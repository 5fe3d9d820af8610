#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace medground {

// Seeded generator whose draws are identical on every standard library.
// std::uniform_*_distribution is implementation-defined, so bounded and
// real-valued draws are derived from the raw engine output here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t Next() { return engine_(); }

  // Uniform integer in [0, n). n must be positive.
  std::uint64_t Index(std::uint64_t n);

  // Uniform double in [0, 1) with 53 random bits.
  double Unit() { return static_cast<double>(Next() >> 11) * 0x1.0p-53; }

  // Uniform double in [lo, hi).
  double Uniform(double lo, double hi) { return lo + (hi - lo) * Unit(); }

 private:
  std::mt19937_64 engine_;
};

// 64-bit FNV-1a.
std::uint64_t Fnv1a64(std::string_view bytes);

// Per-item seed derived from a run seed and a stable item key, so results do
// not depend on processing order.
std::uint64_t DeriveSeed(std::uint64_t run_seed, std::string_view key);

}  // namespace medground
