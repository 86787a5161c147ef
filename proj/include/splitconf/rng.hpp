#pragma once

#include <cmath>
#include <cstdint>

namespace splitconf {

// Counter-based splittable generator.  Every stream is a SplitMix64 walk
// whose key is derived by hashing (parent key, tag), so streams keyed by
// (seed, trial, substream) never share state and parallel trials are
// bit-reproducible regardless of thread count or execution order.
class SplitRng {
 public:
  explicit SplitRng(std::uint64_t seed) : key_(mix(seed + kGamma)) {}

  // Derive an independent child stream.  Children with distinct tags (or
  // from distinct parents) produce unrelated sequences.
  [[nodiscard]] SplitRng split(std::uint64_t tag) const {
    SplitRng child(0);
    child.key_ = mix(key_ ^ mix(tag + kGamma));
    child.counter_ = 0;
    child.have_cached_normal_ = false;
    return child;
  }

  std::uint64_t next_u64() { return mix(key_ + (++counter_) * kGamma); }

  // Uniform on [0, 1) with 53-bit resolution.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform01();
  }

  bool bernoulli(double p) { return uniform01() < p; }

  // Standard normal via Box-Muller (no rejection, so the draw count per
  // call is fixed and streams stay aligned across platforms).
  double normal() {
    if (have_cached_normal_) {
      have_cached_normal_ = false;
      return cached_normal_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    if (u1 < 0x1.0p-100) u1 = 0x1.0p-100;
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * kPi * u2;
    cached_normal_ = radius * std::sin(angle);
    have_cached_normal_ = true;
    return radius * std::cos(angle);
  }

  // Exponential with the given rate, sampled by inverse CDF.
  double exponential(double rate) {
    return -std::log1p(-uniform01()) / rate;
  }

 private:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;
  static constexpr double kPi = 3.14159265358979323846;

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool have_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

}  // namespace splitconf
