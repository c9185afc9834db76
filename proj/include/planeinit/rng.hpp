#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "planeinit/core.hpp"

namespace planeinit {

// Seedable RNG with hand-rolled distribution transforms. std::*_distribution
// sequences are implementation-defined, so the transforms live here to keep
// every seeded pipeline reproducible across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  int uniform_index(int n) {
    return static_cast<int>(engine_() % static_cast<std::uint64_t>(n));
  }

  // Standard normal via Box-Muller; one value per call, cached pair.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  Vec3 normal_vec3(double sigma) {
    return Vec3(normal(0.0, sigma), normal(0.0, sigma), normal(0.0, sigma));
  }

  // Uniform direction on the unit sphere.
  Vec3 unit_vector() {
    const double z = uniform(-1.0, 1.0);
    const double phi = uniform(0.0, 2.0 * M_PI);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    return Vec3(r * std::cos(phi), r * std::sin(phi), z);
  }

  // k distinct indices from [0, n); insertion-ordered draw.
  std::vector<int> sample_distinct(int k, int n) {
    std::vector<int> out;
    out.reserve(k);
    while (static_cast<int>(out.size()) < k) {
      const int idx = uniform_index(n);
      bool seen = false;
      for (int v : out) {
        if (v == idx) { seen = true; break; }
      }
      if (!seen) out.push_back(idx);
    }
    return out;
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Derive a sub-seed for an independent stream (SplitMix64 mixing).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace planeinit
