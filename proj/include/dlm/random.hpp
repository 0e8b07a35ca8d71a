#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>

namespace dlm {

using Rng = std::mt19937_64;

// Seed splitting.
//
// Every random quantity in the library is drawn from an Rng seeded with
//   derive_seed(parent, stream, index) = mix(mix(parent ^ mix(stream)) + index * golden)
// where mix is the SplitMix64 finalizer. A master seed therefore fans out
// into independent, order-free streams (dataset paths, inner Monte Carlo,
// run-through replications, ...) that can be regenerated in isolation.
namespace seed {

constexpr std::uint64_t mix(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t derive(std::uint64_t parent, std::uint64_t stream,
                               std::uint64_t index = 0) noexcept {
  return mix(mix(parent ^ mix(stream)) + index * 0x9e3779b97f4a7c15ULL);
}

// Stream tags. Values are part of the reproducibility contract; never renumber.
enum Stream : std::uint64_t {
  kPathNoise = 1,
  kCounts = 2,
  kInit = 3,
  kInnerMc = 4,
  kShuffle = 5,
  kRunThrough = 6,
  kTestSet = 7,
  kArrivals = 8,
  kService = 9,
  kDataset = 10,
  kTrain = 11,
  kContext = 12,
};

}  // namespace seed

inline Rng make_rng(std::uint64_t s) { return Rng(seed::mix(s)); }

// Uniform on the open interval (0, 1).
inline double uniform01(Rng& rng) {
  double u;
  do {
    u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  } while (u == 0.0);
  return u;
}

inline double standard_normal(Rng& rng) {
  // Marsaglia polar method on our own uniforms so the stream does not depend
  // on the standard library's distribution implementation.
  for (;;) {
    const double u = 2.0 * uniform01(rng) - 1.0;
    const double v = 2.0 * uniform01(rng) - 1.0;
    const double s = u * u + v * v;
    if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
  }
}

// Poisson(mean) variate. Inversion by sequential search below 30, PTRS
// transformed rejection (Hormann 1993) above.
inline std::int64_t poisson(Rng& rng, double mean) {
  if (!(mean > 0.0)) return 0;
  if (mean < 30.0) {
    const double u = uniform01(rng);
    double p = std::exp(-mean);
    double cdf = p;
    std::int64_t k = 0;
    while (u > cdf) {
      ++k;
      p *= mean / static_cast<double>(k);
      cdf += p;
      if (p < std::numeric_limits<double>::min() && cdf < u) break;  // tail underflow
    }
    return k;
  }
  const double slam = std::sqrt(mean);
  const double loglam = std::log(mean);
  const double b = 0.931 + 2.53 * slam;
  const double a = -0.059 + 0.02483 * b;
  const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
  const double vr = 0.9277 - 3.6224 / (b - 2.0);
  for (;;) {
    const double u = uniform01(rng) - 0.5;
    const double v = uniform01(rng);
    const double us = 0.5 - std::fabs(u);
    const auto k = static_cast<std::int64_t>(std::floor((2.0 * a / us + b) * u + mean + 0.43));
    if (us >= 0.07 && v <= vr) return k;
    if (k < 0 || (us < 0.013 && v > us)) continue;
    const double lhs = std::log(v) + std::log(inv_alpha) - std::log(a / (us * us) + b);
    const double rhs = -mean + static_cast<double>(k) * loglam - std::lgamma(static_cast<double>(k) + 1.0);
    if (lhs <= rhs) return k;
  }
}

}  // namespace dlm
