#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

#include "biodyn/error.hpp"

namespace biodyn {

using Rng = std::mt19937_64;

/// Independent streams used by a run. Each stream is seeded from
/// (run seed, stream tag, index) so that consuming one never shifts another.
enum class Stream : std::uint32_t {
  Init = 1,
  Shuffle = 2,
  Lifecycle = 3,
  Surgery = 4,
  Synthetic = 5,
  Eval = 6,
};

inline Rng make_rng(std::uint64_t seed, Stream stream, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

/// Uniform double in [0, 1) built from the top 53 bits; independent of the
/// standard library's distribution implementation.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// log of a Gamma(shape, 1) draw. Shapes below one use the boost
/// Gamma(a) = Gamma(a + 1) * U^(1/a) in log space, so draws for tiny shapes
/// stay finite instead of underflowing to zero.
inline double log_gamma_draw(Rng& rng, double shape) {
  require(shape > 0.0 && std::isfinite(shape), ErrorClass::Precondition, "gamma shape must be positive");
  double boost = 0.0;
  if (shape < 1.0) {
    double u = uniform01(rng);
    while (u <= 0.0) u = uniform01(rng);
    boost = std::log(u) / shape;
    shape += 1.0;
  }
  // Marsaglia & Tsang squeeze method, shape >= 1.
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = 0.0;
    double v = 0.0;
    do {
      // Polar Box-Muller for a standard normal.
      double s = 0.0;
      double u1 = 0.0;
      do {
        u1 = 2.0 * uniform01(rng) - 1.0;
        const double u2 = 2.0 * uniform01(rng) - 1.0;
        s = u1 * u1 + u2 * u2;
      } while (s >= 1.0 || s == 0.0);
      x = u1 * std::sqrt(-2.0 * std::log(s) / s);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform01(rng);
    if (u < 1.0 - 0.0331 * x * x * x * x) return std::log(d * v) + boost;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return std::log(d * v) + boost;
  }
}

/// Beta(alpha, beta) via the ratio of two Gamma draws, evaluated as a
/// logistic of the log-gamma difference.
inline double beta_draw(Rng& rng, double alpha, double beta) {
  const double lx = log_gamma_draw(rng, alpha);
  const double ly = log_gamma_draw(rng, beta);
  return 1.0 / (1.0 + std::exp(ly - lx));
}

/// Fisher-Yates permutation of [0, n) driven by uniform01.
inline std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(p[i - 1], p[j < i ? j : i - 1]);
  }
  return p;
}

}  // namespace biodyn
