#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string_view>

#include <Eigen/Dense>

namespace heatmapbcc {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& s) {
  s += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = s;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace detail

/// Named deterministic random stream.
///
/// mt19937_64 is fully specified by the standard, and every variate below is
/// derived from its raw output with fixed transforms (no std::*_distribution),
/// so sequences are reproducible across platforms and standard libraries.
/// Streams are keyed by (seed, name, k0, k1); distinct keys give independent
/// streams for e.g. per-point sampling or per-experiment generation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::string_view stream = "", std::uint64_t k0 = 0,
               std::uint64_t k1 = 0) {
    std::uint64_t s = seed;
    detail::splitmix64(s);
    s ^= detail::fnv1a64(stream);
    detail::splitmix64(s);
    s ^= k0;
    detail::splitmix64(s);
    s ^= k1;
    gen_.seed(detail::splitmix64(s));
  }

  std::uint64_t raw() { return gen_(); }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(raw() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1]; safe as a log() argument.
  double uniform_pos() { return static_cast<double>((raw() >> 11) + 1) * 0x1.0p-53; }

  /// Uniform integer in [0, n) by rejection, free of modulo bias.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = raw();
    while (x >= limit) x = raw();
    return x % n;
  }

  /// Standard normal via Box-Muller; consumes exactly two raw draws.
  double normal() {
    const double u1 = uniform_pos();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Gamma(shape, 1) by Marsaglia-Tsang, boosted for shape < 1.
  double gamma(double shape) {
    if (!(shape > 0.0)) throw std::invalid_argument("Rng::gamma: shape must be positive");
    if (shape < 1.0) {
      const double u = uniform_pos();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      const double u = uniform_pos();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  Eigen::VectorXd dirichlet(const Eigen::VectorXd& alpha) {
    Eigen::VectorXd g(alpha.size());
    for (int i = 0; i < alpha.size(); ++i) g[i] = gamma(alpha[i]);
    const double s = g.sum();
    if (!(s > 0.0)) throw std::runtime_error("Rng::dirichlet: degenerate draw");
    return g / s;
  }

  /// Index draw by inverse CDF; probs need not be exactly normalized.
  int categorical(const Eigen::VectorXd& probs) {
    const double total = probs.sum();
    double u = uniform_pos() * total;
    for (int i = 0; i < probs.size(); ++i) {
      u -= probs[i];
      if (u <= 0.0) return i;
    }
    return static_cast<int>(probs.size()) - 1;
  }

  /// Fisher-Yates shuffle of 0..n-1.
  std::vector<int> permutation(int n) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    for (int i = n - 1; i > 0; --i) {
      const int j = static_cast<int>(below(static_cast<std::uint64_t>(i) + 1));
      std::swap(p[i], p[j]);
    }
    return p;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace heatmapbcc
