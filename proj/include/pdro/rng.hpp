#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

namespace pdro {

// Named purposes for independent random streams derived from one seed.
enum class Stream : std::uint64_t {
  kCovariates = 1,
  kMembership = 2,
  kTreatment = 3,
  kNoise = 4,
  kDirichlet = 5,
  kInit = 6,
  kShuffle = 7,
  kTarget = 8,
};

inline constexpr std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based 64-bit generator: output i of stream (seed, stream) is
/// splitmix64(key + i * golden), where key hashes seed and stream together.
/// Satisfies UniformRandomBitGenerator, so std distributions accept it.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  CounterRng(std::uint64_t seed, Stream stream, std::uint64_t substream = 0)
      : key_(splitmix64(splitmix64(seed) ^ splitmix64(static_cast<std::uint64_t>(stream) << 32 ^ substream))) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    ++counter_;
    return splitmix64(key_ + counter_ * 0x9e3779b97f4a7c15ULL);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  // Box-Muller keeps normal draws independent of the standard library's algorithm.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Marsaglia-Tsang; shapes below 1 use the u^(1/shape) boost.
  double gamma(double shape) {
    if (shape < 1.0) {
      double u = 0.0;
      do {
        u = uniform();
      } while (u <= 0.0);
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = 0.0;
      double v = 0.0;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace pdro
