#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace freekd {

// Error taxonomy shared by all components. Every failure mode maps to one of
// these so callers (and the CLI exit-code logic) can tell config mistakes
// apart from runtime faults.
struct DimensionError : std::runtime_error { using std::runtime_error::runtime_error; };
struct StructureError : std::runtime_error { using std::runtime_error::runtime_error; };
struct StateError     : std::runtime_error { using std::runtime_error::runtime_error; };
struct ValueError     : std::runtime_error { using std::runtime_error::runtime_error; };
struct TrainingError  : std::runtime_error { using std::runtime_error::runtime_error; };
struct ConfigError    : std::runtime_error { using std::runtime_error::runtime_error; };
struct NumericError   : std::runtime_error { using std::runtime_error::runtime_error; };
struct IoError        : std::runtime_error { using std::runtime_error::runtime_error; };

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s);

// Deterministic RNG. mt19937_64 output is fully specified by the standard and
// all mappings below avoid std::*_distribution (whose algorithms are
// implementation-defined), so identical seeds give identical streams on any
// platform.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // Uniform in [0,1) with 53 significant bits.
  double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Marsaglia polar method, no cached spare so the draw count per call is
  // data-dependent but seed-deterministic.
  double normal() {
    for (;;) {
      double u = 2.0 * uniform01() - 1.0;
      double v = 2.0 * uniform01() - 1.0;
      double s = u * u + v * v;
      if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
    }
  }

  // Uniform integer in [0, n). Rejection sampling keeps it unbiased.
  int64_t below(int64_t n) {
    const uint64_t un = static_cast<uint64_t>(n);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t x;
    do { x = eng_(); } while (x >= limit);
    return static_cast<int64_t>(x % un);
  }

  bool coin(double p) { return uniform01() < p; }

  // Derives an independent stream seed from a base seed and a purpose tag, so
  // e.g. parameter init and batch shuffling never share draws.
  static uint64_t derive(uint64_t seed, std::string_view tag);

 private:
  std::mt19937_64 eng_;
};

}  // namespace freekd
