#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace pvqe {

// Error taxonomy. Everything thrown by the library derives from Error so
// callers can catch one type at the CLI boundary.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidConfig : Error { using Error::Error; };
struct InvalidInput : Error { using Error::Error; };
struct InvalidState : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct CorruptFile : IoError { using IoError::IoError; };
struct UnsupportedVersion : IoError { using IoError::IoError; };
struct UnsupportedFormat : IoError { using IoError::IoError; };
struct UndefinedMetric : Error { using Error::Error; };
struct TrainingDiverged : Error { using Error::Error; };

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Mix a base seed with stream/index labels so parallel data generation is
// deterministic per (seed, label) regardless of scheduling.
inline uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b = 0) {
  return splitmix64(seed ^ splitmix64(a ^ splitmix64(b + 0x51ed2701)));
}

// Deterministic RNG. Distributions are hand-rolled on top of the raw
// generator so results do not depend on the standard library vendor.
class Rng {
 public:
  explicit Rng(uint64_t seed) : s_(splitmix64(seed ? seed : 0x2545f4914f6cdd1dULL)) {}

  uint64_t next_u64() {
    s_ = splitmix64(s_ + 0x9e3779b97f4a7c15ULL);
    return s_;
  }
  uint32_t next_u32() { return static_cast<uint32_t>(next_u64() >> 32); }

  // [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int uniform_int(int lo, int hi) {  // inclusive range
    return lo + int(next_u64() % uint64_t(hi - lo + 1));
  }
  bool bernoulli(double p) { return uniform() < p; }

  double normal() {
    // Box-Muller; one value per call, cache the second.
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 1e-300) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  uint64_t s_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

constexpr double kPi = 3.14159265358979323846264338327950288;

}  // namespace pvqe
