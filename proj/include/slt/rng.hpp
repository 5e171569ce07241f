#pragma once

// Counter-based random generator.  Each draw hashes (key, counter) with the
// 64-bit finalizer from MurmurHash3, so streams are stateless functions of a
// key and an index: identical seeds give identical draws on every platform,
// and split() derives statistically independent child streams.

#include <cmath>
#include <cstdint>

#include "common.hpp"

namespace slt {

namespace detail {
inline uint64_t mix64(uint64_t z) {
  z ^= z >> 33;
  z *= 0xff51afd7ed558ccdULL;
  z ^= z >> 33;
  z *= 0xc4ceb9fe1a85ec53ULL;
  z ^= z >> 33;
  return z;
}
constexpr uint64_t kGolden = 0x9e3779b97f4a7c15ULL;  // 2^64 / phi
}  // namespace detail

class Rng {
 public:
  Rng() : key_(0), counter_(0) {}
  explicit Rng(uint64_t seed)
      : key_(detail::mix64(seed ^ 0x5851f42d4c957f2dULL)), counter_(0) {}

  // Independent child stream; does not disturb this stream's counter.
  Rng split(uint64_t stream) const {
    Rng r;
    r.key_ = detail::mix64(key_ ^ detail::mix64(stream + detail::kGolden));
    r.counter_ = 0;
    return r;
  }

  uint64_t next_u64() {
    return detail::mix64(key_ + (++counter_) * detail::kGolden);
  }

  // Uniform in [0,1), 53-bit resolution.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  // Integer in [0, n).  Modulo bias is < n/2^64, irrelevant for the small
  // ranges used here.
  int64_t next_below(int64_t n) {
    check(n > 0, "next_below: n must be positive, got ", n);
    return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
  }

  // Box-Muller, cosine branch only: consumes exactly two draws per normal so
  // a sequence of normals is a pure function of (key, starting counter).
  double normal() {
    double u1 =
        (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0,1]
    double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  uint64_t key() const { return key_; }
  uint64_t counter() const { return counter_; }
  void set_state(uint64_t key, uint64_t counter) {
    key_ = key;
    counter_ = counter;
  }

 private:
  uint64_t key_;
  uint64_t counter_;
};

}  // namespace slt
