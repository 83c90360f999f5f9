#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include "attriq/digest.hpp"

namespace attriq {

namespace detail {
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}
}  // namespace detail

// Counter-based stream: output i is a pure function of (key, i), so a
// stream is reproducible independent of scheduling or call order.
// Sub-streams are derived from the key alone, never from consumption state.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t key) : key_(key) {}

  static RandomStream keyed(std::uint64_t master_seed, std::string_view a,
                            std::uint64_t b) {
    std::uint64_t h = fnv1a64(a, master_seed ^ 0x9e3779b97f4a7c15ull);
    return RandomStream(detail::mix64(h ^ (b * 0xd1342543de82ef95ull)));
  }

  RandomStream child(std::string_view tag) const {
    return RandomStream(detail::mix64(key_ ^ fnv1a64(tag)));
  }

  RandomStream child(std::uint64_t tag) const {
    return RandomStream(detail::mix64(key_ ^ (tag * 0x2545f4914f6cdd1dull)));
  }

  std::uint64_t key() const { return key_; }

  std::uint64_t next_u64() {
    counter_ += 0x9e3779b97f4a7c15ull;
    return detail::mix64(key_ ^ counter_);
  }

  // Uniform in [0,1), 53-bit mantissa.
  double next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Unbiased uniform in [0, n).
  std::uint64_t next_below(std::uint64_t n) {
    if (n == 0) return 0;
    std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Box-Muller; one spare value cached.
  double next_gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = next_unit();
    } while (u1 <= 0.0);
    double u2 = next_unit();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace attriq
