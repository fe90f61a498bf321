#pragma once

// Deterministic random source. The engine is std::mt19937_64 but all
// variate transforms are explicit so that draws are identical across
// standard libraries and the full state (including the Box-Muller cache)
// serialises exactly into checkpoints.

#include <bit>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace vqtts {

class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi], bias-free.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    if (hi < lo) throw std::invalid_argument("Rng::uniform_int: empty range");
    const uint64_t r = static_cast<uint64_t>(hi - lo) + 1;
    if (r == 0) return static_cast<int64_t>(eng_());  // full 64-bit range
    const uint64_t bound = UINT64_MAX - UINT64_MAX % r;
    uint64_t v = eng_();
    while (v >= bound) v = eng_();
    return lo + static_cast<int64_t>(v % r);
  }

  double normal() {
    if (has_cache_) {
      has_cache_ = false;
      return cache_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
    cache_ = r * std::sin(theta);
    has_cache_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::string serialize() const {
    std::ostringstream os;
    os << eng_ << " " << (has_cache_ ? 1 : 0) << " " << std::bit_cast<uint64_t>(cache_);
    return os.str();
  }

  static Rng deserialize(const std::string& s) {
    Rng r;
    std::istringstream is(s);
    int flag = 0;
    uint64_t bits = 0;
    is >> r.eng_ >> flag >> bits;
    if (is.fail()) throw std::runtime_error("Rng::deserialize: malformed state string");
    r.has_cache_ = flag != 0;
    r.cache_ = std::bit_cast<double>(bits);
    return r;
  }

 private:
  std::mt19937_64 eng_;
  bool has_cache_ = false;
  double cache_ = 0.0;
};

}  // namespace vqtts
