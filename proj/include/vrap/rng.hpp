#pragma once

#include <cstdint>

namespace vrap {

// SplitMix64 (Vigna's fixed-increment variant of SplittableRandom).
// Used for seeding xoshiro state and for deriving sub-seeds from the
// master seed: sub-seed k is the (k+1)-th output of SplitMix64(master).
struct SplitMix64 {
  uint64_t state;

  explicit SplitMix64(uint64_t seed) : state(seed) {}

  uint64_t next() {
    uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }
};

inline uint64_t derive_seed(uint64_t master, uint64_t index) {
  SplitMix64 sm(master);
  uint64_t s = 0;
  for (uint64_t i = 0; i <= index; ++i) s = sm.next();
  return s;
}

// xoshiro256** seeded via SplitMix64. All randomness in the artifact flows
// through this generator so runs are reproducible bit-for-bit.
class Xoshiro256 {
 public:
  explicit Xoshiro256(uint64_t seed) {
    SplitMix64 sm(seed);
    for (auto& w : s_) w = sm.next();
  }

  uint64_t next() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform double in [0,1) from the top 53 bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + uniform() * (hi - lo); }

  // Uniform integer in [0, n).
  int uniform_int(int n) {
    int v = static_cast<int>(uniform() * n);
    return v >= n ? n - 1 : v;
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  uint64_t s_[4];
};

// FNV-1a, used for config/dataset/placement hashes embedded in reports.
struct Fnv1a64 {
  uint64_t hash = 0xcbf29ce484222325ull;

  void update(const void* data, uint64_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (uint64_t i = 0; i < len; ++i) {
      hash ^= p[i];
      hash *= 0x100000001b3ull;
    }
  }

  void update_u64(uint64_t v) { update(&v, sizeof(v)); }
};

}  // namespace vrap
