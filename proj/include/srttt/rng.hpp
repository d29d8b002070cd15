#pragma once

#include <cstdint>
#include <string_view>

namespace srttt::rng {

// Deterministic splitmix64 stream. All randomness in the project flows from
// one config seed through named sub-streams (derive below), so runs are
// bitwise reproducible and stream consumers stay decoupled from each other.
class Stream {
 public:
  explicit Stream(uint64_t state) : state_(state) {}

  uint64_t next_u64();
  double next_double();                 // uniform [0, 1)
  double next_normal();                 // standard normal, Box-Muller
  int next_int(int lo, int hi);         // uniform inclusive [lo, hi]

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// FNV-1a of (seed, label, index); used both for sub-stream derivation and as
// a general-purpose stable hash (config hashing, checkpoint checksums).
uint64_t fnv1a(const void* bytes, size_t n, uint64_t h = 14695981039346656037ull);
uint64_t mix(uint64_t seed, std::string_view label, uint64_t index = 0);

inline Stream derive(uint64_t seed, std::string_view label, uint64_t index = 0) {
  return Stream(mix(seed, label, index));
}

}  // namespace srttt::rng
