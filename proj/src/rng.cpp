#include "srttt/rng.hpp"

#include <cmath>

namespace srttt::rng {

uint64_t Stream::next_u64() {
  state_ += 0x9e3779b97f4a7c15ull;
  uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

double Stream::next_double() {
  // 53-bit mantissa construction, [0, 1)
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Stream::next_normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller; 1-u avoids log(0)
  const double u = 1.0 - next_double();
  const double v = next_double();
  const double r = std::sqrt(-2.0 * std::log(u));
  const double a = 6.283185307179586 * v;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

int Stream::next_int(int lo, int hi) {
  const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
  return lo + static_cast<int>(next_u64() % span);
}

uint64_t fnv1a(const void* bytes, size_t n, uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

uint64_t mix(uint64_t seed, std::string_view label, uint64_t index) {
  uint64_t h = fnv1a(&seed, sizeof(seed));
  h = fnv1a(label.data(), label.size(), h);
  h = fnv1a(&index, sizeof(index), h);
  return h;
}

}  // namespace srttt::rng
