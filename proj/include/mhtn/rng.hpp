#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace mhtn {

// splitmix64 stream. Distributions are hand-rolled so that the same seed
// produces the same byte-identical stream on every build.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller, no cached spare: one draw per call keeps replay trivial.
  double gaussian();

  // Uniform index in [0, n); n must be > 0.
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Fisher-Yates.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

std::uint64_t fnv1a64(const void* data, std::size_t n,
                      std::uint64_t h = 0xcbf29ce484222325ULL);

// Stable sub-stream seed for (base, tag, salt). Lets any parameter matrix or
// epoch stream be reproduced in isolation, independent of global draw order.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag,
                          std::uint64_t salt = 0);

}  // namespace mhtn
