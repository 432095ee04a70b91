#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace nicreg {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Derives an independent 64-bit seed for a named stream of a master seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stream) {
  return splitmix64(master ^ splitmix64(fnv1a64(stream)));
}

using Rng = std::mt19937_64;

// The four independent streams every training run draws from. Keeping them
// apart means the source model can never perturb the codec's randomness.
struct RunStreams {
  Rng data;
  Rng noise;
  Rng init;
  Rng source_init;

  explicit RunStreams(std::uint64_t seed)
      : data(derive_seed(seed, "data")),
        noise(derive_seed(seed, "aun-noise")),
        init(derive_seed(seed, "codec-init")),
        source_init(derive_seed(seed, "source-init")) {}
};

// Uniform double in [0, 1) from the top 53 bits; identical on every platform.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace nicreg
