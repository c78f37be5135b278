#include "guard_lab/rng.hpp"

namespace guard_lab {

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::mt19937_64 substream(std::uint64_t root_seed, std::string_view name) {
  // splitmix64 finalizer over the mixed key
  std::uint64_t z = root_seed ^ fnv1a(name);
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  z ^= z >> 31;
  return std::mt19937_64(z);
}

}  // namespace guard_lab
