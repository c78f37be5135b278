#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace guard_lab {

// 64-bit FNV-1a; stable across platforms, unlike std::hash.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 14695981039346656037ull);

// Independent engine per (root seed, stream name), e.g. "data", "init", "subsample".
std::mt19937_64 substream(std::uint64_t root_seed, std::string_view name);

}  // namespace guard_lab
