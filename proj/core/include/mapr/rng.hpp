#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace mapr {

using Rng = std::mt19937_64;

// splitmix64 finalizer.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream seed for a (base, tag, indices...) tuple.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::string_view tag,
                                    std::initializer_list<std::uint64_t> indices = {}) {
  std::uint64_t h = mix_seed(base);
  for (char c : tag) h = mix_seed(h ^ static_cast<unsigned char>(c));
  for (std::uint64_t i : indices) h = mix_seed(h ^ i);
  return h;
}

}  // namespace mapr
