#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>
#include <vector>

namespace faultlens {

/// Deterministic child seed from a root seed and a path of labels
/// (stage names, indices). Built on std::seed_seq so that no two distinct
/// paths are related by simple arithmetic.
inline std::uint64_t derive_seed(std::uint64_t root,
                                 std::initializer_list<std::uint64_t> path) {
  std::vector<std::uint32_t> words;
  auto push64 = [&](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push64(root);
  for (std::uint64_t p : path) push64(p);
  std::seed_seq seq(words.begin(), words.end());
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

/// FNV-1a of a label, for use as a derive_seed path element.
constexpr std::uint64_t label_hash(std::string_view label) {
  std::uint64_t h = 14695981039346656037ull;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace faultlens
