#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace safemon {

using Rng = std::mt19937_64;

/// Independent stream for (master, tags...). Streams with different tag tuples
/// do not share state, so rollouts can be generated in any order.
inline Rng derive_rng(std::uint64_t master, std::initializer_list<std::uint64_t> tags) {
  std::vector<std::uint32_t> words;
  words.reserve(2 + 2 * tags.size());
  auto push = [&](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(master);
  for (auto t : tags) push(t);
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> tags) {
  auto rng = derive_rng(master, tags);
  return rng();
}

/// Stream tags. Training and test rollouts never share a tag tuple.
namespace stream {
inline constexpr std::uint64_t collect = 0xC011EC7ULL;
inline constexpr std::uint64_t test = 0x7E57ULL;
inline constexpr std::uint64_t subsample = 0x5AB5ULL;
inline constexpr std::uint64_t health = 0x4EA17ULL;
inline constexpr std::uint64_t session = 0x5E55ULL;
}  // namespace stream

}  // namespace safemon
