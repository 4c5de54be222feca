#pragma once

#include <cstdint>
#include <random>

namespace mimic {

/// Independent, reproducible generator for (seed, stream, index), e.g. the
/// shuffle of epoch 3 or the dropout masks of step 1200.
inline std::mt19937_64 derive_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

namespace rng_stream {
inline constexpr std::uint64_t kShuffle = 1;
inline constexpr std::uint64_t kStep = 2;
inline constexpr std::uint64_t kInit = 3;
inline constexpr std::uint64_t kTrials = 4;
inline constexpr std::uint64_t kSynthesis = 5;
}  // namespace rng_stream

}  // namespace mimic
