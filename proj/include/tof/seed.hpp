#pragma once

#include <cstdint>

namespace tof {

/// SplitMix64 finalizer; bijective on 64-bit words.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Order-sensitive keyed combination of two words.
std::uint64_t hash64(std::uint64_t a, std::uint64_t b) noexcept;
std::uint64_t hash64(std::uint64_t a, std::uint64_t b, std::uint64_t c) noexcept;

/// Seed of the i-th root. Root seed sets are nested: the seeds of a run with N
/// roots are a prefix of the seeds of a run with N + 1 roots.
std::uint64_t root_seed(std::uint64_t master_seed, std::uint64_t ordinal) noexcept;

/// child_seed = hash64(parent_seed, child ordinal, frame index).
std::uint64_t child_seed(std::uint64_t parent_seed, std::uint64_t ordinal, int frame_index) noexcept;

/// Uniform double in the open interval (0, 1) taken from the top 53 bits.
double unit_interval(std::uint64_t word) noexcept;

}  // namespace tof
