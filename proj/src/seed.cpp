#include "tof/seed.hpp"

#include <cmath>

namespace tof {

namespace {
constexpr std::uint64_t kRootTag = 0x726f6f7473656564ULL;   // "rootseed"
constexpr std::uint64_t kChildTag = 0x6368696c64736464ULL;  // "childsdd"
}  // namespace

std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t hash64(std::uint64_t a, std::uint64_t b) noexcept {
  return mix64(mix64(a) ^ (b + 0x632be59bd9b4e019ULL + (a << 6) + (a >> 2)));
}

std::uint64_t hash64(std::uint64_t a, std::uint64_t b, std::uint64_t c) noexcept {
  return hash64(hash64(a, b), c);
}

std::uint64_t root_seed(std::uint64_t master_seed, std::uint64_t ordinal) noexcept {
  return hash64(master_seed, kRootTag, ordinal);
}

std::uint64_t child_seed(std::uint64_t parent_seed, std::uint64_t ordinal, int frame_index) noexcept {
  return hash64(hash64(parent_seed, kChildTag), ordinal, static_cast<std::uint64_t>(frame_index));
}

double unit_interval(std::uint64_t word) noexcept {
  const double u = (static_cast<double>(word >> 11) + 0.5) * 0x1.0p-53;
  // the top word rounds up to 1.0
  return u < 1.0 ? u : std::nextafter(1.0, 0.0);
}

}  // namespace tof
