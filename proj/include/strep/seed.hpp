#pragma once

#include <cstdint>

namespace strep {

inline std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Independent seed for one named stream of a run.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) { return splitmix(seed ^ splitmix(stream)); }

}  // namespace strep
