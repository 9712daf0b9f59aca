#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "darslp/digest.hpp"

namespace darslp {

using Rng = std::mt19937_64;

// One global seed, expanded into named substreams so pipeline stages are
// independently reproducible regardless of execution order.
inline std::uint64_t substream_seed(std::uint64_t global_seed, std::string_view name) {
    std::uint64_t h = fnv1a64(name);
    h ^= global_seed + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    return h;
}

inline Rng make_rng(std::uint64_t global_seed, std::string_view name) {
    return Rng(substream_seed(global_seed, name));
}

inline double uniform(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double gauss(Rng& rng, double mean = 0.0, double sd = 1.0) {
    return std::normal_distribution<double>(mean, sd)(rng);
}

}  // namespace darslp
