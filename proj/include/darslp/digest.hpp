#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace darslp {

// 64-bit FNV-1a. Used for layout hashes, config digests and artifact
// integrity stamps; these are consistency checks, not cryptography.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t seed = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

inline std::string digest_hex(std::uint64_t h) {
    static const char* hexd = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = hexd[h & 0xf];
        h >>= 4;
    }
    return out;
}

std::uint64_t digest_file(const std::string& path);  // binio.cpp

}  // namespace darslp
