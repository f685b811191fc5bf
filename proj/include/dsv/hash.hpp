#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

namespace dsv {

// FNV-1a 64-bit content hash; for manifests and determinism checks, not
// security.
inline std::uint64_t fnv1a64(std::span<const std::uint8_t> data,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
    for (std::uint8_t b : data) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t hash_file(const std::filesystem::path& path);
std::string hash_hex(std::uint64_t h);

} // namespace dsv
