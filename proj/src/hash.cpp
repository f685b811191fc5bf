#include "dsv/hash.hpp"

#include "dsv/errors.hpp"

#include <cstdio>
#include <fstream>
#include <vector>

namespace dsv {

std::uint64_t hash_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open for hashing: " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ull;
    std::vector<std::uint8_t> buf(1 << 16);
    while (in) {
        in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
        const std::size_t got = std::size_t(in.gcount());
        h = fnv1a64({buf.data(), got}, h);
    }
    return h;
}

std::string hash_hex(std::uint64_t h) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace dsv
