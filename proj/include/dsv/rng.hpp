#pragma once

#include <array>
#include <cstdint>

namespace dsv {

// Counter-based random numbers: every draw is a pure function of
// (key, counter), so substreams can be derived from coordinate tuples and
// evaluated in any order on any platform with identical results.

// Philox4x32 with 10 rounds. Returns four 32-bit words.
std::array<std::uint32_t, 4> philox4x32(std::uint64_t key, std::uint64_t ctr_hi,
                                        std::uint64_t ctr_lo);

// Stream-purpose tags keep independent uses of the same seed disjoint.
enum class StreamTag : std::uint16_t {
    synth_field = 1,
    synth_coupling = 2,
    ensemble_error = 3,
    perturbation = 4,
    bootstrap = 5,
    hyper_search = 6,
    shuffle = 7,
    param_init = 8,
    subsample = 9,
};

// Packs a coordinate tuple into the 128-bit Philox counter. Field widths:
// ctr_hi = tag(16) | a(32) | b(16), ctr_lo = c(16) | d(16) | e(32).
struct Substream {
    std::uint64_t ctr_hi = 0;
    std::uint64_t ctr_lo = 0;

    Substream(StreamTag tag, std::uint64_t a = 0, std::uint64_t b = 0, std::uint64_t c = 0,
              std::uint64_t d = 0, std::uint64_t e = 0)
        : ctr_hi((static_cast<std::uint64_t>(tag) << 48) | ((a & 0xffffffffull) << 16) |
                 (b & 0xffffull)),
          ctr_lo(((c & 0xffffull) << 48) | ((d & 0xffffull) << 32) | (e & 0xffffffffull)) {}
};

// Two doubles in the open interval (0, 1) from one Philox evaluation.
std::array<double, 2> uniform01_pair(std::uint64_t key, const Substream& s);

inline double uniform01(std::uint64_t key, const Substream& s) {
    return uniform01_pair(key, s)[0];
}

// Standard normal quantile function (inverse CDF), accurate to ~1e-15.
double inverse_normal_cdf(double p);

inline double normal_draw(std::uint64_t key, const Substream& s) {
    return inverse_normal_cdf(uniform01(key, s));
}

// Uniform integer in [0, n). n must be positive.
std::size_t uniform_index(std::uint64_t key, const Substream& s, std::size_t n);

// Derives an independent 64-bit seed from a parent seed and coordinates.
inline std::uint64_t derive_seed(std::uint64_t key, std::uint64_t a, std::uint64_t b = 0) {
    const auto w = philox4x32(key, a, b);
    return (static_cast<std::uint64_t>(w[0]) << 32) | w[1];
}

} // namespace dsv
