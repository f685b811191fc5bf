#pragma once

#include "dsv/grid.hpp"
#include "dsv/rng.hpp"

#include <cmath>

namespace testutil {

using namespace dsv;

inline Grid small_grid(std::uint32_t n_lat = 2, std::uint32_t n_lon = 3) {
    return Grid(40.0, 5.0, n_lat, -10.0, 5.0, n_lon);
}

inline Field make_field(const Grid& g, std::size_t T, std::uint64_t seed,
                        double scale = 1.0, int first_day = 18000) {
    Field f;
    f.grid = g;
    f.units = "m/s";
    for (std::size_t t = 0; t < T; ++t) f.times.push_back(Date(int(first_day + 7 * t)));
    f.values.resize(T * g.size());
    for (std::size_t i = 0; i < f.values.size(); ++i)
        f.values[i] = scale * normal_draw(seed, Substream(StreamTag::synth_field, i, 1, 1));
    return f;
}

inline EnsembleField make_ensemble(const Grid& g, std::size_t T, std::uint32_t L,
                                   std::uint32_t M, std::uint64_t seed, double scale = 1.0,
                                   int first_day = 18000) {
    EnsembleField e;
    e.grid = g;
    e.n_lead = L;
    e.n_member = M;
    e.units = "m/s";
    for (std::size_t t = 0; t < T; ++t) e.inits.push_back(Date(int(first_day + 7 * t)));
    e.values.resize(T * L * M * g.size());
    for (std::size_t i = 0; i < e.values.size(); ++i)
        e.values[i] = scale * normal_draw(seed, Substream(StreamTag::synth_field, i, 2, 2));
    return e;
}

inline LeadAlignedField make_truth(const Grid& g, std::size_t T, std::uint32_t L,
                                   std::uint64_t seed, double scale = 1.0) {
    LeadAlignedField y(T, L, g.size());
    for (std::size_t i = 0; i < y.values.size(); ++i)
        y.values[i] = scale * normal_draw(seed, Substream(StreamTag::synth_field, i, 3, 3));
    return y;
}

inline bool close(double a, double b, double tol = 1e-12) {
    return std::fabs(a - b) <= tol * std::max({1.0, std::fabs(a), std::fabs(b)});
}

} // namespace testutil
