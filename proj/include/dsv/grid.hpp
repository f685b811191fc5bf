#pragma once

#include "dsv/date.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dsv {

// Regular latitude/longitude raster. Latitudes and longitudes are
// lat_start + i*lat_step and lon_start + j*lon_step; gridpoint index
// g = i*n_lon + j (latitude-major).
struct Grid {
    double lat_start = 0.0;
    double lat_step = 1.0;
    std::uint32_t n_lat = 1;
    double lon_start = 0.0;
    double lon_step = 1.0;
    std::uint32_t n_lon = 1;

    Grid() = default;
    Grid(double lat0, double dlat, std::uint32_t nlat, double lon0, double dlon,
         std::uint32_t nlon);

    std::size_t size() const { return std::size_t(n_lat) * n_lon; }
    double lat(std::size_t i) const { return lat_start + double(i) * lat_step; }
    // Unwrapped longitude axis; lon_start itself is normalized to [-180, 180).
    double lon(std::size_t j) const { return lon_start + double(j) * lon_step; }
    // Longitude wrapped into [-180, 180) for display and file output.
    double lon_wrapped(std::size_t j) const;

    // Per-row cosine-latitude weights, cos(lat) in radians.
    std::vector<double> latitude_weights() const;

    bool operator==(const Grid&) const = default;

    void validate() const;
};

// Deterministic data: values indexed (time, gridpoint).
struct Field {
    Grid grid;
    std::vector<Date> times;
    std::string units;
    std::vector<double> values; // (T, G) row-major

    std::size_t n_time() const { return times.size(); }
    std::size_t n_grid() const { return grid.size(); }
    double& at(std::size_t t, std::size_t g) { return values[t * n_grid() + g]; }
    double at(std::size_t t, std::size_t g) const { return values[t * n_grid() + g]; }
    std::span<const double> row(std::size_t t) const {
        return {values.data() + t * n_grid(), n_grid()};
    }
    std::span<double> row(std::size_t t) { return {values.data() + t * n_grid(), n_grid()}; }

    // Index of an exact date, or npos.
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);
    std::size_t find_time(Date d) const;

    void validate() const;
};

// Ensemble data: values indexed (initialization, lead, member, gridpoint).
struct EnsembleField {
    Grid grid;
    std::vector<Date> inits;
    std::uint32_t n_lead = 1;
    std::uint32_t n_member = 1;
    std::string units;
    std::vector<double> values; // (T, L, M, G) row-major

    std::size_t n_init() const { return inits.size(); }
    std::size_t n_grid() const { return grid.size(); }
    std::size_t index(std::size_t t, std::size_t l, std::size_t m, std::size_t g) const {
        return ((t * n_lead + l) * n_member + m) * n_grid() + g;
    }
    double& at(std::size_t t, std::size_t l, std::size_t m, std::size_t g) {
        return values[index(t, l, m, g)];
    }
    double at(std::size_t t, std::size_t l, std::size_t m, std::size_t g) const {
        return values[index(t, l, m, g)];
    }
    std::span<const double> member_slice(std::size_t t, std::size_t l, std::size_t m) const {
        return {values.data() + index(t, l, m, 0), n_grid()};
    }
    std::span<double> member_slice(std::size_t t, std::size_t l, std::size_t m) {
        return {values.data() + index(t, l, m, 0), n_grid()};
    }

    void validate() const;
};

// Values aligned with an ensemble by (initialization, lead), e.g. the
// verifying truth for each forecast window.
struct LeadAlignedField {
    std::size_t n_time = 0, n_lead = 0, n_grid = 0;
    std::vector<double> values; // (T, L, G)

    LeadAlignedField() = default;
    LeadAlignedField(std::size_t t, std::size_t l, std::size_t g)
        : n_time(t), n_lead(l), n_grid(g), values(t * l * g, 0.0) {}
    double& at(std::size_t t, std::size_t l, std::size_t g) {
        return values[(t * n_lead + l) * n_grid + g];
    }
    double at(std::size_t t, std::size_t l, std::size_t g) const {
        return values[(t * n_lead + l) * n_grid + g];
    }
    std::span<const double> slice(std::size_t t, std::size_t l) const {
        return {values.data() + (t * n_lead + l) * n_grid, n_grid};
    }
};

// Cosine-latitude weighted spatial mean of one value per gridpoint.
double latitude_weighted_mean(std::span<const double> per_grid, const Grid& grid);

// Arithmetic mean over the member axis; result indexed (t, l, g).
std::vector<double> ensemble_mean(const EnsembleField& ens);

} // namespace dsv
