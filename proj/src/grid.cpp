#include "dsv/grid.hpp"

#include "dsv/errors.hpp"

#include <cmath>

namespace dsv {

namespace {

constexpr double kDegToRad = 3.14159265358979323846 / 180.0;

double wrap_lon(double lon) {
    double x = std::fmod(lon + 180.0, 360.0);
    if (x < 0.0) x += 360.0;
    return x - 180.0;
}

void require_finite(std::span<const double> v, const char* what) {
    for (double x : v)
        if (!std::isfinite(x)) throw ValidationError(std::string(what) + " contains NaN/Inf");
}

} // namespace

Grid::Grid(double lat0, double dlat, std::uint32_t nlat, double lon0, double dlon,
           std::uint32_t nlon)
    : lat_start(lat0), lat_step(dlat), n_lat(nlat), lon_start(wrap_lon(lon0)), lon_step(dlon),
      n_lon(nlon) {
    validate();
}

void Grid::validate() const {
    if (n_lat < 1 || n_lon < 1) throw ValidationError("grid needs n_lat >= 1 and n_lon >= 1");
    if (!(lat_step > 0.0) || !(lon_step > 0.0))
        throw ValidationError("grid steps must be strictly positive");
    const double lat_end = lat_start + double(n_lat - 1) * lat_step;
    if (lat_start < -90.0 - 1e-9 || lat_end > 90.0 + 1e-9)
        throw ValidationError("grid latitudes must lie in [-90, 90]");
    if (lon_start < -180.0 || lon_start >= 180.0)
        throw ValidationError("grid lon_start must be normalized to [-180, 180)");
    if (double(n_lon - 1) * lon_step >= 360.0)
        throw ValidationError("grid longitude span must be below 360 degrees");
}

double Grid::lon_wrapped(std::size_t j) const { return wrap_lon(lon(j)); }

std::vector<double> Grid::latitude_weights() const {
    std::vector<double> w(n_lat);
    for (std::size_t i = 0; i < n_lat; ++i) w[i] = std::cos(lat(i) * kDegToRad);
    return w;
}

std::size_t Field::find_time(Date d) const {
    for (std::size_t t = 0; t < times.size(); ++t)
        if (times[t] == d) return t;
    return npos;
}

void Field::validate() const {
    grid.validate();
    if (values.size() != n_time() * n_grid())
        throw DimensionError("field values size " + std::to_string(values.size()) +
                             " does not match T*G = " + std::to_string(n_time() * n_grid()));
    for (std::size_t t = 1; t < times.size(); ++t)
        if (!(times[t - 1] < times[t]))
            throw ValidationError("field times must be strictly increasing (at index " +
                                  std::to_string(t) + ")");
    require_finite(values, "field");
}

void EnsembleField::validate() const {
    grid.validate();
    if (n_lead < 1 || n_member < 1)
        throw ValidationError("ensemble needs n_lead >= 1 and n_member >= 1");
    const std::size_t expect = n_init() * n_lead * n_member * n_grid();
    if (values.size() != expect)
        throw DimensionError("ensemble values size " + std::to_string(values.size()) +
                             " does not match T*L*M*G = " + std::to_string(expect));
    for (std::size_t t = 1; t < inits.size(); ++t)
        if (!(inits[t - 1] < inits[t]))
            throw ValidationError("ensemble inits must be strictly increasing (at index " +
                                  std::to_string(t) + ")");
    require_finite(values, "ensemble");
}

double latitude_weighted_mean(std::span<const double> per_grid, const Grid& grid) {
    if (per_grid.size() != grid.size())
        throw DimensionError("latitude_weighted_mean: array length " +
                             std::to_string(per_grid.size()) + " != grid size " +
                             std::to_string(grid.size()));
    const std::vector<double> w = grid.latitude_weights();
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < grid.n_lat; ++i) {
        for (std::size_t j = 0; j < grid.n_lon; ++j) {
            num += w[i] * per_grid[i * grid.n_lon + j];
            den += w[i];
        }
    }
    return num / den;
}

std::vector<double> ensemble_mean(const EnsembleField& ens) {
    const std::size_t T = ens.n_init(), L = ens.n_lead, M = ens.n_member, G = ens.n_grid();
    std::vector<double> out(T * L * G, 0.0);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t l = 0; l < L; ++l) {
            double* dst = out.data() + (t * L + l) * G;
            for (std::size_t m = 0; m < M; ++m) {
                const double* src = ens.values.data() + ens.index(t, l, m, 0);
                for (std::size_t g = 0; g < G; ++g) dst[g] += src[g];
            }
            for (std::size_t g = 0; g < G; ++g) dst[g] /= double(M);
        }
    return out;
}

} // namespace dsv
