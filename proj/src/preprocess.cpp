#include "dsv/preprocess.hpp"

#include "dsv/errors.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace dsv {

namespace {

double spatial_mean(std::span<const double> row) {
    double s = 0.0;
    for (double v : row) s += v;
    return s / double(row.size());
}

// Climatology matching tolerates a few days of drift (weekly cadences and
// leap years shift month-day keys between years).
constexpr int kCalendarTolerance = 3;

int shift_mmdd(int mmdd, int delta) {
    // Representative non-leap year; keys never hold Feb 29.
    return (Date::from_ymd(2001, mmdd / 100, mmdd % 100) + delta).mmdd_key();
}

// Per-year values for a calendar date, preferring the nearest date within
// the tolerance when a year lacks the exact one.
std::map<int, double> pooled_series(const std::map<int, std::map<int, double>>& table,
                                    int mmdd) {
    std::map<int, double> pooled;
    for (int delta = 0; delta <= kCalendarTolerance; ++delta)
        for (int sign : {1, -1}) {
            if (delta == 0 && sign < 0) continue;
            auto it = table.find(shift_mmdd(mmdd, sign * delta));
            if (it == table.end()) continue;
            for (const auto& [year, value] : it->second) pooled.emplace(year, value);
        }
    return pooled;
}

double window_mean(const std::map<int, double>& by_year, int anchor_year, int window_years,
                   Date d) {
    double sum = 0.0;
    int n = 0;
    for (int y = anchor_year - window_years; y <= anchor_year - 1; ++y) {
        auto it = by_year.find(y);
        if (it == by_year.end())
            throw ValidationError("climatology window for " + d.iso() + " is missing year " +
                                  std::to_string(y) + " (window " + std::to_string(window_years) +
                                  " years before " + std::to_string(anchor_year) + ")");
        sum += it->second;
        ++n;
    }
    return sum / double(n);
}

} // namespace

double ClimatologyModel::value_at(Date d) const {
    const std::map<int, double> series = pooled_series(by_calendar_date, d.mmdd_key());
    if (series.empty())
        throw ValidationError("no climatology entry for calendar date of " + d.iso());
    return window_mean(series, d.year(), window_years, d);
}

std::map<int, double> ClimatologyModel::latest_table() const {
    std::map<int, double> out;
    for (const auto& [mmdd, unused] : by_calendar_date) {
        const std::map<int, double> series = pooled_series(by_calendar_date, mmdd);
        if (series.size() < std::size_t(window_years))
            throw ValidationError("climatology for calendar date " + std::to_string(mmdd) +
                                  " has only " + std::to_string(series.size()) +
                                  " years, need " + std::to_string(window_years));
        double sum = 0.0;
        auto it = series.rbegin();
        for (int k = 0; k < window_years; ++k, ++it) sum += it->second;
        out[mmdd] = sum / double(window_years);
    }
    return out;
}

Field regrid_bilinear(const Field& src, const Grid& target) {
    src.validate();
    target.validate();
    const Grid& s = src.grid;

    // Fractional source index along one axis, or throws for extrapolation.
    auto locate = [](double value, double start, double step, std::uint32_t n,
                     const char* axis) {
        double f = (value - start) / step;
        const double hi = double(n - 1);
        if (f < -1e-9 || f > hi + 1e-9)
            throw DomainError(std::string("regrid target ") + axis + " " + std::to_string(value) +
                              " is outside the source bounds");
        return std::clamp(f, 0.0, hi);
    };
    // Longitudes may be expressed modulo 360 relative to the source axis.
    auto locate_lon = [&](double lon) {
        const double lo = s.lon(0), hi = s.lon(s.n_lon - 1);
        double candidate = lon;
        while (candidate < lo - 1e-9) candidate += 360.0;
        while (candidate > hi + 1e-9 && candidate - 360.0 >= lo - 1e-9) candidate -= 360.0;
        return locate(candidate, s.lon_start, s.lon_step, s.n_lon, "lon");
    };

    struct AxisWeight {
        std::size_t i0, i1;
        double w1;
    };
    auto split = [](double f, std::uint32_t n) {
        AxisWeight a;
        a.i0 = std::size_t(std::floor(f));
        a.i1 = std::min<std::size_t>(a.i0 + 1, n - 1);
        a.w1 = f - double(a.i0);
        return a;
    };

    std::vector<AxisWeight> rows(target.n_lat), cols(target.n_lon);
    for (std::size_t i = 0; i < target.n_lat; ++i)
        rows[i] = split(locate(target.lat(i), s.lat_start, s.lat_step, s.n_lat, "lat"), s.n_lat);
    for (std::size_t j = 0; j < target.n_lon; ++j)
        cols[j] = split(locate_lon(target.lon(j)), s.n_lon);

    Field out;
    out.grid = target;
    out.times = src.times;
    out.units = src.units;
    out.values.resize(src.n_time() * target.size());
    for (std::size_t t = 0; t < src.n_time(); ++t) {
        const auto in = src.row(t);
        auto dst = out.row(t);
        for (std::size_t i = 0; i < target.n_lat; ++i) {
            const auto& r = rows[i];
            for (std::size_t j = 0; j < target.n_lon; ++j) {
                const auto& c = cols[j];
                const double v00 = in[r.i0 * s.n_lon + c.i0];
                const double v01 = in[r.i0 * s.n_lon + c.i1];
                const double v10 = in[r.i1 * s.n_lon + c.i0];
                const double v11 = in[r.i1 * s.n_lon + c.i1];
                const double top = v00 * (1.0 - c.w1) + v01 * c.w1;
                const double bot = v10 * (1.0 - c.w1) + v11 * c.w1;
                dst[i * target.n_lon + j] = top * (1.0 - r.w1) + bot * r.w1;
            }
        }
    }
    return out;
}

EnsembleField weekly_average(const Field& daily, const std::vector<Date>& init_dates,
                             std::uint32_t n_lead) {
    daily.validate();
    if (init_dates.empty()) throw ValidationError("weekly_average: no initialization dates");
    if (n_lead < 1) throw ValidationError("weekly_average: n_lead must be >= 1");

    std::unordered_map<std::int32_t, std::size_t> by_day;
    by_day.reserve(daily.n_time());
    for (std::size_t t = 0; t < daily.n_time(); ++t) by_day[daily.times[t].epoch_day] = t;

    const std::size_t G = daily.n_grid();
    EnsembleField out;
    out.grid = daily.grid;
    out.inits = init_dates;
    out.n_lead = n_lead;
    out.n_member = 1;
    out.units = daily.units;
    out.values.assign(init_dates.size() * n_lead * G, 0.0);

    for (std::size_t t = 0; t < init_dates.size(); ++t) {
        for (std::uint32_t l = 0; l < n_lead; ++l) {
            double* dst = out.values.data() + out.index(t, l, 0, 0);
            for (int off = int(7 * l); off < int(7 * (l + 1)); ++off) {
                const Date day = init_dates[t] + off;
                auto it = by_day.find(day.epoch_day);
                if (it == by_day.end())
                    throw ValidationError("weekly_average: missing day " + day.iso() +
                                          " for init " + init_dates[t].iso() + " lead " +
                                          std::to_string(l + 1));
                const auto row = daily.row(it->second);
                for (std::size_t g = 0; g < G; ++g) dst[g] += row[g];
            }
            for (std::size_t g = 0; g < G; ++g) dst[g] /= 7.0;
        }
    }
    out.validate();
    return out;
}

ClimatologyModel fit_climatology(const Field& history, int window_years) {
    history.validate();
    if (window_years < 1) throw ValidationError("fit_climatology: window_years must be >= 1");
    ClimatologyModel m;
    m.window_years = window_years;
    for (std::size_t t = 0; t < history.n_time(); ++t) {
        const Date d = history.times[t];
        auto& series = m.by_calendar_date[d.mmdd_key()];
        const double sm = spatial_mean(history.row(t));
        auto [it, inserted] = series.emplace(d.year(), sm);
        if (!inserted) it->second = 0.5 * (it->second + sm); // duplicate calendar date in a year
    }
    return m;
}

TrendLine fit_trend(const Field& field) {
    if (field.n_time() < 2)
        throw ValidationError("fit_trend: need at least 2 time steps, have " +
                              std::to_string(field.n_time()));
    const std::size_t T = field.n_time();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t t = 0; t < T; ++t) {
        const double x = double(field.times[t].epoch_day);
        const double y = spatial_mean(field.row(t));
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double n = double(T);
    const double denom = n * sxx - sx * sx;
    TrendLine tr;
    if (denom != 0.0) {
        tr.slope = (n * sxy - sx * sy) / denom;
        tr.intercept = (sy - tr.slope * sx) / n;
    } else {
        tr.slope = 0.0;
        tr.intercept = sy / n;
    }
    return tr;
}

Field deseasonalize(const Field& field, const ClimatologyModel& clim) {
    Field out = field;
    for (std::size_t t = 0; t < out.n_time(); ++t) {
        const double c = clim.value_at(out.times[t]);
        for (double& v : out.row(t)) v -= c;
    }
    return out;
}

Field remove_trend(const Field& field, const TrendLine& trend) {
    Field out = field;
    for (std::size_t t = 0; t < out.n_time(); ++t) {
        const double line = trend.at(out.times[t]);
        for (double& v : out.row(t)) v -= line;
    }
    return out;
}

Field deseasonalize_detrend(const Field& field, const ClimatologyModel& clim) {
    Field anomalies = deseasonalize(field, clim);
    const TrendLine trend = fit_trend(anomalies);
    return remove_trend(anomalies, trend);
}

NormStats fit_normalization(const Field& train) {
    train.validate();
    const std::size_t T = train.n_time(), G = train.n_grid();
    if (T < 1) throw ValidationError("fit_normalization: empty training field");
    NormStats s;
    s.mu.assign(G, 0.0);
    s.sigma.assign(G, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
        const auto row = train.row(t);
        for (std::size_t g = 0; g < G; ++g) s.mu[g] += row[g];
    }
    for (std::size_t g = 0; g < G; ++g) s.mu[g] /= double(T);
    for (std::size_t t = 0; t < T; ++t) {
        const auto row = train.row(t);
        for (std::size_t g = 0; g < G; ++g) {
            const double d = row[g] - s.mu[g];
            s.sigma[g] += d * d;
        }
    }
    for (std::size_t g = 0; g < G; ++g)
        s.sigma[g] = std::max(std::sqrt(s.sigma[g] / double(T)), s.sigma_floor);
    return s;
}

Field normalize(const Field& field, const NormStats& stats) {
    if (stats.mu.size() != field.n_grid())
        throw DimensionError("normalize: stats fitted on a different grid size");
    Field out = field;
    for (std::size_t t = 0; t < out.n_time(); ++t) {
        auto row = out.row(t);
        for (std::size_t g = 0; g < row.size(); ++g)
            row[g] = (row[g] - stats.mu[g]) / stats.sigma[g];
    }
    return out;
}

Field denormalize(const Field& field, const NormStats& stats) {
    if (stats.mu.size() != field.n_grid())
        throw DimensionError("denormalize: stats fitted on a different grid size");
    Field out = field;
    for (std::size_t t = 0; t < out.n_time(); ++t) {
        auto row = out.row(t);
        for (std::size_t g = 0; g < row.size(); ++g)
            row[g] = row[g] * stats.sigma[g] + stats.mu[g];
    }
    return out;
}

PreprocessChain PreprocessChain::fit(const Field& history, const Field& train,
                                     int window_years) {
    PreprocessChain chain;
    const ClimatologyModel clim = fit_climatology(history, window_years);
    chain.seasonal = clim.latest_table();

    Field anomalies = train;
    for (std::size_t t = 0; t < anomalies.n_time(); ++t) {
        const double c = chain.seasonal_at(anomalies.times[t]);
        for (double& v : anomalies.row(t)) v -= c;
    }
    chain.trend = fit_trend(anomalies);
    chain.stats = fit_normalization(remove_trend(anomalies, chain.trend));
    return chain;
}

double PreprocessChain::seasonal_at(Date d) const {
    for (int delta = 0; delta <= kCalendarTolerance; ++delta)
        for (int sign : {1, -1}) {
            if (delta == 0 && sign < 0) continue;
            auto it = seasonal.find((d + sign * delta).mmdd_key());
            if (it != seasonal.end()) return it->second;
        }
    throw ValidationError("no seasonal table entry for calendar date of " + d.iso());
}

Field PreprocessChain::transform(const Field& field) const {
    Field out = field;
    for (std::size_t t = 0; t < out.n_time(); ++t) {
        const double c = seasonal_at(out.times[t]);
        for (double& v : out.row(t)) v -= c;
    }
    return normalize(remove_trend(out, trend), stats);
}

EnsembleField PreprocessChain::transform(const EnsembleField& ens) const {
    if (stats.mu.size() != ens.n_grid())
        throw DimensionError("preprocess chain fitted on a different grid size");
    EnsembleField out = ens;
    const std::size_t G = out.n_grid();
    for (std::size_t t = 0; t < out.n_init(); ++t) {
        for (std::size_t l = 0; l < out.n_lead; ++l) {
            const Date valid = lead_valid_date(out.inits[t], l);
            const double offset = seasonal_at(valid) + trend.at(valid);
            for (std::size_t m = 0; m < out.n_member; ++m) {
                auto slice = out.member_slice(t, l, m);
                for (std::size_t g = 0; g < G; ++g)
                    slice[g] = (slice[g] - offset - stats.mu[g]) / stats.sigma[g];
            }
        }
    }
    return out;
}

void PreprocessChain::inverse_sample(std::span<double> values, Date valid_date) const {
    if (values.size() != stats.mu.size())
        throw DimensionError("inverse_sample: wrong sample length");
    const double offset = seasonal_at(valid_date) + trend.at(valid_date);
    for (std::size_t g = 0; g < values.size(); ++g)
        values[g] = values[g] * stats.sigma[g] + stats.mu[g] + offset;
}

} // namespace dsv
