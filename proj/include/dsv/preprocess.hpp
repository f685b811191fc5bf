#pragma once

#include "dsv/grid.hpp"

#include <map>
#include <optional>

namespace dsv {

// Per-gridpoint normalization statistics, fitted on training data only.
struct NormStats {
    std::vector<double> mu;
    std::vector<double> sigma; // population std, floored at sigma_floor
    double sigma_floor = 1e-8;
};

// Linear trend of the spatially averaged anomaly series, value per epoch day.
struct TrendLine {
    double intercept = 0.0;
    double slope = 0.0; // per day
    double at(Date d) const { return intercept + slope * double(d.epoch_day); }
};

// Rolling per-calendar-date climatology of spatial means. A value for date d
// is the mean over the window_years years preceding an anchor year (the
// date's own year for the rolling form, a fixed year for train-time use).
struct ClimatologyModel {
    int window_years = 15;
    // mmdd key -> (year -> spatial mean). Feb 29 folds onto Feb 28.
    std::map<int, std::map<int, double>> by_calendar_date;

    // Rolling lookup: window [d.year - window_years, d.year - 1].
    double value_at(Date d) const;
    // Frozen table: per calendar date, the mean over the most recent
    // window_years years present in the fitted history.
    std::map<int, double> latest_table() const;
};

// Bilinear regridding; the target grid must lie inside the source bounds.
Field regrid_bilinear(const Field& src, const Grid& target);

// Non-overlapping weekly means: lead l covers day offsets [7(l-1), 7l-1]
// from each initialization date. Result has one pseudo-member (M = 1).
EnsembleField weekly_average(const Field& daily, const std::vector<Date>& init_dates,
                             std::uint32_t n_lead);

ClimatologyModel fit_climatology(const Field& history, int window_years = 15);

// Fits ordinary least squares of the spatially averaged series against the
// epoch day. Requires at least two time steps.
TrendLine fit_trend(const Field& field);

// Subtracts the rolling per-date climatology scalar from every gridpoint.
// Dates with no climatology entry raise an error.
Field deseasonalize(const Field& field, const ClimatologyModel& clim);

Field remove_trend(const Field& field, const TrendLine& trend);

// deseasonalize + fit_trend + remove_trend in one step (refits the trend on
// the input's own anomalies).
Field deseasonalize_detrend(const Field& field, const ClimatologyModel& clim);

NormStats fit_normalization(const Field& train);
Field normalize(const Field& field, const NormStats& stats);
Field denormalize(const Field& field, const NormStats& stats);

// The full train-fitted chain, reusable on validation/test data and applied
// member-wise and lead-wise to ensembles by valid date. The seasonal table
// is anchored on the pre-study history window, so test dates never feed the
// statistics.
struct PreprocessChain {
    std::map<int, double> seasonal; // mmdd -> climatology scalar
    TrendLine trend;
    NormStats stats;

    // Fits the chain: seasonal table from the most recent window_years of
    // `history`, trend and normalization statistics from `train`.
    static PreprocessChain fit(const Field& history, const Field& train, int window_years);

    // Seasonal scalar for a date, matched within a few days of calendar drift.
    double seasonal_at(Date d) const;

    Field transform(const Field& field) const;
    // Valid date of (t, l) is init + 7l days offset by lead week convention.
    EnsembleField transform(const EnsembleField& ens) const;

    // Back-transform one normalized sample into physical units in place.
    void inverse_sample(std::span<double> values, Date valid_date) const;
};

// Valid date for initialization `init` and zero-based lead index l: the
// start of the covered week.
inline Date lead_valid_date(Date init, std::size_t lead_index) {
    return init + int(7 * lead_index);
}

} // namespace dsv
