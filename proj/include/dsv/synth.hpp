#pragma once

#include "dsv/grid.hpp"
#include "dsv/scores.hpp"

#include <cstdint>

namespace dsv {

// Synthetic coupled-field world: a smooth random input field drives the
// target through a linear stencil plus an optional quadratic term, so the
// best linear model has a computable error floor and a nonlinear model has
// signal left to win.
struct SynthSpec {
    Grid in_grid{30.0, 3.0, 12, -24.0, 3.0, 16};
    Grid out_grid{39.0, 3.0, 6, -12.0, 3.0, 8};

    int start_year = 2001; // first season year of the study period
    int n_years = 6;
    int history_years = 3; // pre-study years emitted for climatology
    std::vector<int> season_months = {12, 1, 2};

    std::uint32_t n_lead = 4;
    std::uint32_t n_member = 10;

    // Input-field anomaly spectrum.
    int modes_lat = 3, modes_lon = 4;
    double anomaly_std = 1.0;
    double white_std = 0.15;

    // Coupling to the target.
    double coupling_scale = 1.0;     // linear stencil gain
    double quadratic_strength = 0.0; // q
    double stencil_radius = 1.5;     // in input cells

    // Deterministic structure removed by preprocessing.
    double seasonal_amp_x = 3.0, seasonal_amp_y = 1.5;
    double trend_x = 0.0, trend_y = 0.0; // per day

    double obs_noise_std = 0.5; // target observation noise

    // Ensemble error model: member error std at lead l (0-based) is
    // err_std * min(1, err_base + err_growth * l), spatially correlated.
    double x_err_std = 0.8, y_err_std = 0.9;
    double err_base = 0.5, err_growth = 0.25;
    double spread_deflation = 1.0; // d in (0, 1]; < 1 manufactures under-dispersion
    double benchmark_bias = 0.2;   // additive bias of the dynamical target ensemble

    std::uint64_t seed = 1;

    void validate() const;
};

struct SynthTruth {
    Field x, y;           // weekly fields over history + study (+ lead spillover)
    std::vector<Date> inits; // season dates within the study years

    // Stored decomposition (over x.times / y.times) for oracle checks.
    std::vector<double> x_offset;    // (T) seasonal + trend scalar
    std::vector<double> x_anom;      // (T, G_in)
    std::vector<double> y_offset;    // (T)
    std::vector<double> y_linear;    // (T, G_out)
    std::vector<double> y_quadratic; // (T, G_out)
    std::vector<double> y_noise;     // (T, G_out)

    // Population residual variance of the best linear predictor per output
    // gridpoint: q^2 * 2 * Var(u_g)^2 + obs_noise^2.
    std::vector<double> linear_floor; // (G_out)
};

SynthTruth generate_truth(const SynthSpec& spec);

// Ensembles for the input variable (use_target = false) or the dynamical
// target benchmark (use_target = true). Members carry spatially correlated
// errors growing with lead, deflated about the ensemble mean by
// spread_deflation.
EnsembleField generate_ensembles(const SynthSpec& spec, const SynthTruth& truth,
                                 bool use_target);

// Emits the whole dataset as GFD files (x/y truth split into history and
// study periods, plus both ensembles) and a manifest with content hashes.
void write_synth_dataset(const SynthSpec& spec, const std::filesystem::path& dir);

// Brute-force loop oracles, written as the most literal translation of the
// score definitions. Independent of the main implementations.
namespace oracle {

std::vector<double> mse_ens_mean(const LeadAlignedField& y, const EnsembleField& ens); // (L,G)
std::vector<double> crps(const LeadAlignedField& y, const EnsembleField& ens);         // (L,G)
std::vector<double> ssr(const LeadAlignedField& y, const EnsembleField& ens);          // (L,G)

struct SsimComponents {
    std::vector<double> ssim, luminance, contrast, structure; // per lead
};
SsimComponents ssim(const LeadAlignedField& y, const EnsembleField& ens);

double latitude_weighted_mean(std::span<const double> per_grid, const Grid& grid);

} // namespace oracle

} // namespace dsv
