#pragma once

#include "dsv/csv_io.hpp"
#include "dsv/grid.hpp"
#include "dsv/preprocess.hpp"

namespace dsv {

// Per-(lead, gridpoint) score values with degenerate-cell flags.
struct ScoreTable {
    std::string score;
    Grid grid;
    std::size_t n_lead = 0;
    std::vector<double> values;        // (L, G)
    std::vector<std::uint8_t> flagged; // (L, G); flagged cells skip aggregation
    std::string note;

    ScoreTable() = default;
    ScoreTable(std::string name, const Grid& g, std::size_t leads)
        : score(std::move(name)), grid(g), n_lead(leads), values(leads * g.size(), 0.0),
          flagged(leads * g.size(), 0) {}
    double& at(std::size_t l, std::size_t g) { return values[l * grid.size() + g]; }
    double at(std::size_t l, std::size_t g) const { return values[l * grid.size() + g]; }
};

// Latitude-weighted spatial mean per lead, skipping flagged cells.
std::vector<double> aggregate_spatial(const ScoreTable& table);

ScoreCsv to_csv(const ScoreTable& table);

// Looks up the verifying truth for every (initialization, lead) window.
LeadAlignedField align_verifying(const Field& truth, const std::vector<Date>& inits,
                                 std::size_t n_lead);

// Deterministic MSE per gridpoint: mean over time of squared differences.
std::vector<double> mse_deterministic(std::span<const double> y, std::span<const double> y_hat,
                                      std::size_t n_samples, std::size_t n_grid);

// Per-initialization contributions (T, L, G); the score is their time mean.
LeadAlignedField mse_ens_mean_per_init(const LeadAlignedField& y, const EnsembleField& ens);
LeadAlignedField crps_per_init(const LeadAlignedField& y, const EnsembleField& ens);

ScoreTable mse_ensemble_mean(const LeadAlignedField& y, const EnsembleField& ens);

// Discrete ensemble CRPS: mean absolute member error minus half the mean
// absolute member-pair difference, averaged over initializations.
ScoreTable crps_discrete(const LeadAlignedField& y, const EnsembleField& ens);

// Replaces members by empirical quantiles at levels (i - 0.5) / m_small via
// linear interpolation on the sorted members.
EnsembleField quantile_downsample(const EnsembleField& ens, std::uint32_t m_small);

// Downsamples the larger ensemble so comparisons use equal member counts.
EnsembleField equalize_members(const EnsembleField& ens, std::uint32_t target_members);

struct SsrOptions {
    // The default spread is sqrt(mean over t of the sample ensemble
    // variance); the literal variant squares the variance inside the mean.
    bool literal = false;
};

// Spread-skill ratio per (lead, gridpoint). Zero RMSE cells are flagged and
// carry +infinity.
ScoreTable ssr(const LeadAlignedField& y, const EnsembleField& ens, const SsrOptions& opt = {});

// Generic skill score 1 - score_ens / score_ref; cells with a zero
// reference are flagged.
ScoreTable skill_score(const ScoreTable& ens_score, const ScoreTable& ref_score,
                       const std::string& name);

struct SsimResult {
    std::size_t n_lead = 0;
    std::vector<double> ssim;      // per lead, product of the three components
    std::vector<double> luminance; // spatial-mean similarity
    std::vector<double> contrast;  // spatial-variance similarity
    std::vector<double> structure; // normalized spatial covariance
    std::size_t degenerate_count = 0;
};

// Spatial similarity per lead, averaged over initializations and members.
SsimResult ssim(const LeadAlignedField& y, const EnsembleField& ens);

std::vector<ScoreCsv> to_csv(const SsimResult& r);

// Rolling per-gridpoint climatology as a reference forecast: member k at
// (t, l) is the truth on the same calendar date k+1 years before the valid
// date. Dates are matched within a +-3 day tolerance.
EnsembleField climatology_reference(const Field& truth, const std::vector<Date>& inits,
                                    std::uint32_t n_lead, int window_years);

} // namespace dsv
