#pragma once

#include "dsv/csv_io.hpp"
#include "dsv/grid.hpp"

#include <functional>

namespace dsv {

enum class Orientation { negative, positive }; // negative: smaller is better

enum class SigClass { a, b, c, none };

// p < 0.01 -> a, p < 0.05 -> b, p < 0.1 -> c, otherwise none.
SigClass classify_p(double p);
std::string sig_label(SigClass cls);

struct BootstrapOptions {
    std::size_t replicates = 1000;
    std::uint64_t seed = 0;
    // Published sentence's reading of the p-value (proportion of improving
    // replicates); kept behind a flag for audit. The default counts
    // non-improving replicates, consistent with "p < alpha means better".
    bool literal_p = false;
};

struct BootstrapCell {
    double median_delta = 0.0; // relative score difference, percent
    double p = 1.0;
    SigClass cls = SigClass::none;
    std::size_t excluded = 0; // replicates dropped for a zero benchmark score
};

struct BootstrapResult {
    std::string score_name;
    Grid grid;
    std::size_t n_lead = 0;
    std::size_t replicates = 0;
    std::vector<BootstrapCell> cells;     // (L, G)
    std::vector<BootstrapCell> aggregate; // per lead, of the spatial means
};

// Called once per (replicate, model) with the resample indices in use;
// model_index is 0 for the candidate and 1 for the benchmark.
using ResampleObserver =
    std::function<void(std::size_t replicate, int model_index, std::span<const std::size_t>)>;

// Resamples initializations with replacement (identical indices for both
// models within a replicate), recomputes both scores as time means of the
// per-initialization contributions, and derives the relative difference
// delta_r = (S_candidate - S_benchmark) / S_benchmark * 100 per replicate.
BootstrapResult bootstrap_delta(const LeadAlignedField& candidate_per_init,
                                const LeadAlignedField& benchmark_per_init, const Grid& grid,
                                Orientation orientation, const BootstrapOptions& opt,
                                std::string score_name = "delta_r",
                                const ResampleObserver& observer = {});

// Deterministic resample indices for one replicate; the implementation and
// instrumentation share this derivation.
std::vector<std::size_t> bootstrap_indices(std::uint64_t seed, std::size_t replicate,
                                           std::size_t n);

ScoreCsv to_csv(const BootstrapResult& r);

} // namespace dsv
