#pragma once

#include "dsv/grid.hpp"

#include <cstdint>
#include <span>

namespace dsv {

// Per-gridpoint Gaussian model of training residuals, in physical units.
struct ResidualModel {
    std::vector<double> mean;     // (G_out)
    std::vector<double> variance; // (G_out), floored at var_floor
    double var_floor = 1e-12;
};

// Sample mean and population variance of y_true - y_hat per gridpoint.
ResidualModel fit_residuals(std::span<const double> y_true, std::span<const double> y_hat,
                            std::size_t n_samples, std::size_t n_grid,
                            double var_floor = 1e-12);

// Expands each member into P perturbed members by adding independent draws
// from the residual Gaussian per gridpoint. Member (m, p) lands at index
// m*P + p. Draws are derived from (seed, t, l, m, p, g), so results are
// independent of evaluation order.
EnsembleField perturb_ensemble(const EnsembleField& regressed, const ResidualModel& residuals,
                               std::uint32_t perturbations, std::uint64_t seed);

// Count of negative values (kept, not clamped); reported for diagnostics.
std::size_t count_negative(const EnsembleField& ens);

} // namespace dsv
