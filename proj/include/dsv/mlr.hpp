#pragma once

#include "dsv/preprocess.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace dsv {

// Per-gridpoint multiple linear regression: each output gridpoint has its
// own intercept and a coefficient per input gridpoint. Operates in
// normalized space; the attached stats describe that normalization.
struct MlrModel {
    std::size_t n_in = 0;
    std::size_t n_out = 0;
    std::vector<double> intercept; // (G_out)
    std::vector<double> weights;   // (G_out, G_in) row-major
    NormStats input_stats, target_stats;

    void predict(std::span<const double> x, std::span<double> y) const;
    // X is (T, G_in) row-major; returns (T, G_out).
    std::vector<double> predict_batch(std::span<const double> x, std::size_t n_samples) const;
};

// Ridge fit minimizing ||Y_g - b0 - X b||^2 + lambda ||b||^2 per output
// gridpoint (intercept unpenalized). Normal equations with Cholesky; a
// singular system with lambda = 0 is an error, with lambda > 0 it falls back
// to the eigendecomposition pseudo-inverse.
MlrModel mlr_fit_closed_form(std::span<const double> x, std::span<const double> y,
                             std::size_t n_samples, std::size_t n_in, std::size_t n_out,
                             double lambda);

// Steepest descent with exact line search on the same objective, run to a
// tight gradient tolerance. Kept as an independent route for cross-checking
// the closed form.
MlrModel mlr_fit_gradient(std::span<const double> x, std::span<const double> y,
                          std::size_t n_samples, std::size_t n_in, std::size_t n_out,
                          double lambda, double tol = 1e-13, std::size_t max_iter = 200000);

} // namespace dsv
