#pragma once

#include "dsv/checkpoint.hpp"
#include "dsv/config.hpp"
#include "dsv/train.hpp"

#include <filesystem>

namespace dsv {

// Nested chronological cross-validation over whole season-years.
struct CvFold {
    std::vector<int> test_years;            // contiguous block
    std::vector<int> train_years;           // remaining years, chronological
    std::vector<std::vector<int>> inner_val_years; // one block per inner fold
};

struct CvLayout {
    int first_year = 0;
    int n_years = 0;
    int outer_k = 0;
    int inner_k = 0;
    std::vector<CvFold> folds;
};

// Splits [first_year, first_year + n_years) into outer_k contiguous test
// blocks; each fold's training pool is further split into inner_k contiguous
// validation blocks. Errors name the indivisible remainder.
CvLayout build_layout(int first_year, int n_years, int outer_k = 3, int inner_k = 6);

struct FoldSummary {
    int fold_index = 0;
    double learning_rate = 0.0;
    double weight_decay = 0.0;
    double det_mse = 0.0;       // spatial mean, deterministic regression on test truth
    double det_msss = 0.0;      // vs rolling climatology
    std::size_t negative_values = 0; // negative physical values among perturbed members
};

struct RunResult {
    std::filesystem::path run_dir;
    std::vector<FoldSummary> folds;
};

// Full experiment driver: per outer fold, hyperparameter search on the inner
// folds, final training on the outer-train pool, residual fitting, MVA
// calibration of the benchmark ensemble, member-wise regression, ensemble
// perturbation, scoring, and bootstrap significance. Emits checkpoints and
// CSV tables under out_dir and a manifest with content hashes.
RunResult run_experiment(const RunConfig& config, const std::filesystem::path& out_dir);

} // namespace dsv
