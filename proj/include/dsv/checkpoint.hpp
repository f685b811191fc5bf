#pragma once

#include "dsv/cnn.hpp"
#include "dsv/mlr.hpp"
#include "dsv/mva.hpp"
#include "dsv/residual.hpp"

#include <filesystem>
#include <memory>

namespace dsv {

// A trained regression model with everything needed to apply it out of
// sample: the fitted preprocessing chains and the residual Gaussians.
struct ModelCheckpoint {
    std::string kind; // "mlr" | "cnn"
    Grid in_grid, out_grid;
    PreprocessChain prep_x, prep_y;
    ResidualModel residuals;

    MlrModel mlr;                  // populated when kind == "mlr"
    CnnConfig cnn_cfg;             // populated when kind == "cnn"
    std::shared_ptr<CnnModel> cnn; // shared so checkpoints stay copyable

    std::size_t n_in() const { return in_grid.size(); }
    std::size_t n_out() const { return out_grid.size(); }

    // Prediction in normalized space for one sample (G_in) -> (G_out).
    std::vector<double> predict_norm(std::span<const double> x_norm) const;
    // Batched variant: x_norm is (n, G_in) row-major.
    std::vector<double> predict_norm_batch(std::span<const double> x_norm,
                                           std::size_t n_samples) const;

    // Full out-of-sample application in physical units.
    Field regress(const Field& x) const;
    // Member-wise application to an input ensemble (Fig-style: each member
    // independently feeds the deterministic regressor).
    EnsembleField regress(const EnsembleField& x_ens) const;
};

void save_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& ckpt);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

void save_mva(const std::filesystem::path& path, const MvaParams& params, const Grid& grid);
MvaParams load_mva(const std::filesystem::path& path);

struct BlockInfo {
    std::string name;
    std::vector<std::size_t> shape;
};

// Header summary + parameter block listing for `inspect`.
struct CheckpointSummary {
    std::string kind;
    Grid in_grid, out_grid;
    std::vector<BlockInfo> blocks;
};
CheckpointSummary inspect_checkpoint(const std::filesystem::path& path);

} // namespace dsv
