#pragma once

#include "dsv/cnn.hpp"

#include <functional>
#include <memory>

namespace dsv {

struct TrainSpec {
    double learning_rate = 1e-3;
    double weight_decay = 0.0; // L2 penalty coefficient; enters the loss as wd * sum(w^2)
    std::size_t epochs = 200;
    std::size_t batch_size = 32;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
};

// Flat sample matrix in normalized space: (n_samples, dim) row-major.
struct Dataset {
    std::size_t n = 0;
    std::size_t dim = 0;
    std::vector<double> values;

    std::span<const double> sample(std::size_t i) const { return {values.data() + i * dim, dim}; }
};

// Common training surface for the gradient-trained model families.
class TrainableModel {
public:
    virtual ~TrainableModel() = default;
    virtual std::size_t n_in() const = 0;
    virtual std::size_t n_out() const = 0;
    // x is (n, n_in) row-major; returns (n, n_out).
    virtual std::vector<double> forward(std::span<const double> x, std::size_t n,
                                        bool training) = 0;
    // Accumulates parameter gradients for the preceding training forward.
    virtual void backward(std::span<const double> grad_y, std::size_t n) = 0;
    virtual void visit_params(const ParamVisitor& fn) = 0;
};

std::unique_ptr<TrainableModel> make_mlr_trainable(std::size_t n_in, std::size_t n_out);
std::unique_ptr<TrainableModel> make_cnn_trainable(const CnnConfig& cfg,
                                                   std::uint64_t init_seed);

struct EpochLog {
    double train_mse = 0.0;
    double val_mse = 0.0;
};

struct TrainLog {
    std::vector<EpochLog> epochs;
    std::size_t best_epoch = 0; // 0-based
    double best_val_mse = 0.0;
};

// Minimizes MSE plus the L2 penalty with Adam; restores the parameter
// snapshot with the lowest validation MSE before returning.
TrainLog train_model(TrainableModel& model, const Dataset& x_train, const Dataset& y_train,
                     const Dataset& x_val, const Dataset& y_val, const TrainSpec& spec);

struct HyperSpace {
    double lr_min = 1e-4, lr_max = 1e-2;
    double wd_min = 1e-8, wd_max = 1e-3;
};

struct HyperTrial {
    double learning_rate = 0.0;
    double weight_decay = 0.0;
    double mean_val_mse = 0.0;
    std::vector<double> fold_mse;
};

struct HyperResult {
    double learning_rate = 0.0;
    double weight_decay = 0.0;
    std::vector<HyperTrial> trials;
};

// Evaluates candidate (lr, wd) on one inner fold; returns validation MSE.
using TrialEvaluator = std::function<double(double lr, double wd, std::size_t fold)>;

// Seeded random search over log-uniform (lr, wd); selection by mean inner
// validation MSE, ties broken by smaller lr then smaller wd.
HyperResult hyper_search(const HyperSpace& space, std::size_t n_folds, std::size_t budget,
                         std::uint64_t seed, const TrialEvaluator& evaluate);

} // namespace dsv
