#include "dsv/train.hpp"

#include "dsv/errors.hpp"
#include "dsv/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dsv {

namespace {

// Per-gridpoint linear model trained by gradient descent. Shares the ridge
// objective with the closed-form solver when weight decay is matched.
class MlrTrainable final : public TrainableModel {
public:
    MlrTrainable(std::size_t n_in, std::size_t n_out) : nin_(n_in), nout_(n_out) {
        intercept_.name = "mlr.intercept";
        intercept_.shape = {n_out};
        intercept_.value.assign(n_out, 0.0);
        intercept_.grad.assign(n_out, 0.0);
        intercept_.decay = false;
        weights_.name = "mlr.weights";
        weights_.shape = {n_out, n_in};
        weights_.value.assign(n_out * n_in, 0.0);
        weights_.grad.assign(n_out * n_in, 0.0);
        weights_.decay = true;
    }

    std::size_t n_in() const override { return nin_; }
    std::size_t n_out() const override { return nout_; }

    std::vector<double> forward(std::span<const double> x, std::size_t n,
                                bool training) override {
        if (x.size() != n * nin_) throw DimensionError("mlr forward: input size mismatch");
        if (training) x_.assign(x.begin(), x.end());
        std::vector<double> y(n * nout_);
        for (std::size_t s = 0; s < n; ++s)
            for (std::size_t g = 0; g < nout_; ++g) {
                const double* w = weights_.value.data() + g * nin_;
                double acc = intercept_.value[g];
                for (std::size_t i = 0; i < nin_; ++i) acc += w[i] * x[s * nin_ + i];
                y[s * nout_ + g] = acc;
            }
        return y;
    }

    void backward(std::span<const double> gy, std::size_t n) override {
        if (gy.size() != n * nout_ || x_.size() != n * nin_)
            throw DimensionError("mlr backward: gradient size mismatch");
        for (std::size_t s = 0; s < n; ++s)
            for (std::size_t g = 0; g < nout_; ++g) {
                const double gv = gy[s * nout_ + g];
                intercept_.grad[g] += gv;
                double* wg = weights_.grad.data() + g * nin_;
                for (std::size_t i = 0; i < nin_; ++i) wg[i] += gv * x_[s * nin_ + i];
            }
    }

    void visit_params(const ParamVisitor& fn) override {
        fn(intercept_);
        fn(weights_);
    }

private:
    std::size_t nin_, nout_;
    Param intercept_, weights_;
    std::vector<double> x_;
};

class CnnTrainable final : public TrainableModel {
public:
    CnnTrainable(const CnnConfig& cfg, std::uint64_t init_seed) : model_(cfg, init_seed) {}

    std::size_t n_in() const override { return model_.config().in_h * model_.config().in_w; }
    std::size_t n_out() const override { return model_.config().out_h * model_.config().out_w; }

    std::vector<double> forward(std::span<const double> x, std::size_t n,
                                bool training) override {
        const auto& cfg = model_.config();
        if (x.size() != n * n_in()) throw DimensionError("cnn forward: input size mismatch");
        Tensor4 in(n, 1, cfg.in_h, cfg.in_w);
        std::copy(x.begin(), x.end(), in.v.begin());
        Tensor4 out = model_.forward(in, training);
        return std::move(out.v);
    }

    void backward(std::span<const double> gy, std::size_t n) override {
        const auto& cfg = model_.config();
        if (gy.size() != n * n_out()) throw DimensionError("cnn backward: size mismatch");
        Tensor4 g(n, 1, cfg.out_h, cfg.out_w);
        std::copy(gy.begin(), gy.end(), g.v.begin());
        model_.backward(g);
    }

    void visit_params(const ParamVisitor& fn) override { model_.visit_params(fn); }

    CnnModel& model() { return model_; }

private:
    CnnModel model_;
};

struct AdamState {
    std::vector<std::vector<double>> m, v;
    std::size_t step = 0;
};

void adam_step(std::vector<Param*>& params, AdamState& st, const TrainSpec& spec) {
    ++st.step;
    const double bc1 = 1.0 - std::pow(spec.beta1, double(st.step));
    const double bc2 = 1.0 - std::pow(spec.beta2, double(st.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Param& p = *params[k];
        auto& m = st.m[k];
        auto& v = st.v[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            double g = p.grad[i];
            if (p.decay) g += 2.0 * spec.weight_decay * p.value[i];
            m[i] = spec.beta1 * m[i] + (1.0 - spec.beta1) * g;
            v[i] = spec.beta2 * v[i] + (1.0 - spec.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p.value[i] -= spec.learning_rate * mhat / (std::sqrt(vhat) + spec.adam_eps);
        }
    }
}

double batched_mse(TrainableModel& model, const Dataset& x, const Dataset& y,
                   std::size_t batch) {
    double sse = 0.0;
    for (std::size_t start = 0; start < x.n; start += batch) {
        const std::size_t n = std::min(batch, x.n - start);
        const auto pred =
            model.forward({x.values.data() + start * x.dim, n * x.dim}, n, false);
        for (std::size_t i = 0; i < n * y.dim; ++i) {
            const double d = pred[i] - y.values[start * y.dim + i];
            sse += d * d;
        }
    }
    return sse / (double(x.n) * double(y.dim));
}

} // namespace

std::unique_ptr<TrainableModel> make_mlr_trainable(std::size_t n_in, std::size_t n_out) {
    return std::make_unique<MlrTrainable>(n_in, n_out);
}

std::unique_ptr<TrainableModel> make_cnn_trainable(const CnnConfig& cfg,
                                                   std::uint64_t init_seed) {
    return std::make_unique<CnnTrainable>(cfg, init_seed);
}

TrainLog train_model(TrainableModel& model, const Dataset& x_train, const Dataset& y_train,
                     const Dataset& x_val, const Dataset& y_val, const TrainSpec& spec) {
    if (spec.epochs < 1) throw ValidationError("train: epoch budget must be >= 1");
    if (spec.batch_size < 1) throw ValidationError("train: batch size must be >= 1");
    if (!(spec.learning_rate > 0.0)) throw ValidationError("train: learning rate must be > 0");
    if (x_train.n == 0 || x_val.n == 0) throw ValidationError("train: empty train or val set");
    if (x_train.n != y_train.n || x_val.n != y_val.n)
        throw DimensionError("train: sample counts of inputs and targets differ");
    if (x_train.dim != model.n_in() || y_train.dim != model.n_out())
        throw DimensionError("train: dataset dims do not match the model");

    std::vector<Param*> params;
    model.visit_params([&](Param& p) { params.push_back(&p); });
    std::vector<Param*> learnable;
    for (Param* p : params)
        if (p->learnable) learnable.push_back(p);

    AdamState adam;
    adam.m.resize(learnable.size());
    adam.v.resize(learnable.size());
    for (std::size_t k = 0; k < learnable.size(); ++k) {
        adam.m[k].assign(learnable[k]->size(), 0.0);
        adam.v[k].assign(learnable[k]->size(), 0.0);
    }

    TrainLog log;
    log.best_val_mse = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> best_snapshot;

    std::vector<std::size_t> order(x_train.n);
    std::vector<double> xbatch, ybatch_grad;
    for (std::size_t epoch = 0; epoch < spec.epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i) {
            const std::size_t j = uniform_index(
                spec.seed, Substream(StreamTag::shuffle, epoch, 0, 0, 0, i), i);
            std::swap(order[i - 1], order[j]);
        }

        double train_sse = 0.0;
        for (std::size_t start = 0; start < x_train.n; start += spec.batch_size) {
            const std::size_t n = std::min(spec.batch_size, x_train.n - start);
            xbatch.resize(n * x_train.dim);
            for (std::size_t s = 0; s < n; ++s) {
                const auto src = x_train.sample(order[start + s]);
                std::copy(src.begin(), src.end(), xbatch.begin() + s * x_train.dim);
            }
            const auto pred = model.forward(xbatch, n, true);

            ybatch_grad.resize(n * y_train.dim);
            double sse = 0.0;
            const double scale = 2.0 / (double(n) * double(y_train.dim));
            for (std::size_t s = 0; s < n; ++s) {
                const auto target = y_train.sample(order[start + s]);
                for (std::size_t g = 0; g < y_train.dim; ++g) {
                    const double d = pred[s * y_train.dim + g] - target[g];
                    sse += d * d;
                    ybatch_grad[s * y_train.dim + g] = scale * d;
                }
            }
            if (!std::isfinite(sse))
                throw TrainError("non-finite training loss", epoch);
            train_sse += sse;

            for (Param* p : learnable) std::fill(p->grad.begin(), p->grad.end(), 0.0);
            model.backward(ybatch_grad, n);
            adam_step(learnable, adam, spec);
        }

        EpochLog el;
        el.train_mse = train_sse / (double(x_train.n) * double(y_train.dim));
        el.val_mse = batched_mse(model, x_val, y_val, spec.batch_size);
        if (!std::isfinite(el.val_mse))
            throw TrainError("non-finite validation loss", epoch);
        log.epochs.push_back(el);

        if (el.val_mse < log.best_val_mse) {
            log.best_val_mse = el.val_mse;
            log.best_epoch = epoch;
            best_snapshot.clear();
            for (Param* p : params) best_snapshot.push_back(p->value);
        }
    }

    for (std::size_t k = 0; k < params.size(); ++k) params[k]->value = best_snapshot[k];
    return log;
}

HyperResult hyper_search(const HyperSpace& space, std::size_t n_folds, std::size_t budget,
                         std::uint64_t seed, const TrialEvaluator& evaluate) {
    if (budget < 1) throw ValidationError("hyper_search: budget must be >= 1");
    if (n_folds < 1) throw ValidationError("hyper_search: need at least one fold");
    if (!(space.lr_min > 0.0) || space.lr_max < space.lr_min)
        throw ValidationError("hyper_search: empty learning-rate range");
    if (space.wd_min < 0.0 || space.wd_max < space.wd_min)
        throw ValidationError("hyper_search: empty weight-decay range");
    if (space.wd_min == 0.0 && space.wd_max > 0.0)
        throw ValidationError("hyper_search: log-uniform weight decay needs wd_min > 0 "
                              "(or a collapsed range)");

    auto log_uniform = [](double lo, double hi, double u) {
        if (lo == hi) return lo;
        return std::exp(std::log(lo) + u * (std::log(hi) - std::log(lo)));
    };

    HyperResult result;
    for (std::size_t trial = 0; trial < budget; ++trial) {
        HyperTrial t;
        t.learning_rate = log_uniform(
            space.lr_min, space.lr_max,
            uniform01(seed, Substream(StreamTag::hyper_search, trial, 0)));
        t.weight_decay = log_uniform(
            space.wd_min, space.wd_max,
            uniform01(seed, Substream(StreamTag::hyper_search, trial, 1)));
        double sum = 0.0;
        for (std::size_t fold = 0; fold < n_folds; ++fold) {
            const double mse = evaluate(t.learning_rate, t.weight_decay, fold);
            t.fold_mse.push_back(mse);
            sum += mse;
        }
        t.mean_val_mse = sum / double(n_folds);
        result.trials.push_back(std::move(t));
    }

    std::size_t best = 0;
    for (std::size_t i = 1; i < result.trials.size(); ++i) {
        const auto& a = result.trials[i];
        const auto& b = result.trials[best];
        const bool better =
            a.mean_val_mse < b.mean_val_mse ||
            (a.mean_val_mse == b.mean_val_mse &&
             (a.learning_rate < b.learning_rate ||
              (a.learning_rate == b.learning_rate && a.weight_decay < b.weight_decay)));
        if (better) best = i;
    }
    result.learning_rate = result.trials[best].learning_rate;
    result.weight_decay = result.trials[best].weight_decay;
    return result;
}

} // namespace dsv
