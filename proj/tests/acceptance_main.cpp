// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Every tolerance is pinned in code.

#include "dsv/bootstrap.hpp"
#include "dsv/checkpoint.hpp"
#include "dsv/cnn.hpp"
#include "dsv/cv.hpp"
#include "dsv/errors.hpp"
#include "dsv/gfd.hpp"
#include "dsv/hash.hpp"
#include "dsv/mlr.hpp"
#include "dsv/mva.hpp"
#include "dsv/preprocess.hpp"
#include "dsv/residual.hpp"
#include "dsv/rng.hpp"
#include "dsv/scores.hpp"
#include "dsv/synth.hpp"
#include "dsv/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

using namespace dsv;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

bool close12(double a, double b) {
    return std::fabs(a - b) <= 1e-12 * std::max({1.0, std::fabs(a), std::fabs(b)});
}

EnsembleField random_ensemble(const Grid& g, std::size_t T, std::uint32_t L, std::uint32_t M,
                              std::uint64_t seed) {
    EnsembleField e;
    e.grid = g;
    e.n_lead = L;
    e.n_member = M;
    e.units = "m/s";
    for (std::size_t t = 0; t < T; ++t) e.inits.push_back(Date(int(18000 + 7 * t)));
    e.values.resize(T * L * M * g.size());
    for (std::size_t i = 0; i < e.values.size(); ++i)
        e.values[i] = normal_draw(seed, Substream(StreamTag::synth_field, i, 1));
    return e;
}

LeadAlignedField random_truth(const Grid& g, std::size_t T, std::uint32_t L,
                              std::uint64_t seed) {
    LeadAlignedField y(T, L, g.size());
    for (std::size_t i = 0; i < y.values.size(); ++i)
        y.values[i] = normal_draw(seed, Substream(StreamTag::synth_field, i, 2));
    return y;
}

// ---------------------------------------------------------- criterion 1

Outcome criterion_score_oracles() {
    for (std::uint64_t trial = 0; trial < 200; ++trial) {
        auto dim = [&](std::uint64_t slot, std::size_t lo, std::size_t hi) {
            return lo + uniform_index(1000, Substream(StreamTag::subsample, trial, slot),
                                      hi - lo + 1);
        };
        const std::size_t T = dim(0, 1, 10);
        const std::uint32_t L = std::uint32_t(dim(1, 1, 3));
        const std::uint32_t M = std::uint32_t(dim(2, 2, 10));
        const std::uint32_t n_lat = std::uint32_t(dim(3, 1, 3));
        const std::uint32_t n_lon = std::uint32_t(dim(4, 1, 3));
        const Grid g(20.0, 10.0, n_lat, -30.0, 10.0, n_lon);
        const EnsembleField ens = random_ensemble(g, T, L, M, 3000 + trial);
        const LeadAlignedField y = random_truth(g, T, L, 4000 + trial);

        const auto vm = mse_ensemble_mean(y, ens).values;
        const auto om = oracle::mse_ens_mean(y, ens);
        const auto vc = crps_discrete(y, ens).values;
        const auto oc = oracle::crps(y, ens);
        const auto vs = ssr(y, ens).values;
        const auto os = oracle::ssr(y, ens);
        for (std::size_t i = 0; i < vm.size(); ++i) {
            if (!close12(vm[i], om[i])) return {false, "mse mismatch"};
            if (!close12(vc[i], oc[i])) return {false, "crps mismatch"};
            if (std::isfinite(vs[i]) != std::isfinite(os[i])) return {false, "ssr sentinel"};
            if (std::isfinite(vs[i]) && !close12(vs[i], os[i])) return {false, "ssr mismatch"};
        }
        const SsimResult vss = ssim(y, ens);
        const auto oss = oracle::ssim(y, ens);
        for (std::size_t l = 0; l < L; ++l) {
            if (!close12(vss.ssim[l], oss.ssim[l]) ||
                !close12(vss.luminance[l], oss.luminance[l]) ||
                !close12(vss.contrast[l], oss.contrast[l]) ||
                !close12(vss.structure[l], oss.structure[l]))
                return {false, "ssim mismatch"};
        }
        ScoreTable table("mse", g, L);
        table.values = vm;
        const auto agg = aggregate_spatial(table);
        for (std::size_t l = 0; l < L; ++l) {
            const double ref = oracle::latitude_weighted_mean(
                {vm.data() + l * g.size(), g.size()}, g);
            if (!close12(agg[l], ref)) return {false, "aggregation mismatch"};
        }
    }
    return {true, "200 instances, 4 scores + aggregation, <= 1e-12"};
}

// ---------------------------------------------------------- criterion 2

Outcome criterion_crps_identities() {
    for (std::uint64_t trial = 0; trial < 100; ++trial) {
        const std::size_t T = 1 + trial % 5;
        const std::uint32_t M = std::uint32_t(2 + trial % 8);
        const Grid g(30.0, 5.0, 2, 0.0, 5.0, 2);
        EnsembleField ens = random_ensemble(g, T, 2, M, 5000 + trial);
        const LeadAlignedField y = random_truth(g, T, 2, 6000 + trial);

        // M = 1 reduces to the mean absolute error
        EnsembleField single = ens;
        single.n_member = 1;
        single.values.clear();
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t l = 0; l < 2; ++l) {
                const auto s = ens.member_slice(t, l, 0);
                single.values.insert(single.values.end(), s.begin(), s.end());
            }
        const auto c1 = crps_discrete(y, single).values;
        for (std::size_t l = 0; l < 2; ++l)
            for (std::size_t gg = 0; gg < g.size(); ++gg) {
                double mae = 0.0;
                for (std::size_t t = 0; t < T; ++t)
                    mae += std::fabs(single.at(t, l, 0, gg) - y.at(t, l, gg));
                mae /= double(T);
                if (std::fabs(c1[l * g.size() + gg] - mae) > 1e-13)
                    return {false, "crps != mae at M=1"};
            }

        // a perfect ensemble scores zero
        EnsembleField perfect = ens;
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t l = 0; l < 2; ++l)
                for (std::size_t m = 0; m < M; ++m) {
                    auto s = perfect.member_slice(t, l, m);
                    const auto obs = y.slice(t, l);
                    std::copy(obs.begin(), obs.end(), s.begin());
                }
        for (double v : crps_discrete(y, perfect).values)
            if (std::fabs(v) > 1e-14) return {false, "perfect ensemble crps != 0"};

        // member permutation leaves the score unchanged
        EnsembleField shuffled = ens;
        std::vector<std::size_t> perm(M);
        for (std::size_t m = 0; m < M; ++m) perm[m] = m;
        for (std::size_t m = M; m > 1; --m) {
            const std::size_t j = uniform_index(
                7000 + trial, Substream(StreamTag::subsample, trial, 9, m), m);
            std::swap(perm[m - 1], perm[j]);
        }
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t l = 0; l < 2; ++l)
                for (std::size_t m = 0; m < M; ++m) {
                    const auto src = ens.member_slice(t, l, perm[m]);
                    auto dst = shuffled.member_slice(t, l, m);
                    std::copy(src.begin(), src.end(), dst.begin());
                }
        const auto a = crps_discrete(y, ens).values;
        const auto b = crps_discrete(y, shuffled).values;
        for (std::size_t i = 0; i < a.size(); ++i)
            if (std::fabs(a[i] - b[i]) >
                1e-13 * std::max({1.0, std::fabs(a[i]), std::fabs(b[i])}))
                return {false, "crps not permutation invariant"};

        // nonnegativity
        for (double v : crps_discrete(y, ens).values)
            if (v < -1e-15) return {false, "negative crps"};
    }
    return {true, "100 cases: MAE at M=1, perfect=0, permutation invariant"};
}

// ---------------------------------------------------------- criterion 3

Outcome criterion_quantile_optimality() {
    const std::size_t cases = 50, T = 20, M_big = 200, M_small = 10, subsamples = 100;
    const Grid g(0.0, 1.0, 1, 0.0, 1.0, 1);
    std::size_t wins = 0;
    double max_ks = 0.0;
    for (std::uint64_t c = 0; c < cases; ++c) {
        EnsembleField full;
        full.grid = g;
        full.n_lead = 1;
        full.n_member = M_big;
        full.units = "m/s";
        LeadAlignedField y(T, 1, 1);
        full.values.resize(T * M_big);
        for (std::size_t t = 0; t < T; ++t) {
            full.inits.push_back(Date(int(18000 + 7 * t)));
            y.at(t, 0, 0) = normal_draw(9000 + c, Substream(StreamTag::synth_field, t, 3));
            for (std::size_t m = 0; m < M_big; ++m)
                full.values[t * M_big + m] =
                    normal_draw(9000 + c, Substream(StreamTag::synth_field, t, 4, m));
        }
        const EnsembleField quant = quantile_downsample(full, M_small);
        const double crps_quant = crps_discrete(y, quant).values[0];

        // Kolmogorov-Smirnov distance between the big sample and its quantiles
        for (std::size_t t = 0; t < T; ++t) {
            std::vector<double> big(full.values.begin() + t * M_big,
                                    full.values.begin() + (t + 1) * M_big);
            std::sort(big.begin(), big.end());
            double ks = 0.0;
            for (double x : big) {
                const double fb =
                    double(std::upper_bound(big.begin(), big.end(), x) - big.begin()) /
                    double(M_big);
                std::size_t below = 0;
                for (std::size_t m = 0; m < M_small; ++m)
                    if (quant.at(t, 0, m, 0) <= x) ++below;
                ks = std::max(ks, std::fabs(fb - double(below) / double(M_small)));
            }
            max_ks = std::max(max_ks, ks);
        }

        double crps_random_sum = 0.0;
        for (std::size_t s = 0; s < subsamples; ++s) {
            // 10 distinct member indices, shared across initializations
            std::set<std::size_t> pick;
            std::uint64_t probe = 0;
            while (pick.size() < M_small) {
                pick.insert(uniform_index(
                    9500 + c, Substream(StreamTag::subsample, s, 5, probe), M_big));
                ++probe;
            }
            EnsembleField sub;
            sub.grid = g;
            sub.inits = full.inits;
            sub.n_lead = 1;
            sub.n_member = M_small;
            sub.units = "m/s";
            sub.values.reserve(T * M_small);
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t m : pick) sub.values.push_back(full.values[t * M_big + m]);
            crps_random_sum += crps_discrete(y, sub).values[0];
        }
        if (crps_quant <= crps_random_sum / double(subsamples)) ++wins;
    }
    std::ostringstream detail;
    detail << wins << "/50 quantile wins, max KS " << max_ks;
    return {wins >= 49 && max_ks <= 0.1 + 1e-12, detail.str()};
}

// ---------------------------------------------------------- criterion 4

Outcome criterion_gradients() {
    // Desk scale: S=2, C0=8, 12x16 maps.
    struct Check {
        std::string name;
        std::function<Tensor4(const Tensor4&)> forward;
        std::function<Tensor4(const Tensor4&)> backward;
        std::vector<Param*> params;
        Tensor4 input;
        bool input_grad_only = false;
    };
    auto rnd = [](std::size_t n, std::size_t c, std::size_t h, std::size_t w,
                  std::uint64_t seed) {
        Tensor4 t(n, c, h, w);
        for (std::size_t i = 0; i < t.size(); ++i)
            t.v[i] = normal_draw(seed, Substream(StreamTag::synth_field, i, 6));
        return t;
    };

    nn::DscConv dsc("acc.dsc", 8, 16);
    nn::BatchNorm bn("acc.bn", 8);
    nn::ChannelAttention catt("acc.catt", 16, 8);
    nn::SpatialAttention satt("acc.satt");
    nn::Conv1x1 head("acc.head", 8, 1);
    nn::BilinearUp2 up;
    std::size_t counter = 0;
    dsc.init(123, counter);
    catt.init(124, counter);
    satt.init(125, counter);
    head.init(126, counter);

    std::vector<Check> checks;
    auto add = [&](std::string name, auto& layer, Tensor4 in, bool input_only = false) {
        Check c;
        c.name = std::move(name);
        c.forward = [&layer](const Tensor4& x) { return layer.forward(x, true); };
        c.backward = [&layer](const Tensor4& g) { return layer.backward(g); };
        c.input = std::move(in);
        c.input_grad_only = input_only;
        checks.push_back(std::move(c));
    };
    add("dsc", dsc, rnd(2, 8, 12, 16, 201));
    dsc.collect(checks.back().params);
    add("batch_norm", bn, rnd(2, 8, 12, 16, 202));
    bn.collect(checks.back().params);
    add("channel_attention", catt, rnd(2, 16, 12, 16, 203));
    catt.collect(checks.back().params);
    add("spatial_attention", satt, rnd(2, 8, 12, 16, 204));
    satt.collect(checks.back().params);
    add("conv1x1", head, rnd(2, 8, 12, 16, 205));
    head.collect(checks.back().params);
    add("bilinear_upsample", up, rnd(2, 8, 6, 8, 206), true);

    const double h = 1e-5;
    for (Check& c : checks) {
        Tensor4 probe_out = c.forward(c.input);
        Tensor4 r = rnd(probe_out.n, probe_out.c, probe_out.h, probe_out.w, 299);
        for (Param* p : c.params) std::fill(p->grad.begin(), p->grad.end(), 0.0);
        (void)c.forward(c.input);
        const Tensor4 gx = c.backward(r);

        auto loss = [&] {
            const Tensor4 out = c.forward(c.input);
            double s = 0.0;
            for (std::size_t i = 0; i < out.size(); ++i) s += out.v[i] * r.v[i];
            return s;
        };
        auto fd_check = [&](double* slot, double analytic, const std::string& what) {
            const double keep = *slot;
            *slot = keep + h;
            const double up_v = loss();
            *slot = keep - h;
            const double dn_v = loss();
            *slot = keep;
            const double fd = (up_v - dn_v) / (2.0 * h);
            const double rel =
                std::fabs(analytic - fd) / std::max({std::fabs(analytic), std::fabs(fd), 1e-8});
            if (rel >= 1e-4)
                throw Error(what + ": relative error " + std::to_string(rel));
        };

        if (!c.input_grad_only) {
            for (Param* p : c.params) {
                if (!p->learnable) continue;
                const std::size_t n = std::min<std::size_t>(50, p->size());
                for (std::size_t k = 0; k < n; ++k) {
                    const std::size_t idx =
                        p->size() <= 50 ? k
                                        : uniform_index(300,
                                                        Substream(StreamTag::subsample, k, 7),
                                                        p->size());
                    fd_check(&p->value[idx], p->grad[idx], c.name + "/" + p->name);
                }
            }
        }
        const std::size_t n = std::min<std::size_t>(50, c.input.size());
        for (std::size_t k = 0; k < n; ++k) {
            const std::size_t idx =
                c.input.size() <= 50
                    ? k
                    : uniform_index(301, Substream(StreamTag::subsample, k, 8), c.input.size());
            fd_check(&c.input.v[idx], gx.v[idx], c.name + "/input");
        }
    }
    return {true, "6 layer kinds, 50 sampled elements each, rel err < 1e-4"};
}

// ---------------------------------------------------------- criterion 5

Outcome criterion_dual_solver() {
    double worst = 0.0;
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
        const std::size_t n_in =
            2 + uniform_index(400, Substream(StreamTag::subsample, trial, 9), 19);
        const std::size_t T =
            n_in + 10 +
            uniform_index(400, Substream(StreamTag::subsample, trial, 10), 170);
        const std::size_t n_out = 1 + trial % 3;
        const double lambda = (trial % 4 == 0) ? 0.0 : 0.1 * double(trial);

        std::vector<double> x(T * n_in), y(T * n_out);
        for (std::size_t i = 0; i < x.size(); ++i)
            x[i] = normal_draw(500 + trial, Substream(StreamTag::synth_field, i, 11));
        for (std::size_t i = 0; i < y.size(); ++i)
            y[i] = normal_draw(600 + trial, Substream(StreamTag::synth_field, i, 12));

        const MlrModel a = mlr_fit_closed_form(x, y, T, n_in, n_out, lambda);
        const MlrModel b = mlr_fit_gradient(x, y, T, n_in, n_out, lambda);
        for (std::size_t i = 0; i < a.weights.size(); ++i)
            worst = std::max(worst, std::fabs(a.weights[i] - b.weights[i]));
        for (std::size_t i = 0; i < a.intercept.size(); ++i)
            worst = std::max(worst, std::fabs(a.intercept[i] - b.intercept[i]));
        if (worst >= 1e-5) break;
    }
    std::ostringstream detail;
    detail << "20 problems, worst coefficient gap " << worst;
    return {worst < 1e-5, detail.str()};
}

// ------------------------------------------------- shared pipeline pieces

Field select_djf_years(const Field& f, int lo, int hi) {
    Field out;
    out.grid = f.grid;
    out.units = f.units;
    const std::vector<int> djf = {12, 1, 2};
    for (std::size_t t = 0; t < f.n_time(); ++t) {
        const Date d = f.times[t];
        const int m = d.month();
        if (!(m == 12 || m == 1 || m == 2)) continue;
        const int sy = season_year(d, djf);
        if (sy >= lo && sy < hi) {
            out.times.push_back(d);
            const auto row = f.row(t);
            out.values.insert(out.values.end(), row.begin(), row.end());
        }
    }
    return out;
}

double physical_val_mse(const PreprocessChain& cy, const std::vector<double>& pred_norm,
                        const Field& yv) {
    double s = 0.0;
    for (std::size_t t = 0; t < yv.n_time(); ++t) {
        std::vector<double> p(pred_norm.begin() + t * yv.n_grid(),
                              pred_norm.begin() + (t + 1) * yv.n_grid());
        cy.inverse_sample(p, yv.times[t]);
        for (std::size_t g = 0; g < yv.n_grid(); ++g) {
            const double d = p[g] - yv.at(t, g);
            s += d * d;
        }
    }
    return s / double(yv.n_time() * yv.n_grid());
}

// ---------------------------------------------------------- criterion 6

Outcome criterion_nonlinearity() {
    SynthSpec spec;
    spec.in_grid = Grid(33, 3, 8, -15, 3, 10);
    spec.out_grid = Grid(36, 3, 6, -12, 3, 8);
    spec.n_years = 70;
    spec.history_years = 3;
    spec.quadratic_strength = 2.5;
    spec.obs_noise_std = 0.5;
    spec.seed = 2024;
    const SynthTruth truth = generate_truth(spec);
    double floor_mean = 0.0;
    for (double f : truth.linear_floor) floor_mean += f;
    floor_mean /= double(truth.linear_floor.size());

    const Field xtr = select_djf_years(truth.x, 2001, 2057);
    const Field ytr = select_djf_years(truth.y, 2001, 2057);
    const Field xv = select_djf_years(truth.x, 2057, 2071);
    const Field yv = select_djf_years(truth.y, 2057, 2071);

    const PreprocessChain cx = PreprocessChain::fit(truth.x, xtr, 3);
    const PreprocessChain cy = PreprocessChain::fit(truth.y, ytr, 3);
    const Field xn = cx.transform(xtr), yn = cy.transform(ytr);
    const Field xvn = cx.transform(xv), yvn = cy.transform(yv);

    const MlrModel mlr = mlr_fit_closed_form(xn.values, yn.values, xn.n_time(), xn.n_grid(),
                                             yn.n_grid(), 100.0);
    const double mlr_mse =
        physical_val_mse(cy, mlr.predict_batch(xvn.values, xvn.n_time()), yv);

    CnnConfig cfg;
    cfg.stages = 2;
    cfg.base_channels = 8;
    cfg.in_h = 8;
    cfg.in_w = 10;
    cfg.out_h = 6;
    cfg.out_w = 8;
    if (const auto off = aligned_crop_offsets(spec.in_grid, spec.out_grid)) {
        cfg.crop_top = off->first;
        cfg.crop_left = off->second;
    }
    auto cnn = make_cnn_trainable(cfg, 42);
    TrainSpec ts;
    ts.learning_rate = 3e-3;
    ts.weight_decay = 1e-6;
    ts.epochs = 80;
    ts.batch_size = 32;
    ts.seed = 7;
    const Dataset dx{xn.n_time(), xn.n_grid(), xn.values};
    const Dataset dy{yn.n_time(), yn.n_grid(), yn.values};
    const Dataset dvx{xvn.n_time(), xvn.n_grid(), xvn.values};
    const Dataset dvy{yvn.n_time(), yvn.n_grid(), yvn.values};
    train_model(*cnn, dx, dy, dvx, dvy, ts);
    const double cnn_mse =
        physical_val_mse(cy, cnn->forward(xvn.values, xvn.n_time(), false), yv);

    std::ostringstream detail;
    detail << "floor " << floor_mean << ", MLR " << mlr_mse << " (" << mlr_mse / floor_mean
           << "x floor), CNN " << cnn_mse << " (" << cnn_mse / mlr_mse << "x MLR)";
    const bool pass = cnn_mse <= 0.9 * mlr_mse && std::fabs(mlr_mse / floor_mean - 1.0) <= 0.10;
    return {pass, detail.str()};
}

// ---------------------------------------------------------- criterion 7

Outcome criterion_dispersion() {
    SynthSpec spec;
    spec.in_grid = Grid(33, 3, 8, -15, 3, 10);
    spec.out_grid = Grid(36, 3, 6, -12, 3, 8);
    spec.n_years = 40;
    spec.history_years = 3;
    spec.quadratic_strength = 0.8;
    spec.obs_noise_std = 0.5;
    spec.spread_deflation = 0.5;
    spec.x_err_std = 0.3;
    spec.seed = 31;
    const SynthTruth truth = generate_truth(spec);
    const EnsembleField x_ens = generate_ensembles(spec, truth, false);

    const int split = 2031;
    const Field xtr = select_djf_years(truth.x, 2001, split);
    const Field ytr = select_djf_years(truth.y, 2001, split);

    ModelCheckpoint ckpt;
    ckpt.kind = "mlr";
    ckpt.in_grid = spec.in_grid;
    ckpt.out_grid = spec.out_grid;
    ckpt.prep_x = PreprocessChain::fit(truth.x, xtr, 3);
    ckpt.prep_y = PreprocessChain::fit(truth.y, ytr, 3);
    const Field xn = ckpt.prep_x.transform(xtr), yn = ckpt.prep_y.transform(ytr);
    ckpt.mlr = mlr_fit_closed_form(xn.values, yn.values, xn.n_time(), xn.n_grid(),
                                   yn.n_grid(), 100.0);
    const Field yhat = ckpt.regress(xtr);
    ckpt.residuals = fit_residuals(ytr.values, yhat.values, ytr.n_time(), ytr.n_grid());

    EnsembleField xe;
    xe.grid = x_ens.grid;
    xe.n_lead = x_ens.n_lead;
    xe.n_member = x_ens.n_member;
    xe.units = x_ens.units;
    const std::size_t block = x_ens.n_lead * std::size_t(x_ens.n_member) * x_ens.n_grid();
    for (std::size_t t = 0; t < x_ens.n_init(); ++t)
        if (season_year(x_ens.inits[t], {12, 1, 2}) >= split) {
            xe.inits.push_back(x_ens.inits[t]);
            xe.values.insert(xe.values.end(), x_ens.values.begin() + t * block,
                             x_ens.values.begin() + (t + 1) * block);
        }

    const EnsembleField regressed = ckpt.regress(xe);
    const EnsembleField perturbed = perturb_ensemble(regressed, ckpt.residuals, 20, 99);
    const EnsembleField perturbed_eq = equalize_members(perturbed, x_ens.n_member);
    const LeadAlignedField ver = align_verifying(truth.y, xe.inits, xe.n_lead);

    const auto ssr_reg = aggregate_spatial(ssr(ver, regressed));
    const auto ssr_pert = aggregate_spatial(ssr(ver, perturbed_eq));
    const auto crps_reg = aggregate_spatial(crps_discrete(ver, regressed));
    const auto crps_pert = aggregate_spatial(crps_discrete(ver, perturbed_eq));

    bool pass = true;
    std::ostringstream detail;
    detail << "SSR reg/pert per lead:";
    for (std::size_t l = 0; l < ssr_reg.size(); ++l) {
        detail << " " << ssr_reg[l] << "/" << ssr_pert[l];
        pass &= ssr_reg[l] < 0.7;
        pass &= ssr_pert[l] >= 0.85 && ssr_pert[l] <= 1.10;
        pass &= crps_pert[l] < crps_reg[l];
    }
    return {pass, detail.str()};
}

// ---------------------------------------------------------- criterion 8

Outcome criterion_bootstrap() {
    const Grid cell(0, 1, 1, 0, 1, 1);

    // Null calibration over 200 trials.
    const std::size_t trials = 200, T = 60;
    std::vector<double> ps;
    for (std::uint64_t k = 0; k < trials; ++k) {
        LeadAlignedField s(T, 1, 1), b(T, 1, 1);
        for (std::size_t t = 0; t < T; ++t) {
            const double zs = normal_draw(7000 + k, Substream(StreamTag::synth_field, t, 13));
            const double zb = normal_draw(8000 + k, Substream(StreamTag::synth_field, t, 14));
            s.at(t, 0, 0) = 1.0 + zs * zs;
            b.at(t, 0, 0) = 1.0 + zb * zb;
        }
        BootstrapOptions opt;
        opt.replicates = 400;
        opt.seed = 100 + k;
        ps.push_back(bootstrap_delta(s, b, cell, Orientation::negative, opt).cells[0].p);
    }
    std::sort(ps.begin(), ps.end());
    double ks = 0.0;
    for (std::size_t i = 0; i < ps.size(); ++i)
        ks = std::max({ks, std::fabs(double(i + 1) / double(trials) - ps[i]),
                       std::fabs(double(i) / double(trials) - ps[i])});
    const double ks_crit = 1.358 / std::sqrt(double(trials)); // 5% level

    // Constructed strict dominance.
    LeadAlignedField dom_b(40, 1, 1), dom_s(40, 1, 1);
    for (std::size_t t = 0; t < 40; ++t) {
        dom_b.at(t, 0, 0) = 2.0 + 0.01 * double(t);
        dom_s.at(t, 0, 0) = 1.0 + 0.01 * double(t);
    }
    BootstrapOptions opt;
    opt.replicates = 500;
    opt.seed = 3;
    const double p_dom =
        bootstrap_delta(dom_s, dom_b, cell, Orientation::negative, opt).cells[0].p;

    // Shared-resample-index instrumentation.
    bool shared = true;
    std::vector<std::vector<std::size_t>> seen_s, seen_b;
    const auto observer = [&](std::size_t rep, int model, std::span<const std::size_t> idx) {
        auto& bucket = model == 0 ? seen_s : seen_b;
        if (bucket.size() != rep) shared = false;
        bucket.emplace_back(idx.begin(), idx.end());
    };
    BootstrapOptions opt2;
    opt2.replicates = 64;
    opt2.seed = 4;
    (void)bootstrap_delta(dom_s, dom_b, cell, Orientation::negative, opt2, "d", observer);
    shared &= seen_s.size() == 64 && seen_b.size() == 64;
    for (std::size_t rep = 0; shared && rep < 64; ++rep) shared &= seen_s[rep] == seen_b[rep];

    std::ostringstream detail;
    detail << "null KS " << ks << " (crit " << ks_crit << "), dominance p " << p_dom
           << ", shared indices " << (shared ? "yes" : "NO");
    return {ks < ks_crit && p_dom == 0.0 && shared, detail.str()};
}

// ---------------------------------------------------------- criterion 9

Outcome criterion_leakage_determinism() {
    const auto base = std::filesystem::temp_directory_path() / "dsv_acceptance_cv";
    std::filesystem::remove_all(base);
    std::filesystem::create_directories(base);

    SynthSpec spec;
    spec.in_grid = Grid(30, 3, 8, -12, 3, 8);
    spec.out_grid = Grid(36, 3, 4, -6, 3, 4);
    spec.n_years = 6;
    spec.history_years = 2;
    spec.n_lead = 2;
    spec.n_member = 4;
    spec.quadratic_strength = 0.3;
    spec.obs_noise_std = 0.4;
    spec.spread_deflation = 0.7;
    spec.seed = 77;
    write_synth_dataset(spec, base / "data");
    {
        std::ofstream cfg(base / "mini.cfg");
        cfg << "x_truth = data/x_truth.gfd\ny_truth = data/y_truth.gfd\n"
            << "x_history = data/x_history.gfd\ny_history = data/y_history.gfd\n"
            << "x_ens = data/x_ens.gfd\ny_ens = data/y_ens.gfd\n"
            << "study_start_year = 2001\nstudy_years = 6\nouter_folds = 3\ninner_folds = 2\n"
            << "clim_window_years = 2\nmodel = mlr\nhyper_budget = 3\n"
            << "perturbation_count = 20\nbootstrap_replicates = 200\nseed = 7\n";
    }
    const RunConfig config = RunConfig::from_file(base / "mini.cfg");
    (void)run_experiment(config, base / "run1");
    (void)run_experiment(config, base / "run2");

    std::size_t compared = 0;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(base / "run1")) {
        if (!entry.is_regular_file() || entry.path().extension() != ".csv") continue;
        const auto rel = std::filesystem::relative(entry.path(), base / "run1");
        if (hash_file(entry.path()) != hash_file(base / "run2" / rel))
            return {false, "CSV differs between identical runs: " + rel.string()};
        ++compared;
    }
    if (compared < 10) return {false, "unexpectedly few CSV outputs"};

    // Independent leakage audit: training dates vs test evaluation dates.
    const Field x_truth = read_gfd_field(config.x_truth);
    const EnsembleField x_ens = read_gfd_ensemble(config.x_ens);
    const CvLayout layout = build_layout(2001, 6, 3, 2);
    for (const CvFold& fold : layout.folds) {
        std::set<std::int32_t> test_eval;
        for (const Date init : x_ens.inits) {
            const int sy = season_year(init, {12, 1, 2});
            if (std::find(fold.test_years.begin(), fold.test_years.end(), sy) ==
                fold.test_years.end())
                continue;
            for (std::size_t l = 0; l < x_ens.n_lead; ++l)
                test_eval.insert(lead_valid_date(init, l).epoch_day);
        }
        for (const Date d : x_truth.times) {
            const int m = d.month();
            if (!(m == 12 || m == 1 || m == 2)) continue;
            const int sy = season_year(d, {12, 1, 2});
            if (std::find(fold.train_years.begin(), fold.train_years.end(), sy) ==
                fold.train_years.end())
                continue;
            if (test_eval.count(d.epoch_day))
                return {false, "leakage: train date " + d.iso() + " is a test date"};
        }
    }

    std::ostringstream detail;
    detail << compared
           << " CSVs bitwise identical across reruns; train/test dates disjoint in all folds";
    std::filesystem::remove_all(base);
    return {true, detail.str()};
}

// --------------------------------------------------------- criterion 10

Outcome criterion_format_fuzz() {
    // 1000 random round trips, bitwise stable.
    for (std::uint64_t trial = 0; trial < 1000; ++trial) {
        auto dim = [&](std::uint64_t slot, std::size_t lo, std::size_t hi) {
            return lo + uniform_index(42, Substream(StreamTag::subsample, trial, 20 + slot),
                                      hi - lo + 1);
        };
        const Grid g(-10.0 + double(dim(0, 0, 50)), 0.5 + double(dim(1, 0, 5)),
                     std::uint32_t(dim(2, 1, 4)), -120.0 + double(dim(3, 0, 200)),
                     0.5 + double(dim(4, 0, 5)), std::uint32_t(dim(5, 1, 4)));
        const EnsembleField e =
            random_ensemble(g, dim(6, 1, 4), std::uint32_t(dim(7, 1, 3)),
                            std::uint32_t(dim(8, 1, 5)), 10000 + trial);
        const auto bytes = encode_gfd(e);
        const auto back = decode_gfd(bytes);
        const auto bytes2 = encode_gfd(std::get<EnsembleField>(back));
        if (bytes != bytes2) return {false, "round trip not bitwise stable"};
    }

    // 1000 deliberately corrupt inputs, all rejected, none crashing.
    const EnsembleField base = random_ensemble(Grid(30, 5, 3, 0, 5, 3), 3, 2, 4, 999);
    const auto clean = encode_gfd(base);
    std::size_t rejected = 0;
    for (std::uint64_t trial = 0; trial < 1000; ++trial) {
        auto bytes = clean;
        const std::uint64_t kind = trial % 3;
        if (kind == 0) {
            // truncation: the payload length can no longer match
            const std::size_t cut =
                1 + uniform_index(43, Substream(StreamTag::subsample, trial, 30),
                                  bytes.size() - 1);
            bytes.resize(bytes.size() - cut);
        } else if (kind == 1) {
            // magic or kind corruption
            const std::size_t pos =
                uniform_index(43, Substream(StreamTag::subsample, trial, 31), 5);
            bytes[pos] = std::uint8_t(
                bytes[pos] + 2 +
                uniform_index(43, Substream(StreamTag::subsample, trial, 32), 200));
        } else {
            // dimension tampering: bump one dim field without fixing the payload
            const std::size_t field =
                uniform_index(43, Substream(StreamTag::subsample, trial, 33), 4);
            const std::size_t pos = 5 + 4 * field;
            bytes[pos] = std::uint8_t(
                bytes[pos] + 1 +
                uniform_index(43, Substream(StreamTag::subsample, trial, 34), 100));
        }
        try {
            (void)decode_gfd(bytes);
            return {false, "corrupt input accepted at trial " + std::to_string(trial)};
        } catch (const Error&) {
            ++rejected;
        }
    }
    std::ostringstream detail;
    detail << "1000 round trips bitwise stable; " << rejected << "/1000 corruptions rejected";
    return {rejected == 1000, detail.str()};
}

// --------------------------------------------------------- criterion 11

Outcome criterion_mva_fixed_point() {
    const Grid g(40, 4, 3, -8, 4, 4);
    const EnsembleField ens = random_ensemble(g, 30, 3, 5, 111);
    LeadAlignedField ref = random_truth(g, 30, 3, 112);
    for (double& v : ref.values) v = 2.0 * v + 1.5;

    const MvaParams p = fit_mva(ens, ref);
    const EnsembleField cal = apply_mva(ens, p);
    const MvaParams q = fit_mva(cal, ref);
    double worst_scale = 0.0, worst_shift = 0.0;
    for (std::size_t l = 0; l < q.n_lead; ++l)
        for (std::size_t gg = 0; gg < q.n_grid; ++gg) {
            worst_scale = std::max(worst_scale, std::fabs(q.scale(l, gg) - 1.0));
            worst_shift = std::max(
                worst_shift,
                std::fabs(q.ref_mean[l * q.n_grid + gg] - q.ens_mean[l * q.n_grid + gg]));
        }
    std::ostringstream detail;
    detail << "max |scale-1| " << worst_scale << ", max |shift| " << worst_shift;
    return {worst_scale <= 1e-10 && worst_shift <= 1e-10, detail.str()};
}

} // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        double budget_seconds; // 0 = no stated budget
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria = {
        {1, "score-oracle equivalence", 30.0, criterion_score_oracles},
        {2, "crps identities", 0.0, criterion_crps_identities},
        {3, "quantile-downsampling optimality", 0.0, criterion_quantile_optimality},
        {4, "gradient correctness", 120.0, criterion_gradients},
        {5, "mlr dual-solver agreement", 0.0, criterion_dual_solver},
        {6, "nonlinearity recovery", 600.0, criterion_nonlinearity},
        {7, "dispersion restoration", 300.0, criterion_dispersion},
        {8, "bootstrap calibration", 0.0, criterion_bootstrap},
        {9, "leakage and determinism", 600.0, criterion_leakage_determinism},
        {10, "format round trip", 0.0, criterion_format_fuzz},
        {11, "mva fixed point", 0.0, criterion_mva_fixed_point},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = c.run();
        } catch (const std::exception& e) {
            out = {false, std::string("exception: ") + e.what()};
        }
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        bool pass = out.pass;
        std::string note = out.detail;
        if (c.budget_seconds > 0.0 && elapsed > c.budget_seconds) {
            pass = false;
            note += " [over runtime budget]";
        }
        std::printf("[%s] criterion %2d: %s (%.1fs) -- %s\n", pass ? "PASS" : "FAIL", c.id,
                    c.name, elapsed, note.c_str());
        std::fflush(stdout);
        if (!pass) ++failures;
    }
    if (failures > 0) std::printf("%d criterion(s) failed\n", failures);
    return failures == 0 ? 0 : 1;
}
