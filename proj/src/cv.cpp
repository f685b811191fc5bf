#include "dsv/cv.hpp"

#include "dsv/bootstrap.hpp"
#include "dsv/errors.hpp"
#include "dsv/gfd.hpp"
#include "dsv/parallel.hpp"
#include "dsv/hash.hpp"
#include "dsv/mva.hpp"
#include "dsv/residual.hpp"
#include "dsv/rng.hpp"
#include "dsv/scores.hpp"
#include "dsv/synth.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <set>

namespace dsv {

namespace {

using nlohmann::json;

// ------------------------------------------------------------- selection

bool contains(const std::vector<int>& years, int y) {
    return std::find(years.begin(), years.end(), y) != years.end();
}

bool month_in(const std::vector<int>& months, int m) {
    return std::find(months.begin(), months.end(), m) != months.end();
}

Field select_dates(const Field& f, const std::vector<std::uint8_t>& keep) {
    Field out;
    out.grid = f.grid;
    out.units = f.units;
    for (std::size_t t = 0; t < f.n_time(); ++t)
        if (keep[t]) {
            out.times.push_back(f.times[t]);
            const auto row = f.row(t);
            out.values.insert(out.values.end(), row.begin(), row.end());
        }
    if (out.times.empty()) throw ValidationError("date selection produced an empty field");
    return out;
}

Field select_season_years(const Field& f, const std::vector<int>& months,
                          const std::vector<int>& years) {
    std::vector<std::uint8_t> keep(f.n_time(), 0);
    for (std::size_t t = 0; t < f.n_time(); ++t) {
        const Date d = f.times[t];
        keep[t] = month_in(months, d.month()) && contains(years, season_year(d, months));
    }
    return select_dates(f, keep);
}

EnsembleField select_inits(const EnsembleField& e, const std::vector<int>& months,
                           const std::vector<int>& years) {
    EnsembleField out;
    out.grid = e.grid;
    out.n_lead = e.n_lead;
    out.n_member = e.n_member;
    out.units = e.units;
    const std::size_t block = e.n_lead * std::size_t(e.n_member) * e.n_grid();
    for (std::size_t t = 0; t < e.n_init(); ++t) {
        const Date d = e.inits[t];
        if (contains(years, season_year(d, months))) {
            out.inits.push_back(d);
            out.values.insert(out.values.end(), e.values.begin() + t * block,
                              e.values.begin() + (t + 1) * block);
        }
    }
    if (out.inits.empty()) throw ValidationError("no ensemble initializations in fold years");
    return out;
}

Field concat_fields(const Field& a, const Field& b) {
    Field out = a;
    out.times.insert(out.times.end(), b.times.begin(), b.times.end());
    out.values.insert(out.values.end(), b.values.begin(), b.values.end());
    out.validate();
    return out;
}

Dataset to_dataset(const Field& f) {
    Dataset d;
    d.n = f.n_time();
    d.dim = f.n_grid();
    d.values = f.values;
    return d;
}

// ------------------------------------------------------------ fold stages

struct LoadedData {
    Field x_truth, y_truth, x_history, y_history;
    EnsembleField x_ens, y_ens;
};

struct FoldModel {
    ModelCheckpoint ckpt;
    HyperResult hyper;
};

double physical_val_mse(const ModelCheckpoint& ckpt, const Field& x_val, const Field& y_val) {
    const Field pred = ckpt.regress(x_val);
    const auto per_grid =
        mse_deterministic(y_val.values, pred.values, y_val.n_time(), y_val.n_grid());
    double s = 0.0;
    for (double v : per_grid) s += v;
    return s / double(per_grid.size());
}

CnnConfig make_cnn_config(const RunConfig& config, const Grid& in_grid, const Grid& out_grid) {
    CnnConfig c;
    c.stages = config.cnn_stages;
    c.base_channels = config.cnn_base_channels;
    c.in_h = in_grid.n_lat;
    c.in_w = in_grid.n_lon;
    c.out_h = out_grid.n_lat;
    c.out_w = out_grid.n_lon;
    if (const auto offsets = aligned_crop_offsets(in_grid, out_grid)) {
        c.crop_top = offsets->first;
        c.crop_left = offsets->second;
    }
    return c;
}

// Trains one candidate (closed form for mlr, Adam for cnn) and returns the
// fitted checkpoint. `val` may be empty for the mlr path.
ModelCheckpoint fit_model(const RunConfig& config, const Field& x_train, const Field& y_train,
                          const Field* x_val, const Field* y_val, const Field& x_history,
                          const Field& y_history, double lr, double wd, std::uint64_t seed) {
    ModelCheckpoint ckpt;
    ckpt.kind = config.model;
    ckpt.in_grid = x_train.grid;
    ckpt.out_grid = y_train.grid;
    ckpt.prep_x = PreprocessChain::fit(x_history, x_train, config.clim_window_years);
    ckpt.prep_y = PreprocessChain::fit(y_history, y_train, config.clim_window_years);

    const Field xn = ckpt.prep_x.transform(x_train);
    const Field yn = ckpt.prep_y.transform(y_train);

    if (config.model == "mlr") {
        // Weight decay doubles as the ridge penalty for the closed form.
        ckpt.mlr = mlr_fit_closed_form(xn.values, yn.values, xn.n_time(), xn.n_grid(),
                                       yn.n_grid(), wd);
        ckpt.mlr.input_stats = ckpt.prep_x.stats;
        ckpt.mlr.target_stats = ckpt.prep_y.stats;
        return ckpt;
    }

    if (!x_val || !y_val)
        throw ValidationError("cnn training needs a validation split");
    ckpt.cnn_cfg = make_cnn_config(config, x_train.grid, y_train.grid);
    auto trainable = make_cnn_trainable(ckpt.cnn_cfg, derive_seed(seed, 11));
    TrainSpec spec;
    spec.learning_rate = lr;
    spec.weight_decay = wd;
    spec.epochs = std::size_t(config.epochs);
    spec.batch_size = std::size_t(config.batch_size);
    spec.seed = derive_seed(seed, 12);
    const Field xvn = ckpt.prep_x.transform(*x_val);
    const Field yvn = ckpt.prep_y.transform(*y_val);
    train_model(*trainable, to_dataset(xn), to_dataset(yn), to_dataset(xvn), to_dataset(yvn),
                spec);
    // Move the trained parameters into a standalone model.
    auto model = std::make_shared<CnnModel>(ckpt.cnn_cfg, 0);
    std::vector<const Param*> src;
    trainable->visit_params([&](Param& p) { src.push_back(&p); });
    std::size_t k = 0;
    model->visit_params([&](Param& p) { p.value = src.at(k++)->value; });
    ckpt.cnn = std::move(model);
    return ckpt;
}

} // namespace

CvLayout build_layout(int first_year, int n_years, int outer_k, int inner_k) {
    if (n_years < 1 || outer_k < 1 || inner_k < 1)
        throw ValidationError("build_layout: counts must be positive");
    if (n_years % outer_k != 0)
        throw ValidationError("build_layout: " + std::to_string(n_years) +
                              " years do not divide into " + std::to_string(outer_k) +
                              " outer folds (remainder " + std::to_string(n_years % outer_k) +
                              ")");
    const int block = n_years / outer_k;
    const int pool = n_years - block;
    if (pool % inner_k != 0)
        throw ValidationError("build_layout: training pool of " + std::to_string(pool) +
                              " years does not divide into " + std::to_string(inner_k) +
                              " inner folds (remainder " + std::to_string(pool % inner_k) + ")");
    const int inner_block = pool / inner_k;

    CvLayout layout;
    layout.first_year = first_year;
    layout.n_years = n_years;
    layout.outer_k = outer_k;
    layout.inner_k = inner_k;
    for (int f = 0; f < outer_k; ++f) {
        CvFold fold;
        for (int y = 0; y < block; ++y) fold.test_years.push_back(first_year + f * block + y);
        for (int y = 0; y < n_years; ++y) {
            const int year = first_year + y;
            if (!contains(fold.test_years, year)) fold.train_years.push_back(year);
        }
        for (int j = 0; j < inner_k; ++j) {
            std::vector<int> val;
            for (int y = 0; y < inner_block; ++y)
                val.push_back(fold.train_years[std::size_t(j * inner_block + y)]);
            fold.inner_val_years.push_back(std::move(val));
        }
        layout.folds.push_back(std::move(fold));
    }
    return layout;
}

RunResult run_experiment(const RunConfig& config, const std::filesystem::path& out_dir) {
    config.validate();
    set_worker_threads(config.threads);
    std::filesystem::create_directories(out_dir);
    // Present until the manifest lands; a leftover marker flags stale output.
    atomic_write_text(out_dir / "STALE", "run in progress or aborted\n");
    atomic_write_text(out_dir / "config.cfg", config.to_text());

    LoadedData data;
    data.x_truth = read_gfd_field(config.x_truth);
    data.y_truth = read_gfd_field(config.y_truth);
    data.x_history = read_gfd_field(config.x_history);
    data.y_history = read_gfd_field(config.y_history);
    data.x_ens = read_gfd_ensemble(config.x_ens);
    data.y_ens = read_gfd_ensemble(config.y_ens);
    if (!(data.x_ens.grid == data.x_truth.grid) || !(data.y_ens.grid == data.y_truth.grid))
        throw ValidationError("cv-run: ensemble grids do not match the truth grids");

    const CvLayout layout = build_layout(config.study_start_year, config.study_years,
                                         config.outer_folds, config.inner_folds);
    // History plus study period, for causal climatology lookups.
    const Field y_full = concat_fields(data.y_history, data.y_truth);
    const auto& months = config.season_months;
    const std::uint32_t equal_members = data.y_ens.n_member;

    RunResult result;
    result.run_dir = out_dir;
    json manifest;
    manifest["seed"] = config.seed;
    manifest["model"] = config.model;
    manifest["outer_folds"] = config.outer_folds;
    manifest["inner_folds"] = config.inner_folds;
    manifest["files"] = json::object();

    std::vector<std::filesystem::path> emitted;
    auto emit_csv = [&](const std::filesystem::path& p, const std::vector<ScoreCsv>& blocks) {
        write_score_csv(p, blocks);
        emitted.push_back(p);
    };

    // Per-(l, g) fold sums for the combined tables.
    std::map<std::string, ScoreTable> combined;
    auto accumulate = [&](const std::string& key, const ScoreTable& t) {
        auto it = combined.find(key);
        if (it == combined.end()) {
            ScoreTable copy = t;
            copy.score = key;
            combined.emplace(key, std::move(copy));
        } else {
            for (std::size_t k = 0; k < t.values.size(); ++k) {
                it->second.values[k] += t.values[k];
                it->second.flagged[k] |= t.flagged[k];
            }
        }
    };

    for (std::size_t f = 0; f < layout.folds.size(); ++f) {
        const CvFold& fold = layout.folds[f];
        try {
            const std::filesystem::path fold_dir = out_dir / ("fold_" + std::to_string(f + 1));
            std::filesystem::create_directories(fold_dir);
            const std::uint64_t fold_seed = derive_seed(config.seed, 100 + f);

            const Field x_train = select_season_years(data.x_truth, months, fold.train_years);
            const Field y_train = select_season_years(data.y_truth, months, fold.train_years);
            const Field x_test = select_season_years(data.x_truth, months, fold.test_years);
            const Field y_test = select_season_years(data.y_truth, months, fold.test_years);
            const EnsembleField x_ens_test = select_inits(data.x_ens, months, fold.test_years);
            const EnsembleField y_ens_test = select_inits(data.y_ens, months, fold.test_years);
            const EnsembleField y_ens_train = select_inits(data.y_ens, months, fold.train_years);

            // Leakage assertion: no training or history date may appear among
            // the test evaluation dates (all leads of all test inits).
            {
                std::set<std::int32_t> test_eval;
                for (const Date init : x_ens_test.inits)
                    for (std::size_t l = 0; l < x_ens_test.n_lead; ++l)
                        test_eval.insert(lead_valid_date(init, l).epoch_day);
                for (const Date d : y_test.times) test_eval.insert(d.epoch_day);
                for (const Date d : x_train.times)
                    if (test_eval.count(d.epoch_day))
                        throw Error("leakage: training date " + d.iso() + " is a test date");
                for (const Date d : data.y_history.times)
                    if (test_eval.count(d.epoch_day))
                        throw Error("leakage: history date " + d.iso() + " is a test date");
            }

            // Hyperparameter search on the inner folds.
            HyperSpace space{config.lr_min, config.lr_max, config.wd_min, config.wd_max};
            const auto evaluate = [&](double lr, double wd, std::size_t inner) {
                const auto& val_years = fold.inner_val_years[inner];
                std::vector<int> inner_train;
                for (int y : fold.train_years)
                    if (!contains(val_years, y)) inner_train.push_back(y);
                const Field xt = select_season_years(data.x_truth, months, inner_train);
                const Field yt = select_season_years(data.y_truth, months, inner_train);
                const Field xv = select_season_years(data.x_truth, months, val_years);
                const Field yv = select_season_years(data.y_truth, months, val_years);
                const ModelCheckpoint m =
                    fit_model(config, xt, yt, &xv, &yv, data.x_history, data.y_history, lr, wd,
                              derive_seed(fold_seed, 200 + inner));
                return physical_val_mse(m, xv, yv);
            };
            const HyperResult hyper =
                hyper_search(space, fold.inner_val_years.size(), std::size_t(config.hyper_budget),
                             derive_seed(fold_seed, 1), evaluate);

            // Final model on the full outer-train pool; the last inner block
            // doubles as the early-selection validation split for the cnn.
            const auto& val_years = fold.inner_val_years.back();
            const Field xv = select_season_years(data.x_truth, months, val_years);
            const Field yv = select_season_years(data.y_truth, months, val_years);
            ModelCheckpoint ckpt =
                fit_model(config, x_train, y_train, &xv, &yv, data.x_history, data.y_history,
                          hyper.learning_rate, hyper.weight_decay, derive_seed(fold_seed, 2));

            // Residual Gaussians from training-period predictions.
            {
                const Field y_hat_train = ckpt.regress(x_train);
                ckpt.residuals = fit_residuals(y_train.values, y_hat_train.values,
                                               y_train.n_time(), y_train.n_grid());
            }
            save_checkpoint(fold_dir / "model.ckpt", ckpt);
            emitted.push_back(fold_dir / "model.ckpt");

            // Deterministic regression evaluation on the test reanalysis.
            FoldSummary summary;
            summary.fold_index = int(f + 1);
            summary.learning_rate = hyper.learning_rate;
            summary.weight_decay = hyper.weight_decay;
            {
                const Field y_hat = ckpt.regress(x_test);
                ScoreTable det_mse("mse_regression", y_test.grid, 1);
                det_mse.values =
                    mse_deterministic(y_test.values, y_hat.values, y_test.n_time(), y_test.n_grid());

                // Rolling climatology benchmark, per gridpoint.
                const EnsembleField clim_det =
                    climatology_reference(y_full, y_test.times, 1, config.clim_window_years);
                const LeadAlignedField det_truth = align_verifying(y_test, y_test.times, 1);
                const ScoreTable clim_mse_t = mse_ensemble_mean(det_truth, clim_det);
                ScoreTable clim_mse = clim_mse_t;
                clim_mse.score = "mse_climatology";
                const ScoreTable det_msss = skill_score(det_mse, clim_mse, "msss_regression");
                emit_csv(fold_dir / "regression_scores.csv",
                         {to_csv(det_mse), to_csv(clim_mse), to_csv(det_msss)});
                summary.det_mse = aggregate_spatial(det_mse)[0];
                summary.det_msss = aggregate_spatial(det_msss)[0];
            }

            // Ensemble forecasting stage.
            const LeadAlignedField verifying =
                align_verifying(data.y_truth, x_ens_test.inits, x_ens_test.n_lead);

            // MVA for the dynamical benchmark, fitted on training inits.
            const LeadAlignedField verifying_train =
                align_verifying(data.y_truth, y_ens_train.inits, y_ens_train.n_lead);
            const MvaParams mva = fit_mva(y_ens_train, verifying_train);
            save_mva(fold_dir / "mva.ckpt", mva, y_ens_train.grid);
            emitted.push_back(fold_dir / "mva.ckpt");
            const EnsembleField benchmark = apply_mva(y_ens_test, mva);

            const EnsembleField regressed = ckpt.regress(x_ens_test);
            EnsembleField perturbed =
                perturb_ensemble(regressed, ckpt.residuals, std::uint32_t(config.perturbation_count),
                                 derive_seed(fold_seed, 3));
            summary.negative_values = count_negative(perturbed);
            const EnsembleField perturbed_eq = equalize_members(perturbed, equal_members);
            perturbed = EnsembleField{}; // large; no longer needed

            const EnsembleField clim_ref = equalize_members(
                climatology_reference(y_full, x_ens_test.inits, x_ens_test.n_lead,
                                      config.clim_window_years),
                equal_members);
            const ScoreTable ref_mse = mse_ensemble_mean(verifying, clim_ref);
            const ScoreTable ref_crps = crps_discrete(verifying, clim_ref);

            struct ModelEntry {
                std::string name;
                const EnsembleField* ens;
            };
            const std::vector<ModelEntry> entries = {
                {"benchmark", &benchmark}, {"regressed", &regressed}, {"perturbed", &perturbed_eq}};

            std::map<std::string, LeadAlignedField> mse_contrib, crps_contrib;
            for (const auto& entry : entries) {
                std::vector<ScoreCsv> blocks;
                const ScoreTable mse_t = mse_ensemble_mean(verifying, *entry.ens);
                const ScoreTable crps_t = crps_discrete(verifying, *entry.ens);
                SsrOptions ssr_opt;
                ssr_opt.literal = config.ssr_literal;
                const ScoreTable ssr_t = ssr(verifying, *entry.ens, ssr_opt);
                const ScoreTable msss_t = skill_score(mse_t, ref_mse, "msss");
                const ScoreTable crpss_t = skill_score(crps_t, ref_crps, "crpss");
                const SsimResult ssim_r = ssim(verifying, *entry.ens);
                blocks.push_back(to_csv(mse_t));
                blocks.push_back(to_csv(crps_t));
                blocks.push_back(to_csv(ssr_t));
                blocks.push_back(to_csv(msss_t));
                blocks.push_back(to_csv(crpss_t));
                for (auto& b : to_csv(ssim_r)) blocks.push_back(b);
                emit_csv(fold_dir / ("scores_" + entry.name + ".csv"), blocks);

                accumulate(entry.name + ".mse", mse_t);
                accumulate(entry.name + ".crps", crps_t);
                accumulate(entry.name + ".ssr", ssr_t);
                accumulate(entry.name + ".msss", msss_t);
                accumulate(entry.name + ".crpss", crpss_t);

                mse_contrib.emplace(entry.name, mse_ens_mean_per_init(verifying, *entry.ens));
                crps_contrib.emplace(entry.name, crps_per_init(verifying, *entry.ens));
            }

            // Bootstrap significance of the relative improvements.
            {
                BootstrapOptions opt;
                opt.replicates = std::size_t(config.bootstrap_replicates);
                opt.seed = derive_seed(fold_seed, 4);
                const std::vector<std::pair<std::string, std::string>> pairs = {
                    {"regressed", "benchmark"},
                    {"perturbed", "benchmark"},
                    {"perturbed", "regressed"}};
                std::vector<ScoreCsv> blocks;
                for (const auto& [cand, bench] : pairs) {
                    blocks.push_back(to_csv(bootstrap_delta(
                        mse_contrib.at(cand), mse_contrib.at(bench), data.y_truth.grid,
                        Orientation::negative, opt, "delta_r_mse(" + cand + "," + bench + ")")));
                    blocks.push_back(to_csv(bootstrap_delta(
                        crps_contrib.at(cand), crps_contrib.at(bench), data.y_truth.grid,
                        Orientation::negative, opt, "delta_r_crps(" + cand + "," + bench + ")")));
                }
                emit_csv(fold_dir / "significance.csv", blocks);
            }

            result.folds.push_back(summary);
            json jf;
            jf["fold"] = summary.fold_index;
            jf["learning_rate"] = summary.learning_rate;
            jf["weight_decay"] = summary.weight_decay;
            jf["det_mse_spatial_mean"] = summary.det_mse;
            jf["det_msss_spatial_mean"] = summary.det_msss;
            jf["negative_perturbed_values"] = summary.negative_values;
            jf["leakage_check"] = "pass";
            manifest["folds"].push_back(jf);
        } catch (const std::exception& e) {
            throw Error("fold " + std::to_string(f + 1) + ": " + e.what());
        }
    }

    // Fold-averaged score tables.
    {
        std::vector<ScoreCsv> blocks;
        for (auto& [key, table] : combined) {
            for (double& v : table.values) v /= double(layout.folds.size());
            blocks.push_back(to_csv(table));
        }
        emit_csv(out_dir / "scores_fold_mean.csv", blocks);
    }

    emitted.push_back(out_dir / "config.cfg");
    for (const auto& p : emitted)
        manifest["files"][std::filesystem::relative(p, out_dir).string()] =
            hash_hex(hash_file(p));
    atomic_write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
    std::filesystem::remove(out_dir / "STALE");

    return result;
}

} // namespace dsv
