// dsv: statistical downscaling and ensemble verification pipeline.
//
// Subcommand per pipeline stage; machine-readable outputs go to files,
// diagnostics to stderr. Exit codes: 0 success, 1 validation error,
// 2 runtime failure.

#include "dsv/bootstrap.hpp"
#include "dsv/checkpoint.hpp"
#include "dsv/cv.hpp"
#include "dsv/errors.hpp"
#include "dsv/gfd.hpp"
#include "dsv/hash.hpp"
#include "dsv/mva.hpp"
#include "dsv/parallel.hpp"
#include "dsv/residual.hpp"
#include "dsv/rng.hpp"
#include "dsv/scores.hpp"
#include "dsv/synth.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <iostream>

namespace {

using namespace dsv;
using nlohmann::json;

std::pair<int, int> parse_year_range(const std::string& s) {
    const auto colon = s.find(':');
    if (colon == std::string::npos)
        throw ValidationError("year range must be 'first:last', got '" + s + "'");
    const int a = std::stoi(s.substr(0, colon));
    const int b = std::stoi(s.substr(colon + 1));
    if (b < a) throw ValidationError("year range is empty: " + s);
    return {a, b};
}

std::vector<int> expand_years(const std::string& range) {
    const auto [a, b] = parse_year_range(range);
    std::vector<int> out;
    for (int y = a; y <= b; ++y) out.push_back(y);
    return out;
}

Grid parse_grid(const std::string& s) {
    double lat0, dlat, lon0, dlon;
    unsigned nlat, nlon;
    if (std::sscanf(s.c_str(), "%lf,%lf,%u,%lf,%lf,%u", &lat0, &dlat, &nlat, &lon0, &dlon,
                    &nlon) != 6)
        throw ValidationError("grid spec must be 'lat0,dlat,nlat,lon0,dlon,nlon', got '" + s +
                              "'");
    return Grid(lat0, dlat, nlat, lon0, dlon, nlon);
}

std::vector<int> parse_months(const std::string& s) {
    std::vector<int> months;
    std::istringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) months.push_back(std::stoi(item));
    if (months.empty()) throw ValidationError("empty month list");
    for (int m : months)
        if (m < 1 || m > 12) throw ValidationError("month out of range: " + std::to_string(m));
    return months;
}

Field select_field(const Field& f, const std::vector<int>& months,
                   const std::vector<int>& years) {
    Field out;
    out.grid = f.grid;
    out.units = f.units;
    for (std::size_t t = 0; t < f.n_time(); ++t) {
        const Date d = f.times[t];
        const bool in_month =
            std::find(months.begin(), months.end(), d.month()) != months.end();
        if (in_month && std::find(years.begin(), years.end(), season_year(d, months)) !=
                            years.end()) {
            out.times.push_back(d);
            const auto row = f.row(t);
            out.values.insert(out.values.end(), row.begin(), row.end());
        }
    }
    if (out.times.empty()) throw ValidationError("selection produced an empty field");
    return out;
}

// ----------------------------------------------------------------- synth

int cmd_synth(const std::string& out_dir, const SynthSpec& spec) {
    write_synth_dataset(spec, out_dir);
    std::cerr << "synth: wrote " << out_dir << "\n";
    return 0;
}

// ----------------------------------------------------------------- train

struct TrainArgs {
    std::string model = "mlr";
    std::string x_path, y_path, x_hist, y_hist;
    std::string train_years, val_years;
    std::string season = "12,1,2";
    int window = 15;
    double lr = 1e-3, wd = 1e-6;
    int epochs = 200, batch = 32, stages = 2, base_channels = 8;
    std::uint64_t seed = 0;
    std::string out;
};

int cmd_train(const TrainArgs& a) {
    if (a.stages < 1 || a.stages > 6)
        throw ValidationError("--stages must be in [1, 6], got " + std::to_string(a.stages));
    if (a.epochs < 1) throw ValidationError("--epochs must be >= 1");
    const auto months = parse_months(a.season);
    const Field x_all = read_gfd_field(a.x_path);
    const Field y_all = read_gfd_field(a.y_path);
    const Field x_train = select_field(x_all, months, expand_years(a.train_years));
    const Field y_train = select_field(y_all, months, expand_years(a.train_years));

    ModelCheckpoint ckpt;
    ckpt.kind = a.model;
    ckpt.in_grid = x_train.grid;
    ckpt.out_grid = y_train.grid;
    ckpt.prep_x = PreprocessChain::fit(read_gfd_field(a.x_hist), x_train, a.window);
    ckpt.prep_y = PreprocessChain::fit(read_gfd_field(a.y_hist), y_train, a.window);
    const Field xn = ckpt.prep_x.transform(x_train);
    const Field yn = ckpt.prep_y.transform(y_train);

    if (a.model == "mlr") {
        ckpt.mlr = mlr_fit_closed_form(xn.values, yn.values, xn.n_time(), xn.n_grid(),
                                       yn.n_grid(), a.wd);
        ckpt.mlr.input_stats = ckpt.prep_x.stats;
        ckpt.mlr.target_stats = ckpt.prep_y.stats;
    } else if (a.model == "cnn") {
        if (a.val_years.empty())
            throw ValidationError("cnn training requires --val-years");
        const Field x_val = select_field(x_all, months, expand_years(a.val_years));
        const Field y_val = select_field(y_all, months, expand_years(a.val_years));
        CnnConfig cfg;
        cfg.stages = a.stages;
        cfg.base_channels = a.base_channels;
        cfg.in_h = x_train.grid.n_lat;
        cfg.in_w = x_train.grid.n_lon;
        cfg.out_h = y_train.grid.n_lat;
        cfg.out_w = y_train.grid.n_lon;
        if (const auto off = aligned_crop_offsets(x_train.grid, y_train.grid)) {
            cfg.crop_top = off->first;
            cfg.crop_left = off->second;
        }
        ckpt.cnn_cfg = cfg;
        auto trainable = make_cnn_trainable(cfg, derive_seed(a.seed, 11));
        TrainSpec spec;
        spec.learning_rate = a.lr;
        spec.weight_decay = a.wd;
        spec.epochs = std::size_t(a.epochs);
        spec.batch_size = std::size_t(a.batch);
        spec.seed = derive_seed(a.seed, 12);
        const Field xvn = ckpt.prep_x.transform(x_val);
        const Field yvn = ckpt.prep_y.transform(y_val);
        Dataset dx{xn.n_time(), xn.n_grid(), xn.values};
        Dataset dy{yn.n_time(), yn.n_grid(), yn.values};
        Dataset dvx{xvn.n_time(), xvn.n_grid(), xvn.values};
        Dataset dvy{yvn.n_time(), yvn.n_grid(), yvn.values};
        const TrainLog log = train_model(*trainable, dx, dy, dvx, dvy, spec);
        std::cerr << "train: best validation MSE " << log.best_val_mse << " at epoch "
                  << (log.best_epoch + 1) << "\n";
        auto model = std::make_shared<CnnModel>(cfg, 0);
        std::vector<const Param*> src;
        trainable->visit_params([&](Param& p) { src.push_back(&p); });
        std::size_t k = 0;
        model->visit_params([&](Param& p) { p.value = src.at(k++)->value; });
        ckpt.cnn = std::move(model);
    } else {
        throw ValidationError("--model must be mlr or cnn, got '" + a.model + "'");
    }

    const Field y_hat = ckpt.regress(x_train);
    ckpt.residuals =
        fit_residuals(y_train.values, y_hat.values, y_train.n_time(), y_train.n_grid());
    save_checkpoint(a.out, ckpt);
    std::cerr << "train: wrote " << a.out << "\n";
    return 0;
}

// ---------------------------------------------------------------- verify

int cmd_verify(const std::string& scores_csv, const std::string& ens_path,
               const std::string& truth_path, const std::string& ref_history_path,
               const std::string& out, std::uint32_t equalize, bool ssr_literal,
               int ref_window) {
    const EnsembleField ens_raw = read_gfd_ensemble(ens_path);
    const Field truth = read_gfd_field(truth_path);
    const EnsembleField ens =
        equalize > 0 ? equalize_members(ens_raw, equalize) : ens_raw;
    const LeadAlignedField verifying = align_verifying(truth, ens.inits, ens.n_lead);

    std::vector<std::string> wanted;
    {
        std::istringstream in(scores_csv);
        std::string item;
        while (std::getline(in, item, ',')) wanted.push_back(item);
    }
    auto want = [&](const std::string& s) {
        return std::find(wanted.begin(), wanted.end(), s) != wanted.end();
    };

    std::vector<ScoreCsv> blocks;
    ScoreTable mse_t, crps_t;
    if (want("mse") || want("msss")) mse_t = mse_ensemble_mean(verifying, ens);
    if (want("crps") || want("crpss")) crps_t = crps_discrete(verifying, ens);
    if (want("mse")) blocks.push_back(to_csv(mse_t));
    if (want("crps")) blocks.push_back(to_csv(crps_t));
    if (want("ssr")) {
        SsrOptions opt;
        opt.literal = ssr_literal;
        blocks.push_back(to_csv(ssr(verifying, ens, opt)));
    }
    if (want("msss") || want("crpss")) {
        // The rolling reference needs pre-study years; merge them in front.
        Field ref_truth = truth;
        if (!ref_history_path.empty()) {
            Field merged = read_gfd_field(ref_history_path);
            merged.times.insert(merged.times.end(), truth.times.begin(), truth.times.end());
            merged.values.insert(merged.values.end(), truth.values.begin(),
                                 truth.values.end());
            merged.validate();
            ref_truth = std::move(merged);
        }
        EnsembleField ref =
            climatology_reference(ref_truth, ens.inits, ens.n_lead, ref_window);
        if (equalize > 0) ref = equalize_members(ref, equalize);
        if (want("msss"))
            blocks.push_back(
                to_csv(skill_score(mse_t, mse_ensemble_mean(verifying, ref), "msss")));
        if (want("crpss"))
            blocks.push_back(
                to_csv(skill_score(crps_t, crps_discrete(verifying, ref), "crpss")));
    }
    if (want("ssim"))
        for (auto& b : to_csv(ssim(verifying, ens))) blocks.push_back(b);
    if (blocks.empty()) throw ValidationError("--scores selected nothing to compute");
    write_score_csv(out, blocks);
    std::cerr << "verify: wrote " << out << "\n";
    return 0;
}

// --------------------------------------------------------------- inspect

int cmd_inspect(const std::string& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw Error("cannot open: " + path);
    char magic[4] = {0, 0, 0, 0};
    probe.read(magic, 4);
    probe.close();
    const std::string m(magic, 4);

    auto print_grid = [](const Grid& g) {
        std::cout << "  grid: " << g.n_lat << "x" << g.n_lon << " lat " << g.lat_start << "+"
                  << g.lat_step << " lon " << g.lon_start << "+" << g.lon_step << "\n";
    };
    auto stats = [](std::span<const double> v) {
        double lo = v[0], hi = v[0], sum = 0.0;
        for (double x : v) {
            lo = std::min(lo, x);
            hi = std::max(hi, x);
            sum += x;
        }
        std::cout << "  values: min " << lo << " mean " << sum / double(v.size()) << " max "
                  << hi << "\n";
    };

    if (m == "GFD1") {
        const FieldOrEnsemble fe = read_gfd(path);
        if (std::holds_alternative<Field>(fe)) {
            const Field& f = std::get<Field>(fe);
            std::cout << "GFD field: T=" << f.n_time() << " G=" << f.n_grid() << " units='"
                      << f.units << "'\n";
            print_grid(f.grid);
            std::cout << "  dates: " << f.times.front().iso() << " .. " << f.times.back().iso()
                      << "\n";
            stats(f.values);
        } else {
            const EnsembleField& e = std::get<EnsembleField>(fe);
            std::cout << "GFD ensemble: T=" << e.n_init() << " L=" << e.n_lead
                      << " M=" << e.n_member << " G=" << e.n_grid() << " units='" << e.units
                      << "'\n";
            print_grid(e.grid);
            std::cout << "  inits: " << e.inits.front().iso() << " .. " << e.inits.back().iso()
                      << "\n";
            stats(e.values);
        }
        return 0;
    }
    if (m == "GFC1") {
        const CheckpointSummary s = inspect_checkpoint(path);
        std::cout << "checkpoint kind: " << s.kind << "\n";
        print_grid(s.in_grid);
        print_grid(s.out_grid);
        std::cout << "  parameter blocks:\n";
        for (const auto& b : s.blocks) {
            std::cout << "    " << b.name << " [";
            for (std::size_t i = 0; i < b.shape.size(); ++i)
                std::cout << (i ? "x" : "") << b.shape[i];
            std::cout << "]\n";
        }
        return 0;
    }
    throw FormatError("unrecognized magic '" + m + "' in " + path, 0);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"statistical downscaling and ensemble verification pipeline"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();
    int threads = 1;
    app.add_option("--threads", threads, "worker threads for parallel-safe stages")
        ->check(CLI::PositiveNumber);

    // synth
    auto* synth = app.add_subcommand("synth", "generate the synthetic coupled-field dataset");
    SynthSpec spec;
    std::string synth_out = "synth_data";
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--seed", spec.seed, "generator seed");
    synth->add_option("--years", spec.n_years, "study season-years");
    synth->add_option("--history-years", spec.history_years, "pre-study years");
    synth->add_option("--start-year", spec.start_year, "first study season-year");
    synth->add_option("--members", spec.n_member, "ensemble members");
    synth->add_option("--leads", spec.n_lead, "lead weeks");
    synth->add_option("--quadratic", spec.quadratic_strength, "quadratic coupling strength");
    synth->add_option("--obs-noise", spec.obs_noise_std, "observation noise std");
    synth->add_option("--deflation", spec.spread_deflation, "ensemble spread deflation d");
    synth->add_option("--x-err", spec.x_err_std, "input ensemble error std");
    synth->add_option("--y-err", spec.y_err_std, "target ensemble error std");

    // preprocess
    auto* prep = app.add_subcommand("preprocess", "regrid / weekly-average / chain transforms");
    std::string prep_in, prep_out, prep_regrid, prep_hist, prep_stats_from, prep_inits;
    int prep_weekly = 0, prep_window = 15;
    bool prep_deseason = false, prep_normalize = false, prep_denorm = false;
    prep->add_option("--in", prep_in, "input GFD field")->required();
    prep->add_option("--out", prep_out, "output GFD path")->required();
    prep->add_option("--regrid", prep_regrid, "target grid 'lat0,dlat,nlat,lon0,dlon,nlon'");
    prep->add_option("--weekly", prep_weekly, "weekly-average into this many leads");
    prep->add_option("--inits", prep_inits, "ensemble file supplying initialization dates");
    prep->add_flag("--deseason-detrend", prep_deseason,
                   "subtract rolling climatology and the fitted trend");
    prep->add_option("--history", prep_hist, "history field for the climatology");
    prep->add_option("--window", prep_window, "climatology window, years");
    prep->add_flag("--normalize", prep_normalize, "normalize with stats from --stats-from");
    prep->add_flag("--denormalize", prep_denorm, "invert normalization from --stats-from");
    prep->add_option("--stats-from", prep_stats_from, "training field for NormStats");

    // train
    auto* train = app.add_subcommand("train", "fit a regression model checkpoint");
    TrainArgs ta;
    train->add_option("--model", ta.model, "mlr | cnn");
    train->add_option("--x", ta.x_path, "input-variable GFD field")->required();
    train->add_option("--y", ta.y_path, "target-variable GFD field")->required();
    train->add_option("--x-history", ta.x_hist, "input history for climatology")->required();
    train->add_option("--y-history", ta.y_hist, "target history for climatology")->required();
    train->add_option("--train-years", ta.train_years, "season-year range first:last")
        ->required();
    train->add_option("--val-years", ta.val_years, "validation season-year range (cnn)");
    train->add_option("--season", ta.season, "season months, default 12,1,2");
    train->add_option("--window", ta.window, "climatology window, years");
    train->add_option("--lr", ta.lr, "learning rate");
    train->add_option("--wd", ta.wd, "weight decay / ridge penalty");
    train->add_option("--epochs", ta.epochs, "epoch budget");
    train->add_option("--batch", ta.batch, "batch size");
    train->add_option("--stages", ta.stages, "cnn downsampling stages");
    train->add_option("--base-channels", ta.base_channels, "cnn base channels");
    train->add_option("--seed", ta.seed, "training seed");
    train->add_option("--out", ta.out, "checkpoint path")->required();

    // regress
    auto* regress = app.add_subcommand("regress", "apply a checkpoint to a field or ensemble");
    std::string rg_model, rg_x, rg_ens, rg_out;
    regress->add_option("--model", rg_model, "checkpoint path")->required();
    regress->add_option("--x", rg_x, "deterministic input field");
    regress->add_option("--ens", rg_ens, "input ensemble (member-wise application)");
    regress->add_option("--out", rg_out, "output GFD path")->required();

    // perturb
    auto* perturb = app.add_subcommand("perturb", "add residual-distribution perturbations");
    std::string pb_model, pb_ens, pb_out;
    std::uint32_t pb_p = 20;
    std::uint64_t pb_seed = 0;
    perturb->add_option("--model", pb_model, "checkpoint with residual Gaussians")->required();
    perturb->add_option("--ens", pb_ens, "regressed ensemble GFD")->required();
    perturb->add_option("--p", pb_p, "perturbations per member");
    perturb->add_option("--seed", pb_seed, "perturbation seed");
    perturb->add_option("--out", pb_out, "output GFD path")->required();

    // calibrate
    auto* calib = app.add_subcommand("calibrate", "mean-variance adjustment of an ensemble");
    std::string cb_ens, cb_truth, cb_fit_years, cb_out, cb_params_out, cb_season = "12,1,2";
    calib->add_option("--ens", cb_ens, "ensemble GFD")->required();
    calib->add_option("--truth", cb_truth, "verifying truth field")->required();
    calib->add_option("--fit-years", cb_fit_years, "season-year range used for fitting")
        ->required();
    calib->add_option("--season", cb_season, "season months");
    calib->add_option("--out", cb_out, "calibrated ensemble path")->required();
    calib->add_option("--params-out", cb_params_out, "optional MVA parameter file");

    // verify
    auto* verify = app.add_subcommand("verify", "score an ensemble against the truth");
    std::string vf_scores = "mse,crps,ssr", vf_ens, vf_truth, vf_history, vf_out;
    std::uint32_t vf_equalize = 0;
    int vf_window = 15;
    bool vf_literal = false;
    verify->add_option("--scores", vf_scores, "comma list: mse,crps,ssr,msss,crpss,ssim");
    verify->add_option("--ens", vf_ens, "ensemble GFD")->required();
    verify->add_option("--truth", vf_truth, "verifying truth field")->required();
    verify->add_option("--ref-history", vf_history,
                       "pre-study truth prepended for the climatology reference");
    verify->add_option("--equalize", vf_equalize, "downsample to this member count first");
    verify->add_option("--ref-window", vf_window, "climatology reference window, years");
    verify->add_flag("--ssr-literal", vf_literal, "literal squared-variance spread reading");
    verify->add_option("--out", vf_out, "score CSV path")->required();

    // significance
    auto* sig = app.add_subcommand("significance", "bootstrap relative-improvement test");
    std::string sg_score = "crps", sg_s, sg_b, sg_truth, sg_out;
    std::size_t sg_r = 1000;
    std::uint64_t sg_seed = 0;
    std::uint32_t sg_equalize = 0;
    bool sg_literal = false;
    sig->add_option("--score", sg_score, "mse | crps");
    sig->add_option("--ens-s", sg_s, "candidate ensemble GFD")->required();
    sig->add_option("--ens-b", sg_b, "benchmark ensemble GFD")->required();
    sig->add_option("--truth", sg_truth, "verifying truth field")->required();
    sig->add_option("--replicates", sg_r, "bootstrap replicates");
    sig->add_option("--seed", sg_seed, "resampling seed");
    sig->add_option("--equalize", sg_equalize, "downsample both ensembles to this size");
    sig->add_flag("--literal-p", sg_literal, "published p-value sign reading");
    sig->add_option("--out", sg_out, "significance CSV path")->required();

    // cv-run
    auto* cv = app.add_subcommand("cv-run", "full nested cross-validation experiment");
    std::string cv_config, cv_out = "run";
    std::uint64_t cv_seed = 0;
    bool cv_seed_set = false;
    cv->add_option("--config", cv_config,
                   "run configuration file (default: $DSV_CONFIG)");
    cv->add_option("--out", cv_out, "run directory");
    cv->add_option("--seed", cv_seed, "override the config seed")
        ->each([&](const std::string&) { cv_seed_set = true; });

    // inspect
    auto* inspect = app.add_subcommand("inspect", "summarize a GFD or checkpoint file");
    std::string in_path;
    inspect->add_option("path", in_path, "file to inspect")->required();

    try {
        app.parse(argc, argv);
        set_worker_threads(threads);

        if (synth->parsed()) return cmd_synth(synth_out, spec);

        if (prep->parsed()) {
            const int ops = int(!prep_regrid.empty()) + int(prep_weekly > 0) +
                            int(prep_deseason) + int(prep_normalize) + int(prep_denorm);
            if (ops != 1)
                throw ValidationError(
                    "preprocess: choose exactly one of --regrid, --weekly, "
                    "--deseason-detrend, --normalize, --denormalize");
            const Field in = read_gfd_field(prep_in);
            if (!prep_regrid.empty()) {
                write_gfd(prep_out, regrid_bilinear(in, parse_grid(prep_regrid)));
            } else if (prep_weekly > 0) {
                std::vector<Date> inits;
                if (!prep_inits.empty()) {
                    inits = read_gfd_ensemble(prep_inits).inits;
                } else {
                    for (Date d = in.times.front();
                         d + int(7 * prep_weekly - 1) <= in.times.back(); d = d + 7)
                        inits.push_back(d);
                }
                write_gfd(prep_out, weekly_average(in, inits, std::uint32_t(prep_weekly)));
            } else if (prep_deseason) {
                if (prep_hist.empty())
                    throw ValidationError("--deseason-detrend requires --history");
                const ClimatologyModel clim =
                    fit_climatology(read_gfd_field(prep_hist), prep_window);
                write_gfd(prep_out, deseasonalize_detrend(in, clim));
            } else {
                if (prep_stats_from.empty())
                    throw ValidationError("--normalize/--denormalize require --stats-from");
                const NormStats stats =
                    fit_normalization(read_gfd_field(prep_stats_from));
                write_gfd(prep_out,
                          prep_normalize ? normalize(in, stats) : denormalize(in, stats));
            }
            std::cerr << "preprocess: wrote " << prep_out << "\n";
            return 0;
        }

        if (train->parsed()) return cmd_train(ta);

        if (regress->parsed()) {
            if (rg_x.empty() == rg_ens.empty())
                throw ValidationError("regress: provide exactly one of --x or --ens");
            const ModelCheckpoint ckpt = load_checkpoint(rg_model);
            if (!rg_x.empty())
                write_gfd(rg_out, ckpt.regress(read_gfd_field(rg_x)));
            else
                write_gfd(rg_out, ckpt.regress(read_gfd_ensemble(rg_ens)));
            std::cerr << "regress: wrote " << rg_out << "\n";
            return 0;
        }

        if (perturb->parsed()) {
            const ModelCheckpoint ckpt = load_checkpoint(pb_model);
            const EnsembleField ens = read_gfd_ensemble(pb_ens);
            const EnsembleField out = perturb_ensemble(ens, ckpt.residuals, pb_p, pb_seed);
            write_gfd(pb_out, out);
            std::cerr << "perturb: wrote " << pb_out << " (negative values: "
                      << count_negative(out) << ")\n";
            return 0;
        }

        if (calib->parsed()) {
            const EnsembleField ens = read_gfd_ensemble(cb_ens);
            const Field truth = read_gfd_field(cb_truth);
            const auto months = parse_months(cb_season);
            const auto fit_years = expand_years(cb_fit_years);
            EnsembleField fit_slice;
            {
                fit_slice.grid = ens.grid;
                fit_slice.n_lead = ens.n_lead;
                fit_slice.n_member = ens.n_member;
                fit_slice.units = ens.units;
                const std::size_t block =
                    ens.n_lead * std::size_t(ens.n_member) * ens.n_grid();
                for (std::size_t t = 0; t < ens.n_init(); ++t)
                    if (std::find(fit_years.begin(), fit_years.end(),
                                  season_year(ens.inits[t], months)) != fit_years.end()) {
                        fit_slice.inits.push_back(ens.inits[t]);
                        fit_slice.values.insert(fit_slice.values.end(),
                                                ens.values.begin() + t * block,
                                                ens.values.begin() + (t + 1) * block);
                    }
                if (fit_slice.inits.empty())
                    throw ValidationError("calibrate: no initializations in --fit-years");
            }
            const MvaParams params =
                fit_mva(fit_slice, align_verifying(truth, fit_slice.inits, fit_slice.n_lead));
            write_gfd(cb_out, apply_mva(ens, params));
            if (!cb_params_out.empty()) save_mva(cb_params_out, params, ens.grid);
            std::cerr << "calibrate: wrote " << cb_out << "\n";
            return 0;
        }

        if (verify->parsed())
            return cmd_verify(vf_scores, vf_ens, vf_truth, vf_history, vf_out, vf_equalize,
                              vf_literal, vf_window);

        if (sig->parsed()) {
            if (sg_score != "mse" && sg_score != "crps")
                throw ValidationError("--score must be mse or crps");
            EnsembleField ens_s = read_gfd_ensemble(sg_s);
            EnsembleField ens_b = read_gfd_ensemble(sg_b);
            if (sg_equalize > 0) {
                ens_s = equalize_members(ens_s, sg_equalize);
                ens_b = equalize_members(ens_b, sg_equalize);
            }
            if (ens_s.inits != ens_b.inits)
                throw ValidationError("significance: ensembles have different initializations");
            const Field truth = read_gfd_field(sg_truth);
            const LeadAlignedField verifying =
                align_verifying(truth, ens_s.inits, ens_s.n_lead);
            const LeadAlignedField cs = sg_score == "mse"
                                            ? mse_ens_mean_per_init(verifying, ens_s)
                                            : crps_per_init(verifying, ens_s);
            const LeadAlignedField cb = sg_score == "mse"
                                            ? mse_ens_mean_per_init(verifying, ens_b)
                                            : crps_per_init(verifying, ens_b);
            BootstrapOptions opt;
            opt.replicates = sg_r;
            opt.seed = sg_seed;
            opt.literal_p = sg_literal;
            const BootstrapResult r =
                bootstrap_delta(cs, cb, ens_s.grid, Orientation::negative, opt,
                                "delta_r_" + sg_score);
            write_score_csv(sg_out, {to_csv(r)});
            std::cerr << "significance: wrote " << sg_out << "\n";
            return 0;
        }

        if (cv->parsed()) {
            if (cv_config.empty()) {
                const char* env = std::getenv("DSV_CONFIG");
                if (!env || !*env)
                    throw ValidationError(
                        "cv-run: pass --config or set the DSV_CONFIG environment variable");
                cv_config = env;
            }
            RunConfig config = RunConfig::from_file(cv_config);
            if (cv_seed_set) config.seed = cv_seed;
            config.threads = std::max(config.threads, threads);
            const RunResult r = run_experiment(config, cv_out);
            std::cerr << "cv-run: wrote " << r.run_dir.string() << " (" << r.folds.size()
                      << " folds)\n";
            return 0;
        }

        if (inspect->parsed()) return cmd_inspect(in_path);
        throw ValidationError("no subcommand given");
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const DimensionError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const DomainError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << "\n";
        return 2;
    }
}
