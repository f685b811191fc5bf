#include "dsv/synth.hpp"

#include "dsv/errors.hpp"
#include "dsv/gfd.hpp"
#include "dsv/hash.hpp"
#include "dsv/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace dsv {

namespace {

constexpr double kTwoPi = 2.0 * 3.14159265358979323846;

// Variable ids for substream separation.
constexpr std::uint64_t kVarX = 0;
constexpr std::uint64_t kVarY = 1;

// Fixed-phase spectral basis over a grid; anomaly fields are linear in the
// per-time mode coefficients, hence exactly Gaussian.
struct SpectralBasis {
    std::size_t n_lat, n_lon;
    std::vector<std::pair<int, int>> modes;
    std::vector<double> amp;   // per mode
    std::vector<double> phase; // per mode, fixed
    double white_std;

    SpectralBasis(const Grid& grid, int modes_lat, int modes_lon, double total_std,
                  double white, std::uint64_t key, std::uint64_t variable_id)
        : n_lat(grid.n_lat), n_lon(grid.n_lon), white_std(white) {
        for (int p = 0; p < modes_lat; ++p)
            for (int q = 0; q < modes_lon; ++q) modes.emplace_back(p, q);
        amp.resize(modes.size());
        phase.resize(modes.size());
        double raw_sq = 0.0;
        for (std::size_t k = 0; k < modes.size(); ++k) {
            const auto [p, q] = modes[k];
            amp[k] = 1.0 / (1.0 + double(p) + double(q));
            raw_sq += amp[k] * amp[k];
            phase[k] = kTwoPi * uniform01(key, Substream(StreamTag::synth_coupling, variable_id,
                                                         k, 3, 0, 0));
        }
        const double mode_var = total_std * total_std - white * white;
        if (mode_var <= 0.0)
            throw ValidationError("synth: anomaly_std must exceed white_std");
        const double scale = std::sqrt(mode_var / raw_sq);
        for (double& a : amp) a *= scale;
    }

    double theta(std::size_t k, std::size_t i, std::size_t j) const {
        const auto [p, q] = modes[k];
        return kTwoPi * (double(p) * double(i) / double(n_lat) +
                         double(q) * double(j) / double(n_lon));
    }

    // Accumulates one realization into out (size n_lat * n_lon). Coefficient
    // and white-noise draws come from the provided substream coordinates:
    // (tag, a, b, c, var*2)     -> mode coefficients (e = mode index)
    // (tag, a, b, c, var*2 + 1) -> white noise (e = gridpoint)
    void sample(StreamTag tag, std::uint64_t key, std::uint64_t a, std::uint64_t b,
                std::uint64_t c, std::uint64_t variable_id, double scale,
                std::span<double> out) const {
        for (std::size_t k = 0; k < modes.size(); ++k) {
            const double coef = amp[k] * normal_draw(key, Substream(tag, a, b, c,
                                                                    variable_id * 2, k));
            const double root2 = std::sqrt(2.0);
            for (std::size_t i = 0; i < n_lat; ++i)
                for (std::size_t j = 0; j < n_lon; ++j)
                    out[i * n_lon + j] +=
                        scale * coef * root2 * std::cos(theta(k, i, j) + phase[k]);
        }
        if (white_std > 0.0) {
            for (std::size_t g = 0; g < n_lat * n_lon; ++g)
                out[g] += scale * white_std *
                          normal_draw(key, Substream(tag, a, b, c, variable_id * 2 + 1, g));
        }
    }

    // Exact variance of a linear functional sum_c w_c * field_c.
    double functional_variance(std::span<const double> weights) const {
        double var = 0.0;
        for (std::size_t k = 0; k < modes.size(); ++k) {
            double proj = 0.0;
            for (std::size_t i = 0; i < n_lat; ++i)
                for (std::size_t j = 0; j < n_lon; ++j)
                    proj += weights[i * n_lon + j] * std::sqrt(2.0) *
                            std::cos(theta(k, i, j) + phase[k]);
            var += amp[k] * amp[k] * proj * proj;
        }
        double wsq = 0.0;
        for (double w : weights) wsq += w * w;
        return var + white_std * white_std * wsq;
    }
};

// Gaussian-bump stencil from the input grid onto one output cell.
std::vector<double> make_stencil(const Grid& in_grid, double lat, double lon, double radius,
                                 double gain) {
    std::vector<double> w(in_grid.size(), 0.0);
    const double ci = (lat - in_grid.lat_start) / in_grid.lat_step;
    const double cj = (lon - in_grid.lon_start) / in_grid.lon_step;
    double sum = 0.0;
    for (std::size_t i = 0; i < in_grid.n_lat; ++i)
        for (std::size_t j = 0; j < in_grid.n_lon; ++j) {
            const double di = double(i) - ci, dj = double(j) - cj;
            const double d2 = di * di + dj * dj;
            if (d2 > 9.0 * radius * radius) continue;
            const double v = std::exp(-d2 / (2.0 * radius * radius));
            w[i * in_grid.n_lon + j] = v;
            sum += v;
        }
    if (sum <= 0.0) throw ValidationError("synth: output cell outside the input grid");
    for (double& v : w) v *= gain / sum;
    return w;
}

double seasonal_cycle(Date d, double amplitude) {
    // Day-of-year phase; peak in early January.
    const double doy = double(d.mmdd_key() / 100) * 30.4 + double(d.mmdd_key() % 100);
    return amplitude * std::cos(kTwoPi * (doy - 5.0) / 365.25);
}

std::vector<Date> season_anchor_dates(const SynthSpec& spec, int first_season_year,
                                      int n_years, std::vector<Date>* inits) {
    auto in_season = [&](Date d) {
        for (int m : spec.season_months)
            if (d.month() == m) return true;
        return false;
    };
    const bool wraps = [&] {
        bool has12 = false, has1 = false;
        for (int m : spec.season_months) {
            has12 |= m == 12;
            has1 |= m == 1;
        }
        return has12 && has1;
    }();
    int first_month = 13;
    for (int m : spec.season_months) first_month = std::min(first_month, m);
    std::vector<Date> dates;
    for (int y = first_season_year; y < first_season_year + n_years; ++y) {
        Date anchor = wraps ? Date::from_ymd(y - 1, 12, 1) : Date::from_ymd(y, first_month, 1);
        Date d = anchor;
        Date last_init = anchor;
        while (in_season(d)) {
            dates.push_back(d);
            if (inits) inits->push_back(d);
            last_init = d;
            d = d + 7;
        }
        // Lead spillover coverage past the last initialization.
        while (d <= last_init + int(7 * (spec.n_lead - 1))) {
            dates.push_back(d);
            d = d + 7;
        }
    }
    return dates;
}

} // namespace

void SynthSpec::validate() const {
    if (n_years < 1 || history_years < 0) throw ValidationError("synth: bad year counts");
    if (n_lead < 1 || n_member < 1) throw ValidationError("synth: bad ensemble dims");
    if (!(spread_deflation > 0.0) || spread_deflation > 1.0)
        throw ValidationError("synth: spread_deflation must be in (0, 1]");
    if (obs_noise_std < 0.0) throw ValidationError("synth: obs_noise_std must be >= 0");
    if (modes_lat < 1 || modes_lon < 1) throw ValidationError("synth: need at least one mode");
    in_grid.validate();
    out_grid.validate();
}

SynthTruth generate_truth(const SynthSpec& spec) {
    spec.validate();
    const std::size_t Gin = spec.in_grid.size(), Gout = spec.out_grid.size();

    SynthTruth truth;
    std::vector<Date> dates =
        season_anchor_dates(spec, spec.start_year - spec.history_years,
                            spec.history_years + spec.n_years, nullptr);
    {
        std::vector<Date> study_inits;
        season_anchor_dates(spec, spec.start_year, spec.n_years, &study_inits);
        truth.inits = std::move(study_inits);
    }
    const std::size_t T = dates.size();

    const SpectralBasis basis(spec.in_grid, spec.modes_lat, spec.modes_lon, spec.anomaly_std,
                              spec.white_std, spec.seed, kVarX);

    // Coupling stencils per output cell.
    std::vector<std::vector<double>> lin_stencil(Gout), quad_stencil(Gout);
    for (std::size_t og = 0; og < Gout; ++og) {
        const std::size_t i = og / spec.out_grid.n_lon, j = og % spec.out_grid.n_lon;
        const double lat = spec.out_grid.lat(i), lon = spec.out_grid.lon(j);
        const double lin_gain =
            spec.coupling_scale *
            (1.0 + 0.3 * normal_draw(spec.seed, Substream(StreamTag::synth_coupling, og, 0, 0)));
        lin_stencil[og] = make_stencil(spec.in_grid, lat, lon, spec.stencil_radius, lin_gain);
        quad_stencil[og] = make_stencil(spec.in_grid, lat, lon, spec.stencil_radius, 1.0);
    }

    truth.linear_floor.assign(Gout, 0.0);
    for (std::size_t og = 0; og < Gout; ++og) {
        const double var_u = basis.functional_variance(quad_stencil[og]);
        truth.linear_floor[og] = spec.quadratic_strength * spec.quadratic_strength * 2.0 *
                                     var_u * var_u +
                                 spec.obs_noise_std * spec.obs_noise_std;
    }

    const double day0 = double(dates.front().epoch_day);
    truth.x_offset.resize(T);
    truth.x_anom.assign(T * Gin, 0.0);
    truth.y_offset.resize(T);
    truth.y_linear.assign(T * Gout, 0.0);
    truth.y_quadratic.assign(T * Gout, 0.0);
    truth.y_noise.assign(T * Gout, 0.0);

    truth.x.grid = spec.in_grid;
    truth.x.times = dates;
    truth.x.units = "m";
    truth.x.values.resize(T * Gin);
    truth.y.grid = spec.out_grid;
    truth.y.times = dates;
    truth.y.units = "m/s";
    truth.y.values.resize(T * Gout);

    std::vector<double> anom(Gin);
    for (std::size_t t = 0; t < T; ++t) {
        const Date d = dates[t];
        const std::uint64_t day_key = std::uint64_t(std::uint32_t(d.epoch_day));

        std::fill(anom.begin(), anom.end(), 0.0);
        basis.sample(StreamTag::synth_field, spec.seed, day_key, 0, 0, kVarX, 1.0, anom);
        std::copy(anom.begin(), anom.end(), truth.x_anom.begin() + t * Gin);

        truth.x_offset[t] = seasonal_cycle(d, spec.seasonal_amp_x) +
                            spec.trend_x * (double(d.epoch_day) - day0);
        for (std::size_t g = 0; g < Gin; ++g)
            truth.x.values[t * Gin + g] = truth.x_offset[t] + anom[g];

        truth.y_offset[t] = seasonal_cycle(d, spec.seasonal_amp_y) +
                            spec.trend_y * (double(d.epoch_day) - day0);
        for (std::size_t og = 0; og < Gout; ++og) {
            double lin = 0.0, u = 0.0;
            const auto& lw = lin_stencil[og];
            const auto& qw = quad_stencil[og];
            for (std::size_t g = 0; g < Gin; ++g) {
                lin += lw[g] * anom[g];
                u += qw[g] * anom[g];
            }
            const double quad = spec.quadratic_strength * u * u;
            const double noise =
                spec.obs_noise_std *
                normal_draw(spec.seed, Substream(StreamTag::synth_field, day_key, 1, 0,
                                                 kVarY * 2 + 1, og));
            truth.y_linear[t * Gout + og] = lin;
            truth.y_quadratic[t * Gout + og] = quad;
            truth.y_noise[t * Gout + og] = noise;
            truth.y.values[t * Gout + og] = ((truth.y_offset[t] + lin) + quad) + noise;
        }
    }
    truth.x.validate();
    truth.y.validate();
    return truth;
}

EnsembleField generate_ensembles(const SynthSpec& spec, const SynthTruth& truth,
                                 bool use_target) {
    spec.validate();
    const Field& base_field = use_target ? truth.y : truth.x;
    const Grid& grid = base_field.grid;
    const std::size_t G = grid.size();
    const std::uint64_t var_id = use_target ? kVarY : kVarX;
    const double err_std = use_target ? spec.y_err_std : spec.x_err_std;
    const double bias = use_target ? spec.benchmark_bias : 0.0;

    const SpectralBasis err_basis(grid, spec.modes_lat, spec.modes_lon, 1.0, 0.1, spec.seed,
                                  var_id + 2);

    const std::size_t T = truth.inits.size(), L = spec.n_lead, M = spec.n_member;
    EnsembleField ens;
    ens.grid = grid;
    ens.inits = truth.inits;
    ens.n_lead = std::uint32_t(L);
    ens.n_member = std::uint32_t(M);
    ens.units = base_field.units;
    ens.values.resize(T * L * M * G);

    std::vector<double> mean_err(G), member_err(M * G), ebar(G);
    for (std::size_t t = 0; t < T; ++t) {
        const Date init = truth.inits[t];
        const std::uint64_t day_key = std::uint64_t(std::uint32_t(init.epoch_day));
        for (std::size_t l = 0; l < L; ++l) {
            const Date valid = init + int(7 * l);
            const std::size_t vt = [&] {
                const std::size_t idx = base_field.find_time(valid);
                if (idx == Field::npos)
                    throw ValidationError("synth ensembles: truth missing " + valid.iso());
                return idx;
            }();
            const double s_l = err_std * std::min(1.0, spec.err_base + spec.err_growth *
                                                                           double(l));

            std::fill(mean_err.begin(), mean_err.end(), 0.0);
            err_basis.sample(StreamTag::ensemble_error, spec.seed, day_key, l, 0, var_id, s_l,
                             mean_err);
            std::fill(member_err.begin(), member_err.end(), 0.0);
            std::fill(ebar.begin(), ebar.end(), 0.0);
            for (std::size_t m = 0; m < M; ++m) {
                const std::span<double> dst(member_err.data() + m * G, G);
                err_basis.sample(StreamTag::ensemble_error, spec.seed, day_key, l, m + 1,
                                 var_id, s_l, dst);
                for (std::size_t g = 0; g < G; ++g) ebar[g] += dst[g];
            }
            for (std::size_t g = 0; g < G; ++g) ebar[g] /= double(M);

            const auto base = base_field.row(vt);
            const double d = spec.spread_deflation;
            for (std::size_t m = 0; m < M; ++m)
                for (std::size_t g = 0; g < G; ++g)
                    ens.at(t, l, m, g) = base[g] + bias + mean_err[g] + ebar[g] +
                                         d * (member_err[m * G + g] - ebar[g]);
        }
    }
    ens.validate();
    return ens;
}

void write_synth_dataset(const SynthSpec& spec, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const SynthTruth truth = generate_truth(spec);
    const EnsembleField x_ens = generate_ensembles(spec, truth, false);
    const EnsembleField y_ens = generate_ensembles(spec, truth, true);

    auto split = [&](const Field& f, bool history) {
        Field out;
        out.grid = f.grid;
        out.units = f.units;
        for (std::size_t t = 0; t < f.n_time(); ++t) {
            const int sy = season_year(f.times[t], spec.season_months);
            if ((sy < spec.start_year) == history) {
                out.times.push_back(f.times[t]);
                const auto row = f.row(t);
                out.values.insert(out.values.end(), row.begin(), row.end());
            }
        }
        return out;
    };
    write_gfd(dir / "x_truth.gfd", split(truth.x, false));
    write_gfd(dir / "y_truth.gfd", split(truth.y, false));
    write_gfd(dir / "x_history.gfd", split(truth.x, true));
    write_gfd(dir / "y_history.gfd", split(truth.y, true));
    write_gfd(dir / "x_ens.gfd", x_ens);
    write_gfd(dir / "y_ens.gfd", y_ens);

    nlohmann::json meta;
    meta["seed"] = spec.seed;
    meta["start_year"] = spec.start_year;
    meta["n_years"] = spec.n_years;
    meta["history_years"] = spec.history_years;
    meta["n_lead"] = spec.n_lead;
    meta["n_member"] = spec.n_member;
    meta["quadratic_strength"] = spec.quadratic_strength;
    meta["obs_noise_std"] = spec.obs_noise_std;
    meta["spread_deflation"] = spec.spread_deflation;
    for (const char* name : {"x_truth.gfd", "y_truth.gfd", "x_history.gfd", "y_history.gfd",
                             "x_ens.gfd", "y_ens.gfd"})
        meta["files"][name] = hash_hex(hash_file(dir / name));
    std::ofstream out(dir / "synth_manifest.json", std::ios::trunc);
    out << meta.dump(2) << "\n";
}

namespace oracle {

std::vector<double> mse_ens_mean(const LeadAlignedField& y, const EnsembleField& ens) {
    const std::size_t T = ens.n_init(), L = ens.n_lead, M = ens.n_member, G = ens.n_grid();
    std::vector<double> out(L * G, 0.0);
    for (std::size_t l = 0; l < L; ++l)
        for (std::size_t g = 0; g < G; ++g) {
            double acc = 0.0;
            for (std::size_t t = 0; t < T; ++t) {
                double mean = 0.0;
                for (std::size_t m = 0; m < M; ++m) mean += ens.at(t, l, m, g);
                mean /= double(M);
                acc += (y.at(t, l, g) - mean) * (y.at(t, l, g) - mean);
            }
            out[l * G + g] = acc / double(T);
        }
    return out;
}

std::vector<double> crps(const LeadAlignedField& y, const EnsembleField& ens) {
    const std::size_t T = ens.n_init(), L = ens.n_lead, M = ens.n_member, G = ens.n_grid();
    std::vector<double> out(L * G, 0.0);
    for (std::size_t l = 0; l < L; ++l)
        for (std::size_t g = 0; g < G; ++g) {
            double acc = 0.0;
            for (std::size_t t = 0; t < T; ++t) {
                double first = 0.0;
                for (std::size_t m = 0; m < M; ++m)
                    first += std::fabs(ens.at(t, l, m, g) - y.at(t, l, g));
                first /= double(M);
                double second = 0.0;
                for (std::size_t m = 0; m < M; ++m)
                    for (std::size_t n = 0; n < M; ++n)
                        second += std::fabs(ens.at(t, l, m, g) - ens.at(t, l, n, g));
                second /= 2.0 * double(M) * double(M);
                acc += first - second;
            }
            out[l * G + g] = acc / double(T);
        }
    return out;
}

std::vector<double> ssr(const LeadAlignedField& y, const EnsembleField& ens) {
    const std::size_t T = ens.n_init(), L = ens.n_lead, M = ens.n_member, G = ens.n_grid();
    if (M < 2) throw ValidationError("oracle ssr: need at least 2 members");
    std::vector<double> out(L * G, 0.0);
    for (std::size_t l = 0; l < L; ++l)
        for (std::size_t g = 0; g < G; ++g) {
            double var_sum = 0.0, err_sum = 0.0;
            for (std::size_t t = 0; t < T; ++t) {
                double mean = 0.0;
                for (std::size_t m = 0; m < M; ++m) mean += ens.at(t, l, m, g);
                mean /= double(M);
                double var = 0.0;
                for (std::size_t m = 0; m < M; ++m) {
                    const double dd = ens.at(t, l, m, g) - mean;
                    var += dd * dd;
                }
                var_sum += var / double(M - 1);
                err_sum += (mean - y.at(t, l, g)) * (mean - y.at(t, l, g));
            }
            const double spread = std::sqrt(var_sum / double(T));
            const double rmse = std::sqrt(err_sum / double(T));
            out[l * G + g] =
                rmse == 0.0 ? std::numeric_limits<double>::infinity() : spread / rmse;
        }
    return out;
}

SsimComponents ssim(const LeadAlignedField& y, const EnsembleField& ens) {
    const std::size_t T = ens.n_init(), L = ens.n_lead, M = ens.n_member, G = ens.n_grid();
    SsimComponents r;
    r.ssim.assign(L, 0.0);
    r.luminance.assign(L, 0.0);
    r.contrast.assign(L, 0.0);
    r.structure.assign(L, 0.0);
    for (std::size_t l = 0; l < L; ++l) {
        double lum = 0.0, con = 0.0, str = 0.0;
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t m = 0; m < M; ++m) {
                double ms = 0.0, mo = 0.0;
                for (std::size_t g = 0; g < G; ++g) {
                    ms += ens.at(t, l, m, g);
                    mo += y.at(t, l, g);
                }
                ms /= double(G);
                mo /= double(G);
                double vs = 0.0, vo = 0.0, cov = 0.0;
                for (std::size_t g = 0; g < G; ++g) {
                    vs += (ens.at(t, l, m, g) - ms) * (ens.at(t, l, m, g) - ms);
                    vo += (y.at(t, l, g) - mo) * (y.at(t, l, g) - mo);
                    cov += (ens.at(t, l, m, g) - ms) * (y.at(t, l, g) - mo);
                }
                vs /= double(G);
                vo /= double(G);
                cov /= double(G);
                lum += 2.0 * ms * mo / std::max(ms * ms + mo * mo, 1e-12);
                con += 2.0 * std::sqrt(vs) * std::sqrt(vo) / std::max(vs + vo, 1e-12);
                str += cov / std::max(std::sqrt(vs) * std::sqrt(vo), 1e-12);
            }
        r.luminance[l] = lum / double(T * M);
        r.contrast[l] = con / double(T * M);
        r.structure[l] = str / double(T * M);
        r.ssim[l] = r.luminance[l] * r.contrast[l] * r.structure[l];
    }
    return r;
}

double latitude_weighted_mean(std::span<const double> per_grid, const Grid& grid) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < grid.n_lat; ++i)
        for (std::size_t j = 0; j < grid.n_lon; ++j) {
            const double w = std::cos(grid.lat(i) * 3.14159265358979323846 / 180.0);
            num += w * per_grid[i * grid.n_lon + j];
            den += w;
        }
    return num / den;
}

} // namespace oracle

} // namespace dsv
