#include "dsv/scores.hpp"

#include "dsv/errors.hpp"
#include "dsv/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

namespace dsv {

namespace {

constexpr double kSsimEps = 1e-12;

void check_alignment(const LeadAlignedField& y, const EnsembleField& ens) {
    if (y.n_time != ens.n_init() || y.n_lead != ens.n_lead || y.n_grid != ens.n_grid())
        throw DimensionError("verifying values are not aligned with the ensemble (T,L,G)");
}

} // namespace

std::vector<double> aggregate_spatial(const ScoreTable& table) {
    const std::size_t G = table.grid.size();
    const std::vector<double> w = table.grid.latitude_weights();
    std::vector<double> out(table.n_lead, 0.0);
    for (std::size_t l = 0; l < table.n_lead; ++l) {
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < table.grid.n_lat; ++i)
            for (std::size_t j = 0; j < table.grid.n_lon; ++j) {
                const std::size_t g = i * table.grid.n_lon + j;
                if (table.flagged[l * G + g]) continue;
                num += w[i] * table.values[l * G + g];
                den += w[i];
            }
        out[l] = den > 0.0 ? num / den : std::numeric_limits<double>::quiet_NaN();
    }
    return out;
}

ScoreCsv to_csv(const ScoreTable& table) {
    ScoreCsv c;
    c.score_name = table.score;
    c.grid = table.grid;
    c.n_lead = table.n_lead;
    c.values = table.values;
    c.lead_aggregate = aggregate_spatial(table);
    return c;
}

LeadAlignedField align_verifying(const Field& truth, const std::vector<Date>& inits,
                                 std::size_t n_lead) {
    std::unordered_map<std::int32_t, std::size_t> by_day;
    by_day.reserve(truth.n_time());
    for (std::size_t t = 0; t < truth.n_time(); ++t) by_day[truth.times[t].epoch_day] = t;

    LeadAlignedField out(inits.size(), n_lead, truth.n_grid());
    for (std::size_t t = 0; t < inits.size(); ++t)
        for (std::size_t l = 0; l < n_lead; ++l) {
            const Date valid = lead_valid_date(inits[t], l);
            auto it = by_day.find(valid.epoch_day);
            if (it == by_day.end())
                throw ValidationError("no verifying truth for " + valid.iso() + " (init " +
                                      inits[t].iso() + ", lead " + std::to_string(l + 1) + ")");
            const auto row = truth.row(it->second);
            std::copy(row.begin(), row.end(), out.values.begin() + (t * n_lead + l) * out.n_grid);
        }
    return out;
}

std::vector<double> mse_deterministic(std::span<const double> y, std::span<const double> y_hat,
                                      std::size_t n_samples, std::size_t n_grid) {
    if (y.size() != y_hat.size() || y.size() != n_samples * n_grid)
        throw DimensionError("mse_deterministic: shape mismatch");
    std::vector<double> out(n_grid, 0.0);
    for (std::size_t t = 0; t < n_samples; ++t)
        for (std::size_t g = 0; g < n_grid; ++g) {
            const double d = y[t * n_grid + g] - y_hat[t * n_grid + g];
            out[g] += d * d;
        }
    for (double& v : out) v /= double(n_samples);
    return out;
}

LeadAlignedField mse_ens_mean_per_init(const LeadAlignedField& y, const EnsembleField& ens) {
    check_alignment(y, ens);
    const std::size_t T = ens.n_init(), L = ens.n_lead, M = ens.n_member, G = ens.n_grid();
    LeadAlignedField out(T, L, G);
    std::vector<double> mean(G);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t l = 0; l < L; ++l) {
            std::fill(mean.begin(), mean.end(), 0.0);
            for (std::size_t m = 0; m < M; ++m) {
                const auto s = ens.member_slice(t, l, m);
                for (std::size_t g = 0; g < G; ++g) mean[g] += s[g];
            }
            const auto obs = y.slice(t, l);
            for (std::size_t g = 0; g < G; ++g) {
                const double d = mean[g] / double(M) - obs[g];
                out.at(t, l, g) = d * d;
            }
        }
    return out;
}

LeadAlignedField crps_per_init(const LeadAlignedField& y, const EnsembleField& ens) {
    check_alignment(y, ens);
    const std::size_t T = ens.n_init(), L = ens.n_lead, M = ens.n_member, G = ens.n_grid();
    LeadAlignedField out(T, L, G);
    parallel_for(T, [&](std::size_t t) {
        for (std::size_t l = 0; l < L; ++l) {
            const auto obs = y.slice(t, l);
            for (std::size_t g = 0; g < G; ++g) {
                double abs_err = 0.0;
                for (std::size_t m = 0; m < M; ++m)
                    abs_err += std::fabs(ens.at(t, l, m, g) - obs[g]);
                double pair_sum = 0.0;
                for (std::size_t m = 0; m < M; ++m)
                    for (std::size_t n = 0; n < M; ++n)
                        pair_sum += std::fabs(ens.at(t, l, m, g) - ens.at(t, l, n, g));
                out.at(t, l, g) =
                    abs_err / double(M) - pair_sum / (2.0 * double(M) * double(M));
            }
        }
    });
    return out;
}

namespace {

ScoreTable reduce_time_mean(const LeadAlignedField& per_init, const Grid& grid,
                            const std::string& name) {
    ScoreTable table(name, grid, per_init.n_lead);
    const std::size_t G = per_init.n_grid;
    for (std::size_t l = 0; l < per_init.n_lead; ++l)
        for (std::size_t g = 0; g < G; ++g) {
            double s = 0.0;
            for (std::size_t t = 0; t < per_init.n_time; ++t) s += per_init.at(t, l, g);
            table.at(l, g) = s / double(per_init.n_time);
        }
    return table;
}

} // namespace

ScoreTable mse_ensemble_mean(const LeadAlignedField& y, const EnsembleField& ens) {
    return reduce_time_mean(mse_ens_mean_per_init(y, ens), ens.grid, "mse");
}

ScoreTable crps_discrete(const LeadAlignedField& y, const EnsembleField& ens) {
    ScoreTable t = reduce_time_mean(crps_per_init(y, ens), ens.grid, "crps");
    t.note = "members=" + std::to_string(ens.n_member);
    return t;
}

EnsembleField quantile_downsample(const EnsembleField& ens, std::uint32_t m_small) {
    const std::size_t M = ens.n_member;
    if (m_small < 1 || m_small > M)
        throw ValidationError("quantile_downsample: need 1 <= m_small <= n_member");
    const std::size_t T = ens.n_init(), L = ens.n_lead, G = ens.n_grid();

    EnsembleField out;
    out.grid = ens.grid;
    out.inits = ens.inits;
    out.n_lead = ens.n_lead;
    out.n_member = m_small;
    out.units = ens.units;
    out.values.resize(T * L * m_small * G);

    std::vector<double> sorted(M);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t l = 0; l < L; ++l)
            for (std::size_t g = 0; g < G; ++g) {
                for (std::size_t m = 0; m < M; ++m) sorted[m] = ens.at(t, l, m, g);
                std::sort(sorted.begin(), sorted.end());
                for (std::size_t i = 1; i <= m_small; ++i) {
                    const double q = (double(i) - 0.5) / double(m_small);
                    // 1-based position on the sorted sequence
                    double pos = q * double(M) + 0.5;
                    pos = std::clamp(pos, 1.0, double(M));
                    const std::size_t k = std::size_t(std::floor(pos));
                    const double frac = pos - double(k);
                    const double lo = sorted[k - 1];
                    const double hi = sorted[std::min(k, M - 1)];
                    out.at(t, l, i - 1, g) = lo * (1.0 - frac) + hi * frac;
                }
            }
    return out;
}

EnsembleField equalize_members(const EnsembleField& ens, std::uint32_t target_members) {
    if (ens.n_member <= target_members) return ens;
    return quantile_downsample(ens, target_members);
}

ScoreTable ssr(const LeadAlignedField& y, const EnsembleField& ens, const SsrOptions& opt) {
    check_alignment(y, ens);
    const std::size_t T = ens.n_init(), L = ens.n_lead, M = ens.n_member, G = ens.n_grid();
    if (M < 2) throw ValidationError("ssr: need at least 2 members for ensemble variance");

    ScoreTable table(opt.literal ? "ssr_literal" : "ssr", ens.grid, L);
    table.note = "members=" + std::to_string(M);
    for (std::size_t l = 0; l < L; ++l)
        for (std::size_t g = 0; g < G; ++g) {
            double spread_acc = 0.0, mse_acc = 0.0;
            for (std::size_t t = 0; t < T; ++t) {
                double mean = 0.0;
                for (std::size_t m = 0; m < M; ++m) mean += ens.at(t, l, m, g);
                mean /= double(M);
                double var = 0.0;
                for (std::size_t m = 0; m < M; ++m) {
                    const double d = ens.at(t, l, m, g) - mean;
                    var += d * d;
                }
                var /= double(M - 1); // sample variance across members
                spread_acc += opt.literal ? var * var : var;
                const double err = mean - y.at(t, l, g);
                mse_acc += err * err;
            }
            const double spread = std::sqrt(spread_acc / double(T));
            const double rmse = std::sqrt(mse_acc / double(T));
            if (rmse == 0.0) {
                table.at(l, g) = std::numeric_limits<double>::infinity();
                table.flagged[l * G + g] = 1;
            } else {
                table.at(l, g) = spread / rmse;
            }
        }
    return table;
}

ScoreTable skill_score(const ScoreTable& ens_score, const ScoreTable& ref_score,
                       const std::string& name) {
    if (ens_score.n_lead != ref_score.n_lead || !(ens_score.grid == ref_score.grid))
        throw DimensionError("skill_score: tables have different shapes");
    ScoreTable out(name, ens_score.grid, ens_score.n_lead);
    const std::size_t G = out.grid.size();
    for (std::size_t k = 0; k < out.n_lead * G; ++k) {
        if (ref_score.values[k] == 0.0 || ref_score.flagged[k] || ens_score.flagged[k]) {
            out.values[k] = 0.0;
            out.flagged[k] = 1;
        } else {
            out.values[k] = 1.0 - ens_score.values[k] / ref_score.values[k];
        }
    }
    return out;
}

SsimResult ssim(const LeadAlignedField& y, const EnsembleField& ens) {
    check_alignment(y, ens);
    const std::size_t T = ens.n_init(), L = ens.n_lead, M = ens.n_member, G = ens.n_grid();
    SsimResult r;
    r.n_lead = L;
    r.ssim.assign(L, 0.0);
    r.luminance.assign(L, 0.0);
    r.contrast.assign(L, 0.0);
    r.structure.assign(L, 0.0);

    for (std::size_t l = 0; l < L; ++l) {
        double lum = 0.0, con = 0.0, str = 0.0;
        for (std::size_t t = 0; t < T; ++t) {
            const auto obs = y.slice(t, l);
            double mo = 0.0;
            for (double v : obs) mo += v;
            mo /= double(G);
            double vo = 0.0;
            for (double v : obs) vo += (v - mo) * (v - mo);
            vo /= double(G);
            const double so = std::sqrt(vo);

            for (std::size_t m = 0; m < M; ++m) {
                const auto mem = ens.member_slice(t, l, m);
                double ms = 0.0;
                for (double v : mem) ms += v;
                ms /= double(G);
                double vs = 0.0, cov = 0.0;
                for (std::size_t g = 0; g < G; ++g) {
                    vs += (mem[g] - ms) * (mem[g] - ms);
                    cov += (mem[g] - ms) * (obs[g] - mo);
                }
                vs /= double(G);
                cov /= double(G);
                const double ss = std::sqrt(vs);

                double den_l = ms * ms + mo * mo;
                double den_c = vs + vo;
                double den_s = ss * so;
                if (den_l < kSsimEps || den_c < kSsimEps || den_s < kSsimEps)
                    ++r.degenerate_count;
                den_l = std::max(den_l, kSsimEps);
                den_c = std::max(den_c, kSsimEps);
                den_s = std::max(den_s, kSsimEps);

                lum += 2.0 * ms * mo / den_l;
                con += 2.0 * ss * so / den_c;
                str += cov / den_s;
            }
        }
        const double norm = double(T) * double(M);
        r.luminance[l] = lum / norm;
        r.contrast[l] = con / norm;
        r.structure[l] = str / norm;
        r.ssim[l] = r.luminance[l] * r.contrast[l] * r.structure[l];
    }
    return r;
}

std::vector<ScoreCsv> to_csv(const SsimResult& r) {
    auto block = [&](const std::string& name, const std::vector<double>& v) {
        ScoreCsv c;
        c.score_name = name;
        c.grid = Grid(0, 1, 1, 0, 1, 1); // lead-only score, no per-cell rows
        c.n_lead = r.n_lead;
        c.lead_aggregate = v;
        return c;
    };
    return {block("ssim", r.ssim), block("ssim_luminance", r.luminance),
            block("ssim_contrast", r.contrast), block("ssim_structure", r.structure)};
}

EnsembleField climatology_reference(const Field& truth, const std::vector<Date>& inits,
                                    std::uint32_t n_lead, int window_years) {
    if (window_years < 2)
        throw ValidationError("climatology_reference: need window_years >= 2 for an ensemble");
    std::unordered_map<std::int32_t, std::size_t> by_day;
    by_day.reserve(truth.n_time());
    for (std::size_t t = 0; t < truth.n_time(); ++t) by_day[truth.times[t].epoch_day] = t;

    // Same calendar date in an earlier year, matched within +-3 days.
    auto find_prior = [&](Date valid, int years_back) -> std::size_t {
        int y = valid.year() - years_back;
        int mo = valid.month(), da = valid.day();
        if (mo == 2 && da == 29) da = 28;
        const Date target = Date::from_ymd(y, mo, da);
        for (int delta = 0; delta <= 3; ++delta)
            for (int sign : {1, -1}) {
                if (delta == 0 && sign < 0) continue;
                auto it = by_day.find((target + sign * delta).epoch_day);
                if (it != by_day.end()) return it->second;
            }
        throw ValidationError("climatology_reference: no truth near " + target.iso() +
                              " (needed for valid date " + valid.iso() + ")");
    };

    const std::size_t G = truth.n_grid();
    EnsembleField out;
    out.grid = truth.grid;
    out.inits = inits;
    out.n_lead = n_lead;
    out.n_member = std::uint32_t(window_years);
    out.units = truth.units;
    out.values.resize(inits.size() * n_lead * std::size_t(window_years) * G);
    for (std::size_t t = 0; t < inits.size(); ++t)
        for (std::size_t l = 0; l < n_lead; ++l) {
            const Date valid = lead_valid_date(inits[t], l);
            for (int k = 0; k < window_years; ++k) {
                const auto row = truth.row(find_prior(valid, k + 1));
                auto dst = out.member_slice(t, l, std::size_t(k));
                std::copy(row.begin(), row.end(), dst.begin());
            }
        }
    return out;
}

} // namespace dsv
