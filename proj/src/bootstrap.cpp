#include "dsv/bootstrap.hpp"

#include "dsv/errors.hpp"
#include "dsv/rng.hpp"

#include <algorithm>
#include <cmath>

namespace dsv {

SigClass classify_p(double p) {
    if (p < 0.01) return SigClass::a;
    if (p < 0.05) return SigClass::b;
    if (p < 0.1) return SigClass::c;
    return SigClass::none;
}

std::string sig_label(SigClass cls) {
    switch (cls) {
    case SigClass::a: return "a";
    case SigClass::b: return "b";
    case SigClass::c: return "c";
    default: return "none";
    }
}

std::vector<std::size_t> bootstrap_indices(std::uint64_t seed, std::size_t replicate,
                                           std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t j = 0; j < n; ++j)
        idx[j] = uniform_index(seed, Substream(StreamTag::bootstrap, replicate, 0, 0, 0, j), n);
    return idx;
}

namespace {

struct CellAccumulator {
    std::vector<double> deltas;
    std::size_t excluded = 0;
};

BootstrapCell finish_cell(CellAccumulator& acc, Orientation orientation, bool literal_p) {
    BootstrapCell cell;
    cell.excluded = acc.excluded;
    if (acc.deltas.empty()) {
        cell.median_delta = 0.0;
        cell.p = 1.0;
        cell.cls = SigClass::none;
        return cell;
    }
    std::sort(acc.deltas.begin(), acc.deltas.end());
    const std::size_t n = acc.deltas.size();
    cell.median_delta = (n % 2 == 1) ? acc.deltas[n / 2]
                                     : 0.5 * (acc.deltas[n / 2 - 1] + acc.deltas[n / 2]);
    std::size_t count = 0;
    for (double d : acc.deltas) {
        bool hit;
        if (orientation == Orientation::negative)
            hit = literal_p ? (d < 0.0) : (d >= 0.0);
        else
            hit = literal_p ? (d > 0.0) : (d <= 0.0);
        if (hit) ++count;
    }
    cell.p = double(count) / double(n);
    cell.cls = classify_p(cell.p);
    return cell;
}

} // namespace

BootstrapResult bootstrap_delta(const LeadAlignedField& candidate_per_init,
                                const LeadAlignedField& benchmark_per_init, const Grid& grid,
                                Orientation orientation, const BootstrapOptions& opt,
                                std::string score_name, const ResampleObserver& observer) {
    const std::size_t T = candidate_per_init.n_time, L = candidate_per_init.n_lead,
                      G = candidate_per_init.n_grid;
    if (benchmark_per_init.n_time != T || benchmark_per_init.n_lead != L ||
        benchmark_per_init.n_grid != G)
        throw DimensionError("bootstrap_delta: models were evaluated on different shapes");
    if (G != grid.size()) throw DimensionError("bootstrap_delta: grid size mismatch");
    if (T < 1) throw ValidationError("bootstrap_delta: no initializations");
    if (opt.replicates < 1) throw ValidationError("bootstrap_delta: replicates must be >= 1");

    // Spatial aggregates of the per-init contributions, per (t, l).
    const std::vector<double> w = grid.latitude_weights();
    double wsum = 0.0;
    for (std::size_t i = 0; i < grid.n_lat; ++i) wsum += w[i] * double(grid.n_lon);
    std::vector<double> agg_s(T * L, 0.0), agg_b(T * L, 0.0);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t l = 0; l < L; ++l) {
            double ns = 0.0, nb = 0.0;
            for (std::size_t i = 0; i < grid.n_lat; ++i)
                for (std::size_t j = 0; j < grid.n_lon; ++j) {
                    const std::size_t g = i * grid.n_lon + j;
                    ns += w[i] * candidate_per_init.at(t, l, g);
                    nb += w[i] * benchmark_per_init.at(t, l, g);
                }
            agg_s[t * L + l] = ns / wsum;
            agg_b[t * L + l] = nb / wsum;
        }

    std::vector<CellAccumulator> cells(L * G), agg_cells(L);
    for (auto& c : cells) c.deltas.reserve(opt.replicates);
    for (auto& c : agg_cells) c.deltas.reserve(opt.replicates);

    for (std::size_t rep = 0; rep < opt.replicates; ++rep) {
        const std::vector<std::size_t> idx = bootstrap_indices(opt.seed, rep, T);
        if (observer) {
            observer(rep, 0, idx);
            observer(rep, 1, idx);
        }
        for (std::size_t l = 0; l < L; ++l) {
            for (std::size_t g = 0; g < G; ++g) {
                double ms = 0.0, mb = 0.0;
                for (const std::size_t t : idx) {
                    ms += candidate_per_init.at(t, l, g);
                    mb += benchmark_per_init.at(t, l, g);
                }
                auto& cell = cells[l * G + g];
                if (mb == 0.0) {
                    ++cell.excluded;
                } else {
                    cell.deltas.push_back((ms - mb) / mb * 100.0);
                }
            }
            double ms = 0.0, mb = 0.0;
            for (const std::size_t t : idx) {
                ms += agg_s[t * L + l];
                mb += agg_b[t * L + l];
            }
            auto& cell = agg_cells[l];
            if (mb == 0.0) {
                ++cell.excluded;
            } else {
                cell.deltas.push_back((ms - mb) / mb * 100.0);
            }
        }
    }

    BootstrapResult r;
    r.score_name = std::move(score_name);
    r.grid = grid;
    r.n_lead = L;
    r.replicates = opt.replicates;
    r.cells.reserve(L * G);
    for (auto& c : cells) r.cells.push_back(finish_cell(c, orientation, opt.literal_p));
    r.aggregate.reserve(L);
    for (auto& c : agg_cells) r.aggregate.push_back(finish_cell(c, orientation, opt.literal_p));
    return r;
}

ScoreCsv to_csv(const BootstrapResult& r) {
    ScoreCsv c;
    c.score_name = r.score_name;
    c.grid = r.grid;
    c.n_lead = r.n_lead;
    const std::size_t G = r.grid.size();
    c.values.resize(r.n_lead * G);
    c.cell_p.resize(r.n_lead * G);
    c.cell_sig.resize(r.n_lead * G);
    for (std::size_t k = 0; k < r.cells.size(); ++k) {
        c.values[k] = r.cells[k].median_delta;
        c.cell_p[k] = r.cells[k].p;
        c.cell_sig[k] = sig_label(r.cells[k].cls);
    }
    c.lead_aggregate.resize(r.n_lead);
    c.agg_p.resize(r.n_lead);
    c.agg_sig.resize(r.n_lead);
    for (std::size_t l = 0; l < r.n_lead; ++l) {
        c.lead_aggregate[l] = r.aggregate[l].median_delta;
        c.agg_p[l] = r.aggregate[l].p;
        c.agg_sig[l] = sig_label(r.aggregate[l].cls);
    }
    return c;
}

} // namespace dsv
