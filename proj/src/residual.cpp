#include "dsv/residual.hpp"

#include "dsv/errors.hpp"
#include "dsv/parallel.hpp"
#include "dsv/rng.hpp"

#include <algorithm>
#include <cmath>

namespace dsv {

ResidualModel fit_residuals(std::span<const double> y_true, std::span<const double> y_hat,
                            std::size_t n_samples, std::size_t n_grid, double var_floor) {
    if (y_true.size() != y_hat.size() || y_true.size() != n_samples * n_grid)
        throw DimensionError("fit_residuals: shape mismatch");
    if (n_samples < 2) throw ValidationError("fit_residuals: need at least 2 samples");

    ResidualModel m;
    m.var_floor = var_floor;
    m.mean.assign(n_grid, 0.0);
    m.variance.assign(n_grid, 0.0);
    for (std::size_t t = 0; t < n_samples; ++t)
        for (std::size_t g = 0; g < n_grid; ++g)
            m.mean[g] += y_true[t * n_grid + g] - y_hat[t * n_grid + g];
    for (double& v : m.mean) v /= double(n_samples);
    for (std::size_t t = 0; t < n_samples; ++t)
        for (std::size_t g = 0; g < n_grid; ++g) {
            const double r = y_true[t * n_grid + g] - y_hat[t * n_grid + g] - m.mean[g];
            m.variance[g] += r * r;
        }
    for (double& v : m.variance) v = std::max(v / double(n_samples), var_floor);
    return m;
}

EnsembleField perturb_ensemble(const EnsembleField& regressed, const ResidualModel& residuals,
                               std::uint32_t perturbations, std::uint64_t seed) {
    if (perturbations < 1) throw ValidationError("perturb_ensemble: P must be >= 1");
    if (residuals.mean.size() != regressed.n_grid())
        throw DimensionError("perturb_ensemble: residual model grid size mismatch");

    const std::size_t T = regressed.n_init(), L = regressed.n_lead, M = regressed.n_member,
                      G = regressed.n_grid(), P = perturbations;
    std::vector<double> sigma(G);
    for (std::size_t g = 0; g < G; ++g) sigma[g] = std::sqrt(residuals.variance[g]);

    EnsembleField out;
    out.grid = regressed.grid;
    out.inits = regressed.inits;
    out.n_lead = regressed.n_lead;
    out.n_member = static_cast<std::uint32_t>(M * P);
    out.units = regressed.units;
    out.values.resize(T * L * M * P * G);

    parallel_for(T, [&](std::size_t t) {
        for (std::size_t l = 0; l < L; ++l)
            for (std::size_t m = 0; m < M; ++m) {
                const auto base = regressed.member_slice(t, l, m);
                for (std::size_t p = 0; p < P; ++p) {
                    auto dst = out.member_slice(t, l, m * P + p);
                    for (std::size_t g = 0; g < G; ++g) {
                        const double z = normal_draw(
                            seed, Substream(StreamTag::perturbation, t, l, m, p, g));
                        dst[g] = base[g] + residuals.mean[g] + sigma[g] * z;
                    }
                }
            }
    });
    return out;
}

std::size_t count_negative(const EnsembleField& ens) {
    return std::size_t(std::count_if(ens.values.begin(), ens.values.end(),
                                     [](double v) { return v < 0.0; }));
}

} // namespace dsv
