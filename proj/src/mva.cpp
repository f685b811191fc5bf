#include "dsv/mva.hpp"

#include "dsv/errors.hpp"

#include <algorithm>
#include <cmath>

namespace dsv {

MvaParams fit_mva(const EnsembleField& ens, const LeadAlignedField& reference,
                  double std_floor) {
    const std::size_t T = ens.n_init(), L = ens.n_lead, M = ens.n_member, G = ens.n_grid();
    if (reference.n_time != T || reference.n_lead != L || reference.n_grid != G)
        throw DimensionError("fit_mva: reference is not aligned with the ensemble");
    if (T < 2) throw ValidationError("fit_mva: need at least 2 initializations");

    MvaParams p;
    p.n_lead = L;
    p.n_grid = G;
    p.std_floor = std_floor;
    p.ens_mean.assign(L * G, 0.0);
    p.ens_std.assign(L * G, 0.0);
    p.ref_mean.assign(L * G, 0.0);
    p.ref_std.assign(L * G, 0.0);

    for (std::size_t l = 0; l < L; ++l) {
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t m = 0; m < M; ++m) {
                const auto s = ens.member_slice(t, l, m);
                for (std::size_t g = 0; g < G; ++g) p.ens_mean[l * G + g] += s[g];
            }
            const auto r = reference.slice(t, l);
            for (std::size_t g = 0; g < G; ++g) p.ref_mean[l * G + g] += r[g];
        }
        for (std::size_t g = 0; g < G; ++g) {
            p.ens_mean[l * G + g] /= double(T * M);
            p.ref_mean[l * G + g] /= double(T);
        }
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t m = 0; m < M; ++m) {
                const auto s = ens.member_slice(t, l, m);
                for (std::size_t g = 0; g < G; ++g) {
                    const double d = s[g] - p.ens_mean[l * G + g];
                    p.ens_std[l * G + g] += d * d;
                }
            }
            const auto r = reference.slice(t, l);
            for (std::size_t g = 0; g < G; ++g) {
                const double d = r[g] - p.ref_mean[l * G + g];
                p.ref_std[l * G + g] += d * d;
            }
        }
        for (std::size_t g = 0; g < G; ++g) {
            p.ens_std[l * G + g] =
                std::max(std::sqrt(p.ens_std[l * G + g] / double(T * M)), std_floor);
            p.ref_std[l * G + g] =
                std::max(std::sqrt(p.ref_std[l * G + g] / double(T)), std_floor);
        }
    }
    return p;
}

EnsembleField apply_mva(const EnsembleField& ens, const MvaParams& params) {
    if (params.n_lead != ens.n_lead || params.n_grid != ens.n_grid())
        throw DimensionError("apply_mva: params do not cover this ensemble");
    EnsembleField out = ens;
    const std::size_t G = out.n_grid();
    for (std::size_t t = 0; t < out.n_init(); ++t)
        for (std::size_t l = 0; l < out.n_lead; ++l)
            for (std::size_t m = 0; m < out.n_member; ++m) {
                auto s = out.member_slice(t, l, m);
                for (std::size_t g = 0; g < G; ++g) {
                    const std::size_t k = l * G + g;
                    s[g] = (s[g] - params.ens_mean[k]) * (params.ref_std[k] / params.ens_std[k]) +
                           params.ref_mean[k];
                }
            }
    return out;
}

} // namespace dsv
