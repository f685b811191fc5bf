#pragma once

#include "dsv/grid.hpp"

namespace dsv {

// Mean-variance adjustment: per (lead, gridpoint) affine map taking the
// ensemble climatology onto the reference statistics.
struct MvaParams {
    std::size_t n_lead = 0, n_grid = 0;
    std::vector<double> ens_mean, ens_std; // pooled over (t, m), stds floored
    std::vector<double> ref_mean, ref_std; // over t
    double std_floor = 1e-8;

    double scale(std::size_t l, std::size_t g) const {
        return ref_std[l * n_grid + g] / ens_std[l * n_grid + g];
    }
};

// Statistics per (l, g): ensemble pooled over initializations and members,
// reference over initializations. `reference` must be aligned by (t, l).
MvaParams fit_mva(const EnsembleField& ens, const LeadAlignedField& reference,
                  double std_floor = 1e-8);

// y' = (y - ens_mean) * (ref_std / ens_std) + ref_mean, per (l, g).
EnsembleField apply_mva(const EnsembleField& ens, const MvaParams& params);

} // namespace dsv
