#pragma once

#include "dsv/grid.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace dsv {

// Imports a field from CSV with columns date,lat,lon,value. Every date must
// cover the full grid exactly once; row order is irrelevant.
Field import_csv_field(const std::filesystem::path& path, const Grid& grid,
                       const std::string& units = "");

// One score (or significance) block for the score-table CSV. Cell values are
// laid out (lead, gridpoint); aggregates are one value per lead. p/sig
// columns are left empty when the vectors are empty.
struct ScoreCsv {
    std::string score_name;
    Grid grid;
    std::size_t n_lead = 0;
    std::vector<double> values;        // (L, G), may be empty for lead-only scores
    std::vector<double> lead_aggregate; // (L)
    std::vector<double> cell_p;        // (L, G) or empty
    std::vector<std::string> cell_sig; // (L, G) or empty
    std::vector<double> agg_p;         // (L) or empty
    std::vector<std::string> agg_sig;  // (L) or empty
};

// Writes blocks as CSV with columns
// score_name,lead,lat,lon,value,p_value,sig_class. Aggregate rows carry
// "SPATIAL_MEAN" in the lat column. An empty block list yields a header-only
// file. Atomic (temp file + rename).
void write_score_csv(const std::filesystem::path& path, const std::vector<ScoreCsv>& blocks);

// Full-precision text for a double; round-trips bit-exactly.
std::string format_double(double v);

// Temp-file-plus-rename text write shared by all CSV/JSON emitters.
void atomic_write_text(const std::filesystem::path& path, const std::string& content);

} // namespace dsv
