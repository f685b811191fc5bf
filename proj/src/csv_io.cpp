#include "dsv/csv_io.hpp"

#include "dsv/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace dsv {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s, const std::string& context) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw FormatError("cannot parse number '" + s + "' in " + context);
    }
}

// Nearest grid row/column within a small tolerance, or -1.
long nearest_index(double value, double start, double step, std::uint32_t n) {
    const double f = (value - start) / step;
    const long i = std::lround(f);
    if (i < 0 || i >= long(n)) return -1;
    if (std::fabs(f - double(i)) > 1e-6) return -1;
    return i;
}

} // namespace

Field import_csv_field(const std::filesystem::path& path, const Grid& grid,
                       const std::string& units) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open for reading: " + path.string());

    const std::size_t G = grid.size();
    // date -> per-gridpoint (value, seen)
    std::map<Date, std::pair<std::vector<double>, std::vector<bool>>> rows;

    std::string line;
    std::size_t lineno = 0;
    bool header_checked = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto cols = split_csv_line(line);
        if (!header_checked) {
            header_checked = true;
            if (cols.size() >= 4 && cols[0] == "date") continue; // header row
        }
        if (cols.size() != 4)
            throw FormatError("line " + std::to_string(lineno) + ": expected 4 columns, got " +
                              std::to_string(cols.size()));
        const std::string ctx = "line " + std::to_string(lineno);
        const Date date = Date::parse_iso(cols[0]);
        const double lat = parse_double(cols[1], ctx);
        const double lon = parse_double(cols[2], ctx);
        const double value = parse_double(cols[3], ctx);
        if (!std::isfinite(value))
            throw ValidationError(ctx + ": non-finite value for " + date.iso());
        const long i = nearest_index(lat, grid.lat_start, grid.lat_step, grid.n_lat);
        const long j = nearest_index(lon, grid.lon_start, grid.lon_step, grid.n_lon);
        if (i < 0 || j < 0)
            throw ValidationError(ctx + ": coordinates (" + cols[1] + ", " + cols[2] +
                                  ") are not on the grid");
        auto& [vals, seen] = rows[date];
        if (vals.empty()) {
            vals.assign(G, 0.0);
            seen.assign(G, false);
        }
        const std::size_t g = std::size_t(i) * grid.n_lon + std::size_t(j);
        if (seen[g])
            throw ValidationError("duplicate cell for " + date.iso() + " at (" + cols[1] + ", " +
                                  cols[2] + ")");
        vals[g] = value;
        seen[g] = true;
    }
    if (rows.empty()) throw FormatError("no data rows in " + path.string());

    Field f;
    f.grid = grid;
    f.units = units;
    f.times.reserve(rows.size());
    f.values.reserve(rows.size() * G);
    for (const auto& [date, cell] : rows) {
        const auto& [vals, seen] = cell;
        for (std::size_t g = 0; g < G; ++g)
            if (!seen[g]) {
                const std::size_t i = g / grid.n_lon, j = g % grid.n_lon;
                throw ValidationError("missing cell for " + date.iso() + " at (" +
                                      std::to_string(grid.lat(i)) + ", " +
                                      std::to_string(grid.lon(j)) + ")");
            }
        f.times.push_back(date);
        f.values.insert(f.values.end(), vals.begin(), vals.end());
    }
    f.validate();
    return f;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void atomic_write_text(const std::filesystem::path& path, const std::string& content) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw Error("cannot open for writing: " + tmp.string());
        out << content;
        if (!out) throw Error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void write_score_csv(const std::filesystem::path& path, const std::vector<ScoreCsv>& blocks) {
    std::ostringstream out;
    out << "score_name,lead,lat,lon,value,p_value,sig_class\n";
    for (const ScoreCsv& b : blocks) {
        const std::size_t G = b.grid.size();
        const bool has_cells = !b.values.empty();
        const bool has_p = !b.cell_p.empty();
        if (has_cells && b.values.size() != b.n_lead * G)
            throw DimensionError("score block '" + b.score_name + "' has inconsistent shape");
        for (std::size_t l = 0; l < b.n_lead; ++l) {
            if (has_cells) {
                for (std::size_t g = 0; g < G; ++g) {
                    const std::size_t i = g / b.grid.n_lon, j = g % b.grid.n_lon;
                    out << b.score_name << ',' << (l + 1) << ',' << format_double(b.grid.lat(i))
                        << ',' << format_double(b.grid.lon_wrapped(j)) << ','
                        << format_double(b.values[l * G + g]) << ',';
                    if (has_p) {
                        out << format_double(b.cell_p[l * G + g]) << ',' << b.cell_sig[l * G + g];
                    } else {
                        out << ',';
                    }
                    out << '\n';
                }
            }
            out << b.score_name << ',' << (l + 1) << ",SPATIAL_MEAN,,"
                << format_double(b.lead_aggregate.at(l)) << ',';
            if (!b.agg_p.empty()) {
                out << format_double(b.agg_p[l]) << ',' << b.agg_sig[l];
            } else {
                out << ',';
            }
            out << '\n';
        }
    }
    atomic_write_text(path, out.str());
}

} // namespace dsv
