#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace dsv {

// Flat key = value document with '#' comments and typed accessors.
class KeyValueFile {
public:
    static KeyValueFile parse_file(const std::filesystem::path& path);
    static KeyValueFile parse_text(const std::string& text, const std::string& origin = "<text>");

    bool has(const std::string& key) const { return entries_.count(key) > 0; }
    std::string get_string(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    long long get_int(const std::string& key) const;
    long long get_int(const std::string& key, long long fallback) const;
    double get_real(const std::string& key) const;
    double get_real(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<long long> get_int_list(const std::string& key,
                                        const std::vector<long long>& fallback) const;

    // Throws if any key was never read through a getter; catches typos.
    void reject_unknown_keys() const;

private:
    std::string origin_;
    std::map<std::string, std::string> entries_;
    mutable std::set<std::string> accessed_;
};

// Everything a cv-run needs. Paths resolve relative to the config file.
struct RunConfig {
    std::filesystem::path x_truth, y_truth;     // weekly deterministic fields
    std::filesystem::path x_history, y_history; // pre-study history for climatology
    std::filesystem::path x_ens, y_ens;         // input and benchmark ensembles

    int study_start_year = 0; // season years
    int study_years = 0;
    int outer_folds = 3;
    int inner_folds = 6;
    std::vector<int> season_months = {12, 1, 2};
    int clim_window_years = 15;

    std::string model = "mlr"; // mlr | cnn
    int cnn_stages = 2;
    int cnn_base_channels = 8;
    int epochs = 200;
    int batch_size = 32;
    int hyper_budget = 4;
    double lr_min = 1e-4, lr_max = 1e-2;
    double wd_min = 1e-8, wd_max = 1e-3;

    int perturbation_count = 20;
    int bootstrap_replicates = 1000;
    bool ssr_literal = false;
    std::uint64_t seed = 0;
    int threads = 1;

    static RunConfig from_file(const std::filesystem::path& path);
    void validate() const;
    // Effective settings as a reloadable key-value document.
    std::string to_text() const;
};

} // namespace dsv
