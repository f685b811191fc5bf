#include "dsv/config.hpp"

#include "dsv/errors.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace dsv {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

} // namespace

KeyValueFile KeyValueFile::parse_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_text(ss.str(), path.string());
}

KeyValueFile KeyValueFile::parse_text(const std::string& text, const std::string& origin) {
    KeyValueFile kv;
    kv.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ValidationError(origin + ":" + std::to_string(lineno) +
                                  ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ValidationError(origin + ":" + std::to_string(lineno) + ": empty key");
        if (kv.entries_.count(key))
            throw ValidationError(origin + ":" + std::to_string(lineno) + ": duplicate key '" +
                                  key + "'");
        kv.entries_[key] = value;
    }
    return kv;
}

std::string KeyValueFile::get_string(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end())
        throw ValidationError(origin_ + ": missing required key '" + key + "'");
    accessed_.insert(key);
    return it->second;
}

std::string KeyValueFile::get_string(const std::string& key, const std::string& fallback) const {
    accessed_.insert(key);
    auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second;
}

long long KeyValueFile::get_int(const std::string& key) const {
    const std::string s = get_string(key);
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ValidationError(origin_ + ": key '" + key + "' is not an integer: '" + s + "'");
    }
}

long long KeyValueFile::get_int(const std::string& key, long long fallback) const {
    accessed_.insert(key);
    return entries_.count(key) ? get_int(key) : fallback;
}

double KeyValueFile::get_real(const std::string& key) const {
    const std::string s = get_string(key);
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ValidationError(origin_ + ": key '" + key + "' is not a real number: '" + s + "'");
    }
}

double KeyValueFile::get_real(const std::string& key, double fallback) const {
    accessed_.insert(key);
    return entries_.count(key) ? get_real(key) : fallback;
}

bool KeyValueFile::get_bool(const std::string& key, bool fallback) const {
    accessed_.insert(key);
    if (!entries_.count(key)) return fallback;
    const std::string s = get_string(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ValidationError(origin_ + ": key '" + key + "' is not a boolean: '" + s + "'");
}

std::vector<long long> KeyValueFile::get_int_list(const std::string& key,
                                                  const std::vector<long long>& fallback) const {
    accessed_.insert(key);
    if (!entries_.count(key)) return fallback;
    const std::string s = get_string(key);
    std::vector<long long> out;
    std::istringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        try {
            std::size_t pos = 0;
            out.push_back(std::stoll(item, &pos));
            if (pos != item.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw ValidationError(origin_ + ": key '" + key + "' has a non-integer item: '" +
                                  item + "'");
        }
    }
    if (out.empty()) throw ValidationError(origin_ + ": key '" + key + "' is an empty list");
    return out;
}

void KeyValueFile::reject_unknown_keys() const {
    for (const auto& [key, value] : entries_)
        if (!accessed_.count(key))
            throw ValidationError(origin_ + ": unknown key '" + key + "'");
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
    const KeyValueFile kv = KeyValueFile::parse_file(path);
    const std::filesystem::path base = path.parent_path();
    auto resolve = [&](const std::string& key) {
        std::filesystem::path p = kv.get_string(key);
        return p.is_absolute() ? p : base / p;
    };

    RunConfig c;
    c.x_truth = resolve("x_truth");
    c.y_truth = resolve("y_truth");
    c.x_history = resolve("x_history");
    c.y_history = resolve("y_history");
    c.x_ens = resolve("x_ens");
    c.y_ens = resolve("y_ens");

    c.study_start_year = int(kv.get_int("study_start_year"));
    c.study_years = int(kv.get_int("study_years"));
    c.outer_folds = int(kv.get_int("outer_folds", 3));
    c.inner_folds = int(kv.get_int("inner_folds", 6));
    const auto months = kv.get_int_list("season_months", {12, 1, 2});
    c.season_months.assign(months.begin(), months.end());
    c.clim_window_years = int(kv.get_int("clim_window_years", 15));

    c.model = kv.get_string("model", "mlr");
    c.cnn_stages = int(kv.get_int("cnn_stages", 2));
    c.cnn_base_channels = int(kv.get_int("cnn_base_channels", 8));
    c.epochs = int(kv.get_int("epochs", 200));
    c.batch_size = int(kv.get_int("batch_size", 32));
    c.hyper_budget = int(kv.get_int("hyper_budget", 4));
    c.lr_min = kv.get_real("lr_min", 1e-4);
    c.lr_max = kv.get_real("lr_max", 1e-2);
    c.wd_min = kv.get_real("wd_min", 1e-8);
    c.wd_max = kv.get_real("wd_max", 1e-3);

    c.perturbation_count = int(kv.get_int("perturbation_count", 20));
    c.bootstrap_replicates = int(kv.get_int("bootstrap_replicates", 1000));
    c.ssr_literal = kv.get_bool("ssr_literal", false);
    c.seed = std::uint64_t(kv.get_int("seed", 0));
    c.threads = int(kv.get_int("threads", 1));

    kv.reject_unknown_keys();
    c.validate();
    return c;
}

std::string RunConfig::to_text() const {
    std::ostringstream out;
    out << "x_truth = " << x_truth.string() << "\n";
    out << "y_truth = " << y_truth.string() << "\n";
    out << "x_history = " << x_history.string() << "\n";
    out << "y_history = " << y_history.string() << "\n";
    out << "x_ens = " << x_ens.string() << "\n";
    out << "y_ens = " << y_ens.string() << "\n";
    out << "study_start_year = " << study_start_year << "\n";
    out << "study_years = " << study_years << "\n";
    out << "outer_folds = " << outer_folds << "\n";
    out << "inner_folds = " << inner_folds << "\n";
    out << "season_months = ";
    for (std::size_t i = 0; i < season_months.size(); ++i)
        out << (i ? "," : "") << season_months[i];
    out << "\n";
    out << "clim_window_years = " << clim_window_years << "\n";
    out << "model = " << model << "\n";
    out << "cnn_stages = " << cnn_stages << "\n";
    out << "cnn_base_channels = " << cnn_base_channels << "\n";
    out << "epochs = " << epochs << "\n";
    out << "batch_size = " << batch_size << "\n";
    out << "hyper_budget = " << hyper_budget << "\n";
    out << "lr_min = " << lr_min << "\n";
    out << "lr_max = " << lr_max << "\n";
    out << "wd_min = " << wd_min << "\n";
    out << "wd_max = " << wd_max << "\n";
    out << "perturbation_count = " << perturbation_count << "\n";
    out << "bootstrap_replicates = " << bootstrap_replicates << "\n";
    out << "ssr_literal = " << (ssr_literal ? "true" : "false") << "\n";
    out << "seed = " << seed << "\n";
    out << "threads = " << threads << "\n";
    return out.str();
}

void RunConfig::validate() const {
    for (const auto* p : {&x_truth, &y_truth, &x_history, &y_history, &x_ens, &y_ens})
        if (p->empty()) throw ValidationError("config: empty dataset path");
    if (study_years < 1 || outer_folds < 1 || inner_folds < 1)
        throw ValidationError("config: fold and year counts must be positive");
    if (season_months.empty()) throw ValidationError("config: season_months is empty");
    for (int m : season_months)
        if (m < 1 || m > 12)
            throw ValidationError("config: season month out of range: " + std::to_string(m));
    if (model != "mlr" && model != "cnn")
        throw ValidationError("config: model must be 'mlr' or 'cnn', got '" + model + "'");
    if (clim_window_years < 1 || perturbation_count < 1 || bootstrap_replicates < 1 ||
        epochs < 1 || batch_size < 1 || hyper_budget < 1 || threads < 1)
        throw ValidationError("config: counts must be positive");
    if (!(lr_min > 0.0) || lr_max < lr_min || wd_min < 0.0 || wd_max < wd_min)
        throw ValidationError("config: invalid hyperparameter search ranges");
    if (cnn_stages < 1 || cnn_stages > 6 || cnn_base_channels < 1)
        throw ValidationError("config: invalid cnn architecture parameters");
}

} // namespace dsv
