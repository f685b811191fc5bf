#include "dsv/checkpoint.hpp"

#include "dsv/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace dsv {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'G', 'F', 'C', '1'};
constexpr std::uint8_t kKindMlr = 0;
constexpr std::uint8_t kKindCnn = 1;
constexpr std::uint8_t kKindMva = 2;

struct Block {
    std::vector<std::size_t> shape;
    std::vector<double> data;
};

using BlockMap = std::map<std::string, Block>;

class Writer {
public:
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    void u8(std::uint8_t v) { raw(&v, 1); }
    void u32(std::uint32_t v) { raw(&v, 4); }
    void f64(double v) { raw(&v, 8); }
    void str(const std::string& s) {
        u32(std::uint32_t(s.size()));
        raw(s.data(), s.size());
    }
    void grid(const Grid& g) {
        f64(g.lat_start);
        f64(g.lat_step);
        f64(g.lon_start);
        f64(g.lon_step);
        u32(g.n_lat);
        u32(g.n_lon);
    }
    void blocks(const BlockMap& m) {
        u32(std::uint32_t(m.size()));
        for (const auto& [name, b] : m) {
            str(name);
            u32(std::uint32_t(b.shape.size()));
            std::size_t total = 1;
            for (std::size_t d : b.shape) {
                u32(std::uint32_t(d));
                total *= d;
            }
            if (total != b.data.size())
                throw Error("checkpoint block '" + name + "' shape/data mismatch");
            raw(b.data.data(), b.data.size() * 8);
        }
    }
    void to_file(const std::filesystem::path& path) {
        const std::filesystem::path tmp = path.string() + ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw Error("cannot open for writing: " + tmp.string());
            out.write(reinterpret_cast<const char*>(buf_.data()),
                      std::streamsize(buf_.size()));
            if (!out) throw Error("write failed: " + tmp.string());
        }
        std::filesystem::rename(tmp, path);
    }

private:
    std::vector<std::uint8_t> buf_;
};

class Reader {
public:
    explicit Reader(const std::filesystem::path& path) : path_(path.string()) {
        std::ifstream in(path, std::ios::binary | std::ios::ate);
        if (!in) throw Error("cannot open for reading: " + path_);
        const std::streamsize n = in.tellg();
        in.seekg(0);
        buf_.resize(std::size_t(n));
        in.read(reinterpret_cast<char*>(buf_.data()), n);
        if (!in) throw Error("read failed: " + path_);
    }
    void raw(void* dst, std::size_t n, const char* what) {
        if (buf_.size() - pos_ < n)
            throw FormatError(path_ + ": truncated " + what, pos_);
        std::memcpy(dst, buf_.data() + pos_, n);
        pos_ += n;
    }
    std::uint8_t u8(const char* what) {
        std::uint8_t v;
        raw(&v, 1, what);
        return v;
    }
    std::uint32_t u32(const char* what) {
        std::uint32_t v;
        raw(&v, 4, what);
        return v;
    }
    double f64(const char* what) {
        double v;
        raw(&v, 8, what);
        return v;
    }
    std::string str(const char* what) {
        const std::uint32_t n = u32(what);
        if (buf_.size() - pos_ < n)
            throw FormatError(path_ + ": truncated " + std::string(what), pos_);
        std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    Grid grid() {
        Grid g;
        g.lat_start = f64("grid");
        g.lat_step = f64("grid");
        g.lon_start = f64("grid");
        g.lon_step = f64("grid");
        g.n_lat = u32("grid");
        g.n_lon = u32("grid");
        g.validate();
        return g;
    }
    BlockMap blocks() {
        BlockMap m;
        const std::uint32_t count = u32("block count");
        for (std::uint32_t k = 0; k < count; ++k) {
            const std::string name = str("block name");
            Block b;
            const std::uint32_t nd = u32("block ndim");
            std::size_t total = 1;
            for (std::uint32_t d = 0; d < nd; ++d) {
                b.shape.push_back(u32("block dim"));
                total *= b.shape.back();
            }
            if (total > (1u << 28)) throw FormatError(path_ + ": oversized block", pos_);
            b.data.resize(total);
            raw(b.data.data(), total * 8, "block payload");
            m.emplace(name, std::move(b));
        }
        return m;
    }
    std::uint8_t header() {
        char magic[4];
        raw(magic, 4, "magic");
        if (std::memcmp(magic, kMagic, 4) != 0)
            throw FormatError(path_ + ": bad checkpoint magic", 0);
        const std::uint8_t kind = u8("kind");
        if (kind > kKindMva)
            throw FormatError(path_ + ": unknown checkpoint kind " + std::to_string(kind), 4);
        return kind;
    }

private:
    std::string path_;
    std::vector<std::uint8_t> buf_;
    std::size_t pos_ = 0;
};

void put_chain(BlockMap& m, const std::string& prefix, const PreprocessChain& chain) {
    Block keys, values;
    for (const auto& [mmdd, v] : chain.seasonal) {
        keys.data.push_back(double(mmdd));
        values.data.push_back(v);
    }
    keys.shape = {keys.data.size()};
    values.shape = {values.data.size()};
    m[prefix + ".seasonal_keys"] = std::move(keys);
    m[prefix + ".seasonal_values"] = std::move(values);
    m[prefix + ".trend"] = {{2}, {chain.trend.intercept, chain.trend.slope}};
    m[prefix + ".mu"] = {{chain.stats.mu.size()}, chain.stats.mu};
    m[prefix + ".sigma"] = {{chain.stats.sigma.size()}, chain.stats.sigma};
    m[prefix + ".sigma_floor"] = {{1}, {chain.stats.sigma_floor}};
}

const Block& need(const BlockMap& m, const std::string& name) {
    auto it = m.find(name);
    if (it == m.end()) throw FormatError("checkpoint missing block '" + name + "'");
    return it->second;
}

PreprocessChain get_chain(const BlockMap& m, const std::string& prefix) {
    PreprocessChain chain;
    const Block& keys = need(m, prefix + ".seasonal_keys");
    const Block& values = need(m, prefix + ".seasonal_values");
    if (keys.data.size() != values.data.size())
        throw FormatError("checkpoint seasonal table is inconsistent");
    for (std::size_t i = 0; i < keys.data.size(); ++i)
        chain.seasonal[int(keys.data[i])] = values.data[i];
    const Block& trend = need(m, prefix + ".trend");
    chain.trend.intercept = trend.data.at(0);
    chain.trend.slope = trend.data.at(1);
    chain.stats.mu = need(m, prefix + ".mu").data;
    chain.stats.sigma = need(m, prefix + ".sigma").data;
    chain.stats.sigma_floor = need(m, prefix + ".sigma_floor").data.at(0);
    return chain;
}

} // namespace

std::vector<double> ModelCheckpoint::predict_norm(std::span<const double> x_norm) const {
    return predict_norm_batch(x_norm, 1);
}

std::vector<double> ModelCheckpoint::predict_norm_batch(std::span<const double> x_norm,
                                                        std::size_t n_samples) const {
    if (x_norm.size() != n_samples * n_in())
        throw DimensionError("predict_norm_batch: input size mismatch");
    if (kind == "mlr") return mlr.predict_batch(x_norm, n_samples);
    if (!cnn) throw Error("checkpoint has no cnn model loaded");
    Tensor4 in(n_samples, 1, cnn_cfg.in_h, cnn_cfg.in_w);
    std::copy(x_norm.begin(), x_norm.end(), in.v.begin());
    Tensor4 out = cnn->forward(in, false);
    return std::move(out.v);
}

Field ModelCheckpoint::regress(const Field& x) const {
    const Field x_norm = prep_x.transform(x);
    std::vector<double> pred = predict_norm_batch(x_norm.values, x_norm.n_time());
    Field out;
    out.grid = out_grid;
    out.times = x.times;
    out.units = "m/s";
    out.values = std::move(pred);
    for (std::size_t t = 0; t < out.n_time(); ++t)
        prep_y.inverse_sample(out.row(t), out.times[t]);
    out.validate();
    return out;
}

EnsembleField ModelCheckpoint::regress(const EnsembleField& x_ens) const {
    const EnsembleField x_norm = prep_x.transform(x_ens);
    const std::size_t T = x_ens.n_init(), L = x_ens.n_lead, M = x_ens.n_member;
    EnsembleField out;
    out.grid = out_grid;
    out.inits = x_ens.inits;
    out.n_lead = x_ens.n_lead;
    out.n_member = x_ens.n_member;
    out.units = "m/s";
    out.values.resize(T * L * M * n_out());
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t l = 0; l < L; ++l) {
            const Date valid = lead_valid_date(x_ens.inits[t], l);
            // Members of one (t, l) slice share a batch.
            const std::vector<double> pred = predict_norm_batch(
                {x_norm.values.data() + x_norm.index(t, l, 0, 0), M * n_in()}, M);
            for (std::size_t m = 0; m < M; ++m) {
                auto dst = out.member_slice(t, l, m);
                std::copy_n(pred.data() + m * n_out(), n_out(), dst.begin());
                prep_y.inverse_sample(dst, valid);
            }
        }
    out.validate();
    return out;
}

void save_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& ckpt) {
    Writer w;
    w.raw(kMagic, 4);
    w.u8(ckpt.kind == "mlr" ? kKindMlr : kKindCnn);
    w.grid(ckpt.in_grid);
    w.grid(ckpt.out_grid);

    BlockMap m;
    put_chain(m, "prep_x", ckpt.prep_x);
    put_chain(m, "prep_y", ckpt.prep_y);
    m["residual.mean"] = {{ckpt.residuals.mean.size()}, ckpt.residuals.mean};
    m["residual.variance"] = {{ckpt.residuals.variance.size()}, ckpt.residuals.variance};
    m["residual.var_floor"] = {{1}, {ckpt.residuals.var_floor}};

    if (ckpt.kind == "mlr") {
        m["mlr.intercept"] = {{ckpt.mlr.n_out}, ckpt.mlr.intercept};
        m["mlr.weights"] = {{ckpt.mlr.n_out, ckpt.mlr.n_in}, ckpt.mlr.weights};
    } else if (ckpt.kind == "cnn") {
        if (!ckpt.cnn) throw Error("save_checkpoint: cnn checkpoint without a model");
        const CnnConfig& c = ckpt.cnn_cfg;
        m["cnn.arch"] = {{8},
                         {double(c.stages), double(c.base_channels), double(c.channel_cap),
                          double(c.attention_reduction), c.bn_momentum, c.bn_eps,
                          double(c.crop_top), double(c.crop_left)}};
        ckpt.cnn->visit_params([&](Param& p) {
            m["cnn." + p.name] = {p.shape, p.value};
        });
    } else {
        throw ValidationError("save_checkpoint: unknown kind '" + ckpt.kind + "'");
    }
    w.blocks(m);
    w.to_file(path);
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
    Reader r(path);
    const std::uint8_t kind = r.header();
    if (kind == kKindMva)
        throw FormatError(path.string() + " holds MVA parameters, expected a model");
    ModelCheckpoint ckpt;
    ckpt.kind = kind == kKindMlr ? "mlr" : "cnn";
    ckpt.in_grid = r.grid();
    ckpt.out_grid = r.grid();
    const BlockMap m = r.blocks();

    ckpt.prep_x = get_chain(m, "prep_x");
    ckpt.prep_y = get_chain(m, "prep_y");
    ckpt.residuals.mean = need(m, "residual.mean").data;
    ckpt.residuals.variance = need(m, "residual.variance").data;
    ckpt.residuals.var_floor = need(m, "residual.var_floor").data.at(0);

    if (ckpt.kind == "mlr") {
        const Block& wts = need(m, "mlr.weights");
        if (wts.shape.size() != 2) throw FormatError("mlr.weights must be 2-D");
        ckpt.mlr.n_out = wts.shape[0];
        ckpt.mlr.n_in = wts.shape[1];
        ckpt.mlr.weights = wts.data;
        ckpt.mlr.intercept = need(m, "mlr.intercept").data;
        ckpt.mlr.input_stats = ckpt.prep_x.stats;
        ckpt.mlr.target_stats = ckpt.prep_y.stats;
    } else {
        const Block& arch = need(m, "cnn.arch");
        if (arch.data.size() != 8) throw FormatError("cnn.arch must have 8 entries");
        CnnConfig c;
        c.stages = int(arch.data[0]);
        c.base_channels = int(arch.data[1]);
        c.channel_cap = int(arch.data[2]);
        c.attention_reduction = int(arch.data[3]);
        c.bn_momentum = arch.data[4];
        c.bn_eps = arch.data[5];
        c.crop_top = long(arch.data[6]);
        c.crop_left = long(arch.data[7]);
        c.in_h = ckpt.in_grid.n_lat;
        c.in_w = ckpt.in_grid.n_lon;
        c.out_h = ckpt.out_grid.n_lat;
        c.out_w = ckpt.out_grid.n_lon;
        ckpt.cnn_cfg = c;
        ckpt.cnn = std::make_shared<CnnModel>(c, 0);
        ckpt.cnn->visit_params([&](Param& p) {
            const Block& b = need(m, "cnn." + p.name);
            if (b.data.size() != p.value.size())
                throw FormatError("checkpoint block 'cnn." + p.name + "' has wrong size");
            p.value = b.data;
        });
    }
    return ckpt;
}

void save_mva(const std::filesystem::path& path, const MvaParams& params, const Grid& grid) {
    Writer w;
    w.raw(kMagic, 4);
    w.u8(kKindMva);
    w.grid(grid);
    w.grid(grid);
    BlockMap m;
    const std::vector<std::size_t> shape = {params.n_lead, params.n_grid};
    m["mva.ens_mean"] = {shape, params.ens_mean};
    m["mva.ens_std"] = {shape, params.ens_std};
    m["mva.ref_mean"] = {shape, params.ref_mean};
    m["mva.ref_std"] = {shape, params.ref_std};
    m["mva.std_floor"] = {{1}, {params.std_floor}};
    w.blocks(m);
    w.to_file(path);
}

MvaParams load_mva(const std::filesystem::path& path) {
    Reader r(path);
    if (r.header() != kKindMva)
        throw FormatError(path.string() + " is not an MVA parameter file");
    r.grid();
    r.grid();
    const BlockMap m = r.blocks();
    MvaParams p;
    const Block& em = need(m, "mva.ens_mean");
    if (em.shape.size() != 2) throw FormatError("mva.ens_mean must be 2-D");
    p.n_lead = em.shape[0];
    p.n_grid = em.shape[1];
    p.ens_mean = em.data;
    p.ens_std = need(m, "mva.ens_std").data;
    p.ref_mean = need(m, "mva.ref_mean").data;
    p.ref_std = need(m, "mva.ref_std").data;
    p.std_floor = need(m, "mva.std_floor").data.at(0);
    return p;
}

CheckpointSummary inspect_checkpoint(const std::filesystem::path& path) {
    Reader r(path);
    const std::uint8_t kind = r.header();
    CheckpointSummary s;
    s.kind = kind == kKindMlr ? "mlr" : (kind == kKindCnn ? "cnn" : "mva");
    s.in_grid = r.grid();
    s.out_grid = r.grid();
    for (const auto& [name, b] : r.blocks()) s.blocks.push_back({name, b.shape});
    return s;
}

} // namespace dsv
