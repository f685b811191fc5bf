#include "dsv/gfd.hpp"

#include "dsv/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace dsv {

namespace {

static_assert(std::endian::native == std::endian::little,
              "GFD I/O assumes a little-endian host");

constexpr char kMagic[4] = {'G', 'F', 'D', '1'};
constexpr std::uint8_t kKindField = 0;
constexpr std::uint8_t kKindEnsemble = 1;
// Caps dims so T*L*M*G*8 can never overflow or exhaust memory on fuzzed input.
constexpr std::uint64_t kMaxElements = 1ull << 32;

class ByteWriter {
public:
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    void u8(std::uint8_t v) { raw(&v, 1); }
    void u32(std::uint32_t v) { raw(&v, 4); }
    void i32(std::int32_t v) { raw(&v, 4); }
    void f64(double v) { raw(&v, 8); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> b) : buf_(b) {}

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return buf_.size() - pos_; }

    void raw(void* dst, std::size_t n, const char* what) {
        if (remaining() < n)
            throw FormatError(std::string("truncated ") + what + ": need " + std::to_string(n) +
                                  " bytes, have " + std::to_string(remaining()),
                              pos_);
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
    std::int32_t i32(const char* what) {
        std::int32_t v;
        raw(&v, 4, what);
        return v;
    }
    double f64(const char* what) {
        double v;
        raw(&v, 8, what);
        return v;
    }
    std::string str(const char* what) {
        const std::size_t at = pos_;
        const std::uint32_t n = u32(what);
        if (n > remaining())
            throw FormatError(std::string(what) + " length " + std::to_string(n) +
                                  " exceeds remaining bytes",
                              at);
        std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
        pos_ += n;
        return s;
    }

private:
    std::span<const std::uint8_t> buf_;
    std::size_t pos_ = 0;
};

void write_header(ByteWriter& w, std::uint8_t kind, std::uint32_t T, std::uint32_t L,
                  std::uint32_t M, const Grid& grid, const std::string& units,
                  const std::vector<Date>& times) {
    w.raw(kMagic, 4);
    w.u8(kind);
    w.u32(T);
    w.u32(L);
    w.u32(M);
    w.u32(static_cast<std::uint32_t>(grid.size()));
    w.f64(grid.lat_start);
    w.f64(grid.lat_step);
    w.f64(grid.lon_start);
    w.f64(grid.lon_step);
    w.f64(0.0); // reserved
    w.f64(0.0); // reserved
    w.u32(grid.n_lat);
    w.u32(grid.n_lon);
    w.str(units);
    for (const Date& d : times) w.i32(d.epoch_day);
}

struct Header {
    std::uint8_t kind;
    std::uint32_t T, L, M, G;
    Grid grid;
    std::string units;
    std::vector<Date> times;
};

Header read_header(ByteReader& r) {
    char magic[4];
    r.raw(magic, 4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("bad magic '" + std::string(magic, 4) + "', expected 'GFD1'", 0);
    Header h;
    h.kind = r.u8("kind code");
    if (h.kind != kKindField && h.kind != kKindEnsemble)
        throw FormatError("unknown kind code " + std::to_string(h.kind), r.offset() - 1);
    h.T = r.u32("dim T");
    h.L = r.u32("dim L");
    h.M = r.u32("dim M");
    h.G = r.u32("dim G");
    if (h.kind == kKindField && (h.L != 1 || h.M != 1))
        throw FormatError("field kind requires L = M = 1", r.offset() - 12);
    const std::uint64_t elems =
        std::uint64_t(h.T) * h.L * std::uint64_t(h.M) * h.G;
    if (h.T == 0 || h.G == 0 || h.L == 0 || h.M == 0 || elems > kMaxElements)
        throw FormatError("dimension overflow: T=" + std::to_string(h.T) +
                              " L=" + std::to_string(h.L) + " M=" + std::to_string(h.M) +
                              " G=" + std::to_string(h.G),
                          r.offset() - 16);
    const std::size_t grid_at = r.offset();
    h.grid.lat_start = r.f64("grid lat_start");
    h.grid.lat_step = r.f64("grid lat_step");
    h.grid.lon_start = r.f64("grid lon_start");
    h.grid.lon_step = r.f64("grid lon_step");
    r.f64("grid reserved");
    r.f64("grid reserved");
    h.grid.n_lat = r.u32("grid n_lat");
    h.grid.n_lon = r.u32("grid n_lon");
    try {
        h.grid.validate();
    } catch (const Error& e) {
        throw FormatError(std::string("invalid grid: ") + e.what(), grid_at);
    }
    if (h.grid.size() != h.G)
        throw FormatError("dim G " + std::to_string(h.G) + " != n_lat*n_lon " +
                              std::to_string(h.grid.size()),
                          grid_at);
    h.units = r.str("units string");
    h.times.reserve(h.T);
    for (std::uint32_t t = 0; t < h.T; ++t) h.times.emplace_back(r.i32("timestamp"));
    return h;
}

std::vector<double> read_payload(ByteReader& r, std::uint64_t elems) {
    const std::size_t at = r.offset();
    const std::uint64_t want = elems * 8;
    if (r.remaining() < want)
        throw FormatError("truncated payload: need " + std::to_string(want) + " bytes, have " +
                              std::to_string(r.remaining()),
                          at);
    if (r.remaining() > want)
        throw FormatError("trailing bytes after payload: " +
                              std::to_string(r.remaining() - want) + " extra",
                          at + want);
    std::vector<double> v(elems);
    r.raw(v.data(), want, "payload");
    return v;
}

// Temp file + rename so readers never observe a partial write.
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot open for writing: " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw Error("cannot open for reading: " + path.string());
    const std::streamsize n = in.tellg();
    in.seekg(0);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(n));
    in.read(reinterpret_cast<char*>(bytes.data()), n);
    if (!in) throw Error("read failed: " + path.string());
    return bytes;
}

} // namespace

std::vector<std::uint8_t> encode_gfd(const Field& field) {
    field.validate();
    ByteWriter w;
    write_header(w, kKindField, static_cast<std::uint32_t>(field.n_time()), 1, 1, field.grid,
                 field.units, field.times);
    w.raw(field.values.data(), field.values.size() * 8);
    return w.take();
}

std::vector<std::uint8_t> encode_gfd(const EnsembleField& ens) {
    ens.validate();
    ByteWriter w;
    write_header(w, kKindEnsemble, static_cast<std::uint32_t>(ens.n_init()), ens.n_lead,
                 ens.n_member, ens.grid, ens.units, ens.inits);
    w.raw(ens.values.data(), ens.values.size() * 8);
    return w.take();
}

FieldOrEnsemble decode_gfd(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    Header h = read_header(r);
    const std::uint64_t elems = std::uint64_t(h.T) * h.L * std::uint64_t(h.M) * h.G;
    std::vector<double> payload = read_payload(r, elems);
    if (h.kind == kKindField) {
        Field f;
        f.grid = h.grid;
        f.times = std::move(h.times);
        f.units = std::move(h.units);
        f.values = std::move(payload);
        f.validate();
        return f;
    }
    EnsembleField e;
    e.grid = h.grid;
    e.inits = std::move(h.times);
    e.n_lead = h.L;
    e.n_member = h.M;
    e.units = std::move(h.units);
    e.values = std::move(payload);
    e.validate();
    return e;
}

void write_gfd(const std::filesystem::path& path, const Field& field) {
    write_file(path, encode_gfd(field));
}

void write_gfd(const std::filesystem::path& path, const EnsembleField& ens) {
    write_file(path, encode_gfd(ens));
}

FieldOrEnsemble read_gfd(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    return decode_gfd(bytes);
}

Field read_gfd_field(const std::filesystem::path& path) {
    auto v = read_gfd(path);
    if (!std::holds_alternative<Field>(v))
        throw FormatError(path.string() + " holds an ensemble, expected a field", 4);
    return std::get<Field>(std::move(v));
}

EnsembleField read_gfd_ensemble(const std::filesystem::path& path) {
    auto v = read_gfd(path);
    if (!std::holds_alternative<EnsembleField>(v))
        throw FormatError(path.string() + " holds a field, expected an ensemble", 4);
    return std::get<EnsembleField>(std::move(v));
}

} // namespace dsv
