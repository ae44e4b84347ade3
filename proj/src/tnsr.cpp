#include "dfl/tnsr.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "dfl/error.hpp"

namespace dfl::tnsr {

static_assert(std::endian::native == std::endian::little, "TNSR I/O assumes a little-endian host");

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.insert(out.end(), buf, buf + sizeof(T));
}

class Reader {
public:
    Reader(const std::uint8_t* p, std::size_t n, const std::string& origin) : p_(p), n_(n), origin_(origin) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, p_ + off_, sizeof(T));
        off_ += sizeof(T);
        return v;
    }

    void need(std::size_t k) const {
        if (off_ + k > n_)
            fail(ErrorKind::Format, origin_ + ": truncated TNSR blob (need " + std::to_string(off_ + k) +
                                        " bytes, have " + std::to_string(n_) + ")");
    }

    const std::uint8_t* cur() const { return p_ + off_; }
    void skip(std::size_t k) { need(k); off_ += k; }
    std::size_t offset() const { return off_; }

private:
    const std::uint8_t* p_;
    std::size_t n_;
    std::size_t off_ = 0;
    const std::string& origin_;
};

}  // namespace

std::vector<std::uint8_t> encode(const Tensor& t, DType dtype) {
    std::vector<std::uint8_t> out{'T', 'N', 'S', 'R'};
    out.reserve(16 + 4 * t.ndim() + t.size() * 8);
    put<std::uint32_t>(out, kVersion);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(dtype));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.ndim()));
    for (auto d : t.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    switch (dtype) {
        case DType::F64:
            for (double v : t.data()) put<double>(out, v);
            break;
        case DType::F32:
            for (double v : t.data()) put<float>(out, static_cast<float>(v));
            break;
        case DType::U8:
            for (double v : t.data()) {
                if (!(v >= 0.0 && v <= 255.0 && std::floor(v) == v))
                    fail(ErrorKind::InvalidArgument, "value " + std::to_string(v) + " not representable as u8");
                out.push_back(static_cast<std::uint8_t>(v));
            }
            break;
    }
    return out;
}

Tensor decode(const std::uint8_t* bytes, std::size_t len, const std::string& origin, std::size_t* consumed) {
    Reader r(bytes, len, origin);
    r.need(4);
    if (std::memcmp(r.cur(), "TNSR", 4) != 0) fail(ErrorKind::Format, origin + ": bad magic, not a TNSR blob");
    r.skip(4);
    auto version = r.get<std::uint32_t>();
    if (version != kVersion)
        fail(ErrorKind::Version, origin + ": unsupported TNSR version " + std::to_string(version));
    auto dtype = r.get<std::uint8_t>();
    if (dtype > 2) fail(ErrorKind::Format, origin + ": unknown dtype code " + std::to_string(dtype));
    auto ndim = r.get<std::uint32_t>();
    if (ndim == 0 || ndim > 8) fail(ErrorKind::Format, origin + ": implausible ndim " + std::to_string(ndim));
    Shape shape(ndim);
    for (auto& d : shape) {
        d = r.get<std::uint32_t>();
        if (d == 0) fail(ErrorKind::Format, origin + ": zero extent");
    }
    std::size_t n = shape_numel(shape);
    std::vector<double> data(n);
    switch (static_cast<DType>(dtype)) {
        case DType::F64:
            r.need(n * 8);
            std::memcpy(data.data(), r.cur(), n * 8);
            r.skip(n * 8);
            break;
        case DType::F32: {
            r.need(n * 4);
            for (std::size_t i = 0; i < n; ++i) data[i] = r.get<float>();
            break;
        }
        case DType::U8:
            r.need(n);
            for (std::size_t i = 0; i < n; ++i) data[i] = r.cur()[i];
            r.skip(n);
            break;
    }
    if (consumed) *consumed = r.offset();
    try {
        return Tensor(std::move(shape), std::move(data));
    } catch (const Error& e) {
        fail(ErrorKind::Format, origin + ": " + e.what());
    }
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

void write_file(const std::filesystem::path& path, const Tensor& t, DType dtype) {
    write_bytes(path, encode(t, dtype));
}

Tensor read_file(const std::filesystem::path& path) {
    auto bytes = read_bytes(path);
    std::size_t used = 0;
    Tensor t = decode(bytes.data(), bytes.size(), path.string(), &used);
    if (used != bytes.size()) fail(ErrorKind::Format, path.string() + ": trailing bytes after TNSR payload");
    return t;
}

}  // namespace dfl::tnsr
