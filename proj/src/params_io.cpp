#include "params_io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

namespace sasnet {

namespace {

constexpr char kMagic[4] = {'S', 'A', 'S', 'N'};
constexpr std::uint32_t kVersion = 1;

void put_u16(std::string& buf, std::uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& buf, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class Reader {
public:
    Reader(const std::filesystem::path& path) : path_(path.string()) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open " + path_);
        buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }

    void need(std::size_t n, const char* what) {
        if (pos_ + n > buf_.size())
            throw FormatError(path_ + ": truncated file while reading " + std::string(what));
    }

    void raw(void* dst, std::size_t n, const char* what) {
        need(n, what);
        std::memcpy(dst, buf_.data() + pos_, n);
        pos_ += n;
    }

    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = static_cast<std::uint8_t>(buf_[pos_]) |
                          (static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf_[pos_ + 1])) << 8);
        pos_ += 2;
        return v;
    }

    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<std::uint8_t>(buf_[pos_++]);
    }

    double f64(const char* what) {
        need(8, what);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i)
            bits |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf_[pos_ + i])) << (8 * i);
        pos_ += 8;
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }

    bool done() const { return pos_ == buf_.size(); }
    const std::string& path() const { return path_; }

private:
    std::string path_;
    std::string buf_;
    std::size_t pos_ = 0;
};

} // namespace

void write_tensor_file(const std::filesystem::path& path,
                       const std::vector<NamedTensor>& tensors) {
    std::string buf;
    buf.append(kMagic, 4);
    put_u32(buf, kVersion);
    put_u32(buf, static_cast<std::uint32_t>(tensors.size()));
    for (const NamedTensor& t : tensors) {
        put_u16(buf, static_cast<std::uint16_t>(t.name.size()));
        buf.append(t.name);
        buf.push_back(static_cast<char>(t.dims.size()));
        std::size_t n = 1;
        for (int d : t.dims) {
            put_u32(buf, static_cast<std::uint32_t>(d));
            n *= static_cast<std::size_t>(d);
        }
        if (n != t.data.size())
            throw FormatError("tensor " + t.name + " data does not match its extents");
        for (double v : t.data) put_f64(buf, v);
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("short write to " + path.string());
}

std::vector<NamedTensor> read_tensor_file(const std::filesystem::path& path) {
    Reader r(path);
    char magic[4];
    r.raw(magic, 4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError(r.path() + ": bad magic, not a SASN weight file");
    const std::uint32_t version = r.u32("version");
    if (version != kVersion)
        throw FormatError(r.path() + ": unsupported version " + std::to_string(version));
    const std::uint32_t count = r.u32("tensor count");

    std::vector<NamedTensor> tensors;
    tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        const std::uint16_t name_len = r.u16("name length");
        t.name.resize(name_len);
        r.raw(t.name.data(), name_len, "name");
        const std::uint8_t rank = r.u8("rank");
        if (rank > 4)
            throw FormatError(r.path() + ": tensor " + t.name + " has rank " +
                              std::to_string(rank) + " > 4");
        std::size_t n = 1;
        for (int d = 0; d < rank; ++d) {
            const std::uint32_t extent = r.u32("extent");
            if (extent < 1 || extent > (1u << 24))
                throw FormatError(r.path() + ": tensor " + t.name + " has invalid extent " +
                                  std::to_string(extent));
            t.dims.push_back(static_cast<int>(extent));
            n *= extent;
        }
        t.data.resize(n);
        for (std::size_t k = 0; k < n; ++k) t.data[k] = r.f64("tensor data");
        tensors.push_back(std::move(t));
    }
    if (!r.done())
        throw FormatError(r.path() + ": trailing data after last tensor");
    return tensors;
}

void save_params(const SasNetParams& p, const std::filesystem::path& path) {
    validate_params(p);
    std::vector<NamedTensor> ts;
    auto add = [&](const std::string& name, const Tensor& t) {
        ts.push_back({name, t.dims(), std::vector<double>(t.data(), t.data() + t.size())});
    };
    for (int l = 0; l < 5; ++l) {
        const std::string base = "conv" + std::to_string(l + 1);
        add(base + ".w", p.conv_w[l]);
        add(base + ".b", p.conv_b[l]);
    }
    add("att.w", p.att_w);
    ts.push_back({"response.scale", {}, {p.response_scale}});
    ts.push_back({"response.bias", {}, {p.response_bias}});
    write_tensor_file(path, ts);
}

SasNetParams load_params(const std::filesystem::path& path) {
    const std::vector<NamedTensor> ts = read_tensor_file(path);
    std::map<std::string, const NamedTensor*> by_name;
    for (const NamedTensor& t : ts) {
        if (!by_name.emplace(t.name, &t).second)
            throw FormatError(path.string() + ": duplicate tensor " + t.name);
    }

    auto take = [&](const std::string& name, const std::vector<int>& want) {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw FormatError(path.string() + ": missing tensor " + name);
        const NamedTensor& t = *it->second;
        if (t.dims != want)
            throw FormatError(path.string() + ": " + name + " has shape " +
                              Tensor(t.dims.empty() ? std::vector<int>{1} : t.dims).shape_str() +
                              ", expected " + Tensor(want).shape_str());
        Tensor out(want);
        for (std::size_t i = 0; i < t.data.size(); ++i) out[i] = t.data[i];
        return out;
    };
    auto take_scalar = [&](const std::string& name) {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw FormatError(path.string() + ": missing tensor " + name);
        if (!it->second->dims.empty() || it->second->data.size() != 1)
            throw FormatError(path.string() + ": " + name + " must be a scalar");
        return it->second->data[0];
    };

    SasNetParams p;
    for (int l = 0; l < 5; ++l) {
        const ConvSpec& s = kConvSpecs[l];
        const std::string base = "conv" + std::to_string(l + 1);
        p.conv_w[l] = take(base + ".w", {s.out_ch, s.in_ch, s.kernel, s.kernel});
        p.conv_b[l] = take(base + ".b", {s.out_ch});
    }
    p.att_w = take("att.w", {kFeatureChannels, kAttentionGrid, kAttentionGrid});
    p.response_scale = take_scalar("response.scale");
    p.response_bias = take_scalar("response.bias");
    if (by_name.size() != 13)
        throw FormatError(path.string() + ": unexpected extra tensors in weight file");
    validate_params(p);
    return p;
}

} // namespace sasnet
