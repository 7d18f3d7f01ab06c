#include "maod/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace maod {

Parameter& ModelBundle::add(const std::string& name, Tensor value, bool frozen) {
    require(!name.empty(), "parameter name must not be empty");
    require(!value.empty(), "parameter '" + name + "' must not be empty");
    auto [it, inserted] = params_.try_emplace(name);
    require(inserted, "duplicate parameter name '" + name + "'");
    it->second.name = name;
    it->second.value = std::move(value);
    it->second.frozen = frozen;
    return it->second;
}

Parameter& ModelBundle::at(const std::string& name) {
    auto it = params_.find(name);
    require(it != params_.end(), "unknown parameter '" + name + "'");
    return it->second;
}

const Parameter& ModelBundle::at(const std::string& name) const {
    auto it = params_.find(name);
    require(it != params_.end(), "unknown parameter '" + name + "'");
    return it->second;
}

std::vector<Parameter*> ModelBundle::match_prefix(const std::string& prefix) {
    std::vector<Parameter*> out;
    for (auto it = params_.lower_bound(prefix); it != params_.end(); ++it) {
        if (it->first.compare(0, prefix.size(), prefix) != 0) break;
        out.push_back(&it->second);
    }
    return out;
}

void ModelBundle::freeze_prefix(const std::string& prefix) {
    auto matched = match_prefix(prefix);
    require(!matched.empty(), "freeze prefix '" + prefix + "' matches no parameter");
    for (Parameter* p : matched) {
        p->frozen = true;
        p->zero_grad();
    }
}

std::size_t ModelBundle::total_params() const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_) n += p.value.numel();
    return n;
}

std::size_t ModelBundle::trainable_params() const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_)
        if (!p.frozen) n += p.value.numel();
    return n;
}

std::string ModelBundle::checksum(const std::string& prefix) const {
    std::string blob;
    for (const auto& [name, p] : params_) {
        if (name.compare(0, prefix.size(), prefix) != 0) continue;
        blob += name;
        blob.push_back('\0');
        const auto* bytes = reinterpret_cast<const char*>(p.value.data());
        blob.append(bytes, p.value.numel() * sizeof(double));
    }
    return sha256_hex(blob);
}

void ModelBundle::set_fingerprint(std::vector<std::uint8_t> fp) {
    require(fp.size() == 32, strfmt("fingerprint must be 32 bytes, got %zu", fp.size()));
    fingerprint_ = std::move(fp);
}

ModelBundle ModelBundle::subset(const std::string& prefix) const {
    ModelBundle out;
    out.fingerprint_ = fingerprint_;
    for (const auto& [name, p] : params_)
        if (name.compare(0, prefix.size(), prefix) == 0) out.add(name, p.value, p.frozen);
    require(out.size() > 0, "subset prefix '" + prefix + "' matches no parameter");
    return out;
}

void ModelBundle::merge(const ModelBundle& other) {
    if (!other.fingerprint_.empty()) {
        if (fingerprint_.empty())
            fingerprint_ = other.fingerprint_;
        else
            require(fingerprint_ == other.fingerprint_,
                    "architecture fingerprint mismatch between bundles");
    }
    for (const auto& [name, p] : other.params_) add(name, p.value, p.frozen);
}

namespace {

int conv_fan_in(const ConvSpec& spec) {
    switch (spec.mode) {
        case ConvMode::Depthwise: return spec.kernel_size * spec.kernel_size;
        case ConvMode::Pointwise: return spec.in_channels;
        case ConvMode::Standard: return spec.in_channels * spec.kernel_size * spec.kernel_size;
    }
    throw InternalError("unhandled conv mode");
}

Tensor uniform_init(const Shape& shape, int fan_in, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    Tensor t(shape);
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-limit, limit);
    return t;
}

}  // namespace

Tensor init_conv_weights(const ConvSpec& spec, Rng& rng) {
    spec.validate();
    return uniform_init(spec.weight_shape(), conv_fan_in(spec), rng);
}

Tensor init_linear_weights(int out_dim, int in_dim, Rng& rng) {
    require(out_dim >= 1 && in_dim >= 1, "linear dims must be positive");
    return uniform_init({out_dim, in_dim}, in_dim, rng);
}

namespace {

constexpr char kMagic[4] = {'M', 'A', 'O', 'D'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
    put_u64(out, std::bit_cast<std::uint64_t>(v));
}

struct ByteReader {
    const std::vector<std::uint8_t>& buf;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) {
        require(pos + n <= buf.size(), strfmt("truncated checkpoint: expected %s", what));
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return buf[pos++];
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = static_cast<std::uint16_t>(buf[pos] | (buf[pos + 1] << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
    bool done() const { return pos == buf.size(); }
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ModelBundle& bundle) {
    require(bundle.fingerprint().size() == 32,
            "cannot encode a bundle without an architecture fingerprint");
    require(bundle.size() > 0, "cannot encode an empty bundle");
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u16(out, kVersion);
    out.insert(out.end(), bundle.fingerprint().begin(), bundle.fingerprint().end());
    for (const auto& [name, p] : bundle.entries()) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        out.push_back(p.frozen ? 1 : 0);
        put_u32(out, static_cast<std::uint32_t>(p.value.rank()));
        for (int d = 0; d < p.value.rank(); ++d)
            put_u64(out, static_cast<std::uint64_t>(p.value.dim(d)));
        for (std::size_t i = 0; i < p.value.numel(); ++i) put_f64(out, p.value[i]);
    }
    return out;
}

ModelBundle decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    ByteReader r{bytes};
    r.need(4, "magic");
    require(std::memcmp(bytes.data(), kMagic, 4) == 0, "bad checkpoint magic");
    r.pos = 4;
    const std::uint16_t version = r.u16("version");
    require(version == kVersion, strfmt("unsupported checkpoint version %u", version));
    r.need(32, "fingerprint");
    std::vector<std::uint8_t> fp(bytes.begin() + static_cast<long>(r.pos),
                                 bytes.begin() + static_cast<long>(r.pos) + 32);
    r.pos += 32;

    ModelBundle bundle;
    bundle.set_fingerprint(std::move(fp));
    while (!r.done()) {
        const std::uint32_t name_len = r.u32("name length");
        require(name_len >= 1 && name_len <= 4096, "implausible parameter name length");
        r.need(name_len, "name");
        std::string name(reinterpret_cast<const char*>(bytes.data()) + r.pos, name_len);
        r.pos += name_len;
        const std::uint8_t frozen = r.u8("frozen flag");
        require(frozen <= 1, "frozen flag must be 0 or 1");
        const std::uint32_t rank = r.u32("rank");
        require(rank >= 1 && rank <= 8, strfmt("implausible parameter rank %u", rank));
        Shape shape;
        std::size_t numel = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            const std::uint64_t dim = r.u64("dim");
            require(dim >= 1 && dim <= (1u << 24), "implausible parameter dimension");
            shape.push_back(static_cast<int>(dim));
            numel *= dim;
        }
        require(numel <= (1u << 28), "implausible parameter size");
        std::vector<double> data(numel);
        for (std::size_t i = 0; i < numel; ++i) data[i] = r.f64("values");
        require(!bundle.has(name), "duplicate parameter name in checkpoint: '" + name + "'");
        bundle.add(name, Tensor(std::move(shape), std::move(data)), frozen == 1);
    }
    require(bundle.size() > 0, "checkpoint contains no parameters");
    return bundle;
}

void save_checkpoint(const ModelBundle& bundle, const std::string& path) {
    const auto bytes = encode_checkpoint(bundle);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(f.good(), "cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<long>(bytes.size()));
    f.flush();
    require(f.good(), "write to '" + path + "' failed");
}

ModelBundle load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "cannot open checkpoint '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    require(!f.bad(), "read from '" + path + "' failed");
    return decode_checkpoint(bytes);
}

}  // namespace maod
