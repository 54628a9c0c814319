#include "xlearner/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>
#include <zlib.h>

#include "xlearner/errors.hpp"

namespace xl {

namespace {

constexpr char kMagic[8] = {'X', 'L', 'C', 'K', 'P', 'T', '0', '1'};

class Writer {
public:
    template <class V>
    void pod(V v) {
        const auto* p = reinterpret_cast<const char*>(&v);
        buf.insert(buf.end(), p, p + sizeof(V));
    }
    void bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const char*>(data);
        buf.insert(buf.end(), p, p + n);
    }
    std::vector<char> buf;
};

class Reader {
public:
    explicit Reader(const std::vector<char>& b, std::size_t end) : buf_(b), end_(end) {}
    template <class V>
    V pod() {
        V v;
        bytes(&v, sizeof(V));
        return v;
    }
    void bytes(void* out, std::size_t n) {
        if (n > end_ - pos_) throw ChecksumError("checkpoint is truncated");
        std::memcpy(out, buf_.data() + pos_, n);
        pos_ += n;
    }
    std::string str(std::size_t n) {
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }
    bool at_end() const { return pos_ == end_; }

private:
    const std::vector<char>& buf_;
    std::size_t end_, pos_ = 0;
};

std::uint32_t crc_of(const char* data, std::size_t n) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks.
    while (n > 0) {
        const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
        data += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

}  // namespace

const Tensor<float>& CheckpointBundle::get(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw IoError("checkpoint has no tensor '" + name + "'");
    return it->second;
}

void save_checkpoint(const CheckpointBundle& bundle, const std::filesystem::path& path) {
    nlohmann::json header{{"config_hash", bundle.config_hash},
                          {"stage", bundle.stage},
                          {"step", bundle.step},
                          {"rng_states", bundle.rng_states},
                          {"meta", nlohmann::json::parse(bundle.meta)}};
    const std::string h = header.dump();

    Writer w;
    w.bytes(kMagic, sizeof(kMagic));
    w.pod<std::uint32_t>(bundle.schema_version);
    w.pod<std::uint64_t>(h.size());
    w.bytes(h.data(), h.size());
    w.pod<std::uint64_t>(bundle.tensors.size());
    for (const auto& [name, t] : bundle.tensors) {
        w.pod<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
        w.bytes(name.data(), name.size());
        w.pod<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) w.pod<std::uint64_t>(d);
        w.bytes(t.data(), t.numel() * sizeof(float));
    }
    w.pod<std::uint32_t>(crc_of(w.buf.data(), w.buf.size()));

    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write checkpoint " + tmp.string());
        out.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
        out.flush();
        if (!out) throw IoError("failed writing checkpoint " + tmp.string() + " (disk full?)");
    }
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

CheckpointBundle load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < sizeof(kMagic) + 4 || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
        if (buf.size() >= sizeof(kMagic) && std::memcmp(buf.data(), kMagic, 6) == 0)
            throw SchemaError("unsupported checkpoint container " + path.string());
        throw ChecksumError("not a checkpoint file (bad magic or truncated): " + path.string());
    }
    std::uint32_t stored;
    std::memcpy(&stored, buf.data() + buf.size() - 4, 4);
    if (stored != crc_of(buf.data(), buf.size() - 4))
        throw ChecksumError("checkpoint checksum mismatch (corrupt or truncated): " + path.string());

    Reader r(buf, buf.size() - 4);
    char magic[8];
    r.bytes(magic, 8);
    CheckpointBundle b;
    b.schema_version = r.pod<std::uint32_t>();
    if (b.schema_version != CheckpointBundle::kSchemaVersion)
        throw SchemaError("checkpoint schema " + std::to_string(b.schema_version) + " is not supported (expected " +
                          std::to_string(CheckpointBundle::kSchemaVersion) + ")");
    const auto hlen = r.pod<std::uint64_t>();
    const auto header = nlohmann::json::parse(r.str(hlen));
    b.config_hash = header.at("config_hash").get<std::string>();
    b.stage = header.at("stage").get<std::string>();
    b.step = header.at("step").get<std::uint64_t>();
    b.rng_states = header.at("rng_states").get<std::map<std::string, std::string>>();
    b.meta = header.at("meta").dump();
    const auto count = r.pod<std::uint64_t>();
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto nlen = r.pod<std::uint32_t>();
        std::string name = r.str(nlen);
        const auto rank = r.pod<std::uint32_t>();
        Shape shape(rank);
        for (auto& d : shape) d = r.pod<std::uint64_t>();
        Tensor<float> t(shape);
        r.bytes(t.data(), t.numel() * sizeof(float));
        b.tensors.emplace(std::move(name), std::move(t));
    }
    if (!r.at_end()) throw ChecksumError("trailing bytes in checkpoint " + path.string());
    return b;
}

void check_config_hash(const CheckpointBundle& bundle, const std::string& expected_hash, bool force) {
    if (bundle.config_hash == expected_hash || force) return;
    throw ConfigMismatchError("checkpoint was written for config " + bundle.config_hash + " but the current config is " +
                              expected_hash + "; pass --force to load it anyway");
}

void store_parameters(CheckpointBundle& bundle, const nn::ParamList<float>& list, const std::string& prefix) {
    for (const auto& p : list.params) bundle.tensors[prefix + p.name] = p.var.value();
    for (const auto& b : list.buffers) bundle.tensors[prefix + b.name] = *b.tensor;
}

void load_parameters(const CheckpointBundle& bundle, nn::ParamList<float>& list, const std::string& prefix) {
    auto copy = [&](const std::string& name, Tensor<float>& dst) {
        const auto& src = bundle.get(prefix + name);
        if (src.shape() != dst.shape())
            throw IoError("checkpoint tensor '" + prefix + name + "' has shape " + shape_str(src.shape()) +
                          ", model expects " + shape_str(dst.shape()));
        dst = src;
    };
    for (auto& p : list.params) copy(p.name, p.var.mutable_value());
    for (auto& b : list.buffers) copy(b.name, *b.tensor);
}

}  // namespace xl
