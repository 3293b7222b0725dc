#include "actnet/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace actnet {

using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");

namespace {

constexpr char kMagic[8] = {'A', 'C', 'T', 'N', 'E', 'T', 'C', 'K'};

std::uint64_t fnv1a(const char* data, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 0x100000001b3ULL;
    }
    return h;
}

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

class Cursor {
public:
    Cursor(const std::string& bytes, const std::string& source) : b_(bytes), src_(source) {}
    template <typename T>
    T take(const char* what) {
        need(sizeof(T), what);
        T v;
        std::memcpy(&v, b_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string take_bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string s = b_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return b_.size() - pos_; }
    [[noreturn]] void fail(const std::string& what) const { throw CheckpointError(src_, what); }

private:
    void need(std::size_t n, const char* what) const {
        if (remaining() < n) {
            fail(std::string("truncated while reading ") + what + " at byte " + std::to_string(pos_));
        }
    }
    const std::string& b_;
    const std::string& src_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const std::string& kind, const json& config, const ParameterSet& params) {
    json table = json::array();
    for (const auto& p : params.items()) table.push_back({{"name", p.name}, {"shape", p.value.shape()}});
    const std::string header = json{{"kind", kind}, {"config", config}, {"params", table}}.dump();
    std::string out(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, header.size());
    out += header;
    for (const auto& p : params.items())
        for (double v : p.value.data()) put<double>(out, v);
    put<std::uint64_t>(out, fnv1a(out.data(), out.size()));
    return out;
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source) {
    Cursor c(bytes, source);
    if (c.take_bytes(sizeof(kMagic), "magic") != std::string(kMagic, sizeof(kMagic))) c.fail("not a checkpoint (bad magic)");
    const auto version = c.take<std::uint32_t>("version");
    if (version != kCheckpointVersion) c.fail("unsupported checkpoint version " + std::to_string(version));
    const auto header_len = c.take<std::uint64_t>("header length");
    if (header_len > c.remaining()) c.fail("header length " + std::to_string(header_len) + " exceeds file size");
    if (bytes.size() < sizeof(std::uint64_t)) c.fail("truncated");
    const std::size_t body_end = bytes.size() - sizeof(std::uint64_t);
    std::uint64_t stored;
    std::memcpy(&stored, bytes.data() + body_end, sizeof(stored));
    const std::string header_text = c.take_bytes(header_len, "header");
    if (c.pos() > body_end) c.fail("truncated before checksum");
    if (fnv1a(bytes.data(), body_end) != stored) c.fail("checksum mismatch");

    json h;
    try {
        h = json::parse(header_text);
    } catch (const json::parse_error& e) {
        c.fail(std::string("header is not valid JSON: ") + e.what());
    }
    Checkpoint ck;
    if (!h.is_object() || !h.contains("kind") || !h["kind"].is_string()) c.fail("header: missing string field 'kind'");
    if (!h.contains("config") || !h["config"].is_object()) c.fail("header: missing object field 'config'");
    if (!h.contains("params") || !h["params"].is_array()) c.fail("header: missing array field 'params'");
    ck.kind = h["kind"].get<std::string>();
    ck.config = h["config"];
    std::size_t total = 0;
    std::vector<std::pair<std::string, Shape>> table;
    for (std::size_t i = 0; i < h["params"].size(); ++i) {
        const json& e = h["params"][i];
        const std::string at = "header: params/" + std::to_string(i);
        if (!e.is_object() || !e.contains("name") || !e["name"].is_string()) c.fail(at + ": missing name");
        if (!e.contains("shape") || !e["shape"].is_array()) c.fail(at + ": missing shape");
        Shape s;
        for (const auto& d : e["shape"]) {
            if (!d.is_number_unsigned()) c.fail(at + ": shape entries must be non-negative integers");
            s.push_back(d.get<std::size_t>());
        }
        total += shape_numel(s);
        table.emplace_back(e["name"].get<std::string>(), std::move(s));
    }
    if ((body_end - c.pos()) != total * sizeof(double)) {
        c.fail("payload holds " + std::to_string((body_end - c.pos()) / sizeof(double)) + " values, header declares " +
               std::to_string(total));
    }
    for (auto& [name, shape] : table) {
        std::vector<double> v(shape_numel(shape));
        for (double& x : v) x = c.take<double>("payload");
        ck.tensors.push_back({name, Tensor::from(shape, std::move(v))});
    }
    return ck;
}

void save_checkpoint(const std::string& path, const std::string& kind, const json& config, const ParameterSet& params) {
    const std::string bytes = encode_checkpoint(kind, config, params);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError(path, "cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError(path, "write failed");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(path, "cannot open checkpoint");
    std::stringstream ss;
    ss << in.rdbuf();
    return decode_checkpoint(ss.str(), path);
}

void restore_parameters(const Checkpoint& ckpt, ParameterSet& params) {
    auto& items = params.items();
    if (items.size() != ckpt.tensors.size()) {
        throw CheckpointError("restore", "checkpoint has " + std::to_string(ckpt.tensors.size()) + " tensors, model has " +
                                             std::to_string(items.size()));
    }
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto& t = ckpt.tensors[i];
        if (t.name != items[i].name) throw CheckpointError("restore", "expected '" + items[i].name + "', found '" + t.name + "'");
        if (t.value.shape() != items[i].value.shape()) {
            throw CheckpointError("restore", t.name + ": shape " + shape_str(t.value.shape()) + " does not match " +
                                                 shape_str(items[i].value.shape()));
        }
    }
    for (std::size_t i = 0; i < items.size(); ++i) {
        auto dst = items[i].value.mutable_data();
        const auto src = ckpt.tensors[i].value.data();
        std::copy(src.begin(), src.end(), dst.begin());
        items[i].m.assign(dst.size(), 0.0);
        items[i].v.assign(dst.size(), 0.0);
    }
}

}  // namespace actnet
