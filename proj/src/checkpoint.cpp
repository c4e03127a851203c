#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "readmit/error.hpp"
#include "readmit/model.hpp"
#include "readmit/random.hpp"

namespace readmit::model {

static_assert(std::endian::native == std::endian::little, "checkpoints are written little-endian");

namespace {

constexpr std::string_view kMagic = "CONVLSTM1D";

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* c = static_cast<const char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    void u8(std::uint8_t v) { bytes(&v, 1); }
    void u32(std::uint32_t v) { bytes(&v, 4); }
    void u64(std::uint64_t v) { bytes(&v, 8); }
    void str(std::string_view s) {
        u64(s.size());
        bytes(s.data(), s.size());
    }
    void doubles(std::span<const double> v) { bytes(v.data(), v.size() * sizeof(double)); }
    std::string& buffer() { return buf_; }

private:
    std::string buf_;
};

class Reader {
public:
    Reader(std::string_view data, std::string path) : data_(data), path_(std::move(path)) {}

    void bytes(void* p, std::size_t n) {
        if (n > data_.size() - pos_) fail("unexpected end of file");
        std::memcpy(p, data_.data() + pos_, n);
        pos_ += n;
    }
    std::uint8_t u8() {
        std::uint8_t v;
        bytes(&v, 1);
        return v;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        bytes(&v, 4);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        bytes(&v, 8);
        return v;
    }
    std::string str() {
        const auto n = u64();
        if (n > data_.size() - pos_) fail("string length exceeds file size");
        std::string s(data_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    void doubles(std::span<double> v) {
        if (v.size() > (data_.size() - pos_) / sizeof(double)) fail("tensor data exceeds file size");
        bytes(v.data(), v.size() * sizeof(double));
    }
    std::size_t remaining() const { return data_.size() - pos_; }
    [[noreturn]] void fail(const std::string& what) const {
        throw FormatError(path_ + ": corrupt checkpoint: " + what + " (offset " + std::to_string(pos_) + ")");
    }

private:
    std::string_view data_;
    std::string path_;
    std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const NetParams& params, const Hyperparameters& hp, const std::filesystem::path& path) {
    Writer w;
    w.bytes(kMagic.data(), kMagic.size());
    w.u32(kCheckpointVersion);
    w.str(to_json(hp).dump());

    const auto& table = params.embedding;
    w.u64(table.dim());
    w.u8(table.oov_policy() == emb::OovPolicy::Zero ? 1 : 0);
    w.u64(table.oov_seed());
    w.u64(table.rows());
    for (const auto& tok : table.tokens()) w.str(tok);
    w.doubles(table.matrix());

    w.u64(params.version);
    auto tensors = named_tensors(const_cast<NetParams&>(params));
    w.u64(tensors.size());
    for (const auto& [name, t] : tensors) {
        w.str(name);
        w.u64(t->rank());
        for (auto d : t->shape()) w.u64(d);
        w.doubles(t->values());
    }
    w.u64(rng::fnv1a(w.buffer()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    if (!out) throw IoError("failed writing " + path.string());
}

std::pair<NetParams, Hyperparameters> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string where = path.string();

    if (data.size() < kMagic.size() || std::string_view(data).substr(0, kMagic.size()) != kMagic)
        throw FormatError(where + ": not a checkpoint (missing CONVLSTM1D magic)");
    if (data.size() < kMagic.size() + 4 + 8) throw FormatError(where + ": truncated checkpoint");
    {
        std::uint32_t version;
        std::memcpy(&version, data.data() + kMagic.size(), 4);
        if (version != kCheckpointVersion)
            throw FormatError(where + ": checkpoint format version " + std::to_string(version) +
                              " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
    }
    const std::string_view body(data.data(), data.size() - 8);
    std::uint64_t stored;
    std::memcpy(&stored, data.data() + body.size(), 8);
    if (rng::fnv1a(body) != stored) throw FormatError(where + ": checkpoint checksum mismatch (truncated or corrupt)");

    Reader r(body, where);
    std::string magic(kMagic.size(), '\0');
    r.bytes(magic.data(), magic.size());
    r.u32();
    Hyperparameters hp;
    try {
        hp = hyperparameters_from_json(nlohmann::json::parse(r.str()));
    } catch (const nlohmann::json::exception& e) {
        r.fail(std::string("hyperparameter block: ") + e.what());
    } catch (const DataError& e) {
        r.fail(std::string("hyperparameter block: ") + e.what());
    }

    const auto dim = r.u64();
    const auto policy = r.u8() == 1 ? emb::OovPolicy::Zero : emb::OovPolicy::RandomFixed;
    const auto oov_seed = r.u64();
    const auto rows = r.u64();
    if (dim != hp.embed_dim) r.fail("embedding dimension " + std::to_string(dim) + " != embed_dim");
    if (rows > r.remaining()) r.fail("embedding row count exceeds file size");
    std::vector<std::string> tokens(rows);
    for (auto& t : tokens) t = r.str();
    std::vector<double> matrix(rows * dim);
    r.doubles(matrix);
    emb::EmbeddingTable table(dim, policy, oov_seed);
    for (std::size_t i = 0; i < rows; ++i)
        if (!table.add(tokens[i], std::span<const double>(matrix).subspan(i * dim, dim)))
            r.fail("duplicate embedding token '" + tokens[i] + "'");

    NetParams params = zero_params(hp, std::move(table));
    params.version = r.u64();
    auto slots = named_tensors(params);
    const auto count = r.u64();
    if (count != slots.size())
        r.fail("expected " + std::to_string(slots.size()) + " tensors, found " + std::to_string(count));
    for (auto& [name, t] : slots) {
        const auto got = r.str();
        if (got != name) r.fail("expected tensor '" + name + "', found '" + got + "'");
        const auto rank = r.u64();
        if (rank > 8) r.fail("tensor '" + name + "' has implausible rank");
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = r.u64();
        if (shape != t->shape())
            r.fail("tensor '" + name + "' has shape " + nn::shape_string(shape) + ", expected " +
                   nn::shape_string(t->shape()));
        r.doubles(t->values());
    }
    if (r.remaining() != 0) r.fail("trailing bytes after tensors");
    return {std::move(params), hp};
}

}  // namespace readmit::model
