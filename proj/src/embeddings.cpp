#include "readmit/embeddings.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "readmit/error.hpp"
#include "readmit/random.hpp"

namespace readmit::emb {

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        const std::size_t start = i;
        while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        if (i > start) out.push_back(line.substr(start, i - start));
    }
    return out;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc{} && res.ptr == s.data() + s.size();
}

std::string apply_remap(std::string token, const std::vector<PrefixRemap>& remap) {
    for (const auto& r : remap) {
        if (!r.from.empty() && token.rfind(r.from, 0) == 0) return r.to + token.substr(r.from.size());
    }
    return token;
}

}  // namespace

std::string_view to_string(OovPolicy p) { return p == OovPolicy::Zero ? "ZERO" : "RANDOM_FIXED"; }

OovPolicy parse_oov_policy(std::string_view text) {
    if (text == "ZERO") return OovPolicy::Zero;
    if (text == "RANDOM_FIXED") return OovPolicy::RandomFixed;
    throw DataError("unknown OOV policy '" + std::string(text) + "'");
}

std::vector<PrefixRemap> default_remap() { return {{"DIAG_", "DIAG "}, {"PROC_", "PROC "}}; }

EmbeddingTable::EmbeddingTable(std::size_t dim, OovPolicy policy, std::uint64_t oov_seed)
    : dim_(dim), policy_(policy), oov_seed_(oov_seed) {
    if (dim == 0) throw DataError("embedding dimension must be positive");
}

bool EmbeddingTable::add(std::string token, std::span<const double> values) {
    if (values.size() != dim_) throw ShapeError("embedding row has wrong length");
    if (index_.contains(token)) return false;
    index_.emplace(token, tokens_.size());
    tokens_.push_back(std::move(token));
    matrix_.insert(matrix_.end(), values.begin(), values.end());
    return true;
}

std::ptrdiff_t EmbeddingTable::index_of(std::string_view token) const {
    const auto it = index_.find(std::string(token));
    return it == index_.end() ? -1 : static_cast<std::ptrdiff_t>(it->second);
}

std::span<const double> EmbeddingTable::row(std::size_t i) const {
    return {matrix_.data() + i * dim_, dim_};
}

std::span<double> EmbeddingTable::row(std::size_t i) { return {matrix_.data() + i * dim_, dim_}; }

void EmbeddingTable::lookup_into(std::string_view token, std::span<double> out) const {
    if (out.size() != dim_) throw ShapeError("lookup buffer has wrong length");
    if (const auto i = index_of(token); i >= 0) {
        const auto r = row(static_cast<std::size_t>(i));
        std::copy(r.begin(), r.end(), out.begin());
        return;
    }
    if (policy_ == OovPolicy::Zero) {
        std::fill(out.begin(), out.end(), 0.0);
        return;
    }
    rng::Engine e(rng::derive(oov_seed_, rng::fnv1a(token)));
    double norm = 0;
    for (auto& v : out) {
        v = rng::normal(e);
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : out) v /= norm;
}

bool EmbeddingTable::operator==(const EmbeddingTable& o) const {
    return dim_ == o.dim_ && policy_ == o.policy_ && oov_seed_ == o.oov_seed_ && tokens_ == o.tokens_ &&
           matrix_ == o.matrix_;
}

EmbeddingTable load_embeddings(const std::filesystem::path& path, std::size_t expected_dim,
                               const LoadOptions& options, LoadStats* stats) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open embedding file " + path.string());
    LoadStats local;
    LoadStats& st = stats ? *stats : local;
    st = {};

    EmbeddingTable table(expected_dim, options.oov_policy, options.oov_seed);
    std::map<std::size_t, std::size_t> arity_counts;
    std::vector<double> values(expected_dim);
    std::string line;
    bool first = true;
    bool any_line = false;
    while (std::getline(in, line)) {
        const auto fields = split_ws(line);
        if (fields.empty()) continue;
        any_line = true;
        if (first) {
            first = false;
            std::size_t count = 0, dim = 0;
            if (fields.size() == 2 && parse_number(fields[0], count) && parse_number(fields[1], dim)) {
                st.header = true;
                if (dim != expected_dim)
                    throw DataError(path.string() + ": header declares dimension " + std::to_string(dim) +
                                    ", expected " + std::to_string(expected_dim));
                continue;
            }
        }
        ++arity_counts[fields.size() - 1];
        bool ok = fields.size() == expected_dim + 1;
        for (std::size_t i = 0; ok && i < expected_dim; ++i) ok = parse_number(fields[i + 1], values[i]);
        if (!ok) {
            ++st.rejected_lines;
            continue;
        }
        auto token = apply_remap(ehr::normalize_code(fields[0]), options.remap);
        if (token.empty() || !table.add(std::move(token), values)) ++st.duplicate_tokens;
    }
    if (!any_line) throw DataError(path.string() + ": empty embedding file");
    if (table.rows() == 0) {
        const auto common = std::max_element(arity_counts.begin(), arity_counts.end(),
                                             [](auto& a, auto& b) { return a.second < b.second; });
        throw DataError(path.string() + ": vectors have dimension " + std::to_string(common->first) +
                        ", expected " + std::to_string(expected_dim));
    }
    return table;
}

void save_embeddings(const EmbeddingTable& table, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << table.rows() << ' ' << table.dim() << '\n';
    char buf[64];
    for (std::size_t i = 0; i < table.rows(); ++i) {
        std::string tok = table.tokens()[i];
        std::replace(tok.begin(), tok.end(), ' ', '_');
        out << tok;
        for (double v : table.row(i)) {
            const auto res = std::to_chars(buf, buf + sizeof buf, v);
            out << ' ' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
        }
        out << '\n';
    }
}

std::vector<double> lookup(const EmbeddingTable& table, std::string_view token) {
    std::vector<double> out(table.dim());
    table.lookup_into(token, out);
    return out;
}

double cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("cosine of vectors with different lengths");
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0 || nb == 0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<std::pair<std::string, double>> nearest(const EmbeddingTable& table, std::string_view token,
                                                    std::size_t k) {
    const auto q = table.index_of(token);
    if (q < 0) throw DataError("token '" + std::string(token) + "' is not in the embedding vocabulary");
    std::vector<std::pair<std::string, double>> all;
    all.reserve(table.rows());
    const auto qrow = table.row(static_cast<std::size_t>(q));
    for (std::size_t i = 0; i < table.rows(); ++i) {
        if (static_cast<std::ptrdiff_t>(i) == q) continue;
        all.emplace_back(table.tokens()[i], cosine(qrow, table.row(i)));
    }
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (all.size() > k) all.resize(k);
    return all;
}

std::vector<std::string> vocabulary_of(const std::vector<ehr::EpisodeInstance>& instances) {
    std::set<std::string> all;
    for (const auto& e : instances)
        for (const auto& g : e.groups) all.insert(g.begin(), g.end());
    return {all.begin(), all.end()};
}

EmbeddingTable random_init(const std::vector<std::string>& tokens, std::size_t dim, std::uint64_t seed,
                           double scale, OovPolicy policy) {
    EmbeddingTable table(dim, policy, seed);
    std::vector<double> row(dim);
    for (const auto& tok : tokens) {
        rng::Engine e(rng::derive(seed, rng::fnv1a(tok), 0x656d62ULL));
        for (auto& v : row) v = scale * rng::normal(e);
        table.add(tok, row);
    }
    return table;
}

}  // namespace readmit::emb
