#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "readmit/ehr.hpp"

// Code embeddings: pretrained token vectors with a deterministic policy for
// tokens the file does not cover.
namespace readmit::emb {

enum class OovPolicy { RandomFixed, Zero };

std::string_view to_string(OovPolicy p);
OovPolicy parse_oov_policy(std::string_view text);

/// Rewrites a token prefix after normalization, e.g. "DIAG_" -> "DIAG ".
struct PrefixRemap {
    std::string from;
    std::string to;
};

/// Maps "DIAG_x"/"PROC_x" file spellings onto the namespaced code tokens.
std::vector<PrefixRemap> default_remap();

class EmbeddingTable {
public:
    EmbeddingTable() = default;
    EmbeddingTable(std::size_t dim, OovPolicy policy, std::uint64_t oov_seed);

    std::size_t dim() const { return dim_; }
    std::size_t rows() const { return tokens_.size(); }
    OovPolicy oov_policy() const { return policy_; }
    std::uint64_t oov_seed() const { return oov_seed_; }
    const std::vector<std::string>& tokens() const { return tokens_; }
    const std::vector<double>& matrix() const { return matrix_; }
    std::vector<double>& matrix() { return matrix_; }

    /// Appends a row; returns false (and changes nothing) for a duplicate token.
    bool add(std::string token, std::span<const double> values);

    /// Row index of an in-vocabulary token, or -1.
    std::ptrdiff_t index_of(std::string_view token) const;
    std::span<const double> row(std::size_t i) const;
    std::span<double> row(std::size_t i);

    /// Stored row for known tokens, the OOV policy vector otherwise.
    void lookup_into(std::string_view token, std::span<double> out) const;

    bool operator==(const EmbeddingTable& other) const;

private:
    std::size_t dim_ = 0;
    OovPolicy policy_ = OovPolicy::RandomFixed;
    std::uint64_t oov_seed_ = 0;
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<double> matrix_;
};

struct LoadOptions {
    OovPolicy oov_policy = OovPolicy::RandomFixed;
    std::uint64_t oov_seed = 0;
    std::vector<PrefixRemap> remap = default_remap();
};

struct LoadStats {
    bool header = false;
    std::size_t rejected_lines = 0;
    std::size_t duplicate_tokens = 0;
};

EmbeddingTable load_embeddings(const std::filesystem::path& path, std::size_t expected_dim,
                               const LoadOptions& options = {}, LoadStats* stats = nullptr);

/// Writes "<count> <dim>" then one row per token; spaces inside tokens become '_'.
void save_embeddings(const EmbeddingTable& table, const std::filesystem::path& path);

std::vector<double> lookup(const EmbeddingTable& table, std::string_view token);

double cosine(std::span<const double> a, std::span<const double> b);

/// Top-k rows by cosine similarity to `token`, excluding the token itself,
/// descending with lexicographic tie-break. Throws DataError for unknown tokens.
std::vector<std::pair<std::string, double>> nearest(const EmbeddingTable& table, std::string_view token,
                                                    std::size_t k);

/// Every distinct code token in the instances, sorted.
std::vector<std::string> vocabulary_of(const std::vector<ehr::EpisodeInstance>& instances);

/// Seeded Gaussian rows (standard deviation `scale`) for the given tokens.
EmbeddingTable random_init(const std::vector<std::string>& tokens, std::size_t dim, std::uint64_t seed,
                           double scale = 0.05, OovPolicy policy = OovPolicy::RandomFixed);

}  // namespace readmit::emb
