#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "readmit/ehr.hpp"
#include "readmit/embeddings.hpp"
#include "readmit/nn.hpp"

// The readmission network: embedded code groups run through a ConvLSTM whose
// ReLU'd hidden states are max-pooled over every step and position; the gap
// buckets run through an LSTM; both summaries are concatenated and classified
// by a ReLU dense layer and a sigmoid unit.
namespace readmit::model {

struct Hyperparameters {
    std::size_t n_filters = 22;
    std::size_t filter_length = 3;
    double dropout_rate = 0.3;  // after the first dense layer
    std::size_t dense_units = 1000;
    double l2_conv = 0.001;       // ConvLSTM input kernels
    double l2_recurrent = 0.1;    // ConvLSTM hidden kernels
    double recurrent_dropout = 0.2;       // ConvLSTM hidden state
    std::size_t lstm_units = 20;
    double lstm_recurrent_dropout = 0.1;  // gap LSTM hidden state
    std::size_t epochs = 19;
    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
    std::size_t max_codes_per_admission = 64;
    std::size_t embed_dim = 300;
    bool fine_tune_embeddings = false;
    std::uint64_t seed = 0;

    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    bool restore_best_val = false;
    bool reshuffle_codes_each_epoch = false;

    static Hyperparameters paper_30d();
    static Hyperparameters paper_180d();
    /// "paper-30d" or "paper-180d".
    static Hyperparameters preset(std::string_view name);

    void validate() const;
    bool operator==(const Hyperparameters&) const = default;
};

nlohmann::ordered_json to_json(const Hyperparameters& hp);
Hyperparameters hyperparameters_from_json(const nlohmann::json& j);

struct NetParams {
    nn::ConvLSTMCellParams convlstm;
    nn::LSTMCellParams gap_lstm;
    nn::DenseParams dense1;  // (n_filters + lstm_units) -> dense_units, ReLU
    nn::DenseParams dense2;  // dense_units -> 1, sigmoid
    emb::EmbeddingTable embedding;
    /// Bumped on every optimizer step; traces remember the version they saw.
    std::uint64_t version = 0;
};

NetParams zero_params(const Hyperparameters& hp, emb::EmbeddingTable embedding);
/// Glorot-uniform kernels, zero biases except forget gates at 1.
NetParams init_params(const Hyperparameters& hp, emb::EmbeddingTable embedding, std::uint64_t seed);

struct Gradients {
    nn::ConvLSTMCellParams convlstm;
    nn::LSTMCellParams gap_lstm;
    nn::DenseParams dense1;
    nn::DenseParams dense2;
    std::map<std::size_t, std::vector<double>> embedding_rows;  // sparse, fine-tuning only

    static Gradients zeros_like(const NetParams& params);
    void add(const Gradients& other);
    void scale(double factor);
};

/// Every trainable tensor with a stable dotted name. The embedding matrix is
/// included only when `with_embedding` is set.
std::vector<std::pair<std::string, nn::Tensor*>> named_tensors(NetParams& params, bool with_embedding = false);
std::vector<std::pair<std::string, const nn::Tensor*>> named_tensors(const Gradients& grads);

struct EncodedInstance {
    std::vector<nn::Tensor> code_steps;          // per admission: positions x embed_dim
    std::vector<std::vector<double>> gap_steps;  // per admission: one-hot over 6 gap categories
    std::vector<std::vector<std::ptrdiff_t>> rows;  // embedding row per position, -1 when not in vocab
    std::vector<std::size_t> lengths;               // non-padding positions per step
};

/// One ConvLSTM step per admission group; groups are truncated or zero-padded
/// to max_codes_per_admission rows.
EncodedInstance encode_instance(const ehr::EpisodeInstance& instance, const emb::EmbeddingTable& table,
                                const Hyperparameters& hp);

struct ForwardTrace {
    std::uint64_t params_version = 0;
    nn::Mode mode = nn::Mode::Eval;
    std::vector<nn::ConvLSTMStepCache> steps;
    nn::Tensor conv_recurrent_mask;  // positions x filters
    nn::MaxPoolResult pool;          // before any masking
    std::vector<bool> zeroed;        // filters forced to zero after pooling
    std::vector<nn::LSTMStepCache> gap_steps;
    std::vector<double> lstm_recurrent_mask;
    std::vector<double> gap_out;
    std::vector<double> concat;
    std::vector<double> hidden;
    std::vector<double> dense_mask;
    std::vector<double> hidden_dropped;
    double p1 = 0.5;
    std::vector<std::vector<std::ptrdiff_t>> rows;
};

struct Prediction {
    double p1 = 0.5;
    double p0 = 0.5;  // 1 - p1
    std::optional<ForwardTrace> trace;

    /// Ties at 0.5 go to label 1.
    int hard_label() const { return p1 >= 0.5 ? 1 : 0; }
};

struct ForwardOptions {
    nn::Mode mode = nn::Mode::Eval;
    std::uint64_t seed = 0;  // dropout masks, Train mode only
    /// Filters whose pooled output is forced to zero (empty = none).
    std::vector<bool> zero_filters;
    bool keep_trace = true;
};

Prediction forward(const NetParams& params, const EncodedInstance& encoded, const Hyperparameters& hp,
                   const ForwardOptions& options = {});

/// Eval-mode classifier head on a pooled vector and a gap-branch output.
double head_probability(const NetParams& params, std::span<const double> pooled, std::span<const double> gap_out);

/// Regularization term added to the data loss.
double l2_loss(const NetParams& params, const Hyperparameters& hp);

/// Reverse-mode gradient of bce-style loss L(p1) given dL/dp1, through the
/// traced forward pass. Adds the L2 gradients when `include_l2` is set.
/// Throws DataError if the trace was recorded against other parameters.
Gradients backward(const NetParams& params, const ForwardTrace& trace, double dloss_dp, const Hyperparameters& hp,
                   bool include_l2 = true);

/// Applies one Adam step and bumps params.version.
void apply_gradients(NetParams& params, nn::AdamState& state, const Gradients& grads, bool fine_tune_embeddings);

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0;
    double train_acc = 0;
    double val_loss = 0;
    double val_acc = 0;
};

struct TrainOptions {
    std::size_t threads = 1;
    std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
    NetParams params;
    std::vector<EpochRecord> history;
};

TrainResult train(const ehr::Cohort& train_set, const ehr::Cohort& val_set, const emb::EmbeddingTable& table,
                  const Hyperparameters& hp, const TrainOptions& options = {});

void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history);

/// Eval-mode forward using the embedding table carried by `params`.
Prediction predict(const NetParams& params, const ehr::EpisodeInstance& instance, const Hyperparameters& hp,
                   bool keep_trace = false);

struct CohortScore {
    double loss = 0;
    double accuracy = 0;
};

CohortScore score(const NetParams& params, const ehr::Cohort& cohort, const Hyperparameters& hp,
                  std::size_t threads = 1);

// Checkpoints: "CONVLSTM1D" magic, format version, hyperparameters, embedding
// table and named tensors, closed by a checksum. Round trips are bit-exact.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const NetParams& params, const Hyperparameters& hp, const std::filesystem::path& path);
std::pair<NetParams, Hyperparameters> load_checkpoint(const std::filesystem::path& path);

}  // namespace readmit::model
