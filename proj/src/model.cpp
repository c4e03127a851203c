#include "readmit/model.hpp"

#include <algorithm>
#include <cmath>

#include "readmit/error.hpp"
#include "readmit/random.hpp"

namespace readmit::model {

using nn::Tensor;

Hyperparameters Hyperparameters::paper_30d() {
    Hyperparameters hp;
    hp.n_filters = 22;
    hp.filter_length = 3;
    hp.dropout_rate = 0.3;
    hp.dense_units = 1000;
    hp.l2_conv = 0.001;
    hp.l2_recurrent = 0.1;
    hp.recurrent_dropout = 0.2;
    hp.lstm_units = 20;
    hp.lstm_recurrent_dropout = 0.1;
    hp.epochs = 19;
    return hp;
}

Hyperparameters Hyperparameters::paper_180d() {
    Hyperparameters hp;
    hp.n_filters = 23;
    hp.filter_length = 3;
    hp.dropout_rate = 0.1;
    hp.dense_units = 700;
    hp.l2_conv = 0.01;
    hp.l2_recurrent = 0.001;
    hp.recurrent_dropout = 0.2;
    hp.lstm_units = 30;
    hp.lstm_recurrent_dropout = 0.1;
    hp.epochs = 30;
    return hp;
}

Hyperparameters Hyperparameters::preset(std::string_view name) {
    if (name == "paper-30d") return paper_30d();
    if (name == "paper-180d") return paper_180d();
    throw DataError("unknown preset '" + std::string(name) + "' (expected paper-30d or paper-180d)");
}

void Hyperparameters::validate() const {
    auto positive = [](std::size_t v, const char* what) {
        if (v == 0) throw DataError(std::string(what) + " must be positive");
    };
    positive(n_filters, "n_filters");
    positive(filter_length, "filter_length");
    positive(dense_units, "dense_units");
    positive(lstm_units, "lstm_units");
    positive(batch_size, "batch_size");
    positive(max_codes_per_admission, "max_codes_per_admission");
    positive(embed_dim, "embed_dim");
    if (filter_length % 2 == 0) throw DataError("filter_length must be odd");
    for (double r : {dropout_rate, recurrent_dropout, lstm_recurrent_dropout})
        if (!(r >= 0.0 && r < 1.0)) throw DataError("dropout rates must lie in [0, 1)");
    if (!(l2_conv >= 0.0) || !(l2_recurrent >= 0.0)) throw DataError("L2 strengths must be non-negative");
    if (!(learning_rate >= 0.0)) throw DataError("learning_rate must be non-negative");
}

nlohmann::ordered_json to_json(const Hyperparameters& hp) {
    nlohmann::ordered_json j;
    j["n_filters"] = hp.n_filters;
    j["filter_length"] = hp.filter_length;
    j["dropout_rate"] = hp.dropout_rate;
    j["dense_units"] = hp.dense_units;
    j["l2_conv"] = hp.l2_conv;
    j["l2_recurrent"] = hp.l2_recurrent;
    j["recurrent_dropout"] = hp.recurrent_dropout;
    j["lstm_units"] = hp.lstm_units;
    j["lstm_recurrent_dropout"] = hp.lstm_recurrent_dropout;
    j["epochs"] = hp.epochs;
    j["batch_size"] = hp.batch_size;
    j["learning_rate"] = hp.learning_rate;
    j["max_codes_per_admission"] = hp.max_codes_per_admission;
    j["embed_dim"] = hp.embed_dim;
    j["fine_tune_embeddings"] = hp.fine_tune_embeddings;
    j["seed"] = hp.seed;
    j["adam_beta1"] = hp.adam_beta1;
    j["adam_beta2"] = hp.adam_beta2;
    j["adam_epsilon"] = hp.adam_epsilon;
    j["restore_best_val"] = hp.restore_best_val;
    j["reshuffle_codes_each_epoch"] = hp.reshuffle_codes_each_epoch;
    return j;
}

Hyperparameters hyperparameters_from_json(const nlohmann::json& j) {
    Hyperparameters hp;
#define READ_FIELD(name) hp.name = j.value(#name, hp.name)
    READ_FIELD(n_filters);
    READ_FIELD(filter_length);
    READ_FIELD(dropout_rate);
    READ_FIELD(dense_units);
    READ_FIELD(l2_conv);
    READ_FIELD(l2_recurrent);
    READ_FIELD(recurrent_dropout);
    READ_FIELD(lstm_units);
    READ_FIELD(lstm_recurrent_dropout);
    READ_FIELD(epochs);
    READ_FIELD(batch_size);
    READ_FIELD(learning_rate);
    READ_FIELD(max_codes_per_admission);
    READ_FIELD(embed_dim);
    READ_FIELD(fine_tune_embeddings);
    READ_FIELD(seed);
    READ_FIELD(adam_beta1);
    READ_FIELD(adam_beta2);
    READ_FIELD(adam_epsilon);
    READ_FIELD(restore_best_val);
    READ_FIELD(reshuffle_codes_each_epoch);
#undef READ_FIELD
    hp.validate();
    return hp;
}

// ---------------------------------------------------------------------------

NetParams zero_params(const Hyperparameters& hp, emb::EmbeddingTable embedding) {
    hp.validate();
    if (embedding.dim() != hp.embed_dim)
        throw ShapeError("embedding dimension " + std::to_string(embedding.dim()) + " does not match embed_dim " +
                         std::to_string(hp.embed_dim));
    NetParams p;
    p.convlstm = nn::ConvLSTMCellParams::zeros(hp.embed_dim, hp.n_filters, hp.filter_length);
    p.gap_lstm = nn::LSTMCellParams::zeros(ehr::kGapCategories, hp.lstm_units);
    p.dense1 = nn::DenseParams::zeros(hp.n_filters + hp.lstm_units, hp.dense_units);
    p.dense2 = nn::DenseParams::zeros(hp.dense_units, 1);
    p.embedding = std::move(embedding);
    return p;
}

NetParams init_params(const Hyperparameters& hp, emb::EmbeddingTable embedding, std::uint64_t seed) {
    NetParams p = zero_params(hp, std::move(embedding));
    rng::Engine e(rng::derive(seed, 0x696e6974ULL));
    auto glorot = [&](Tensor& t, double fan_in, double fan_out) {
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        for (auto& v : t.values()) v = rng::uniform(e, -limit, limit);
    };
    const double L = static_cast<double>(hp.filter_length);
    const double F = static_cast<double>(hp.n_filters);
    const double C = static_cast<double>(hp.embed_dim);
    const double H = static_cast<double>(hp.lstm_units);
    for (std::size_t g = 0; g < 4; ++g) {
        glorot(p.convlstm.input_kernel[g], C * L, F * L);
        glorot(p.convlstm.hidden_kernel[g], F * L, F * L);
        glorot(p.gap_lstm.input_weights[g], static_cast<double>(ehr::kGapCategories), H);
        glorot(p.gap_lstm.recurrent_weights[g], H, H);
    }
    p.convlstm.bias[nn::kForget].fill(1.0);
    p.gap_lstm.bias[nn::kForget].fill(1.0);
    glorot(p.dense1.weight, static_cast<double>(p.dense1.in()), static_cast<double>(p.dense1.out()));
    glorot(p.dense2.weight, static_cast<double>(p.dense2.in()), 1.0);
    return p;
}

Gradients Gradients::zeros_like(const NetParams& params) {
    Gradients g;
    g.convlstm = nn::ConvLSTMCellParams::zeros(params.convlstm.in_channels(), params.convlstm.filters(),
                                               params.convlstm.length());
    g.gap_lstm = nn::LSTMCellParams::zeros(params.gap_lstm.input_dim(), params.gap_lstm.hidden());
    g.dense1 = nn::DenseParams::zeros(params.dense1.in(), params.dense1.out());
    g.dense2 = nn::DenseParams::zeros(params.dense2.in(), params.dense2.out());
    return g;
}

namespace {

template <typename Grads, typename Fn>
void visit(Grads& g, Fn&& fn) {
    for (std::size_t k = 0; k < 4; ++k) {
        const std::string gate(nn::kGateNames[k]);
        fn("convlstm.input_kernel." + gate, g.convlstm.input_kernel[k]);
        fn("convlstm.hidden_kernel." + gate, g.convlstm.hidden_kernel[k]);
        fn("convlstm.bias." + gate, g.convlstm.bias[k]);
    }
    for (std::size_t k = 0; k < 4; ++k) {
        const std::string gate(nn::kGateNames[k]);
        fn("gap_lstm.input_weights." + gate, g.gap_lstm.input_weights[k]);
        fn("gap_lstm.recurrent_weights." + gate, g.gap_lstm.recurrent_weights[k]);
        fn("gap_lstm.bias." + gate, g.gap_lstm.bias[k]);
    }
    fn(std::string("dense1.weight"), g.dense1.weight);
    fn(std::string("dense1.bias"), g.dense1.bias);
    fn(std::string("dense2.weight"), g.dense2.weight);
    fn(std::string("dense2.bias"), g.dense2.bias);
}

}  // namespace

void Gradients::add(const Gradients& other) {
    std::vector<const Tensor*> src;
    visit(other, [&](const std::string&, const Tensor& t) { src.push_back(&t); });
    std::size_t k = 0;
    visit(*this, [&](const std::string&, Tensor& t) {
        const Tensor& s = *src[k++];
        for (std::size_t i = 0; i < t.size(); ++i) t[i] += s[i];
    });
    for (const auto& [row, vals] : other.embedding_rows) {
        auto& dst = embedding_rows[row];
        if (dst.empty()) dst.assign(vals.size(), 0.0);
        for (std::size_t i = 0; i < vals.size(); ++i) dst[i] += vals[i];
    }
}

void Gradients::scale(double factor) {
    visit(*this, [&](const std::string&, Tensor& t) {
        for (auto& v : t.values()) v *= factor;
    });
    for (auto& [row, vals] : embedding_rows)
        for (auto& v : vals) v *= factor;
}

std::vector<std::pair<std::string, Tensor*>> named_tensors(NetParams& params, bool with_embedding) {
    std::vector<std::pair<std::string, Tensor*>> out;
    visit(params, [&](const std::string& name, Tensor& t) { out.emplace_back(name, &t); });
    (void)with_embedding;
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> named_tensors(const Gradients& grads) {
    std::vector<std::pair<std::string, const Tensor*>> out;
    visit(grads, [&](const std::string& name, const Tensor& t) { out.emplace_back(name, &t); });
    return out;
}

// ---------------------------------------------------------------------------

EncodedInstance encode_instance(const ehr::EpisodeInstance& instance, const emb::EmbeddingTable& table,
                                const Hyperparameters& hp) {
    if (instance.groups.empty()) throw DataError("instance " + instance.id() + " has no admissions");
    if (instance.groups.size() != instance.gaps.size())
        throw DataError("instance " + instance.id() + " has mismatched groups and gaps");
    if (table.dim() != hp.embed_dim) throw ShapeError("embedding dimension does not match embed_dim");
    const std::size_t P = hp.max_codes_per_admission, E = hp.embed_dim;
    EncodedInstance enc;
    for (std::size_t t = 0; t < instance.groups.size(); ++t) {
        const auto& group = instance.groups[t];
        const std::size_t n = std::min(group.size(), P);
        Tensor x({P, E});
        std::vector<std::ptrdiff_t> rows(P, -1);
        for (std::size_t p = 0; p < n; ++p) {
            table.lookup_into(group[p], x.row(p));
            rows[p] = table.index_of(group[p]);
        }
        enc.code_steps.push_back(std::move(x));
        enc.rows.push_back(std::move(rows));
        enc.lengths.push_back(n);
        std::vector<double> onehot(ehr::kGapCategories, 0.0);
        onehot[static_cast<std::size_t>(instance.gaps[t])] = 1.0;
        enc.gap_steps.push_back(std::move(onehot));
    }
    return enc;
}

namespace {

struct HeadOut {
    std::vector<double> hidden;
    std::vector<double> hidden_dropped;
    double p1 = 0.5;
};

// Shared by forward() and head_probability() so both paths run identical
// arithmetic. An empty mask means Eval mode.
HeadOut run_head(const NetParams& params, std::span<const double> concat, std::span<const double> mask) {
    HeadOut h;
    h.hidden = nn::dense(params.dense1, concat, nn::Activation::Relu);
    h.hidden_dropped = h.hidden;
    if (!mask.empty())
        for (std::size_t i = 0; i < h.hidden.size(); ++i) h.hidden_dropped[i] *= mask[i];
    h.p1 = nn::dense(params.dense2, h.hidden_dropped, nn::Activation::Sigmoid)[0];
    return h;
}

std::vector<double> concat_branches(std::span<const double> pooled, std::span<const double> gap_out) {
    std::vector<double> c(pooled.begin(), pooled.end());
    c.insert(c.end(), gap_out.begin(), gap_out.end());
    return c;
}

}  // namespace

double head_probability(const NetParams& params, std::span<const double> pooled, std::span<const double> gap_out) {
    return run_head(params, concat_branches(pooled, gap_out), {}).p1;
}

Prediction forward(const NetParams& params, const EncodedInstance& encoded, const Hyperparameters& hp,
                   const ForwardOptions& options) {
    if (encoded.code_steps.empty()) throw ShapeError("forward on an instance without steps");
    const std::size_t F = params.convlstm.filters();
    const std::size_t H = params.gap_lstm.hidden();
    const std::size_t P = encoded.code_steps[0].dim(0);
    const bool train = options.mode == nn::Mode::Train;
    if (params.dense1.in() != F + H) throw ShapeError("dense1 input must equal filters + lstm units");
    if (!options.zero_filters.empty() && options.zero_filters.size() != F)
        throw ShapeError("zero_filters must have one entry per filter");

    ForwardTrace tr;
    tr.params_version = params.version;
    tr.mode = options.mode;
    tr.rows = encoded.rows;
    tr.conv_recurrent_mask = nn::dropout_mask({P, F}, hp.recurrent_dropout, rng::derive(options.seed, 1), options.mode);
    tr.lstm_recurrent_mask =
        nn::dropout_mask({H}, hp.lstm_recurrent_dropout, rng::derive(options.seed, 2), options.mode).storage();
    tr.dense_mask =
        nn::dropout_mask({params.dense1.out()}, hp.dropout_rate, rng::derive(options.seed, 3), options.mode).storage();

    Tensor h({P, F}), c({P, F});
    std::vector<Tensor> hs;
    hs.reserve(encoded.code_steps.size());
    tr.steps.resize(encoded.code_steps.size());
    for (std::size_t t = 0; t < encoded.code_steps.size(); ++t) {
        Tensor hm = h;
        if (train)
            for (std::size_t i = 0; i < hm.size(); ++i) hm[i] *= tr.conv_recurrent_mask[i];
        Tensor c_next;
        h = nn::convlstm_step(params.convlstm, encoded.code_steps[t], hm, c, c_next, &tr.steps[t]);
        c = std::move(c_next);
        hs.push_back(h);
    }
    tr.pool = nn::relu_maxpool_over_all(hs);

    tr.zeroed = options.zero_filters.empty() ? std::vector<bool>(F, false) : options.zero_filters;
    std::vector<double> pooled(tr.pool.pooled.values().begin(), tr.pool.pooled.values().end());
    for (std::size_t f = 0; f < F; ++f)
        if (tr.zeroed[f]) pooled[f] = 0.0;

    tr.gap_out = nn::lstm_forward(params.gap_lstm, encoded.gap_steps,
                                  train ? std::span<const double>(tr.lstm_recurrent_mask) : std::span<const double>{},
                                  &tr.gap_steps);
    tr.concat = concat_branches(pooled, tr.gap_out);
    auto head = run_head(params, tr.concat, train ? std::span<const double>(tr.dense_mask) : std::span<const double>{});
    tr.hidden = std::move(head.hidden);
    tr.hidden_dropped = std::move(head.hidden_dropped);
    tr.p1 = head.p1;

    Prediction pred;
    pred.p1 = head.p1;
    pred.p0 = 1.0 - head.p1;
    if (options.keep_trace) pred.trace = std::move(tr);
    return pred;
}

double l2_loss(const NetParams& params, const Hyperparameters& hp) {
    double s = 0.0;
    for (std::size_t g = 0; g < 4; ++g) {
        s += nn::l2_penalty(params.convlstm.input_kernel[g], hp.l2_conv);
        s += nn::l2_penalty(params.convlstm.hidden_kernel[g], hp.l2_recurrent);
    }
    return s;
}

Gradients backward(const NetParams& params, const ForwardTrace& trace, double dloss_dp, const Hyperparameters& hp,
                   bool include_l2) {
    if (trace.params_version != params.version)
        throw DataError("stale forward trace: recorded at parameter version " + std::to_string(trace.params_version) +
                        ", parameters are at version " + std::to_string(params.version));
    if (trace.steps.empty()) throw DataError("empty forward trace");
    const bool train = trace.mode == nn::Mode::Train;
    const std::size_t F = params.convlstm.filters();
    const std::size_t H = params.gap_lstm.hidden();
    Gradients g = Gradients::zeros_like(params);

    // Head.
    const double dz2 = dloss_dp * trace.p1 * (1.0 - trace.p1);
    std::vector<double> d_hidden_dropped(trace.hidden.size(), 0.0);
    nn::dense_backward(params.dense2, trace.hidden_dropped, std::vector<double>{trace.p1}, nn::Activation::None,
                       std::vector<double>{dz2}, g.dense2, d_hidden_dropped);
    std::vector<double> d_hidden(trace.hidden.size());
    for (std::size_t i = 0; i < d_hidden.size(); ++i)
        d_hidden[i] = train ? d_hidden_dropped[i] * trace.dense_mask[i] : d_hidden_dropped[i];
    std::vector<double> d_concat(F + H, 0.0);
    nn::dense_backward(params.dense1, trace.concat, trace.hidden, nn::Activation::Relu, d_hidden, g.dense1, d_concat);

    // Gap branch.
    std::vector<double> d_gap(d_concat.begin() + static_cast<std::ptrdiff_t>(F), d_concat.end());
    nn::lstm_backward(params.gap_lstm, trace.gap_steps,
                      train ? std::span<const double>(trace.lstm_recurrent_mask) : std::span<const double>{}, d_gap,
                      g.gap_lstm);

    // Max-pool routes each filter's gradient to its argmax only.
    const std::size_t T = trace.steps.size();
    const std::size_t P = trace.steps[0].h.dim(0);
    std::vector<Tensor> d_h_pool(T, Tensor({P, F}));
    for (std::size_t f = 0; f < F; ++f) {
        if (trace.zeroed[f] || !trace.pool.argmax[f]) continue;
        const auto& at = *trace.pool.argmax[f];
        d_h_pool[at.time_step](at.position, f) += d_concat[f];
    }

    // ConvLSTM, backwards through time.
    Tensor d_h_next({P, F}), d_c_next({P, F});
    const bool fine_tune = hp.fine_tune_embeddings;
    for (std::size_t t = T; t-- > 0;) {
        Tensor d_h = d_h_pool[t];
        for (std::size_t i = 0; i < d_h.size(); ++i) d_h[i] += d_h_next[i];
        Tensor d_h_prev, d_c_prev;
        Tensor d_x;
        if (fine_tune) d_x = trace.steps[t].x.zeros_like();
        nn::convlstm_step_backward(params.convlstm, trace.steps[t], d_h, d_c_next, g.convlstm, d_h_prev, d_c_prev,
                                   fine_tune ? &d_x : nullptr);
        if (train)
            for (std::size_t i = 0; i < d_h_prev.size(); ++i) d_h_prev[i] *= trace.conv_recurrent_mask[i];
        d_h_next = std::move(d_h_prev);
        d_c_next = std::move(d_c_prev);
        if (fine_tune) {
            for (std::size_t p = 0; p < P; ++p) {
                const auto row = trace.rows[t][p];
                if (row < 0) continue;
                auto& dst = g.embedding_rows[static_cast<std::size_t>(row)];
                if (dst.empty()) dst.assign(d_x.dim(1), 0.0);
                const auto src = d_x.row(p);
                for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
            }
        }
    }

    if (include_l2) {
        for (std::size_t k = 0; k < 4; ++k) {
            nn::add_l2_gradient(params.convlstm.input_kernel[k], hp.l2_conv, g.convlstm.input_kernel[k]);
            nn::add_l2_gradient(params.convlstm.hidden_kernel[k], hp.l2_recurrent, g.convlstm.hidden_kernel[k]);
        }
    }
    return g;
}

void apply_gradients(NetParams& params, nn::AdamState& state, const Gradients& grads, bool fine_tune_embeddings) {
    auto values = named_tensors(params);
    auto gvals = named_tensors(grads);
    std::vector<nn::ParamSlot> slots;
    slots.reserve(values.size() + 1);
    for (std::size_t i = 0; i < values.size(); ++i) slots.push_back({values[i].first, values[i].second, gvals[i].second});

    // Fine-tuning treats the whole embedding matrix as one dense parameter so
    // Adam moments stay aligned with rows.
    Tensor emb_value, emb_grad;
    if (fine_tune_embeddings && params.embedding.rows() > 0) {
        const std::vector<std::size_t> shape{params.embedding.rows(), params.embedding.dim()};
        emb_value = Tensor(shape);
        emb_value.storage() = params.embedding.matrix();
        emb_grad = Tensor(shape);
        for (const auto& [row, vals] : grads.embedding_rows)
            std::copy(vals.begin(), vals.end(), emb_grad.row(row).begin());
        slots.push_back({"embedding", &emb_value, &emb_grad});
    }
    nn::adam_update(state, slots);
    if (fine_tune_embeddings && params.embedding.rows() > 0) params.embedding.matrix() = emb_value.storage();
    ++params.version;
}

}  // namespace readmit::model
