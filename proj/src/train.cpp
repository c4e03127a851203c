#include <cmath>
#include <cstdio>
#include <ostream>

#include "readmit/error.hpp"
#include "readmit/model.hpp"
#include "readmit/parallel.hpp"
#include "readmit/random.hpp"

namespace readmit::model {

namespace {

constexpr std::uint64_t kOrderStream = 0x6f72646572ULL;
constexpr std::uint64_t kDropoutStream = 0x64726f70ULL;
constexpr std::uint64_t kCodesStream = 0x636f646573ULL;

ehr::EpisodeInstance reshuffled(const ehr::EpisodeInstance& in, std::uint64_t seed) {
    ehr::EpisodeInstance out = in;
    for (std::size_t t = 0; t < out.groups.size(); ++t) {
        rng::Engine e(rng::derive(seed, t));
        rng::shuffle(out.groups[t], e);
    }
    return out;
}

void check_cohort(const ehr::Cohort& c, const char* what) {
    if (c.instances.empty()) throw DataError(std::string(what) + " cohort is empty");
}

}  // namespace

TrainResult train(const ehr::Cohort& train_set, const ehr::Cohort& val_set, const emb::EmbeddingTable& table,
                  const Hyperparameters& hp, const TrainOptions& options) {
    hp.validate();
    check_cohort(train_set, "training");
    check_cohort(val_set, "validation");
    if (table.dim() != hp.embed_dim)
        throw ShapeError("embedding dimension " + std::to_string(table.dim()) + " does not match embed_dim " +
                         std::to_string(hp.embed_dim));

    TrainResult result{init_params(hp, table, hp.seed), {}};
    NetParams& params = result.params;
    nn::AdamState adam;
    adam.alpha = hp.learning_rate;
    adam.beta1 = hp.adam_beta1;
    adam.beta2 = hp.adam_beta2;
    adam.epsilon = hp.adam_epsilon;

    const std::size_t n = train_set.instances.size();
    const std::size_t threads = std::max<std::size_t>(1, options.threads);
    std::optional<NetParams> best;
    double best_acc = -1.0;

    for (std::size_t epoch = 1; epoch <= hp.epochs; ++epoch) {
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        rng::Engine order_engine(rng::derive(hp.seed, kOrderStream, epoch));
        rng::shuffle(order, order_engine);

        for (std::size_t start = 0, batch = 0; start < n; start += hp.batch_size, ++batch) {
            const std::size_t end = std::min(n, start + hp.batch_size);
            const std::size_t B = end - start;
            std::vector<Gradients> per(B);
            std::vector<double> losses(B);
            parallel_for(B, threads, [&](std::size_t k) {
                const std::size_t idx = order[start + k];
                const auto& src = train_set.instances[idx];
                const auto encoded =
                    hp.reshuffle_codes_each_epoch
                        ? encode_instance(reshuffled(src, rng::derive(hp.seed, kCodesStream, epoch, idx)),
                                          params.embedding, hp)
                        : encode_instance(src, params.embedding, hp);
                ForwardOptions fo;
                fo.mode = nn::Mode::Train;
                fo.seed = rng::derive(hp.seed, kDropoutStream, epoch, idx);
                const auto pred = forward(params, encoded, hp, fo);
                const auto lv = nn::bce_loss(pred.p1, src.label);
                losses[k] = lv.loss;
                per[k] = backward(params, *pred.trace, lv.dloss_dp, hp, false);
            });
            double batch_loss = 0.0;
            for (double l : losses) batch_loss += l;
            if (!std::isfinite(batch_loss))
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batch));
            Gradients total = std::move(per[0]);
            for (std::size_t k = 1; k < B; ++k) total.add(per[k]);
            total.scale(1.0 / static_cast<double>(B));
            for (std::size_t g = 0; g < 4; ++g) {
                nn::add_l2_gradient(params.convlstm.input_kernel[g], hp.l2_conv, total.convlstm.input_kernel[g]);
                nn::add_l2_gradient(params.convlstm.hidden_kernel[g], hp.l2_recurrent,
                                    total.convlstm.hidden_kernel[g]);
            }
            apply_gradients(params, adam, total, hp.fine_tune_embeddings);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        const auto tr = score(params, train_set, hp, threads);
        const auto va = score(params, val_set, hp, threads);
        rec.train_loss = tr.loss;
        rec.train_acc = tr.accuracy;
        rec.val_loss = va.loss;
        rec.val_acc = va.accuracy;
        result.history.push_back(rec);
        if (options.on_epoch) options.on_epoch(rec);
        if (hp.restore_best_val && va.accuracy > best_acc) {
            best_acc = va.accuracy;
            best = params;
        }
    }
    if (hp.restore_best_val && best) result.params = std::move(*best);
    return result;
}

void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history) {
    out << "epoch,train_loss,train_acc,val_loss,val_acc\n";
    char buf[256];
    for (const auto& r : history) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss, r.train_acc,
                      r.val_loss, r.val_acc);
        out << buf;
    }
}

Prediction predict(const NetParams& params, const ehr::EpisodeInstance& instance, const Hyperparameters& hp,
                   bool keep_trace) {
    ForwardOptions fo;
    fo.keep_trace = keep_trace;
    return forward(params, encode_instance(instance, params.embedding, hp), hp, fo);
}

CohortScore score(const NetParams& params, const ehr::Cohort& cohort, const Hyperparameters& hp,
                  std::size_t threads) {
    const std::size_t n = cohort.instances.size();
    if (n == 0) throw DataError("cannot score an empty cohort");
    std::vector<double> losses(n);
    std::vector<int> correct(n);
    parallel_for(n, threads, [&](std::size_t i) {
        const auto& inst = cohort.instances[i];
        const auto pred = predict(params, inst, hp, false);
        losses[i] = nn::bce_loss(pred.p1, inst.label).loss;
        correct[i] = pred.hard_label() == inst.label ? 1 : 0;
    });
    CohortScore s;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
        s.loss += losses[i];
        hits += static_cast<std::size_t>(correct[i]);
    }
    s.loss /= static_cast<double>(n);
    s.accuracy = static_cast<double>(hits) / static_cast<double>(n);
    return s;
}

}  // namespace readmit::model
