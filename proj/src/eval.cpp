#include "readmit/eval.hpp"

#include <cmath>
#include <cstdio>

#include "readmit/error.hpp"

namespace readmit::eval {

ConfusionCounts confusion(std::span<const int> predicted, std::span<const int> truth) {
    if (predicted.size() != truth.size())
        throw DataError("confusion: " + std::to_string(predicted.size()) + " predictions for " +
                        std::to_string(truth.size()) + " labels");
    ConfusionCounts c;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const bool p = predicted[i] == 1, t = truth[i] == 1;
        if (p && t) ++c.tp;
        else if (p) ++c.fp;
        else if (t) ++c.fn;
        else ++c.tn;
    }
    return c;
}

ConfusionCounts confusion(std::span<const model::Prediction> predictions, std::span<const int> truth) {
    std::vector<int> labels;
    labels.reserve(predictions.size());
    for (const auto& p : predictions) labels.push_back(p.hard_label());
    return confusion(labels, truth);
}

namespace {

LabelMetrics label_metrics(std::size_t tp, std::size_t fp, std::size_t fn) {
    LabelMetrics m;
    if (tp + fp == 0) m.precision_undefined = true;
    else m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    if (tp + fn == 0) m.recall_undefined = true;
    else m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    if (m.precision + m.recall == 0.0) m.f1_undefined = true;
    else m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    return m;
}

}  // namespace

RunMetrics metrics(const ConfusionCounts& counts) {
    if (counts.total() == 0) throw DataError("metrics of an empty confusion matrix");
    RunMetrics r;
    r.counts = counts;
    r.accuracy = static_cast<double>(counts.tp + counts.tn) / static_cast<double>(counts.total());
    r.label[1] = label_metrics(counts.tp, counts.fp, counts.fn);
    r.label[0] = label_metrics(counts.tn, counts.fn, counts.fp);
    return r;
}

MetricsReport summarize(std::vector<RunMetrics> runs) {
    if (runs.empty()) throw DataError("no runs to summarize");
    MetricsReport rep;
    rep.runs = std::move(runs);
    const double n = static_cast<double>(rep.runs.size());
    for (const auto& r : rep.runs) {
        rep.mean_accuracy += r.accuracy;
        for (std::size_t l = 0; l < 2; ++l) {
            rep.mean_label[l].precision += r.label[l].precision;
            rep.mean_label[l].recall += r.label[l].recall;
            rep.mean_label[l].f1 += r.label[l].f1;
            rep.mean_label[l].precision_undefined |= r.label[l].precision_undefined;
            rep.mean_label[l].recall_undefined |= r.label[l].recall_undefined;
            rep.mean_label[l].f1_undefined |= r.label[l].f1_undefined;
        }
    }
    rep.mean_accuracy /= n;
    for (auto& m : rep.mean_label) {
        m.precision /= n;
        m.recall /= n;
        m.f1 /= n;
    }
    double ss = 0.0;
    for (const auto& r : rep.runs) ss += (r.accuracy - rep.mean_accuracy) * (r.accuracy - rep.mean_accuracy);
    rep.std_accuracy = std::sqrt(ss / n);
    return rep;
}

RunMetrics evaluate_classifier(const Classifier& classifier, const ehr::Cohort& test) {
    std::vector<int> predicted, truth;
    for (const auto& inst : test.instances) {
        predicted.push_back(classifier(inst) >= 0.5 ? 1 : 0);
        truth.push_back(inst.label);
    }
    return metrics(confusion(predicted, truth));
}

MetricsReport evaluate_runs(const std::function<Classifier(std::uint64_t seed)>& train_fn, const ehr::Cohort& test,
                            std::size_t n_runs, std::uint64_t base_seed) {
    if (n_runs == 0) throw DataError("n_runs must be at least 1");
    std::vector<RunMetrics> runs;
    for (std::size_t r = 0; r < n_runs; ++r) {
        try {
            runs.push_back(evaluate_classifier(train_fn(base_seed + r), test));
        } catch (const Error& e) {
            throw ContextError("run " + std::to_string(r) + " (seed " + std::to_string(base_seed + r) +
                                   "): " + e.what(),
                               e.exit_code());
        }
    }
    return summarize(std::move(runs));
}

void write_metrics_header(std::ostream& out) { out << "model,horizon,run,label,precision,recall,f1,accuracy\n"; }

namespace {

void row(std::ostream& out, const std::string& model, ehr::Horizon h, const std::string& run, int label,
         const LabelMetrics& m, double accuracy) {
    char buf[160];
    std::snprintf(buf, sizeof buf, ",%d,%.17g,%.17g,%.17g,%.17g\n", label, m.precision, m.recall, m.f1, accuracy);
    out << model << ',' << ehr::to_string(h) << ',' << run << buf;
}

}  // namespace

void write_metrics_rows(std::ostream& out, const std::string& model, ehr::Horizon horizon,
                        const MetricsReport& report) {
    for (std::size_t r = 0; r < report.runs.size(); ++r)
        for (int l : {1, 0})
            row(out, model, horizon, std::to_string(r), l, report.runs[r].label[l], report.runs[r].accuracy);
    for (int l : {1, 0}) row(out, model, horizon, "mean", l, report.mean_label[l], report.mean_accuracy);
}

// ---------------------------------------------------------------------------

namespace {

using Sparse = std::vector<std::pair<std::size_t, double>>;

Sparse features(const BowLogReg& m, const ehr::EpisodeInstance& inst) {
    std::map<std::size_t, double> counts;
    for (const auto& g : inst.groups)
        for (const auto& code : g) {
            auto it = m.vocabulary.find(code);
            if (it != m.vocabulary.end()) counts[it->second] += 1.0;
        }
    return {counts.begin(), counts.end()};
}

double logit(const BowLogReg& m, const Sparse& x) {
    double z = m.bias;
    for (const auto& [i, v] : x) z += m.weights[i] * v;
    return z;
}

}  // namespace

BowLogReg train_bow_logreg(const ehr::Cohort& train, const BowConfig& config) {
    if (train.instances.empty()) throw DataError("cannot train logistic regression on an empty cohort");
    BowLogReg m;
    m.config = config;
    for (const auto& inst : train.instances)
        for (const auto& g : inst.groups)
            for (const auto& code : g) m.vocabulary.emplace(code, 0);
    std::size_t k = 0;
    for (auto& [code, idx] : m.vocabulary) idx = k++;
    m.weights.assign(m.vocabulary.size(), 0.0);

    std::vector<Sparse> xs;
    double max_sq = 0.0;
    for (const auto& inst : train.instances) {
        xs.push_back(features(m, inst));
        double sq = 1.0;  // bias feature
        for (const auto& [i, v] : xs.back()) sq += v * v;
        max_sq = std::max(max_sq, sq);
    }
    // The log-loss Hessian is bounded by max ||x||^2 / 4 (+ l2).
    const double lr = config.learning_rate > 0.0 ? config.learning_rate : 1.0 / (0.25 * max_sq + config.l2);
    const double n = static_cast<double>(xs.size());

    std::vector<double> grad(m.weights.size());
    for (m.epochs_run = 0; m.epochs_run < config.epochs;) {
        std::fill(grad.begin(), grad.end(), 0.0);
        double gb = 0.0;
        for (std::size_t s = 0; s < xs.size(); ++s) {
            const double r = nn::sigmoid(logit(m, xs[s])) - train.instances[s].label;
            gb += r;
            for (const auto& [i, v] : xs[s]) grad[i] += r * v;
        }
        double norm = 0.0;
        gb /= n;
        norm += gb * gb;
        for (std::size_t i = 0; i < grad.size(); ++i) {
            grad[i] = grad[i] / n + config.l2 * m.weights[i];
            norm += grad[i] * grad[i];
        }
        if (std::sqrt(norm) < config.tolerance) break;
        m.bias -= lr * gb;
        for (std::size_t i = 0; i < grad.size(); ++i) m.weights[i] -= lr * grad[i];
        ++m.epochs_run;
    }
    return m;
}

double predict_bow(const BowLogReg& m, const ehr::EpisodeInstance& instance) {
    return nn::sigmoid(logit(m, features(m, instance)));
}

}  // namespace readmit::eval
