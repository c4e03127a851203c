#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "readmit/ehr.hpp"
#include "readmit/model.hpp"

namespace readmit::eval {

struct ConfusionCounts {
    std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
    std::size_t total() const { return tp + tn + fp + fn; }
    bool operator==(const ConfusionCounts&) const = default;
};

/// Label 1 is the positive class. Throws DataError on a length mismatch.
ConfusionCounts confusion(std::span<const int> predicted, std::span<const int> truth);
ConfusionCounts confusion(std::span<const model::Prediction> predictions, std::span<const int> truth);

struct LabelMetrics {
    double precision = 0, recall = 0, f1 = 0;
    // Set when the value was reported as 0 because its denominator was 0.
    bool precision_undefined = false, recall_undefined = false, f1_undefined = false;
};

struct RunMetrics {
    ConfusionCounts counts;
    double accuracy = 0;
    std::array<LabelMetrics, 2> label;  // indexed by label; label 0 swaps the positive class
};

/// Throws DataError when the counts are all zero.
RunMetrics metrics(const ConfusionCounts& counts);

struct MetricsReport {
    std::vector<RunMetrics> runs;
    // Arithmetic means of the per-run values.
    double mean_accuracy = 0;
    double std_accuracy = 0;  // population standard deviation
    std::array<LabelMetrics, 2> mean_label;
    std::size_t n_runs() const { return runs.size(); }
};

MetricsReport summarize(std::vector<RunMetrics> runs);

/// Returns p1 for an instance.
using Classifier = std::function<double(const ehr::EpisodeInstance&)>;

RunMetrics evaluate_classifier(const Classifier& classifier, const ehr::Cohort& test);

/// Trains with seeds base_seed .. base_seed + n_runs - 1 and evaluates each
/// model on `test`. Failures are re-raised naming the run index.
MetricsReport evaluate_runs(const std::function<Classifier(std::uint64_t seed)>& train_fn, const ehr::Cohort& test,
                            std::size_t n_runs, std::uint64_t base_seed);

void write_metrics_header(std::ostream& out);
void write_metrics_rows(std::ostream& out, const std::string& model, ehr::Horizon horizon,
                        const MetricsReport& report);

// Bag-of-words logistic regression over code counts from every admission.

struct BowConfig {
    double learning_rate = 0.0;  // 0 picks a step from the data's curvature bound
    std::size_t epochs = 5000;
    double l2 = 1e-4;
    double tolerance = 1e-6;  // stop when the gradient norm falls below this
};

struct BowLogReg {
    std::map<std::string, std::size_t> vocabulary;
    std::vector<double> weights;
    double bias = 0.0;
    BowConfig config;
    std::size_t epochs_run = 0;
};

BowLogReg train_bow_logreg(const ehr::Cohort& train, const BowConfig& config = {});
double predict_bow(const BowLogReg& model, const ehr::EpisodeInstance& instance);

}  // namespace readmit::eval
