#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "readmit/model.hpp"

// Attribution by zeroing pooled filter activations: each filter is tied to the
// codes that produced its maximal response, and a code's contribution is the
// drop in p1 when those filters are silenced and only the head is re-run.
namespace readmit::interpret {

struct FilterEntry {
    std::size_t time_step = 0;
    std::size_t position = 0;
    std::vector<std::string> codes;  // window codes, padding skipped
};

struct FilterCodeMap {
    std::map<std::size_t, FilterEntry> entries;  // filters with a positive response only
    bool center_only = false;

    /// Filters whose entry contains `code`, optionally restricted to one admission.
    std::vector<std::size_t> filters_for(const std::string& code,
                                         std::optional<std::size_t> time_step = std::nullopt) const;
};

/// Throws DataError when the trace and instance disagree on the number of groups.
FilterCodeMap build_filter_code_map(const model::ForwardTrace& trace, const ehr::EpisodeInstance& instance,
                                    const model::Hyperparameters& hp, bool center_only = false);

struct CodeContribution {
    std::string code;
    double p1_original = 0.0;
    double p1_perturbed = 0.0;
    double delta_p1 = 0.0;  // p1_original - p1_perturbed
    double delta_p0 = 0.0;  // -delta_p1
    std::vector<std::size_t> filters_zeroed;

    /// Contribution on the 0-100 scale, 100*p1 - 100*p1'.
    double points() const { return 100.0 * p1_original - 100.0 * p1_perturbed; }
};

/// p1 from the head alone after zeroing `filters` in the traced pooled vector.
double masked_head_probability(const model::NetParams& params, const model::ForwardTrace& trace,
                               const std::vector<std::size_t>& filters);

CodeContribution contribution(const model::NetParams& params, const model::ForwardTrace& trace,
                              const FilterCodeMap& map, const std::string& code,
                              std::optional<std::size_t> time_step = std::nullopt);

struct AdmissionExplanation {
    ehr::GapBucket gap = ehr::GapBucket::Empty;
    std::vector<CodeContribution> codes;  // distinct codes of this admission, first-seen order
};

struct Explanation {
    std::string instance_id;
    double p1 = 0.5;
    double p0 = 0.5;
    FilterCodeMap map;
    std::vector<AdmissionExplanation> admissions;
    std::vector<CodeContribution> merged;  // one per distinct code over all admissions
};

Explanation explain_instance(const model::NetParams& params, const ehr::EpisodeInstance& instance,
                             const model::Hyperparameters& hp, bool center_only = false);

/// {instance, prediction: {p1, p0}, admissions: [{gap, codes: [{code, delta_label1, delta_label0}]}]}
/// with deltas in percentage points.
nlohmann::ordered_json to_json(const Explanation& e);

struct CodeAggregate {
    std::string code;
    double mean_points = 0.0;
    std::size_t support = 0;
};

struct AggregateReport {
    ehr::Horizon horizon = ehr::Horizon::Days30;
    std::vector<CodeAggregate> codes;  // ranked
    std::size_t instances = 0;

    std::vector<CodeAggregate> top(std::size_t k) const;
};

/// Mean merged contribution per code over the instances containing it. Ranked
/// by mean descending, then support descending, then code.
AggregateReport aggregate(const model::NetParams& params, const ehr::Cohort& cohort, const model::Hyperparameters& hp,
                          std::size_t threads = 1, bool center_only = false);

/// Averages already computed explanations.
AggregateReport aggregate_explanations(const std::vector<Explanation>& explanations, ehr::Horizon horizon);

void write_aggregate_csv(std::ostream& out, const std::vector<CodeAggregate>& rows);
void write_text_bars(std::ostream& out, const std::vector<CodeAggregate>& rows, std::size_t width = 40);
void write_svg_bars(std::ostream& out, const std::vector<CodeAggregate>& rows, const std::string& title);

}  // namespace readmit::interpret
