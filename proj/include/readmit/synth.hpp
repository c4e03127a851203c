#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "readmit/ehr.hpp"

// Synthetic cohorts with a known readmission mechanism. The probability that
// admission t is followed by another admission within the horizon is
//
//   clamp(base_hazard + sum of weights of motifs seen in admissions 1..t
//         + gap_weights[bucket of the gap leading into admission t], 0, 1)
//
// and zero once a patient reaches max_admissions. Motif codes are reserved:
// they never appear as background codes, so any one of them identifies its motif.
namespace readmit::synth {

struct Motif {
    /// Tokens; "PROC x" plants a procedure, "DIAG x" or a bare "x" a diagnosis.
    std::vector<std::string> codes;
    double weight = 0.0;
};

struct SynthConfig {
    std::size_t n_patients = 1000;
    std::size_t vocab_size = 120;     // background codes, diagnoses and procedures combined
    double procedure_fraction = 0.3;  // share of the background vocabulary that are procedures
    int min_codes = 3;
    int max_codes = 7;
    std::vector<Motif> motifs;
    double motif_prob = 0.0;  // chance an admission carries one motif, chosen uniformly
    double base_hazard = 0.0;
    std::array<double, ehr::kGapCategories> gap_weights{};
    double late_return_prob = 0.0;  // chance of a return after the horizon when not readmitted
    int late_gap_max_days = 900;
    int max_admissions = 6;
    double minor_prob = 0.0;
    double death_prob = 0.0;
    ehr::Horizon horizon = ehr::Horizon::Days30;
    std::uint64_t seed = 0;
};

struct SyntheticCohort {
    std::vector<ehr::RawAdmission> admissions;
    nlohmann::ordered_json ground_truth;
};

SyntheticCohort generate_synthetic_cohort(const SynthConfig& config);

nlohmann::ordered_json to_json(const SynthConfig& config);
SynthConfig config_from_json(const nlohmann::json& j);

/// Normalized token of a motif code ("D1" -> "DIAG D1").
std::string motif_token(const std::string& code);
/// Every distinct motif token, sorted.
std::vector<std::string> motif_tokens(const SynthConfig& config);

/// The generator's probability that this instance is labelled 1.
double true_hazard(const SynthConfig& config, const ehr::EpisodeInstance& instance);

/// Expected accuracy of the Bayes-optimal classifier on `cohort`, which was
/// drawn by class-balancing `population`. Class priors are corrected for the
/// subsampling rates.
double bayes_accuracy(const SynthConfig& config, const std::vector<ehr::EpisodeInstance>& population,
                      const ehr::Cohort& cohort);

/// Planted-motif benchmark: two reserved trigrams raise the hazard to near
/// certainty; the generator's Bayes accuracy on the balanced cohort is ~0.97.
SynthConfig motif_benchmark(std::uint64_t seed);

/// Gap-driven benchmark: no motifs; a return within a month makes another
/// quick return near certain, information a bag of codes cannot see.
SynthConfig gap_benchmark(std::uint64_t seed);

}  // namespace readmit::synth
