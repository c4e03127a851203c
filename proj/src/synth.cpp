#include "readmit/synth.hpp"

#include <algorithm>
#include <set>
#include <unordered_set>

#include "readmit/error.hpp"
#include "readmit/random.hpp"

namespace readmit::synth {

namespace {

struct PlantedCode {
    bool procedure = false;
    std::string code;  // raw code without namespace
};

PlantedCode split_token(const std::string& raw) {
    const auto n = ehr::normalize_code(raw);
    if (n.rfind("PROC ", 0) == 0) return {true, ehr::normalize_code(n.substr(5))};
    if (n.rfind("DIAG ", 0) == 0) return {false, ehr::normalize_code(n.substr(5))};
    return {false, n};
}

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

}  // namespace

std::string motif_token(const std::string& code) {
    const auto p = split_token(code);
    return p.procedure ? ehr::procedure_token(p.code) : ehr::diagnosis_token(p.code);
}

std::vector<std::string> motif_tokens(const SynthConfig& config) {
    std::set<std::string> all;
    for (const auto& m : config.motifs)
        for (const auto& c : m.codes) all.insert(motif_token(c));
    return {all.begin(), all.end()};
}

SyntheticCohort generate_synthetic_cohort(const SynthConfig& config) {
    std::size_t longest = 0;
    for (const auto& m : config.motifs) {
        if (m.codes.empty()) throw DataError("motif without codes");
        longest = std::max(longest, m.codes.size());
    }
    if (config.vocab_size < longest)
        throw DataError("vocabulary of " + std::to_string(config.vocab_size) +
                        " codes is smaller than the longest motif (" + std::to_string(longest) + ")");
    if (config.min_codes < 1 || config.max_codes < config.min_codes)
        throw DataError("invalid codes-per-admission range");
    if (config.max_admissions < 1) throw DataError("max_admissions must be positive");

    std::vector<std::vector<PlantedCode>> motifs;
    std::unordered_set<std::string> reserved;
    for (const auto& m : config.motifs) {
        std::vector<PlantedCode> codes;
        for (const auto& c : m.codes) {
            codes.push_back(split_token(c));
            reserved.insert(motif_token(c));
        }
        motifs.push_back(std::move(codes));
    }

    const auto n_proc = static_cast<std::size_t>(
        static_cast<double>(config.vocab_size) * std::clamp(config.procedure_fraction, 0.0, 1.0));
    std::vector<PlantedCode> background;
    for (std::size_t i = 1; background.size() < config.vocab_size - n_proc; ++i) {
        auto code = "D" + std::to_string(i);
        if (!reserved.contains(ehr::diagnosis_token(code))) background.push_back({false, code});
    }
    for (std::size_t i = 1; background.size() < config.vocab_size; ++i) {
        auto code = "P" + std::to_string(i);
        if (!reserved.contains(ehr::procedure_token(code))) background.push_back({true, code});
    }

    const int horizon = ehr::horizon_days(config.horizon);
    const std::int64_t first_day = ehr::days_from_civil(2100, 1, 1);
    const std::int64_t last_day = ehr::days_from_civil(2110, 12, 31);
    constexpr std::int64_t kAdmitHour = 8 * 3600;
    constexpr std::int64_t kDischargeHour = 14 * 3600;

    SyntheticCohort out;
    std::size_t admission_counter = 0;
    for (std::size_t p = 0; p < config.n_patients; ++p) {
        rng::Engine e(rng::derive(config.seed, 0x70617469656e74ULL, p));
        const std::string pid = "SP" + std::to_string(100000 + p);
        const bool minor = rng::bernoulli(e, config.minor_prob);
        const bool dies = rng::bernoulli(e, config.death_prob);
        const int first_age = minor ? static_cast<int>(rng::between(e, 1, 17))
                                    : static_cast<int>(rng::between(e, 18, 89));

        std::int64_t day = rng::between(e, first_day, last_day);
        ehr::Timestamp birth{};
        double motif_weight = 0.0;
        std::vector<bool> motif_seen(motifs.size(), false);
        ehr::GapBucket incoming = ehr::GapBucket::Empty;
        std::vector<ehr::RawAdmission> history;

        for (int t = 1;; ++t) {
            ehr::RawAdmission a;
            a.patient_id = pid;
            a.admission_id = "SH" + std::to_string(1000000 + admission_counter++);
            a.admit_time = {day * ehr::kSecondsPerDay + kAdmitHour};
            const std::int64_t stay = rng::between(e, 1, 14);
            a.discharge_time = {(day + stay) * ehr::kSecondsPerDay + kDischargeHour};
            if (t == 1) birth = ehr::birth_date_for(a.admit_time, first_age);
            a.patient_age_at_admit = ehr::age_in_years(birth, a.admit_time);

            const auto n_codes = static_cast<std::size_t>(rng::between(e, config.min_codes, config.max_codes));
            std::vector<std::size_t> pick(background.size());
            for (std::size_t i = 0; i < pick.size(); ++i) pick[i] = i;
            for (std::size_t i = 0; i < std::min(n_codes, pick.size()); ++i) {
                std::swap(pick[i], pick[i + rng::below(e, pick.size() - i)]);
                const auto& c = background[pick[i]];
                (c.procedure ? a.procedure_codes : a.diagnosis_codes).push_back(c.code);
            }
            if (!motifs.empty() && rng::bernoulli(e, config.motif_prob)) {
                const auto m = rng::below(e, motifs.size());
                for (const auto& c : motifs[m]) (c.procedure ? a.procedure_codes : a.diagnosis_codes).push_back(c.code);
                if (!motif_seen[m]) {
                    motif_seen[m] = true;
                    motif_weight += config.motifs[m].weight;
                }
            }

            const double hazard = t >= config.max_admissions
                                      ? 0.0
                                      : clamp01(config.base_hazard + motif_weight +
                                                config.gap_weights[static_cast<std::size_t>(incoming)]);
            const double u = rng::uniform01(e);
            std::int64_t gap_days = -1;
            if (t < config.max_admissions) {
                if (u < hazard) {
                    gap_days = rng::between(e, 0, horizon);
                } else if (rng::bernoulli(e, config.late_return_prob)) {
                    gap_days = rng::between(e, horizon + 1, std::max(horizon + 1, config.late_gap_max_days));
                }
            }
            history.push_back(std::move(a));
            if (gap_days < 0) break;
            incoming = ehr::bucket_for_days(gap_days);
            // Next admit at 08:00 on discharge day + gap + 1 puts whole_days() at gap_days.
            day = day + stay + gap_days + 1;
        }
        if (dies) history.back().died_in_stay = true;
        for (auto& a : history) out.admissions.push_back(std::move(a));
    }

    out.ground_truth = to_json(config);
    out.ground_truth["motif_tokens"] = motif_tokens(config);
    return out;
}

nlohmann::ordered_json to_json(const SynthConfig& c) {
    nlohmann::ordered_json j;
    j["n_patients"] = c.n_patients;
    j["vocab_size"] = c.vocab_size;
    j["procedure_fraction"] = c.procedure_fraction;
    j["min_codes"] = c.min_codes;
    j["max_codes"] = c.max_codes;
    auto motifs = nlohmann::ordered_json::array();
    for (const auto& m : c.motifs) {
        nlohmann::ordered_json mj;
        mj["codes"] = m.codes;
        mj["weight"] = m.weight;
        motifs.push_back(std::move(mj));
    }
    j["motifs"] = std::move(motifs);
    j["motif_prob"] = c.motif_prob;
    j["base_hazard"] = c.base_hazard;
    auto gaps = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < ehr::kGapCategories; ++i)
        gaps[std::string(ehr::to_string(static_cast<ehr::GapBucket>(i)))] = c.gap_weights[i];
    j["gap_weights"] = std::move(gaps);
    j["late_return_prob"] = c.late_return_prob;
    j["late_gap_max_days"] = c.late_gap_max_days;
    j["max_admissions"] = c.max_admissions;
    j["minor_prob"] = c.minor_prob;
    j["death_prob"] = c.death_prob;
    j["horizon"] = std::string(ehr::to_string(c.horizon));
    j["seed"] = c.seed;
    return j;
}

SynthConfig config_from_json(const nlohmann::json& j) {
    SynthConfig c;
    c.n_patients = j.value("n_patients", c.n_patients);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.procedure_fraction = j.value("procedure_fraction", c.procedure_fraction);
    c.min_codes = j.value("min_codes", c.min_codes);
    c.max_codes = j.value("max_codes", c.max_codes);
    if (j.contains("motifs"))
        for (const auto& mj : j.at("motifs"))
            c.motifs.push_back({mj.at("codes").get<std::vector<std::string>>(), mj.at("weight").get<double>()});
    c.motif_prob = j.value("motif_prob", c.motif_prob);
    c.base_hazard = j.value("base_hazard", c.base_hazard);
    if (j.contains("gap_weights"))
        for (const auto& [k, v] : j.at("gap_weights").items())
            c.gap_weights[static_cast<std::size_t>(ehr::parse_gap_bucket(k))] = v.get<double>();
    c.late_return_prob = j.value("late_return_prob", c.late_return_prob);
    c.late_gap_max_days = j.value("late_gap_max_days", c.late_gap_max_days);
    c.max_admissions = j.value("max_admissions", c.max_admissions);
    c.minor_prob = j.value("minor_prob", c.minor_prob);
    c.death_prob = j.value("death_prob", c.death_prob);
    if (j.contains("horizon")) c.horizon = ehr::parse_horizon(j.at("horizon").get<std::string>());
    c.seed = j.value("seed", c.seed);
    return c;
}

double true_hazard(const SynthConfig& config, const ehr::EpisodeInstance& instance) {
    const auto t = static_cast<int>(instance.steps());
    if (t >= config.max_admissions) return 0.0;
    double h = config.base_hazard + config.gap_weights[static_cast<std::size_t>(instance.gaps.back())];
    for (const auto& m : config.motifs) {
        for (const auto& group : instance.groups) {
            const bool all = std::all_of(m.codes.begin(), m.codes.end(), [&](const std::string& c) {
                return std::find(group.begin(), group.end(), motif_token(c)) != group.end();
            });
            if (all) {
                h += m.weight;
                break;
            }
        }
    }
    return clamp01(h);
}

double bayes_accuracy(const SynthConfig& config, const std::vector<ehr::EpisodeInstance>& population,
                      const ehr::Cohort& cohort) {
    if (cohort.instances.empty()) return 0.0;
    double pop_pos = 0, pop_neg = 0;
    for (const auto& e : population) (e.label ? pop_pos : pop_neg) += 1;
    const double kept_pos = static_cast<double>(cohort.positives());
    const double kept_neg = static_cast<double>(cohort.negatives());
    const double keep_pos = pop_pos > 0 ? kept_pos / pop_pos : 0.0;
    const double keep_neg = pop_neg > 0 ? kept_neg / pop_neg : 0.0;

    double acc = 0;
    for (const auto& e : cohort.instances) {
        const double h = true_hazard(config, e);
        const double pos = h * keep_pos;
        const double neg = (1.0 - h) * keep_neg;
        const double post = pos + neg > 0 ? pos / (pos + neg) : 0.5;
        acc += std::max(post, 1.0 - post);
    }
    return acc / static_cast<double>(cohort.instances.size());
}

SynthConfig motif_benchmark(std::uint64_t seed) {
    SynthConfig c;
    c.n_patients = 9000;
    c.vocab_size = 60;
    c.min_codes = 3;
    c.max_codes = 6;
    c.motifs = {{{"M1", "M2", "M3"}, 0.96}, {{"PROC M4", "M5", "M6"}, 0.96}};
    c.motif_prob = 0.12;
    c.base_hazard = 0.02;
    c.late_return_prob = 0.35;
    c.max_admissions = 4;
    c.horizon = ehr::Horizon::Days30;
    c.seed = seed;
    return c;
}

SynthConfig gap_benchmark(std::uint64_t seed) {
    SynthConfig c;
    c.n_patients = 6000;
    c.vocab_size = 60;
    c.min_codes = 3;
    c.max_codes = 6;
    c.base_hazard = 0.08;
    c.gap_weights[static_cast<std::size_t>(ehr::GapBucket::M0_1)] = 0.9;
    c.late_return_prob = 0.6;
    c.max_admissions = 5;
    c.horizon = ehr::Horizon::Days30;
    c.seed = seed;
    return c;
}

}  // namespace readmit::synth
