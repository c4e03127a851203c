#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

// EHR ingestion and the cumulative episode representation: every admission of
// a patient becomes one instance holding the code groups of all admissions up
// to it, a parallel vector of time-gap buckets, and a readmission label.
namespace readmit::ehr {

/// Seconds since 1970-01-01T00:00:00Z.
struct Timestamp {
    std::int64_t seconds = 0;
    auto operator<=>(const Timestamp&) const = default;
};

inline constexpr std::int64_t kSecondsPerDay = 86400;

std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d);

/// Accepts "YYYY-MM-DD", "YYYY-MM-DD HH:MM[:SS]" and the 'T'-separated form.
std::optional<Timestamp> parse_timestamp(std::string_view text);
std::string format_timestamp(Timestamp t);

/// Whole calendar years from `birth` to `at`.
int age_in_years(Timestamp birth, Timestamp at);

/// Midnight birthday such that age_in_years(result, admit) == age.
Timestamp birth_date_for(Timestamp admit, int age);

enum class GapBucket : std::uint8_t { Empty = 0, M0_1, M1_3, M3_6, M6_12, M12Plus };
inline constexpr std::size_t kGapCategories = 6;

std::string_view to_string(GapBucket b);
GapBucket parse_gap_bucket(std::string_view text);

enum class Horizon { Days30, Days180 };

int horizon_days(Horizon h);
std::string_view to_string(Horizon h);
Horizon parse_horizon(std::string_view text);

struct RawAdmission {
    std::string patient_id;
    std::string admission_id;
    Timestamp admit_time;
    Timestamp discharge_time;
    std::vector<std::string> diagnosis_codes;
    std::vector<std::string> procedure_codes;
    bool died_in_stay = false;
    int patient_age_at_admit = 0;

    bool operator==(const RawAdmission&) const = default;
};

struct EpisodeInstance {
    std::string patient_id;
    std::vector<std::vector<std::string>> groups;  // oldest admission first
    std::vector<GapBucket> gaps;                   // gaps[0] == Empty
    int label = 0;
    Horizon horizon = Horizon::Days30;

    std::size_t steps() const { return groups.size(); }
    /// "<patient_id>:<steps>", unique within a dataset.
    std::string id() const;
    bool operator==(const EpisodeInstance&) const = default;
};

enum class Provenance { MimicCsv, Synthetic };

std::string_view to_string(Provenance p);
Provenance parse_provenance(std::string_view text);

struct Cohort {
    std::vector<EpisodeInstance> instances;
    Horizon horizon = Horizon::Days30;
    Provenance provenance = Provenance::Synthetic;
    std::uint64_t seed = 0;

    std::size_t positives() const;
    std::size_t negatives() const { return instances.size() - positives(); }
    std::vector<std::string> patients() const;  // sorted, unique
};

/// Trims, uppercases; the empty string marks a code to drop.
std::string normalize_code(std::string_view raw);
std::string diagnosis_token(std::string_view code);
std::string procedure_token(std::string_view code);

struct MimicTables {
    std::filesystem::path admissions;
    std::filesystem::path patients;
    std::filesystem::path diagnoses;
    std::filesystem::path procedures;

    static MimicTables in_directory(const std::filesystem::path& dir);
};

struct LoadReport {
    std::size_t admissions_read = 0;
    std::size_t dropped_bad_timestamp = 0;
    std::size_t dropped_unknown_patient = 0;
    std::size_t dropped_no_codes = 0;
    std::size_t orphan_diagnoses = 0;
    std::size_t orphan_procedures = 0;
};

/// One RawAdmission per usable ADMISSIONS row, in file order.
std::vector<RawAdmission> load_mimic_tables(const MimicTables& tables, LoadReport* report = nullptr);

/// Writes the four tables in the layout `load_mimic_tables` reads.
void write_mimic_tables(const std::vector<RawAdmission>& admissions, const MimicTables& tables);

/// Drops minors and every admission of a patient who died in any stay, then
/// sorts by (patient_id, admit_time).
std::vector<RawAdmission> screen_patients(std::vector<RawAdmission> admissions);

GapBucket bucket_for_days(std::int64_t days);
GapBucket bucket_gap(Timestamp previous_discharge, Timestamp next_admit);

/// Whole days between two instants, rounded toward negative infinity.
std::int64_t whole_days(Timestamp from, Timestamp to);

std::vector<EpisodeInstance> build_episodes(const std::vector<RawAdmission>& admissions,
                                            Horizon horizon, std::uint64_t shuffle_seed);

/// Keeps every positive and subsamples negatives to match. `max_per_class`
/// (0 = unlimited) additionally caps both classes.
Cohort balance_cohort(const std::vector<EpisodeInstance>& instances, std::uint64_t seed,
                      Provenance provenance = Provenance::Synthetic,
                      std::size_t max_per_class = 0);

struct CohortSplit {
    Cohort train;
    Cohort val;
    Cohort test;
};

inline constexpr std::array<double, 3> kDefaultSplit{0.70, 0.15, 0.15};

/// Patient-level split with largest-remainder rounding; every split receives at
/// least one patient.
CohortSplit split_cohort(const Cohort& cohort, std::array<double, 3> fractions, std::uint64_t seed);

// JSON-lines dataset format.
void write_dataset(std::ostream& out, const std::vector<EpisodeInstance>& instances);
void write_dataset(const std::filesystem::path& path, const std::vector<EpisodeInstance>& instances);
std::vector<EpisodeInstance> read_dataset(std::istream& in, std::string_view origin = "<stream>");
std::vector<EpisodeInstance> read_dataset(const std::filesystem::path& path);

/// Wraps a dataset file into a Cohort (horizon taken from the instances).
Cohort load_cohort(const std::filesystem::path& path, Provenance provenance = Provenance::MimicCsv);

}  // namespace readmit::ehr
