#include "readmit/ehr.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "readmit/csv.hpp"
#include "readmit/error.hpp"
#include "readmit/random.hpp"

namespace readmit::ehr {

namespace {

// Howard Hinnant's civil calendar algorithms.
struct Civil {
    std::int64_t y;
    unsigned m;
    unsigned d;
};

Civil civil_from_days(std::int64_t z) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const auto doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    const unsigned d = doy - (153 * mp + 2) / 5 + 1;
    const unsigned m = mp < 10 ? mp + 3 : mp - 9;
    return {y + (m <= 2), m, d};
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    std::int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

template <typename Int>
bool parse_int(std::string_view s, Int& out) {
    if (s.empty()) return false;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc{} && res.ptr == s.data() + s.size();
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return in;
}

}  // namespace

std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const auto yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m > 2 ? m - 3 : m + 9) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

std::optional<Timestamp> parse_timestamp(std::string_view text) {
    text = trim(text);
    if (text.size() < 10 || text[4] != '-' || text[7] != '-') return std::nullopt;
    std::int64_t y = 0;
    unsigned mo = 0, d = 0;
    if (!parse_int(text.substr(0, 4), y) || !parse_int(text.substr(5, 2), mo) ||
        !parse_int(text.substr(8, 2), d))
        return std::nullopt;
    if (mo < 1 || mo > 12 || d < 1 || d > 31) return std::nullopt;
    if (civil_from_days(days_from_civil(y, mo, d)).d != d) return std::nullopt;

    unsigned hh = 0, mm = 0, ss = 0;
    if (text.size() > 10) {
        if (text[10] != ' ' && text[10] != 'T') return std::nullopt;
        auto rest = text.substr(11);
        if (!rest.empty() && rest.back() == 'Z') rest.remove_suffix(1);
        if (rest.size() < 5 || rest[2] != ':') return std::nullopt;
        if (!parse_int(rest.substr(0, 2), hh) || !parse_int(rest.substr(3, 2), mm)) return std::nullopt;
        if (rest.size() > 5) {
            if (rest[5] != ':' || rest.size() < 8) return std::nullopt;
            // Fractional seconds are truncated.
            if (!parse_int(rest.substr(6, 2), ss)) return std::nullopt;
            if (rest.size() > 8 && rest[8] != '.') return std::nullopt;
        }
        if (hh > 23 || mm > 59 || ss > 60) return std::nullopt;
    }
    return Timestamp{days_from_civil(y, mo, d) * kSecondsPerDay + hh * 3600 + mm * 60 + ss};
}

std::string format_timestamp(Timestamp t) {
    const std::int64_t days = floor_div(t.seconds, kSecondsPerDay);
    const std::int64_t secs = t.seconds - days * kSecondsPerDay;
    const Civil c = civil_from_days(days);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04lld-%02u-%02u %02lld:%02lld:%02lld",
                  static_cast<long long>(c.y), c.m, c.d, static_cast<long long>(secs / 3600),
                  static_cast<long long>((secs / 60) % 60), static_cast<long long>(secs % 60));
    return buf;
}

int age_in_years(Timestamp birth, Timestamp at) {
    const Civil b = civil_from_days(floor_div(birth.seconds, kSecondsPerDay));
    const Civil a = civil_from_days(floor_div(at.seconds, kSecondsPerDay));
    std::int64_t years = a.y - b.y;
    if (a.m < b.m || (a.m == b.m && a.d < b.d)) --years;
    return static_cast<int>(years);
}

Timestamp birth_date_for(Timestamp admit, int age) {
    const Civil c = civil_from_days(floor_div(admit.seconds, kSecondsPerDay));
    const unsigned d = (c.m == 2 && c.d == 29) ? 28 : c.d;
    return Timestamp{days_from_civil(c.y - age, c.m, d) * kSecondsPerDay};
}

std::string_view to_string(GapBucket b) {
    switch (b) {
        case GapBucket::Empty: return "EMPTY";
        case GapBucket::M0_1: return "M0_1";
        case GapBucket::M1_3: return "M1_3";
        case GapBucket::M3_6: return "M3_6";
        case GapBucket::M6_12: return "M6_12";
        case GapBucket::M12Plus: return "M12_PLUS";
    }
    return "EMPTY";
}

GapBucket parse_gap_bucket(std::string_view text) {
    for (std::size_t i = 0; i < kGapCategories; ++i) {
        const auto b = static_cast<GapBucket>(i);
        if (to_string(b) == text) return b;
    }
    throw DataError("unknown gap bucket '" + std::string(text) + "'");
}

int horizon_days(Horizon h) { return h == Horizon::Days30 ? 30 : 180; }

std::string_view to_string(Horizon h) { return h == Horizon::Days30 ? "30" : "180"; }

Horizon parse_horizon(std::string_view text) {
    if (text == "30") return Horizon::Days30;
    if (text == "180") return Horizon::Days180;
    throw DataError("horizon must be 30 or 180, got '" + std::string(text) + "'");
}

std::string_view to_string(Provenance p) {
    return p == Provenance::MimicCsv ? "MIMIC_CSV" : "SYNTHETIC";
}

Provenance parse_provenance(std::string_view text) {
    if (text == "MIMIC_CSV") return Provenance::MimicCsv;
    if (text == "SYNTHETIC") return Provenance::Synthetic;
    throw DataError("unknown provenance '" + std::string(text) + "'");
}

std::string EpisodeInstance::id() const {
    return patient_id + ":" + std::to_string(groups.size());
}

std::size_t Cohort::positives() const {
    return static_cast<std::size_t>(std::count_if(
        instances.begin(), instances.end(), [](const EpisodeInstance& e) { return e.label == 1; }));
}

std::vector<std::string> Cohort::patients() const {
    std::set<std::string> ids;
    for (const auto& e : instances) ids.insert(e.patient_id);
    return {ids.begin(), ids.end()};
}

std::string normalize_code(std::string_view raw) {
    raw = trim(raw);
    std::string out(raw);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    return out;
}

std::string diagnosis_token(std::string_view code) { return "DIAG " + normalize_code(code); }
std::string procedure_token(std::string_view code) { return "PROC " + normalize_code(code); }

MimicTables MimicTables::in_directory(const std::filesystem::path& dir) {
    return {dir / "ADMISSIONS.csv", dir / "PATIENTS.csv", dir / "DIAGNOSES_ICD.csv",
            dir / "PROCEDURES_ICD.csv"};
}

std::vector<RawAdmission> load_mimic_tables(const MimicTables& tables, LoadReport* report) {
    for (const auto* p : {&tables.admissions, &tables.patients, &tables.diagnoses, &tables.procedures})
        if (!std::filesystem::exists(*p)) throw IoError("missing input file " + p->string());

    LoadReport local;
    LoadReport& rep = report ? *report : local;
    rep = {};
    std::vector<std::string> row;

    std::unordered_map<std::string, std::optional<Timestamp>> birth;
    {
        auto in = open_input(tables.patients);
        csv::Reader r(in, tables.patients);
        const auto c_subject = r.require("SUBJECT_ID");
        const auto c_dob = r.require("DOB");
        while (r.next(row)) birth[std::string(trim(row[c_subject]))] = parse_timestamp(row[c_dob]);
    }

    std::vector<RawAdmission> out;
    std::unordered_map<std::string, std::size_t> by_hadm;
    {
        auto in = open_input(tables.admissions);
        csv::Reader r(in, tables.admissions);
        const auto c_subject = r.require("SUBJECT_ID");
        const auto c_hadm = r.require("HADM_ID");
        const auto c_admit = r.require("ADMITTIME");
        const auto c_disch = r.require("DISCHTIME");
        const auto c_death = r.require("DEATHTIME");
        while (r.next(row)) {
            ++rep.admissions_read;
            const auto admit = parse_timestamp(row[c_admit]);
            const auto disch = parse_timestamp(row[c_disch]);
            if (!admit || !disch || *disch < *admit) {
                ++rep.dropped_bad_timestamp;
                continue;
            }
            RawAdmission a;
            a.patient_id = std::string(trim(row[c_subject]));
            a.admission_id = std::string(trim(row[c_hadm]));
            const auto b = birth.find(a.patient_id);
            if (b == birth.end() || !b->second) {
                ++rep.dropped_unknown_patient;
                continue;
            }
            a.admit_time = *admit;
            a.discharge_time = *disch;
            a.died_in_stay = !trim(row[c_death]).empty();
            a.patient_age_at_admit = age_in_years(*b->second, *admit);
            by_hadm.emplace(a.admission_id, out.size());
            out.push_back(std::move(a));
        }
    }

    auto attach = [&](const std::filesystem::path& path, bool diagnoses, std::size_t& orphans) {
        auto in = open_input(path);
        csv::Reader r(in, path);
        const auto c_hadm = r.require("HADM_ID");
        const auto c_code = r.require("ICD9_CODE");
        while (r.next(row)) {
            const auto it = by_hadm.find(std::string(trim(row[c_hadm])));
            if (it == by_hadm.end()) {
                ++orphans;
                continue;
            }
            auto code = normalize_code(row[c_code]);
            if (code.empty()) continue;
            auto& target = diagnoses ? out[it->second].diagnosis_codes : out[it->second].procedure_codes;
            target.push_back(std::move(code));
        }
    };
    attach(tables.diagnoses, true, rep.orphan_diagnoses);
    attach(tables.procedures, false, rep.orphan_procedures);

    const auto before = out.size();
    std::erase_if(out, [](const RawAdmission& a) {
        return a.diagnosis_codes.empty() && a.procedure_codes.empty();
    });
    rep.dropped_no_codes = before - out.size();
    return out;
}

void write_mimic_tables(const std::vector<RawAdmission>& admissions, const MimicTables& tables) {
    auto open = [](const std::filesystem::path& p) {
        if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
        std::ofstream f(p, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write " + p.string());
        return f;
    };
    auto adm = open(tables.admissions);
    auto pat = open(tables.patients);
    auto dia = open(tables.diagnoses);
    auto pro = open(tables.procedures);
    adm << "SUBJECT_ID,HADM_ID,ADMITTIME,DISCHTIME,DEATHTIME\n";
    pat << "SUBJECT_ID,DOB\n";
    dia << "HADM_ID,ICD9_CODE\n";
    pro << "HADM_ID,ICD9_CODE\n";

    std::set<std::string> seen;
    for (const auto& a : admissions) {
        if (seen.insert(a.patient_id).second) {
            // Reproduces the stored age at the patient's first listed admission.
            const Timestamp dob = birth_date_for(a.admit_time, a.patient_age_at_admit);
            pat << csv::quote_field(a.patient_id) << ',' << format_timestamp(dob) << '\n';
        }
        adm << csv::quote_field(a.patient_id) << ',' << csv::quote_field(a.admission_id) << ','
            << format_timestamp(a.admit_time) << ',' << format_timestamp(a.discharge_time) << ','
            << (a.died_in_stay ? format_timestamp(a.discharge_time) : std::string()) << '\n';
        for (const auto& c : a.diagnosis_codes)
            dia << csv::quote_field(a.admission_id) << ',' << csv::quote_field(c) << '\n';
        for (const auto& c : a.procedure_codes)
            pro << csv::quote_field(a.admission_id) << ',' << csv::quote_field(c) << '\n';
    }
}

std::vector<RawAdmission> screen_patients(std::vector<RawAdmission> admissions) {
    std::unordered_set<std::string> deceased;
    for (const auto& a : admissions)
        if (a.died_in_stay) deceased.insert(a.patient_id);
    std::erase_if(admissions, [&](const RawAdmission& a) {
        return a.patient_age_at_admit < 18 || deceased.contains(a.patient_id);
    });
    std::stable_sort(admissions.begin(), admissions.end(), [](const auto& x, const auto& y) {
        if (x.patient_id != y.patient_id) return x.patient_id < y.patient_id;
        return x.admit_time < y.admit_time;
    });
    return admissions;
}

std::int64_t whole_days(Timestamp from, Timestamp to) {
    return floor_div(to.seconds - from.seconds, kSecondsPerDay);
}

GapBucket bucket_for_days(std::int64_t days) {
    if (days < 0) throw DataError("negative gap of " + std::to_string(days) + " days");
    if (days <= 30) return GapBucket::M0_1;
    if (days <= 90) return GapBucket::M1_3;
    if (days <= 180) return GapBucket::M3_6;
    if (days <= 365) return GapBucket::M6_12;
    return GapBucket::M12Plus;
}

GapBucket bucket_gap(Timestamp previous_discharge, Timestamp next_admit) {
    if (next_admit < previous_discharge)
        throw DataError("next admission at " + format_timestamp(next_admit) +
                        " precedes previous discharge at " + format_timestamp(previous_discharge));
    return bucket_for_days(whole_days(previous_discharge, next_admit));
}

std::vector<EpisodeInstance> build_episodes(const std::vector<RawAdmission>& admissions,
                                            Horizon horizon, std::uint64_t shuffle_seed) {
    std::vector<const RawAdmission*> order;
    order.reserve(admissions.size());
    for (const auto& a : admissions) order.push_back(&a);
    std::stable_sort(order.begin(), order.end(), [](const auto* x, const auto* y) {
        if (x->patient_id != y->patient_id) return x->patient_id < y->patient_id;
        return x->admit_time < y->admit_time;
    });

    const int limit = horizon_days(horizon);
    std::vector<EpisodeInstance> out;
    for (std::size_t begin = 0; begin < order.size();) {
        std::size_t end = begin;
        while (end < order.size() && order[end]->patient_id == order[begin]->patient_id) ++end;
        const std::string& pid = order[begin]->patient_id;
        const std::uint64_t pid_hash = rng::fnv1a(pid);

        std::vector<std::vector<std::string>> groups;
        std::vector<GapBucket> gaps;
        for (std::size_t i = begin; i < end; ++i) {
            const RawAdmission& a = *order[i];
            std::vector<std::string> group;
            group.reserve(a.diagnosis_codes.size() + a.procedure_codes.size());
            for (const auto& c : a.diagnosis_codes)
                if (auto n = normalize_code(c); !n.empty()) group.push_back(diagnosis_token(n));
            for (const auto& c : a.procedure_codes)
                if (auto n = normalize_code(c); !n.empty()) group.push_back(procedure_token(n));
            rng::Engine e(rng::derive(shuffle_seed, pid_hash, i - begin));
            rng::shuffle(group, e);
            groups.push_back(std::move(group));

            if (i == begin) {
                gaps.push_back(GapBucket::Empty);
            } else {
                // Overlapping stays are treated as an immediate return.
                const auto days = std::max<std::int64_t>(
                    0, whole_days(order[i - 1]->discharge_time, a.admit_time));
                gaps.push_back(bucket_for_days(days));
            }

            EpisodeInstance inst;
            inst.patient_id = pid;
            inst.groups = groups;
            inst.gaps = gaps;
            inst.horizon = horizon;
            if (i + 1 < end) {
                const auto days = whole_days(a.discharge_time, order[i + 1]->admit_time);
                inst.label = days <= limit ? 1 : 0;
            }
            out.push_back(std::move(inst));
        }
        begin = end;
    }
    return out;
}

Cohort balance_cohort(const std::vector<EpisodeInstance>& instances, std::uint64_t seed,
                      Provenance provenance, std::size_t max_per_class) {
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < instances.size(); ++i)
        (instances[i].label == 1 ? pos : neg).push_back(i);
    if (pos.empty()) throw DataError("cannot balance a cohort without positive instances");
    if (neg.empty()) throw DataError("cannot balance a cohort without negative instances");
    for (const auto& e : instances)
        if (e.horizon != instances.front().horizon)
            throw DataError("cannot balance instances with mixed horizons");

    rng::Engine e(rng::derive(seed, 0x62616c616e6365ULL));
    std::size_t target = std::min(pos.size(), neg.size());
    if (max_per_class > 0) target = std::min(target, max_per_class);
    // Partial Fisher-Yates: the first `target` entries are a uniform sample.
    auto sample = [&](std::vector<std::size_t>& idx) {
        if (idx.size() == target) return;
        for (std::size_t i = 0; i < target; ++i) {
            const std::size_t j = i + rng::below(e, idx.size() - i);
            std::swap(idx[i], idx[j]);
        }
        idx.resize(target);
    };
    sample(pos);
    sample(neg);

    std::vector<std::size_t> keep;
    keep.reserve(2 * target);
    keep.insert(keep.end(), pos.begin(), pos.end());
    keep.insert(keep.end(), neg.begin(), neg.end());
    std::sort(keep.begin(), keep.end());

    Cohort c;
    c.horizon = instances.front().horizon;
    c.provenance = provenance;
    c.seed = seed;
    c.instances.reserve(keep.size());
    for (auto i : keep) c.instances.push_back(instances[i]);
    return c;
}

CohortSplit split_cohort(const Cohort& cohort, std::array<double, 3> fractions, std::uint64_t seed) {
    double sum = 0;
    for (double f : fractions) {
        if (!(f > 0)) throw DataError("split fractions must be positive");
        sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw DataError("split fractions must sum to 1");

    auto patients = cohort.patients();
    const std::size_t n = patients.size();
    if (n < 3) throw DataError("need at least 3 patients to split, have " + std::to_string(n));

    std::array<std::size_t, 3> count{};
    std::array<double, 3> rem{};
    std::size_t assigned = 0;
    for (int k = 0; k < 3; ++k) {
        const double exact = fractions[k] * static_cast<double>(n);
        count[k] = static_cast<std::size_t>(std::floor(exact));
        rem[k] = exact - std::floor(exact);
        assigned += count[k];
    }
    std::array<int, 3> by_rem{0, 1, 2};
    std::stable_sort(by_rem.begin(), by_rem.end(), [&](int a, int b) { return rem[a] > rem[b]; });
    for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++count[by_rem[i % 3]];
    for (int k = 0; k < 3; ++k) {
        while (count[k] == 0) {
            const auto donor = std::max_element(count.begin(), count.end()) - count.begin();
            --count[donor];
            ++count[k];
        }
    }

    rng::Engine e(rng::derive(seed, 0x73706c6974ULL));
    rng::shuffle(patients, e);
    std::unordered_map<std::string, int> which;
    std::size_t at = 0;
    for (int k = 0; k < 3; ++k)
        for (std::size_t j = 0; j < count[k]; ++j) which[patients[at++]] = k;

    CohortSplit s;
    for (Cohort* c : {&s.train, &s.val, &s.test}) {
        c->horizon = cohort.horizon;
        c->provenance = cohort.provenance;
        c->seed = cohort.seed;
    }
    Cohort* targets[3] = {&s.train, &s.val, &s.test};
    for (const auto& inst : cohort.instances) targets[which.at(inst.patient_id)]->instances.push_back(inst);
    return s;
}

void write_dataset(std::ostream& out, const std::vector<EpisodeInstance>& instances) {
    for (const auto& e : instances) {
        nlohmann::ordered_json j;
        j["patient_id"] = e.patient_id;
        j["groups"] = e.groups;
        auto gaps = nlohmann::ordered_json::array();
        for (auto g : e.gaps) gaps.push_back(std::string(to_string(g)));
        j["gaps"] = std::move(gaps);
        j["label"] = e.label;
        j["horizon"] = std::string(to_string(e.horizon));
        out << j.dump() << '\n';
    }
}

void write_dataset(const std::filesystem::path& path, const std::vector<EpisodeInstance>& instances) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    write_dataset(f, instances);
}

std::vector<EpisodeInstance> read_dataset(std::istream& in, std::string_view origin) {
    std::vector<EpisodeInstance> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto where = std::string(origin) + ":" + std::to_string(lineno);
        try {
            const auto j = nlohmann::json::parse(line);
            EpisodeInstance e;
            e.patient_id = j.at("patient_id").get<std::string>();
            e.groups = j.at("groups").get<std::vector<std::vector<std::string>>>();
            for (const auto& g : j.at("gaps")) e.gaps.push_back(parse_gap_bucket(g.get<std::string>()));
            e.label = j.at("label").get<int>();
            e.horizon = parse_horizon(j.at("horizon").get<std::string>());
            if (e.groups.empty() || e.groups.size() != e.gaps.size())
                throw DataError("groups and gaps must be non-empty and equal length");
            if (e.gaps[0] != GapBucket::Empty) throw DataError("first gap must be EMPTY");
            for (std::size_t i = 1; i < e.gaps.size(); ++i)
                if (e.gaps[i] == GapBucket::Empty) throw DataError("EMPTY gap after the first step");
            if (e.label != 0 && e.label != 1) throw DataError("label must be 0 or 1");
            out.push_back(std::move(e));
        } catch (const nlohmann::json::exception& ex) {
            throw FormatError(where + ": " + ex.what());
        } catch (const DataError& ex) {
            throw DataError(where + ": " + ex.what());
        }
    }
    return out;
}

std::vector<EpisodeInstance> read_dataset(const std::filesystem::path& path) {
    auto in = open_input(path);
    return read_dataset(in, path.string());
}

Cohort load_cohort(const std::filesystem::path& path, Provenance provenance) {
    Cohort c;
    c.instances = read_dataset(path);
    c.provenance = provenance;
    if (!c.instances.empty()) c.horizon = c.instances.front().horizon;
    for (const auto& e : c.instances)
        if (e.horizon != c.horizon) throw DataError(path.string() + ": mixed horizons");
    return c;
}

}  // namespace readmit::ehr
