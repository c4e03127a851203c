#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include <unistd.h>

#include "readmit/ehr.hpp"
#include "readmit/random.hpp"

namespace testing {

// Scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("readmit_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spit(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << text;
}

inline readmit::ehr::Timestamp day(int y, unsigned m, unsigned d, int hh = 0) {
    return {readmit::ehr::days_from_civil(y, m, d) * readmit::ehr::kSecondsPerDay + hh * 3600};
}

inline readmit::ehr::RawAdmission admission(const std::string& pid, const std::string& hadm,
                                            readmit::ehr::Timestamp admit, readmit::ehr::Timestamp discharge,
                                            std::vector<std::string> diag, std::vector<std::string> proc = {},
                                            int age = 50, bool died = false) {
    readmit::ehr::RawAdmission a;
    a.patient_id = pid;
    a.admission_id = hadm;
    a.admit_time = admit;
    a.discharge_time = discharge;
    a.diagnosis_codes = std::move(diag);
    a.procedure_codes = std::move(proc);
    a.patient_age_at_admit = age;
    a.died_in_stay = died;
    return a;
}

// One patient, six admissions at noon. Day gaps between discharge and the next
// admission: 56, 17, 251, 74, 20. The first four admissions carry the worked
// example's code groups.
inline std::vector<readmit::ehr::RawAdmission> six_admission_fixture() {
    return {
        admission("P1", "H1", day(2020, 1, 1, 12), day(2020, 1, 5, 12), {"1910", "Z83", "911", "1008", "D12", "K31"}),
        admission("P1", "H2", day(2020, 3, 1, 12), day(2020, 3, 3, 12),
                  {"R94", "H53", "Y83", "M62", "Y92", "E87", "T81", "1893", "D12", "S14", "738", "1910", "Z83"}),
        admission("P1", "H3", day(2020, 3, 20, 12), day(2020, 3, 25, 12), {"T91", "Y83", "Y92", "K91", "M10", "E86"}),
        admission("P1", "H4", day(2020, 12, 1, 12), day(2020, 12, 3, 12), {"K31", "1008", "1910", "Z13", "Z83"}),
        admission("P1", "H5", day(2021, 2, 15, 12), day(2021, 2, 20, 12), {"A01"}, {"9904"}),
        admission("P1", "H6", day(2021, 3, 12, 12), day(2021, 3, 14, 12), {"B02"}),
    };
}

// Hand-counted labels for the fixture.
inline const std::vector<int> kFixtureLabels30{0, 1, 0, 0, 1, 0};
inline const std::vector<int> kFixtureLabels180{1, 1, 0, 1, 1, 0};

}  // namespace testing
