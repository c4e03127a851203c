#include "readmit/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_map>

#include "readmit/error.hpp"
#include "readmit/parallel.hpp"

namespace readmit::interpret {

std::vector<std::size_t> FilterCodeMap::filters_for(const std::string& code,
                                                    std::optional<std::size_t> time_step) const {
    std::vector<std::size_t> out;
    for (const auto& [f, e] : entries) {
        if (time_step && e.time_step != *time_step) continue;
        if (std::find(e.codes.begin(), e.codes.end(), code) != e.codes.end()) out.push_back(f);
    }
    return out;
}

FilterCodeMap build_filter_code_map(const model::ForwardTrace& trace, const ehr::EpisodeInstance& instance,
                                    const model::Hyperparameters& hp, bool center_only) {
    if (trace.steps.size() != instance.groups.size())
        throw DataError("trace has " + std::to_string(trace.steps.size()) + " steps but instance " + instance.id() +
                        " has " + std::to_string(instance.groups.size()) + " admissions");
    FilterCodeMap map;
    map.center_only = center_only;
    const auto half = static_cast<std::ptrdiff_t>(hp.filter_length / 2);
    for (std::size_t f = 0; f < trace.pool.argmax.size(); ++f) {
        const auto& at = trace.pool.argmax[f];
        if (!at) continue;
        const auto& group = instance.groups[at->time_step];
        const auto used = static_cast<std::ptrdiff_t>(std::min(group.size(), hp.max_codes_per_admission));
        FilterEntry e{at->time_step, at->position, {}};
        const auto p = static_cast<std::ptrdiff_t>(at->position);
        const std::ptrdiff_t lo = center_only ? p : p - half;
        const std::ptrdiff_t hi = center_only ? p : p + half;
        for (std::ptrdiff_t q = lo; q <= hi; ++q)
            if (q >= 0 && q < used) e.codes.push_back(group[static_cast<std::size_t>(q)]);
        map.entries.emplace(f, std::move(e));
    }
    return map;
}

double masked_head_probability(const model::NetParams& params, const model::ForwardTrace& trace,
                               const std::vector<std::size_t>& filters) {
    std::vector<double> pooled(trace.concat.begin(),
                               trace.concat.begin() + static_cast<std::ptrdiff_t>(trace.pool.pooled.size()));
    for (auto f : filters) pooled.at(f) = 0.0;
    return model::head_probability(params, pooled, trace.gap_out);
}

CodeContribution contribution(const model::NetParams& params, const model::ForwardTrace& trace,
                              const FilterCodeMap& map, const std::string& code,
                              std::optional<std::size_t> time_step) {
    CodeContribution c;
    c.code = code;
    c.p1_original = trace.p1;
    c.filters_zeroed = map.filters_for(code, time_step);
    c.p1_perturbed = c.filters_zeroed.empty() ? trace.p1 : masked_head_probability(params, trace, c.filters_zeroed);
    c.delta_p1 = c.p1_original - c.p1_perturbed;
    c.delta_p0 = -c.delta_p1;
    return c;
}

Explanation explain_instance(const model::NetParams& params, const ehr::EpisodeInstance& instance,
                             const model::Hyperparameters& hp, bool center_only) {
    const auto pred = model::predict(params, instance, hp, true);
    const auto& trace = *pred.trace;
    Explanation ex;
    ex.instance_id = instance.id();
    ex.p1 = pred.p1;
    ex.p0 = pred.p0;
    ex.map = build_filter_code_map(trace, instance, hp, center_only);
    std::vector<std::string> all;
    for (std::size_t t = 0; t < instance.groups.size(); ++t) {
        AdmissionExplanation adm;
        adm.gap = instance.gaps[t];
        std::vector<std::string> seen;
        for (const auto& code : instance.groups[t]) {
            if (std::find(seen.begin(), seen.end(), code) != seen.end()) continue;
            seen.push_back(code);
            adm.codes.push_back(contribution(params, trace, ex.map, code, t));
            if (std::find(all.begin(), all.end(), code) == all.end()) all.push_back(code);
        }
        ex.admissions.push_back(std::move(adm));
    }
    for (const auto& code : all) ex.merged.push_back(contribution(params, trace, ex.map, code));
    return ex;
}

nlohmann::ordered_json to_json(const Explanation& e) {
    nlohmann::ordered_json j;
    j["instance"] = e.instance_id;
    j["prediction"] = {{"p1", e.p1}, {"p0", e.p0}};
    auto adms = nlohmann::ordered_json::array();
    for (const auto& a : e.admissions) {
        nlohmann::ordered_json aj;
        aj["gap"] = std::string(ehr::to_string(a.gap));
        auto codes = nlohmann::ordered_json::array();
        for (const auto& c : a.codes)
            codes.push_back({{"code", c.code}, {"delta_label1", c.points()}, {"delta_label0", -c.points()}});
        aj["codes"] = std::move(codes);
        adms.push_back(std::move(aj));
    }
    j["admissions"] = std::move(adms);
    auto merged = nlohmann::ordered_json::array();
    for (const auto& c : e.merged)
        merged.push_back({{"code", c.code}, {"delta_label1", c.points()}, {"delta_label0", -c.points()}});
    j["merged"] = std::move(merged);
    return j;
}

std::vector<CodeAggregate> AggregateReport::top(std::size_t k) const {
    return {codes.begin(), codes.begin() + static_cast<std::ptrdiff_t>(std::min(k, codes.size()))};
}

AggregateReport aggregate_explanations(const std::vector<Explanation>& explanations, ehr::Horizon horizon) {
    if (explanations.empty()) throw DataError("cannot aggregate an empty cohort");
    std::unordered_map<std::string, std::size_t> index;
    std::vector<CodeAggregate> rows;
    std::vector<double> sums;
    for (const auto& ex : explanations) {
        for (const auto& c : ex.merged) {
            auto [it, fresh] = index.try_emplace(c.code, rows.size());
            if (fresh) {
                rows.push_back({c.code, 0.0, 0});
                sums.push_back(0.0);
            }
            sums[it->second] += c.points();
            ++rows[it->second].support;
        }
    }
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i].mean_points = sums[i] / static_cast<double>(rows[i].support);
    std::sort(rows.begin(), rows.end(), [](const CodeAggregate& a, const CodeAggregate& b) {
        if (a.mean_points != b.mean_points) return a.mean_points > b.mean_points;
        if (a.support != b.support) return a.support > b.support;
        return a.code < b.code;
    });
    AggregateReport r;
    r.horizon = horizon;
    r.codes = std::move(rows);
    r.instances = explanations.size();
    return r;
}

AggregateReport aggregate(const model::NetParams& params, const ehr::Cohort& cohort, const model::Hyperparameters& hp,
                          std::size_t threads, bool center_only) {
    if (cohort.instances.empty()) throw DataError("cannot aggregate an empty cohort");
    std::vector<Explanation> all(cohort.instances.size());
    parallel_for(all.size(), threads,
                 [&](std::size_t i) { all[i] = explain_instance(params, cohort.instances[i], hp, center_only); });
    return aggregate_explanations(all, cohort.horizon);
}

void write_aggregate_csv(std::ostream& out, const std::vector<CodeAggregate>& rows) {
    out << "code,mean_delta_p1,support\n";
    char buf[64];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.17g", r.mean_points);
        out << r.code << ',' << buf << ',' << r.support << '\n';
    }
}

void write_text_bars(std::ostream& out, const std::vector<CodeAggregate>& rows, std::size_t width) {
    std::size_t label = 0;
    double peak = 0.0;
    for (const auto& r : rows) {
        label = std::max(label, r.code.size());
        peak = std::max(peak, std::fabs(r.mean_points));
    }
    char buf[64];
    for (const auto& r : rows) {
        const auto n = peak > 0.0 ? static_cast<std::size_t>(std::lround(std::fabs(r.mean_points) / peak *
                                                                         static_cast<double>(width)))
                                  : 0;
        std::snprintf(buf, sizeof buf, " %+9.4f", r.mean_points);
        out << r.code << std::string(label - r.code.size(), ' ') << " |"
            << std::string(n, r.mean_points < 0 ? '-' : '#') << std::string(width - n, ' ') << buf << '\n';
    }
}

namespace {

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

void write_svg_bars(std::ostream& out, const std::vector<CodeAggregate>& rows, const std::string& title) {
    const int bar_h = 18, gap = 4, label_w = 160, plot_w = 400, top = 40;
    const int height = top + static_cast<int>(rows.size()) * (bar_h + gap) + 20;
    double peak = 0.0;
    for (const auto& r : rows) peak = std::max(peak, std::fabs(r.mean_points));
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" font-family=\"sans-serif\" "
                  "font-size=\"12\">\n",
                  label_w + plot_w + 100, height);
    out << buf;
    out << "<text x=\"10\" y=\"20\" font-size=\"14\">" << xml_escape(title) << "</text>\n";
    int y = top;
    for (const auto& r : rows) {
        const double frac = peak > 0.0 ? std::fabs(r.mean_points) / peak : 0.0;
        const int w = static_cast<int>(std::lround(frac * plot_w));
        std::snprintf(buf, sizeof buf,
                      "<text x=\"%d\" y=\"%d\" text-anchor=\"end\">%s</text>\n"
                      "<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" fill=\"%s\"/>\n"
                      "<text x=\"%d\" y=\"%d\">%.3f</text>\n",
                      label_w - 6, y + 13, xml_escape(r.code).c_str(), label_w, y, w, bar_h,
                      r.mean_points < 0 ? "#c0504d" : "#4f81bd", label_w + w + 6, y + 13, r.mean_points);
        out << buf;
        y += bar_h + gap;
    }
    out << "</svg>\n";
}

}  // namespace readmit::interpret
