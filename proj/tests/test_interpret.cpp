#include <doctest.h>

#include <cmath>
#include <sstream>

#include "readmit/interpret.hpp"
#include "readmit/random.hpp"

using namespace readmit;
using namespace readmit::interpret;
using model::Hyperparameters;
using model::NetParams;

namespace {

Hyperparameters hp_for(std::size_t filters, std::size_t L, std::size_t P, std::size_t E) {
    Hyperparameters hp;
    hp.n_filters = filters;
    hp.filter_length = L;
    hp.max_codes_per_admission = P;
    hp.embed_dim = E;
    hp.dense_units = 4;
    hp.lstm_units = 2;
    return hp;
}

emb::EmbeddingTable onehot_table(const std::vector<std::string>& tokens) {
    emb::EmbeddingTable t(tokens.size(), emb::OovPolicy::Zero, 0);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        std::vector<double> v(tokens.size(), 0.0);
        v[i] = 1.0;
        t.add(tokens[i], v);
    }
    return t;
}

ehr::EpisodeInstance inst(std::vector<std::vector<std::string>> groups) {
    ehr::EpisodeInstance e;
    e.patient_id = "P";
    e.gaps.assign(groups.size(), ehr::GapBucket::M1_3);
    e.gaps[0] = ehr::GapBucket::Empty;
    e.groups = std::move(groups);
    return e;
}

// Filter f responds positively only to the exact window `pattern` (token
// indices, -1 = don't care). Input and output gates saturate to exactly 1 and
// the forget gate to exactly 0, so every step sees a fresh cell.
void plant_detector(NetParams& p, std::size_t f, const std::vector<int>& pattern) {
    auto& cell = p.convlstm;
    const double big = 1000.0;
    cell.bias[nn::kInput][f] = big;
    cell.bias[nn::kOutput][f] = big;
    cell.bias[nn::kForget][f] = -big;
    double needed = 0;
    for (std::size_t k = 0; k < pattern.size(); ++k) {
        if (pattern[k] < 0) continue;
        cell.input_kernel[nn::kCell](f, static_cast<std::size_t>(pattern[k]), k) = 1.0;
        needed += 1;
    }
    cell.bias[nn::kCell][f] = -(needed - 0.5);
}

// Head: hidden unit j copies filter j; p1 = sigmoid(sum_j w_j * pooled_j + b).
void plant_head(NetParams& p, const std::vector<double>& w, double b) {
    for (std::size_t j = 0; j < w.size(); ++j) {
        p.dense1.weight(j, j) = 1.0;
        p.dense2.weight(0, j) = w[j];
    }
    p.dense2.bias[0] = b;
}

}  // namespace

TEST_CASE("a planted trigram detector maps to its three codes") {
    const std::vector<std::string> toks{"DIAG X", "DIAG Y", "DIAG Z", "DIAG N"};
    const auto hp = hp_for(2, 3, 6, 4);
    auto p = model::zero_params(hp, onehot_table(toks));
    plant_detector(p, 0, {0, 1, 2});
    plant_detector(p, 1, {-1, 3, -1});
    plant_head(p, {2.0, -1.0}, 0.1);
    const auto e = inst({{"DIAG N", "DIAG Y", "DIAG Z"}, {"DIAG N", "DIAG X", "DIAG Y", "DIAG Z", "DIAG N"}});
    const auto pred = model::predict(p, e, hp, true);
    const auto& tr = *pred.trace;
    REQUIRE(tr.pool.argmax[0].has_value());
    CHECK(*tr.pool.argmax[0] == nn::PoolIndex{1, 2});
    CHECK(*tr.pool.argmax[1] == nn::PoolIndex{0, 0});

    const auto map = build_filter_code_map(tr, e, hp);
    CHECK(map.entries.at(0).codes == std::vector<std::string>{"DIAG X", "DIAG Y", "DIAG Z"});
    // position 0 has no left neighbour
    CHECK(map.entries.at(1).codes == std::vector<std::string>{"DIAG N", "DIAG Y"});
    CHECK(map.filters_for("DIAG X") == std::vector<std::size_t>{0});
    CHECK(map.filters_for("DIAG Y") == std::vector<std::size_t>{0, 1});
    CHECK(map.filters_for("DIAG Y", 0) == std::vector<std::size_t>{1});
    CHECK(map.filters_for("DIAG Y", 1) == std::vector<std::size_t>{0});
    CHECK(map.filters_for("DIAG Q").empty());

    const auto center = build_filter_code_map(tr, e, hp, true);
    CHECK(center.entries.at(0).codes == std::vector<std::string>{"DIAG Y"});
    CHECK(center.filters_for("DIAG X").empty());

    const double a0 = std::tanh(std::tanh(0.5)), a1 = a0;
    auto head = [](double x0, double x1) { return 1 / (1 + std::exp(-(2.0 * x0 - 1.0 * x1 + 0.1))); };
    CHECK(tr.pool.pooled[0] == doctest::Approx(a0).epsilon(1e-12));
    CHECK(pred.p1 == doctest::Approx(head(a0, a1)).epsilon(1e-12));
    const auto cx = contribution(p, tr, map, "DIAG X");
    CHECK(cx.filters_zeroed == std::vector<std::size_t>{0});
    CHECK(cx.p1_perturbed == doctest::Approx(head(0, a1)).epsilon(1e-12));
    CHECK(cx.delta_p1 > 0);
    const auto cn = contribution(p, tr, map, "DIAG N");
    CHECK(cn.delta_p1 < 0);
    CHECK(cn.delta_p0 == -cn.delta_p1);
}

TEST_CASE("filter length one maps each filter to a single code") {
    const std::vector<std::string> toks{"DIAG A", "DIAG B", "DIAG C"};
    const auto hp = hp_for(3, 1, 4, 3);
    auto p = model::zero_params(hp, onehot_table(toks));
    for (std::size_t f = 0; f < 3; ++f) plant_detector(p, f, {static_cast<int>(f)});
    const auto e = inst({{"DIAG C", "DIAG A"}, {"DIAG B"}});
    const auto pred = model::predict(p, e, hp, true);
    const auto map = build_filter_code_map(*pred.trace, e, hp);
    REQUIRE(map.entries.size() == 3);
    CHECK(map.entries.at(0).codes == std::vector<std::string>{"DIAG A"});
    CHECK(map.entries.at(1).codes == std::vector<std::string>{"DIAG B"});
    CHECK(map.entries.at(1).time_step == 1);
    CHECK(map.entries.at(2).codes == std::vector<std::string>{"DIAG C"});
}

TEST_CASE("windows at the right edge skip padding and truncated codes") {
    const std::vector<std::string> toks{"DIAG A", "DIAG B", "DIAG C", "DIAG D"};
    const auto hp = hp_for(1, 3, 3, 4);
    auto p = model::zero_params(hp, onehot_table(toks));
    plant_detector(p, 0, {-1, 2, -1});
    // C sits at the last kept position, D is truncated away
    const auto trunc = inst({{"DIAG A", "DIAG B", "DIAG C", "DIAG D"}});
    auto map = build_filter_code_map(*model::predict(p, trunc, hp, true).trace, trunc, hp);
    CHECK(map.entries.at(0).codes == std::vector<std::string>{"DIAG B", "DIAG C"});
    // a short group: position 1 is the last real code
    const auto shortg = inst({{"DIAG A", "DIAG C"}});
    map = build_filter_code_map(*model::predict(p, shortg, hp, true).trace, shortg, hp);
    CHECK(map.entries.at(0).position == 1);
    CHECK(map.entries.at(0).codes == std::vector<std::string>{"DIAG A", "DIAG C"});
}

TEST_CASE("filters with no positive response are left out of the map") {
    const std::vector<std::string> toks{"DIAG A", "DIAG B"};
    const auto hp = hp_for(2, 3, 3, 2);
    auto p = model::zero_params(hp, onehot_table(toks));
    plant_detector(p, 0, {-1, 0, -1});
    plant_detector(p, 1, {-1, 1, -1});
    const auto e = inst({{"DIAG A", "DIAG A"}});
    const auto pred = model::predict(p, e, hp, true);
    const auto map = build_filter_code_map(*pred.trace, e, hp);
    CHECK(map.entries.size() == 1);
    CHECK(map.entries.count(1) == 0);
    const auto c = contribution(p, *pred.trace, map, "DIAG B");
    CHECK(c.filters_zeroed.empty());
    CHECK(c.delta_p1 == 0.0);
    CHECK(c.points() == 0.0);
}

TEST_CASE("head-only masking equals the masked full forward to the last bit") {
    const std::vector<std::string> toks{"DIAG A", "DIAG B", "DIAG C", "PROC D", "PROC E"};
    auto hp = hp_for(6, 3, 4, 5);
    hp.dense_units = 7;
    hp.lstm_units = 3;
    emb::EmbeddingTable t(5, emb::OovPolicy::Zero, 0);
    rng::Engine e(4);
    for (const auto& tok : toks) {
        std::vector<double> v(5);
        for (auto& x : v) x = rng::uniform(e, -1, 1);
        t.add(tok, v);
    }
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto p = model::init_params(hp, t, seed);
        const auto ex = inst({{"DIAG A", "PROC D", "DIAG B"}, {"DIAG C", "PROC E"}, {"DIAG B", "DIAG A", "PROC E", "DIAG C"}});
        const auto enc = model::encode_instance(ex, t, hp);
        const auto base = model::forward(p, enc, hp);
        for (std::size_t mask = 0; mask < (1u << 6); ++mask) {
            std::vector<std::size_t> filters;
            model::ForwardOptions fo;
            fo.zero_filters.assign(6, false);
            for (std::size_t f = 0; f < 6; ++f)
                if (mask & (1u << f)) {
                    filters.push_back(f);
                    fo.zero_filters[f] = true;
                }
            const double head = masked_head_probability(p, *base.trace, filters);
            const double full = model::forward(p, enc, hp, fo).p1;
            CHECK(head == full);
        }
    }
}

TEST_CASE("masking every filter leaves only the gap branch") {
    auto hp = hp_for(3, 3, 3, 2);
    emb::EmbeddingTable t(2, emb::OovPolicy::Zero, 0);
    t.add("DIAG A", std::vector<double>{0.5, -0.2});
    const auto p = model::init_params(hp, t, 8);
    const auto ex = inst({{"DIAG A"}, {"DIAG A", "DIAG A"}});
    const auto pred = model::predict(p, ex, hp, true);
    const double all = masked_head_probability(p, *pred.trace, {0, 1, 2});
    const std::vector<double> zeros(3, 0.0);
    CHECK(all == model::head_probability(p, zeros, pred.trace->gap_out));
    CHECK_THROWS(masked_head_probability(p, *pred.trace, {3}));
}

TEST_CASE("contribution points are exact for exactly representable probabilities") {
    CodeContribution c;
    c.p1_original = 0.9;
    c.p1_perturbed = 0.6;
    CHECK(c.points() == 30.0);
    c.p1_original = 0.25;
    c.p1_perturbed = 0.75;
    CHECK(c.points() == -50.0);
}

TEST_CASE("explanations list admissions, distinct codes and merged totals") {
    const std::vector<std::string> toks{"DIAG X", "DIAG Y", "DIAG Z", "DIAG N"};
    const auto hp = hp_for(2, 3, 6, 4);
    auto p = model::zero_params(hp, onehot_table(toks));
    plant_detector(p, 0, {0, 1, 2});
    plant_detector(p, 1, {-1, 3, -1});
    plant_head(p, {2.0, -1.0}, 0.1);
    const auto e = inst({{"DIAG N", "DIAG Y", "DIAG N"}, {"DIAG X", "DIAG Y", "DIAG Z"}});
    const auto ex = explain_instance(p, e, hp);
    CHECK(ex.instance_id == e.id());
    CHECK(ex.p0 == 1.0 - ex.p1);
    REQUIRE(ex.admissions.size() == 2);
    CHECK(ex.admissions[0].gap == ehr::GapBucket::Empty);
    REQUIRE(ex.admissions[0].codes.size() == 2);
    CHECK(ex.admissions[0].codes[0].code == "DIAG N");
    CHECK(ex.admissions[0].codes[1].code == "DIAG Y");
    // Y in admission 0 only touches filter 1 (via N's window), in admission 1 filter 0
    CHECK(ex.admissions[0].codes[1].filters_zeroed == std::vector<std::size_t>{1});
    CHECK(ex.admissions[1].codes[1].filters_zeroed == std::vector<std::size_t>{0});
    REQUIRE(ex.merged.size() == 4);
    CHECK(ex.merged[1].code == "DIAG Y");
    CHECK(ex.merged[1].filters_zeroed == std::vector<std::size_t>{0, 1});
    const auto trace = *model::predict(p, e, hp, true).trace;
    CHECK(ex.merged[1].p1_perturbed == model::head_probability(p, std::vector<double>{0, 0}, trace.gap_out));

    const auto j = to_json(ex);
    CHECK(j["instance"] == e.id());
    CHECK(j["admissions"][1]["gap"] == "M1_3");
    CHECK(j["admissions"][1]["codes"][0]["code"] == "DIAG X");
    CHECK(j["admissions"][1]["codes"][0]["delta_label1"].get<double>() == ex.admissions[1].codes[0].points());
    CHECK(j["admissions"][1]["codes"][0]["delta_label0"].get<double>() == -ex.admissions[1].codes[0].points());
    CHECK(j["merged"].size() == 4);

    CHECK_THROWS_AS(build_filter_code_map(trace, inst({{"DIAG X"}}), hp), DataError);
}

TEST_CASE("aggregation averages over instances containing the code") {
    auto mk = [](std::vector<std::pair<std::string, double>> codes) {
        Explanation ex;
        for (const auto& [code, pts] : codes) {
            CodeContribution c;
            c.code = code;
            c.p1_original = 0.5;
            c.p1_perturbed = 0.5 - pts / 100.0;
            ex.merged.push_back(c);
        }
        return ex;
    };
    const std::vector<Explanation> exs{mk({{"A", 10}, {"B", 4}}), mk({{"A", 20}, {"C", 4}}), mk({{"B", 4}}),
                                       mk({{"D", -3}})};
    const auto r = aggregate_explanations(exs, ehr::Horizon::Days180);
    CHECK(r.instances == 4);
    CHECK(r.horizon == ehr::Horizon::Days180);
    REQUIRE(r.codes.size() == 4);
    CHECK(r.codes[0].code == "A");
    CHECK(r.codes[0].mean_points == doctest::Approx(15.0));
    CHECK(r.codes[0].support == 2);
    // B and C share a mean; B has more support
    CHECK(r.codes[1].code == "B");
    CHECK(r.codes[2].code == "C");
    CHECK(r.codes[3].code == "D");
    CHECK(r.codes[3].mean_points == doctest::Approx(-3.0));
    CHECK(r.top(2).size() == 2);
    CHECK(r.top(10).size() == 4);
    CHECK_THROWS_AS(aggregate_explanations({}, ehr::Horizon::Days30), DataError);

    std::ostringstream csv, bars, svg;
    write_aggregate_csv(csv, r.top(2));
    std::istringstream lines(csv.str());
    std::string header, first, second;
    std::getline(lines, header);
    std::getline(lines, first);
    std::getline(lines, second);
    CHECK(header == "code,mean_delta_p1,support");
    CHECK(first == "A,15,2");
    CHECK(second.substr(0, 2) == "B,");
    CHECK(std::stod(second.substr(2)) == r.codes[1].mean_points);
    CHECK(second.substr(second.rfind(',')) == ",2");
    write_text_bars(bars, r.codes, 10);
    CHECK(bars.str().find("A |##########") == 0);
    CHECK(bars.str().find("D |--") != std::string::npos);
    write_svg_bars(svg, r.codes, "top <codes> & more");
    CHECK(svg.str().find("top &lt;codes&gt; &amp; more") != std::string::npos);
    CHECK(svg.str().find("</svg>") != std::string::npos);
}

TEST_CASE("cohort aggregation does not depend on the thread count") {
    auto hp = hp_for(4, 3, 3, 2);
    emb::EmbeddingTable t(2, emb::OovPolicy::Zero, 0);
    t.add("DIAG A", std::vector<double>{0.5, -0.2});
    t.add("DIAG B", std::vector<double>{-0.9, 0.4});
    t.add("DIAG C", std::vector<double>{0.1, 1.0});
    const auto p = model::init_params(hp, t, 3);
    ehr::Cohort c;
    const std::vector<std::vector<std::vector<std::string>>> shapes{
        {{"DIAG A", "DIAG B"}}, {{"DIAG C"}, {"DIAG A", "DIAG C"}}, {{"DIAG B", "DIAG B", "DIAG A"}}};
    for (std::size_t i = 0; i < 9; ++i) {
        auto e = inst(shapes[i % 3]);
        e.patient_id = "P" + std::to_string(i);
        c.instances.push_back(e);
    }
    const auto a = aggregate(p, c, hp, 1);
    const auto b = aggregate(p, c, hp, 3);
    REQUIRE(a.codes.size() == b.codes.size());
    for (std::size_t i = 0; i < a.codes.size(); ++i) {
        CHECK(a.codes[i].code == b.codes[i].code);
        CHECK(a.codes[i].mean_points == b.codes[i].mean_points);
        CHECK(a.codes[i].support == b.codes[i].support);
    }
    CHECK(a.instances == 9);
}
