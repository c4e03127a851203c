#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "readmit/ehr.hpp"
#include "readmit/embeddings.hpp"
#include "readmit/error.hpp"
#include "readmit/eval.hpp"
#include "readmit/interpret.hpp"
#include "readmit/model.hpp"
#include "readmit/parallel.hpp"
#include "readmit/random.hpp"
#include "readmit/synth.hpp"

namespace fs = std::filesystem;
using namespace readmit;
using nlohmann::ordered_json;

namespace {

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot read " + p.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string digest(const fs::path& p) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng::fnv1a(read_file(p))));
    return buf;
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const fs::path& p) {
    if (p.has_parent_path()) ensure_dir(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + p.string() + " for writing");
    return out;
}

void write_json(const fs::path& p, const ordered_json& j) {
    auto out = open_out(p);
    out << j.dump(2) << '\n';
    if (!out) throw IoError("failed writing " + p.string());
}

// Records the command, its configuration and digests of inputs and outputs.
// File names only, so manifests do not depend on where a run happened.
void write_manifest(const fs::path& manifest, const std::string& command, const ordered_json& config,
                    const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs) {
    ordered_json m;
    m["command"] = command;
    m["config"] = config;
    auto list = [](const std::vector<fs::path>& files) {
        auto arr = ordered_json::array();
        for (const auto& f : files) arr.push_back({{"file", f.filename().string()}, {"fnv1a64", digest(f)}});
        return arr;
    };
    m["inputs"] = list(inputs);
    m["outputs"] = list(outputs);
    write_json(manifest, m);
}

// Manifest path for a single-file output.
fs::path sidecar(const fs::path& out) {
    fs::path p = out;
    p += ".manifest.json";
    return p;
}

std::size_t resolve_threads(std::size_t flag) { return flag > 0 ? flag : threads_from_env(1); }

ordered_json cohort_stats(const ehr::Cohort& c) {
    return {{"instances", c.instances.size()},
            {"patients", c.patients().size()},
            {"positives", c.positives()},
            {"negatives", c.negatives()}};
}

ehr::Cohort load_data(const fs::path& p) { return ehr::load_cohort(p, ehr::Provenance::MimicCsv); }

// ---------------------------------------------------------------------------

struct PreprocessArgs {
    std::string input, out, horizon = "30";
    std::uint64_t seed = 0, shuffle_seed = 0;
    std::size_t max_per_class = 0;
};

int cmd_preprocess(const PreprocessArgs& a) {
    const auto tables = ehr::MimicTables::in_directory(a.input);
    const bool synthetic = fs::exists(fs::path(a.input) / "ground_truth.json");
    const auto horizon = ehr::parse_horizon(a.horizon);
    ehr::LoadReport report;
    const auto raw = ehr::load_mimic_tables(tables, &report);
    const auto screened = ehr::screen_patients(raw);
    const auto episodes = ehr::build_episodes(screened, horizon, a.shuffle_seed);
    const auto provenance = synthetic ? ehr::Provenance::Synthetic : ehr::Provenance::MimicCsv;
    const auto cohort = ehr::balance_cohort(episodes, a.seed, provenance, a.max_per_class);
    const auto split = ehr::split_cohort(cohort, ehr::kDefaultSplit, a.seed);

    const fs::path out(a.out);
    ensure_dir(out);
    ehr::write_dataset(out / "train.jsonl", split.train.instances);
    ehr::write_dataset(out / "val.jsonl", split.val.instances);
    ehr::write_dataset(out / "test.jsonl", split.test.instances);

    std::set<std::string> patients;
    for (const auto& r : screened) patients.insert(r.patient_id);
    std::size_t pos = 0;
    for (const auto& e : episodes) pos += static_cast<std::size_t>(e.label);
    ordered_json stats;
    stats["provenance"] = std::string(ehr::to_string(provenance));
    stats["horizon"] = std::string(ehr::to_string(horizon));
    stats["load"] = {{"admissions_read", report.admissions_read},
                     {"dropped_bad_timestamp", report.dropped_bad_timestamp},
                     {"dropped_unknown_patient", report.dropped_unknown_patient},
                     {"dropped_no_codes", report.dropped_no_codes},
                     {"orphan_diagnoses", report.orphan_diagnoses},
                     {"orphan_procedures", report.orphan_procedures}};
    stats["screened"] = {{"admissions", screened.size()}, {"patients", patients.size()}};
    stats["episodes"] = {{"instances", episodes.size()}, {"positives", pos}, {"negatives", episodes.size() - pos}};
    stats["balanced"] = cohort_stats(cohort);
    stats["train"] = cohort_stats(split.train);
    stats["val"] = cohort_stats(split.val);
    stats["test"] = cohort_stats(split.test);
    write_json(out / "stats.json", stats);

    ordered_json config{{"horizon", a.horizon},
                        {"seed", a.seed},
                        {"shuffle_seed", a.shuffle_seed},
                        {"max_per_class", a.max_per_class}};
    write_manifest(out / "manifest.json", "preprocess", config, {tables.admissions, tables.patients, tables.diagnoses, tables.procedures},
                   {out / "train.jsonl", out / "val.jsonl", out / "test.jsonl", out / "stats.json"});
    std::cout << "preprocess: " << cohort.instances.size() << " balanced instances (" << split.train.instances.size()
              << " train, " << split.val.instances.size() << " val, " << split.test.instances.size() << " test)\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string out, preset = "motif", config, horizon;
    std::uint64_t seed = 0;
    std::size_t n_patients = 0;
};

int cmd_synth(const SynthArgs& a) {
    synth::SynthConfig cfg;
    if (!a.config.empty()) {
        try {
            cfg = synth::config_from_json(nlohmann::json::parse(read_file(a.config)));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(a.config + ": " + e.what());
        }
    } else if (a.preset == "motif") {
        cfg = synth::motif_benchmark(a.seed);
    } else if (a.preset == "gap") {
        cfg = synth::gap_benchmark(a.seed);
    } else if (a.preset == "plain") {
        cfg.seed = a.seed;
    } else {
        throw DataError("unknown synthetic preset '" + a.preset + "' (expected motif, gap or plain)");
    }
    cfg.seed = a.seed;
    if (a.n_patients > 0) cfg.n_patients = a.n_patients;
    if (!a.horizon.empty()) cfg.horizon = ehr::parse_horizon(a.horizon);

    const auto cohort = synth::generate_synthetic_cohort(cfg);
    const fs::path out(a.out);
    ensure_dir(out);
    const auto tables = ehr::MimicTables::in_directory(out);
    ehr::write_mimic_tables(cohort.admissions, tables);
    write_json(out / "ground_truth.json", cohort.ground_truth);
    write_manifest(out / "manifest.json", "synth", synth::to_json(cfg), {},
                   {tables.admissions, tables.patients, tables.diagnoses, tables.procedures,
                    out / "ground_truth.json"});
    std::cout << "synth: " << cohort.admissions.size() << " admissions for " << cfg.n_patients << " patients\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string train, val, out, preset, embeddings, hp_file, oov = "RANDOM_FIXED";
    bool random_init = false, best_val = false, reshuffle_codes = false, fine_tune = false;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs, embed_dim, max_codes, filters, dense_units, lstm_units, batch_size;
    std::optional<double> learning_rate;
    std::size_t threads = 0;
};

model::Hyperparameters resolve_hp(const TrainArgs& a, ehr::Horizon horizon) {
    model::Hyperparameters hp;
    if (!a.hp_file.empty()) {
        try {
            hp = model::hyperparameters_from_json(nlohmann::json::parse(read_file(a.hp_file)));
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(a.hp_file + ": " + e.what());
        }
    } else if (!a.preset.empty()) {
        hp = model::Hyperparameters::preset(a.preset);
    } else {
        hp = horizon == ehr::Horizon::Days30 ? model::Hyperparameters::paper_30d()
                                             : model::Hyperparameters::paper_180d();
    }
    if (a.seed) hp.seed = *a.seed;
    if (a.epochs) hp.epochs = *a.epochs;
    if (a.embed_dim) hp.embed_dim = *a.embed_dim;
    if (a.max_codes) hp.max_codes_per_admission = *a.max_codes;
    if (a.filters) hp.n_filters = *a.filters;
    if (a.dense_units) hp.dense_units = *a.dense_units;
    if (a.lstm_units) hp.lstm_units = *a.lstm_units;
    if (a.batch_size) hp.batch_size = *a.batch_size;
    if (a.learning_rate) hp.learning_rate = *a.learning_rate;
    if (a.best_val) hp.restore_best_val = true;
    if (a.reshuffle_codes) hp.reshuffle_codes_each_epoch = true;
    if (a.fine_tune) hp.fine_tune_embeddings = true;
    hp.validate();
    return hp;
}

int cmd_train(const TrainArgs& a) {
    const auto train_set = load_data(a.train);
    const auto val_set = load_data(a.val);
    if (train_set.horizon != val_set.horizon) throw DataError("training and validation horizons differ");
    const auto hp = resolve_hp(a, train_set.horizon);
    const auto policy = emb::parse_oov_policy(a.oov);

    std::vector<fs::path> inputs{a.train, a.val};
    emb::EmbeddingTable table;
    if (!a.embeddings.empty()) {
        emb::LoadOptions lo;
        lo.oov_policy = policy;
        lo.oov_seed = hp.seed;
        table = emb::load_embeddings(a.embeddings, hp.embed_dim, lo);
        inputs.emplace_back(a.embeddings);
    } else if (a.random_init) {
        auto all = train_set.instances;
        all.insert(all.end(), val_set.instances.begin(), val_set.instances.end());
        table = emb::random_init(emb::vocabulary_of(all), hp.embed_dim, hp.seed, 0.05, policy);
    } else {
        throw DataError("train needs --embeddings FILE or --random-init");
    }

    model::TrainOptions opts;
    opts.threads = resolve_threads(a.threads);
    opts.on_epoch = [&](const model::EpochRecord& r) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "epoch %zu/%zu train_loss %.4f train_acc %.4f val_loss %.4f val_acc %.4f\n",
                      r.epoch, hp.epochs, r.train_loss, r.train_acc, r.val_loss, r.val_acc);
        std::cerr << buf;
    };
    const auto result = model::train(train_set, val_set, table, hp, opts);

    const fs::path out(a.out);
    ensure_dir(out);
    model::save_checkpoint(result.params, hp, out / "model.ckpt");
    {
        auto h = open_out(out / "history.csv");
        model::write_history_csv(h, result.history);
    }
    // Validate the checkpoint by reading it back.
    const auto [reloaded, hp2] = model::load_checkpoint(out / "model.ckpt");
    if (!(hp2 == hp) || !(reloaded.embedding == result.params.embedding))
        throw FormatError("checkpoint did not round-trip");
    write_manifest(out / "manifest.json", "train", model::to_json(hp), inputs, {out / "model.ckpt", out / "history.csv"});
    return 0;
}

// ---------------------------------------------------------------------------

struct EvaluateArgs {
    std::string checkpoint, test, out, train, val, baseline;
    std::size_t runs = 1, threads = 0;
    std::uint64_t base_seed = 0;
    bool base_seed_set = false;
};

int cmd_evaluate(const EvaluateArgs& a) {
    const auto [params, hp] = model::load_checkpoint(a.checkpoint);
    const auto test = load_data(a.test);
    const auto threads = resolve_threads(a.threads);
    std::vector<fs::path> inputs{a.checkpoint, a.test};

    std::optional<ehr::Cohort> train_set, val_set;
    if (!a.train.empty()) {
        train_set = load_data(a.train);
        inputs.emplace_back(a.train);
    }
    if (!a.val.empty()) {
        val_set = load_data(a.val);
        inputs.emplace_back(a.val);
    }

    eval::MetricsReport report;
    const std::uint64_t base = a.base_seed_set ? a.base_seed : hp.seed;
    if (a.runs <= 1) {
        std::vector<double> p1(test.instances.size());
        parallel_for(p1.size(), threads,
                     [&](std::size_t i) { p1[i] = model::predict(params, test.instances[i], hp).p1; });
        std::vector<int> pred, truth;
        for (std::size_t i = 0; i < p1.size(); ++i) {
            pred.push_back(p1[i] >= 0.5 ? 1 : 0);
            truth.push_back(test.instances[i].label);
        }
        report = eval::summarize({eval::metrics(eval::confusion(pred, truth))});
    } else {
        if (!train_set || !val_set) throw DataError("--runs > 1 retrains and needs --train and --val");
        report = eval::evaluate_runs(
            [&](std::uint64_t seed) -> eval::Classifier {
                auto run_hp = hp;
                run_hp.seed = seed;
                model::TrainOptions opts;
                opts.threads = threads;
                auto trained = std::make_shared<model::NetParams>(
                    model::train(*train_set, *val_set, params.embedding, run_hp, opts).params);
                return [trained, run_hp](const ehr::EpisodeInstance& inst) {
                    return model::predict(*trained, inst, run_hp).p1;
                };
            },
            test, a.runs, base);
    }

    std::ostringstream csv;
    eval::write_metrics_header(csv);
    eval::write_metrics_rows(csv, "ConvLSTM1d", test.horizon, report);
    if (!a.baseline.empty()) {
        if (a.baseline != "logreg") throw DataError("unknown baseline '" + a.baseline + "' (expected logreg)");
        if (!train_set) throw DataError("--baseline logreg needs --train");
        // Full-batch gradient descent is deterministic, so every run agrees.
        const auto bow = eval::train_bow_logreg(*train_set);
        const auto base_report = eval::evaluate_runs(
            [&](std::uint64_t) -> eval::Classifier {
                return [&bow](const ehr::EpisodeInstance& inst) { return eval::predict_bow(bow, inst); };
            },
            test, std::max<std::size_t>(1, a.runs), base);
        eval::write_metrics_rows(csv, "LogisticRegression", test.horizon, base_report);
    }
    const fs::path out(a.out);
    {
        auto f = open_out(out);
        f << csv.str();
    }
    ordered_json config{{"runs", a.runs}, {"base_seed", base}, {"baseline", a.baseline}};
    write_manifest(sidecar(out), "evaluate", config, inputs, {out});
    char buf[96];
    std::snprintf(buf, sizeof buf, "evaluate: mean accuracy %.4f over %zu run(s)\n", report.mean_accuracy,
                  report.n_runs());
    std::cout << buf;
    return 0;
}

// ---------------------------------------------------------------------------

struct PredictArgs {
    std::string checkpoint, data, out;
    std::size_t threads = 0;
};

int cmd_predict(const PredictArgs& a) {
    const auto [params, hp] = model::load_checkpoint(a.checkpoint);
    const auto data = load_data(a.data);
    std::vector<model::Prediction> preds(data.instances.size());
    parallel_for(preds.size(), resolve_threads(a.threads),
                 [&](std::size_t i) { preds[i] = model::predict(params, data.instances[i], hp); });
    auto out = open_out(a.out);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        ordered_json j{{"id", data.instances[i].id()},
                       {"p1", preds[i].p1},
                       {"p0", preds[i].p0},
                       {"predicted", preds[i].hard_label()},
                       {"label", data.instances[i].label}};
        out << j.dump() << '\n';
    }
    out.close();
    write_manifest(sidecar(a.out), "predict", ordered_json::object(), {a.checkpoint, a.data}, {a.out});
    return 0;
}

// ---------------------------------------------------------------------------

struct ExplainArgs {
    std::string checkpoint, data, out;
    std::vector<std::string> ids;
    bool center_only = false;
};

int cmd_explain(const ExplainArgs& a) {
    const auto [params, hp] = model::load_checkpoint(a.checkpoint);
    const auto data = load_data(a.data);
    auto arr = ordered_json::array();
    std::set<std::string> wanted(a.ids.begin(), a.ids.end()), found;
    for (const auto& inst : data.instances) {
        if (!wanted.empty() && !wanted.count(inst.id())) continue;
        found.insert(inst.id());
        arr.push_back(interpret::to_json(interpret::explain_instance(params, inst, hp, a.center_only)));
    }
    for (const auto& id : wanted)
        if (!found.count(id)) throw DataError("instance '" + id + "' not found in " + a.data);
    write_json(a.out, arr);
    write_manifest(sidecar(a.out), "explain", {{"ids", a.ids}, {"center_only", a.center_only}}, {a.checkpoint, a.data},
                   {a.out});
    return 0;
}

// ---------------------------------------------------------------------------

struct ReportArgs {
    std::string checkpoint, data, out;
    std::size_t k = 20, threads = 0;
    bool center_only = false;
};

int cmd_report(const ReportArgs& a) {
    const auto [params, hp] = model::load_checkpoint(a.checkpoint);
    const auto data = load_data(a.data);
    const auto rep = interpret::aggregate(params, data, hp, resolve_threads(a.threads), a.center_only);
    const auto top = rep.top(a.k);
    const fs::path out(a.out);
    ensure_dir(out);
    {
        auto f = open_out(out / "aggregate.csv");
        interpret::write_aggregate_csv(f, top);
    }
    {
        auto f = open_out(out / "aggregate.txt");
        interpret::write_text_bars(f, top);
    }
    {
        auto f = open_out(out / "aggregate.svg");
        interpret::write_svg_bars(f, top,
                                  "Top " + std::to_string(top.size()) + " code contributions, " +
                                      std::string(ehr::to_string(rep.horizon)) + "-day readmission (points)");
    }
    ordered_json config{{"k", a.k}, {"center_only", a.center_only}, {"instances", rep.instances}};
    write_manifest(out / "manifest.json", "report", config, {a.checkpoint, a.data},
                   {out / "aggregate.csv", out / "aggregate.txt", out / "aggregate.svg"});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Readmission prediction with a ConvLSTM over admission code groups"};
    app.require_subcommand(1);

    PreprocessArgs pre;
    auto* c_pre = app.add_subcommand("preprocess", "MIMIC-style CSVs -> balanced train/val/test JSONL");
    c_pre->add_option("--input", pre.input, "Directory with ADMISSIONS, PATIENTS, DIAGNOSES_ICD, PROCEDURES_ICD")
        ->required();
    c_pre->add_option("--out", pre.out, "Output directory")->required();
    c_pre->add_option("--horizon", pre.horizon, "30 or 180")->check(CLI::IsMember({"30", "180"}));
    c_pre->add_option("--seed", pre.seed, "Balancing and split seed");
    c_pre->add_option("--shuffle-seed", pre.shuffle_seed, "Within-admission code shuffle seed");
    c_pre->add_option("--max-per-class", pre.max_per_class, "Cap on instances per label (0 = none)");

    SynthArgs syn;
    auto* c_syn = app.add_subcommand("synth", "Write a synthetic cohort in the MIMIC CSV layout");
    c_syn->add_option("--out", syn.out, "Output directory")->required();
    c_syn->add_option("--preset", syn.preset, "motif, gap or plain");
    c_syn->add_option("--config", syn.config, "Generator config JSON (overrides --preset)");
    c_syn->add_option("--seed", syn.seed, "Generator seed");
    c_syn->add_option("--patients", syn.n_patients, "Override the number of patients");
    c_syn->add_option("--horizon", syn.horizon, "30 or 180")->check(CLI::IsMember({"30", "180"}));

    TrainArgs tr;
    auto* c_tr = app.add_subcommand("train", "Train the network and write a checkpoint and history");
    c_tr->add_option("--train", tr.train, "Training JSONL")->required();
    c_tr->add_option("--val", tr.val, "Validation JSONL")->required();
    c_tr->add_option("--out", tr.out, "Output directory")->required();
    c_tr->add_option("--preset", tr.preset, "paper-30d or paper-180d (default follows the data horizon)")
        ->check(CLI::IsMember({"paper-30d", "paper-180d"}));
    c_tr->add_option("--hparams", tr.hp_file, "Hyperparameter JSON (overrides --preset)");
    c_tr->add_option("--embeddings", tr.embeddings, "Word2vec-style text embeddings");
    c_tr->add_flag("--random-init", tr.random_init, "Seeded random embeddings for the data vocabulary");
    c_tr->add_option("--oov", tr.oov, "RANDOM_FIXED or ZERO");
    c_tr->add_option("--seed", tr.seed, "Training seed");
    c_tr->add_option("--epochs", tr.epochs);
    c_tr->add_option("--embed-dim", tr.embed_dim);
    c_tr->add_option("--max-codes", tr.max_codes, "Positions per admission");
    c_tr->add_option("--filters", tr.filters);
    c_tr->add_option("--dense-units", tr.dense_units);
    c_tr->add_option("--lstm-units", tr.lstm_units);
    c_tr->add_option("--batch-size", tr.batch_size);
    c_tr->add_option("--learning-rate", tr.learning_rate);
    c_tr->add_flag("--best-val", tr.best_val, "Keep the epoch with the best validation accuracy");
    c_tr->add_flag("--reshuffle-codes", tr.reshuffle_codes, "Reshuffle codes within admissions every epoch");
    c_tr->add_flag("--fine-tune", tr.fine_tune, "Update embeddings during training");
    c_tr->add_option("--threads", tr.threads, "Worker threads (default READMIT_THREADS or 1)");

    EvaluateArgs ev;
    auto* c_ev = app.add_subcommand("evaluate", "Confusion-matrix metrics on a test split");
    c_ev->add_option("--checkpoint", ev.checkpoint)->required();
    c_ev->add_option("--test", ev.test, "Test JSONL")->required();
    c_ev->add_option("--out", ev.out, "Metrics CSV")->required();
    c_ev->add_option("--runs", ev.runs, "Retrain this many times with consecutive seeds and average");
    c_ev->add_option("--train", ev.train, "Training JSONL (for --runs and --baseline)");
    c_ev->add_option("--val", ev.val, "Validation JSONL (for --runs)");
    c_ev->add_option("--baseline", ev.baseline, "Add baseline rows: logreg");
    auto* seed_opt = c_ev->add_option("--seed", ev.base_seed, "First seed for --runs (default: checkpoint seed)");
    c_ev->add_option("--threads", ev.threads);

    PredictArgs pr;
    auto* c_pr = app.add_subcommand("predict", "Per-instance probabilities as JSONL");
    c_pr->add_option("--checkpoint", pr.checkpoint)->required();
    c_pr->add_option("--data", pr.data)->required();
    c_pr->add_option("--out", pr.out)->required();
    c_pr->add_option("--threads", pr.threads);

    ExplainArgs ex;
    auto* c_ex = app.add_subcommand("explain", "Per-code contributions for instances");
    c_ex->add_option("--checkpoint", ex.checkpoint)->required();
    c_ex->add_option("--data", ex.data)->required();
    c_ex->add_option("--out", ex.out, "Explanation JSON")->required();
    c_ex->add_option("--id", ex.ids, "Instance id <patient>:<steps> (repeatable; default all)");
    c_ex->add_flag("--center-only", ex.center_only, "Attribute each filter to its center code only");

    ReportArgs rp;
    auto* c_rp = app.add_subcommand("report", "Aggregate top-k code contributions");
    c_rp->add_option("--checkpoint", rp.checkpoint)->required();
    c_rp->add_option("--data", rp.data)->required();
    c_rp->add_option("--out", rp.out, "Output directory")->required();
    c_rp->add_option("--k", rp.k, "Number of codes to report");
    c_rp->add_flag("--center-only", rp.center_only);
    c_rp->add_option("--threads", rp.threads);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*c_pre) return cmd_preprocess(pre);
        if (*c_syn) return cmd_synth(syn);
        if (*c_tr) return cmd_train(tr);
        if (*c_ev) {
            ev.base_seed_set = seed_opt->count() > 0;
            return cmd_evaluate(ev);
        }
        if (*c_pr) return cmd_predict(pr);
        if (*c_ex) return cmd_explain(ex);
        if (*c_rp) return cmd_report(rp);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
