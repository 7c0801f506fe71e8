#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tokentraj/common.hpp"
#include "tokentraj/csv.hpp"
#include "tokentraj/explainer.hpp"
#include "tokentraj/metrics.hpp"
#include "tokentraj/schema.hpp"
#include "tokentraj/seqmodel.hpp"
#include "tokentraj/synthcohort.hpp"
#include "tokentraj/tokenizer.hpp"
#include "tokentraj/trainer.hpp"
#include "tokentraj/transitions.hpp"

namespace fs = std::filesystem;
using namespace tokentraj;

namespace {

constexpr const char* kToolVersion = "0.1.0";

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

LogLevel log_level() {
    static const LogLevel level = [] {
        const char* env = std::getenv("TOKENTRAJ_LOG");
        if (env == nullptr) return LogLevel::Info;
        const std::string s(env);
        if (s == "error") return LogLevel::Error;
        if (s == "info") return LogLevel::Info;
        if (s == "debug") return LogLevel::Debug;
        std::fprintf(stderr, "tokentraj: ignoring unknown TOKENTRAJ_LOG value '%s'\n", s.c_str());
        return LogLevel::Info;
    }();
    return level;
}

void log_info(const std::string& msg) {
    if (log_level() >= LogLevel::Info) std::fprintf(stderr, "[info] %s\n", msg.c_str());
}

void log_debug(const std::string& msg) {
    if (log_level() >= LogLevel::Debug) std::fprintf(stderr, "[debug] %s\n", msg.c_str());
}

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::map<std::string, std::string> read_config(const std::string& path) {
    if (path.empty()) return {};
    return load_config_file(path);
}

// Every command drops a manifest next to its outputs: the command name, the
// effective configuration, the seed, and content hashes of all files read
// and written, so any artifact can be traced back to its inputs.
struct Manifest {
    std::string command;
    std::map<std::string, std::string> config;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
};

void write_manifest(const Manifest& m, const fs::path& out_dir, const std::string& stem) {
    nlohmann::json j;
    j["format"] = "tokentraj-manifest-v1";
    j["version"] = kToolVersion;
    j["command"] = m.command;
    j["config"] = m.config;
    if (m.seed) j["seed"] = *m.seed;
    nlohmann::json inputs = nlohmann::json::object();
    for (const std::string& p : m.inputs) {
        inputs[fs::path(p).filename().string()] = hash_hex(fnv1a64_file(p));
    }
    j["inputs"] = inputs;
    nlohmann::json outputs = nlohmann::json::object();
    for (const std::string& p : m.outputs) {
        outputs[fs::path(p).filename().string()] = hash_hex(fnv1a64_file(p));
    }
    j["outputs"] = outputs;
    const fs::path path = out_dir / (stem + ".json");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open file for writing: " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw DataError("failed writing file: " + path.string());
}

std::string sanitize(const std::string& s) {
    std::string out;
    for (char c : s) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                        (c >= '0' && c <= '9') || c == '_' || c == '-';
        out += ok ? c : '_';
    }
    return out.empty() ? std::string("x") : out;
}

std::string fmt_hours(double t) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%g", t);
    std::string s(buf);
    for (char& c : s) {
        if (c == '.') c = 'p';
        if (c == '-') c = 'm';
    }
    return s;
}

struct LoadedStays {
    VariableDictionary dict;
    std::vector<StayRecord> records;
    std::vector<TimeWindowedStay> windowed;
    std::map<std::string, std::size_t> by_id;
};

LoadedStays load_windowed(const std::string& dict_path, const std::string& obs_path,
                          const TrainConfig& cfg) {
    LoadedStays out;
    out.dict = load_dictionary(dict_path);
    out.records = load_observations(obs_path, out.dict);
    const std::optional<int> limit =
        cfg.window_limit > 0 ? std::optional<int>(cfg.window_limit) : std::nullopt;
    for (std::size_t i = 0; i < out.records.size(); ++i) {
        out.windowed.push_back(window_stay(out.records[i], cfg.window_hours, limit));
        out.by_id[out.records[i].patient_id] = i;
    }
    return out;
}

std::vector<TimeWindowedStay> select_windowed(const LoadedStays& data,
                                              const std::vector<std::string>& ids) {
    std::vector<TimeWindowedStay> out;
    for (const std::string& id : ids) {
        auto it = data.by_id.find(id);
        if (it == data.by_id.end()) {
            throw DataError("patient '" + id + "' has no observations");
        }
        out.push_back(data.windowed[it->second]);
    }
    return out;
}

std::map<std::string, int> outcome_map(const std::vector<OutcomeLabel>& outcomes) {
    std::map<std::string, int> out;
    for (const OutcomeLabel& o : outcomes) {
        if (!out.emplace(o.patient_id, o.gose_index).second) {
            throw DataError("duplicate outcome for patient '" + o.patient_id + "'");
        }
    }
    return out;
}

std::string model_name(int repeat, int fold) {
    return "model_r" + std::to_string(repeat) + "_f" + std::to_string(fold) + ".json";
}
std::string vocab_name(int repeat, int fold) {
    return "vocab_r" + std::to_string(repeat) + "_f" + std::to_string(fold) + ".json";
}

// ---------------------------------------------------------------- synth ----

int run_synth(const std::string& config_path, std::uint64_t seed, const std::string& out_dir) {
    SynthConfig cfg = synth_config_from_map(read_config(config_path));
    cfg.seed = seed;
    fs::create_directories(out_dir);

    const SynthCohort cohort = generate_cohort(cfg);
    const fs::path dir(out_dir);
    const std::string dict_path = (dir / "dictionary.csv").string();
    const std::string obs_path = (dir / "observations.csv").string();
    const std::string outcomes_path = (dir / "outcomes.csv").string();
    save_dictionary(cohort.dictionary, dict_path);
    save_observations(cohort.stays, obs_path);
    save_outcomes(cohort.outcomes, outcomes_path);
    log_info("synth: wrote " + std::to_string(cohort.stays.size()) + " stays to " + out_dir);

    Manifest m;
    m.command = "synth";
    m.config = synth_config_to_map(cfg);
    m.seed = seed;
    if (!config_path.empty()) m.inputs.push_back(config_path);
    m.outputs = {dict_path, obs_path, outcomes_path};
    write_manifest(m, dir, "manifest_synth");
    return 0;
}

// ------------------------------------------------------------ fit-vocab ----

int run_fit_vocab(const std::string& dict_path, const std::string& obs_path,
                  const std::string& config_path, const std::string& out_dir) {
    const TrainConfig cfg = train_config_from_map(read_config(config_path));
    const LoadedStays data = load_windowed(dict_path, obs_path, cfg);
    const Vocabulary vocab = fit_vocabulary(data.windowed, data.dict, cfg.bin_count);
    fs::create_directories(out_dir);
    const std::string vocab_path = (fs::path(out_dir) / "vocab.json").string();
    vocab.save(vocab_path);
    log_info("fit-vocab: " + std::to_string(vocab.size()) + " tokens");

    Manifest m;
    m.command = "fit-vocab";
    m.config = train_config_to_map(cfg);
    m.inputs = {dict_path, obs_path};
    if (!config_path.empty()) m.inputs.push_back(config_path);
    m.outputs = {vocab_path};
    write_manifest(m, out_dir, "manifest_fit-vocab");
    return 0;
}

// ---------------------------------------------------------------- train ----

struct FoldJob {
    FoldAssignment assignment;
    Vocabulary vocab;
    TrainResult result;
    std::exception_ptr error;
};

std::vector<FoldAssignment> select_assignments(std::vector<FoldAssignment> all, int repeat,
                                               int fold) {
    std::vector<FoldAssignment> out;
    for (FoldAssignment& a : all) {
        if (repeat >= 0 && a.repeat != repeat) continue;
        if (fold >= 0 && a.fold != fold) continue;
        out.push_back(std::move(a));
    }
    if (out.empty()) {
        throw UsageError("no (repeat, fold) job matches --repeat/--fold with the configured "
                         "cv_repeats/cv_folds");
    }
    return out;
}

int run_train(const std::string& dict_path, const std::string& obs_path,
              const std::string& outcomes_path, const std::string& config_path,
              std::uint64_t seed, const std::string& out_dir, int repeat, int fold, int jobs) {
    if (jobs < 1) throw UsageError("--jobs must be >= 1");
    const TrainConfig cfg = train_config_from_map(read_config(config_path));
    const LoadedStays data = load_windowed(dict_path, obs_path, cfg);
    const std::vector<OutcomeLabel> outcomes = load_outcomes(outcomes_path);
    const std::map<std::string, int> labels = outcome_map(outcomes);

    for (const auto& [id, idx] : data.by_id) {
        if (!labels.count(id)) throw DataError("patient '" + id + "' has no outcome label");
    }
    for (const OutcomeLabel& o : outcomes) {
        if (!data.by_id.count(o.patient_id)) {
            throw DataError("patient '" + o.patient_id + "' has an outcome but no observations");
        }
    }

    std::vector<FoldJob> fold_jobs;
    for (FoldAssignment& a :
         select_assignments(make_partitions(outcomes, cfg.cv_repeats, cfg.cv_folds, seed),
                            repeat, fold)) {
        FoldJob job;
        job.assignment = std::move(a);
        fold_jobs.push_back(std::move(job));
    }

    auto run_job = [&](FoldJob& job) {
        const FoldAssignment& a = job.assignment;
        std::set<std::string> held_out(a.test_patients.begin(), a.test_patients.end());
        held_out.insert(a.val_patients.begin(), a.val_patients.end());
        std::vector<std::string> train_ids;
        for (const OutcomeLabel& o : outcomes) {
            if (!held_out.count(o.patient_id)) train_ids.push_back(o.patient_id);
        }

        const std::vector<TimeWindowedStay> train_windowed = select_windowed(data, train_ids);
        job.vocab = fit_vocabulary(train_windowed, data.dict, cfg.bin_count);

        std::vector<TokenizedStay> train_tok, val_tok;
        std::vector<int> train_y, val_y;
        for (std::size_t i = 0; i < train_ids.size(); ++i) {
            train_tok.push_back(tokenize_stay(train_windowed[i], job.vocab));
            train_y.push_back(labels.at(train_ids[i]));
        }
        for (const TimeWindowedStay& s : select_windowed(data, a.val_patients)) {
            val_tok.push_back(tokenize_stay(s, job.vocab));
            val_y.push_back(labels.at(s.patient_id));
        }

        const std::uint64_t fold_seed = derive_seed(seed, a.repeat, a.fold);
        job.result = train_fold(train_tok, train_y, val_tok, val_y, cfg, job.vocab.size(),
                                fold_seed, a.repeat, a.fold);
    };

    const int workers = std::min<int>(jobs, static_cast<int>(fold_jobs.size()));
    if (workers <= 1) {
        for (FoldJob& job : fold_jobs) run_job(job);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (;;) {
                    const std::size_t i = next.fetch_add(1);
                    if (i >= fold_jobs.size()) break;
                    try {
                        run_job(fold_jobs[i]);
                    } catch (...) {
                        fold_jobs[i].error = std::current_exception();
                    }
                }
            });
        }
        for (std::thread& t : pool) t.join();
        for (const FoldJob& job : fold_jobs) {
            if (job.error) std::rethrow_exception(job.error);
        }
    }

    fs::create_directories(out_dir);
    const fs::path dir(out_dir);
    Manifest m;
    m.command = "train";
    m.config = train_config_to_map(cfg);
    m.seed = seed;
    m.inputs = {dict_path, obs_path, outcomes_path};
    if (!config_path.empty()) m.inputs.push_back(config_path);

    std::vector<TrainLogRow> log_rows;
    for (FoldJob& job : fold_jobs) {
        const FoldAssignment& a = job.assignment;
        const std::string vpath = (dir / vocab_name(a.repeat, a.fold)).string();
        const std::string mpath = (dir / model_name(a.repeat, a.fold)).string();
        job.vocab.save(vpath);

        ModelFile file;
        file.model = std::move(job.result.model);
        file.vocab_hash = hash_hex(job.vocab.content_hash());
        file.seed = derive_seed(seed, a.repeat, a.fold);
        file.repeat = a.repeat;
        file.fold = a.fold;
        file.config = train_config_to_map(cfg);
        file.test_patients = a.test_patients;
        file.val_patients = a.val_patients;
        save_model(file, mpath);

        log_rows.insert(log_rows.end(), job.result.log.begin(), job.result.log.end());
        m.outputs.push_back(vpath);
        m.outputs.push_back(mpath);
        log_info("train: repeat " + std::to_string(a.repeat) + " fold " + std::to_string(a.fold) +
                 " best epoch " + std::to_string(job.result.best_epoch) + " val dxy " +
                 format_double(job.result.best_val_dxy));
    }

    std::sort(log_rows.begin(), log_rows.end(), [](const TrainLogRow& x, const TrainLogRow& y) {
        if (x.repeat != y.repeat) return x.repeat < y.repeat;
        if (x.fold != y.fold) return x.fold < y.fold;
        return x.epoch < y.epoch;
    });
    const bool single = fold_jobs.size() == 1;
    const std::string log_path =
        (dir / (single ? "training_log_r" + std::to_string(fold_jobs[0].assignment.repeat) +
                             "_f" + std::to_string(fold_jobs[0].assignment.fold) + ".csv"
                       : std::string("training_log.csv")))
            .string();
    save_training_log(log_rows, log_path);
    m.outputs.push_back(log_path);
    write_manifest(m, dir, "manifest_train");
    return 0;
}

// -------------------------------------------------------------- predict ----

std::vector<std::pair<int, int>> find_models(const fs::path& dir, int repeat, int fold) {
    std::vector<std::pair<int, int>> found;
    if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        int r = -1, f = -1;
        if (std::sscanf(name.c_str(), "model_r%d_f%d.json", &r, &f) != 2) continue;
        if (name != model_name(r, f)) continue;
        if (repeat >= 0 && r != repeat) continue;
        if (fold >= 0 && f != fold) continue;
        found.emplace_back(r, f);
    }
    std::sort(found.begin(), found.end());
    if (found.empty()) {
        throw DataError("no model files found in " + dir.string() +
                        (repeat >= 0 || fold >= 0 ? " matching the --repeat/--fold selection"
                                                  : ""));
    }
    return found;
}

int run_predict(const std::string& dict_path, const std::string& obs_path,
                const std::string& out_dir, int repeat, int fold) {
    const fs::path dir(out_dir);
    const std::vector<std::pair<int, int>> models = find_models(dir, repeat, fold);

    Manifest m;
    m.command = "predict";
    m.inputs = {dict_path, obs_path};

    std::vector<PredictionRow> rows;
    std::optional<LoadedStays> data;
    for (const auto& [r, f] : models) {
        const std::string mpath = (dir / model_name(r, f)).string();
        const std::string vpath = (dir / vocab_name(r, f)).string();
        const ModelFile file = load_model(mpath);
        const Vocabulary vocab = Vocabulary::load(vpath);
        if (hash_hex(vocab.content_hash()) != file.vocab_hash) {
            throw DataError("vocabulary " + vpath + " does not match the hash in " + mpath);
        }
        const TrainConfig cfg = train_config_from_map(file.config);
        if (!data) data = load_windowed(dict_path, obs_path, cfg);

        std::vector<TokenizedStay> test_tok;
        for (const TimeWindowedStay& s : select_windowed(*data, file.test_patients)) {
            test_tok.push_back(tokenize_stay(s, vocab));
        }
        const std::vector<PredictionRow> fold_rows =
            predict_stays(file.model, test_tok, file.repeat, file.fold);
        rows.insert(rows.end(), fold_rows.begin(), fold_rows.end());
        m.inputs.push_back(mpath);
        m.inputs.push_back(vpath);
        log_debug("predict: repeat " + std::to_string(r) + " fold " + std::to_string(f) + ": " +
                  std::to_string(fold_rows.size()) + " rows");
    }

    std::sort(rows.begin(), rows.end(), [](const PredictionRow& a, const PredictionRow& b) {
        if (a.repeat != b.repeat) return a.repeat < b.repeat;
        if (a.fold != b.fold) return a.fold < b.fold;
        if (a.patient_id != b.patient_id) return a.patient_id < b.patient_id;
        return a.window < b.window;
    });
    const std::string pred_path = (dir / "predictions.csv").string();
    save_predictions(rows, pred_path);
    log_info("predict: wrote " + std::to_string(rows.size()) + " rows");
    m.outputs = {pred_path};
    write_manifest(m, dir, "manifest_predict");
    return 0;
}

// ------------------------------------------------------------- baseline ----

int run_baseline(const std::string& dict_path, const std::string& obs_path,
                 const std::string& outcomes_path, const std::string& config_path,
                 std::uint64_t seed, const std::string& out_dir, int repeat, int fold) {
    const TrainConfig cfg = train_config_from_map(read_config(config_path));
    const LoadedStays data = load_windowed(dict_path, obs_path, cfg);
    const std::vector<OutcomeLabel> outcomes = load_outcomes(outcomes_path);
    const std::map<std::string, int> labels = outcome_map(outcomes);

    const std::vector<FoldAssignment> assignments = select_assignments(
        make_partitions(outcomes, cfg.cv_repeats, cfg.cv_folds, seed), repeat, fold);

    std::vector<PredictionRow> rows;
    for (const FoldAssignment& a : assignments) {
        std::set<std::string> held_out(a.test_patients.begin(), a.test_patients.end());
        held_out.insert(a.val_patients.begin(), a.val_patients.end());
        std::vector<std::string> train_ids;
        for (const OutcomeLabel& o : outcomes) {
            if (!held_out.count(o.patient_id)) train_ids.push_back(o.patient_id);
        }
        const std::vector<TimeWindowedStay> train_windowed = select_windowed(data, train_ids);
        const Vocabulary vocab = fit_vocabulary(train_windowed, data.dict, cfg.bin_count);

        // the static model sees exactly the admission-window tokens of the
        // static variables, presence-coded
        const std::vector<std::string> var_of = token_variable_map(vocab);
        std::vector<int> feature_ids;
        for (int id = 0; id < vocab.size(); ++id) {
            if (var_of[static_cast<std::size_t>(id)].empty()) continue;
            const VariableSpec* spec = data.dict.find(var_of[static_cast<std::size_t>(id)]);
            if (spec != nullptr && spec->is_static) feature_ids.push_back(id);
        }
        if (feature_ids.empty()) throw DataError("baseline: dictionary has no static variables");
        std::map<int, int> feature_of;
        for (std::size_t i = 0; i < feature_ids.size(); ++i) {
            feature_of[feature_ids[i]] = static_cast<int>(i);
        }

        auto featurize = [&](const TokenizedStay& stay) {
            Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<int>(feature_ids.size()));
            for (int id : stay.windows.front().ids) {
                auto it = feature_of.find(id);
                if (it != feature_of.end()) x(it->second) = 1.0;
            }
            return x;
        };

        Eigen::MatrixXd features(static_cast<int>(train_ids.size()),
                                 static_cast<int>(feature_ids.size()));
        std::vector<int> train_y;
        for (std::size_t i = 0; i < train_ids.size(); ++i) {
            features.row(static_cast<int>(i)) =
                featurize(tokenize_stay(train_windowed[i], vocab)).transpose();
            train_y.push_back(labels.at(train_ids[i]));
        }
        const StaticBaseline model = fit_static_baseline(features, train_y);
        log_debug("baseline: repeat " + std::to_string(a.repeat) + " fold " +
                  std::to_string(a.fold) + (model.converged ? " converged in " : " stopped at ") +
                  std::to_string(model.iterations) + " iterations");

        for (const TimeWindowedStay& s : select_windowed(data, a.test_patients)) {
            const TokenizedStay tok = tokenize_stay(s, vocab);
            const Eigen::VectorXd p = static_baseline_probs(model, featurize(tok));
            const std::vector<double> pv(p.data(), p.data() + p.size());
            const Eigen::VectorXd q = class_to_threshold_probs(pv);
            const double expected = expected_index(pv);
            for (std::size_t w = 0; w < tok.windows.size(); ++w) {
                PredictionRow row;
                row.repeat = a.repeat;
                row.fold = a.fold;
                row.patient_id = s.patient_id;
                row.window = static_cast<int>(w);
                row.t_hours = (static_cast<double>(w) + 1.0) * cfg.window_hours;
                row.q = q;
                row.p = p;
                row.expected = expected;
                rows.push_back(std::move(row));
            }
        }
    }

    std::sort(rows.begin(), rows.end(), [](const PredictionRow& a, const PredictionRow& b) {
        if (a.repeat != b.repeat) return a.repeat < b.repeat;
        if (a.fold != b.fold) return a.fold < b.fold;
        if (a.patient_id != b.patient_id) return a.patient_id < b.patient_id;
        return a.window < b.window;
    });
    fs::create_directories(out_dir);
    const std::string path = (fs::path(out_dir) / "baseline_predictions.csv").string();
    save_predictions(rows, path);
    log_info("baseline: wrote " + std::to_string(rows.size()) + " rows");

    Manifest m;
    m.command = "baseline";
    m.config = train_config_to_map(cfg);
    m.seed = seed;
    m.inputs = {dict_path, obs_path, outcomes_path};
    if (!config_path.empty()) m.inputs.push_back(config_path);
    m.outputs = {path};
    write_manifest(m, out_dir, "manifest_baseline");
    return 0;
}

// ------------------------------------------------------------- evaluate ----

int run_evaluate(const std::string& dict_path, const std::string& obs_path,
                 const std::string& outcomes_path, const std::string& config_path,
                 std::uint64_t seed, const std::string& out_dir,
                 const std::string& alignment_text, std::vector<double> t_list) {
    const TrainConfig cfg = train_config_from_map(read_config(config_path));
    const Alignment alignment = parse_alignment(alignment_text);
    if (t_list.empty()) t_list = {24.0, 48.0, 72.0, 120.0, 168.0};

    const LoadedStays data = load_windowed(dict_path, obs_path, cfg);
    const std::map<std::string, int> labels = outcome_map(load_outcomes(outcomes_path));
    std::map<std::string, double> stay_hours;
    for (const StayRecord& r : data.records) stay_hours[r.patient_id] = r.stay_length_hours;

    const fs::path dir(out_dir);
    const std::string pred_path = (dir / "predictions.csv").string();
    const std::vector<PredictionRow> rows = load_predictions(pred_path);
    const std::string base_path = (dir / "baseline_predictions.csv").string();
    std::vector<PredictionRow> base_rows;
    const bool have_baseline = fs::exists(base_path);
    if (have_baseline) base_rows = load_predictions(base_path);

    const MetricFn dxy_fn = [](std::span<const double> s, std::span<const int> y) {
        return somers_dxy(s, y);
    };

    struct OutRow {
        std::string alignment;
        double t = 0.0;
        std::string metric;
        double point = 0.0;
        std::optional<double> lo, hi;
        int n = 0;
    };
    std::vector<OutRow> out_rows;
    std::vector<std::string> curve_files;

    constexpr int kResamples = 1000;
    for (std::size_t ti = 0; ti < t_list.size(); ++ti) {
        const double t = t_list[ti];
        const std::string aname = alignment_name(alignment);
        auto slot_seed = [&](int slot) {
            return derive_seed(seed, 7000 + static_cast<std::uint64_t>(ti),
                               static_cast<std::uint64_t>(slot));
        };

        const std::vector<RepeatSamples> panel = timepoint_slice(
            rows, stay_hours, labels, cfg.window_hours, alignment, t, kExpectedScore);
        const BootstrapResult dxy = bbc_cv(panel, dxy_fn, kResamples, slot_seed(0));
        out_rows.push_back({aname, t, "dxy", dxy.point, dxy.lo, dxy.hi, dxy.n_patients});
        log_info("evaluate: " + aname + " t=" + format_double(t) + " dxy " +
                 format_double(dxy.point) + " [" + format_double(dxy.lo) + ", " +
                 format_double(dxy.hi) + "] n=" + std::to_string(dxy.n_patients));

        if (have_baseline) {
            const std::vector<RepeatSamples> base_panel = timepoint_slice(
                base_rows, stay_hours, labels, cfg.window_hours, alignment, t, kExpectedScore);
            const BootstrapResult bdxy = bbc_cv(base_panel, dxy_fn, kResamples, slot_seed(1));
            out_rows.push_back(
                {aname, t, "dxy_baseline", bdxy.point, bdxy.lo, bdxy.hi, bdxy.n_patients});
            const BootstrapResult added =
                bbc_cv_difference(panel, base_panel, dxy_fn, kResamples, slot_seed(2));
            out_rows.push_back(
                {aname, t, "added_dxy", added.point, added.lo, added.hi, added.n_patients});
        }

        // per-threshold calibration, pooled over repeats and patients
        std::vector<std::vector<RepeatSamples>> threshold_panels;
        for (int k = 0; k < kOutcomeClasses - 1; ++k) {
            threshold_panels.push_back(timepoint_slice(rows, stay_hours, labels,
                                                       cfg.window_hours, alignment, t, k));
        }
        std::vector<double> pooled_labels_d;
        Eigen::MatrixXd pooled_q;
        std::vector<int> pooled_labels;
        {
            std::size_t total = 0;
            for (const RepeatSamples& rs : threshold_panels[0]) total += rs.labels.size();
            pooled_q.resize(static_cast<int>(total), kOutcomeClasses - 1);
            std::size_t at = 0;
            for (std::size_t ri = 0; ri < threshold_panels[0].size(); ++ri) {
                const RepeatSamples& rs0 = threshold_panels[0][ri];
                for (std::size_t i = 0; i < rs0.labels.size(); ++i, ++at) {
                    pooled_labels.push_back(rs0.labels[i]);
                    for (int k = 0; k < kOutcomeClasses - 1; ++k) {
                        pooled_q(static_cast<int>(at), k) = threshold_panels[k][ri].scores[i];
                    }
                }
            }
        }

        const std::string curve_path =
            (dir / ("calibration_t" + fmt_hours(t) + "_" + aname + ".csv")).string();
        std::ofstream curve_out(curve_path, std::ios::binary);
        if (!curve_out) throw DataError("cannot open file for writing: " + curve_path);
        curve_out << "threshold,grid_p,curve,n_local\n";

        for (int k = 0; k < kOutcomeClasses - 1; ++k) {
            const MetricFn slope_fn = [k](std::span<const double> s, std::span<const int> y) {
                std::vector<int> binary(y.size());
                for (std::size_t i = 0; i < y.size(); ++i) binary[i] = y[i] > k ? 1 : 0;
                return calibration_slope(s, binary);
            };
            const std::string gt = threshold_name(k);
            try {
                const BootstrapResult slope =
                    bbc_cv(threshold_panels[k], slope_fn, kResamples, slot_seed(10 + k));
                out_rows.push_back({aname, t, "calibration_slope_" + gt, slope.point, slope.lo,
                                    slope.hi, slope.n_patients});
            } catch (const UndefinedMetricError&) {
                log_info("evaluate: calibration slope undefined for " + gt + " at t=" +
                         format_double(t));
            }

            std::vector<double> probs(pooled_q.col(k).data(),
                                      pooled_q.col(k).data() + pooled_q.rows());
            std::vector<int> binary(pooled_labels.size());
            for (std::size_t i = 0; i < pooled_labels.size(); ++i) {
                binary[i] = pooled_labels[i] > k ? 1 : 0;
            }
            const CalibrationCurve curve = smoothed_calibration_curve(probs, binary);
            for (std::size_t g = 0; g < curve.grid.size(); ++g) {
                curve_out << gt << ',' << format_double(curve.grid[g]) << ','
                          << format_double(curve.value[g]) << ',' << curve.n << '\n';
            }
            out_rows.push_back(
                {aname, t, "calibration_mae_" + gt, curve.mae, std::nullopt, std::nullopt,
                 static_cast<int>(pooled_labels.size())});
        }
        if (!curve_out) throw DataError("failed writing file: " + curve_path);
        curve_files.push_back(curve_path);

        try {
            const double mean_slope = mean_calibration_slope(pooled_q, pooled_labels);
            out_rows.push_back({aname, t, "calibration_slope_mean", mean_slope, std::nullopt,
                                std::nullopt, static_cast<int>(pooled_labels.size())});
        } catch (const UndefinedMetricError&) {
            log_info("evaluate: mean calibration slope undefined at t=" + format_double(t));
        }
    }

    const std::string eval_path = (dir / "evaluation.csv").string();
    std::ofstream out(eval_path, std::ios::binary);
    if (!out) throw DataError("cannot open file for writing: " + eval_path);
    out << "alignment,t_hours,metric,point,lo,hi,n_patients\n";
    for (const OutRow& r : out_rows) {
        out << r.alignment << ',' << format_double(r.t) << ',' << r.metric << ','
            << format_double(r.point) << ',' << (r.lo ? format_double(*r.lo) : std::string())
            << ',' << (r.hi ? format_double(*r.hi) : std::string()) << ',' << r.n << '\n';
    }
    if (!out) throw DataError("failed writing file: " + eval_path);

    Manifest m;
    m.command = "evaluate";
    m.config = train_config_to_map(cfg);
    m.seed = seed;
    m.inputs = {dict_path, obs_path, outcomes_path, pred_path};
    if (have_baseline) m.inputs.push_back(base_path);
    if (!config_path.empty()) m.inputs.push_back(config_path);
    m.outputs = curve_files;
    m.outputs.push_back(eval_path);
    write_manifest(m, dir, "manifest_evaluate");
    return 0;
}

// ---------------------------------------------------------- transitions ----

int run_transitions(const std::string& out_dir) {
    const fs::path dir(out_dir);
    const std::string pred_path = (dir / "predictions.csv").string();
    const std::vector<PredictionRow> rows = load_predictions(pred_path);

    const CutoffTable cutoffs = compute_cutoffs(rows);
    const std::vector<TransitionEvent> events = detect_transitions(rows, cutoffs);

    const std::string cut_path = (dir / "cutoffs.csv").string();
    const std::string event_path = (dir / "events.csv").string();
    save_cutoffs(cutoffs, cut_path);
    save_transitions(events, event_path);
    log_info("transitions: " + std::to_string(events.size()) + " events");

    Manifest m;
    m.command = "transitions";
    m.inputs = {pred_path};
    m.outputs = {cut_path, event_path};
    write_manifest(m, dir, "manifest_transitions");
    return 0;
}

// -------------------------------------------------------------- explain ----

int run_explain(const std::string& dict_path, const std::string& obs_path,
                const std::string& out_dir, int repeat, int fold, const std::string& patient,
                std::optional<double> t_hours, const std::string& target_text,
                const std::string& mode_text, std::optional<std::uint64_t> seed, int samples) {
    const fs::path dir(out_dir);
    const ShapleyMode mode = parse_shapley_mode(mode_text);
    if (mode == ShapleyMode::Sampled && !seed) {
        throw UsageError("--seed is required with --mode sampled");
    }
    if (samples < 1) throw UsageError("--samples must be >= 1");
    const int target =
        target_text == "expected" ? kExpectedScore : threshold_index(target_text);

    const std::string mpath = (dir / model_name(repeat, fold)).string();
    const std::string vpath = (dir / vocab_name(repeat, fold)).string();
    const ModelFile file = load_model(mpath);
    const Vocabulary vocab = Vocabulary::load(vpath);
    if (hash_hex(vocab.content_hash()) != file.vocab_hash) {
        throw DataError("vocabulary " + vpath + " does not match the hash in " + mpath);
    }
    const TrainConfig cfg = train_config_from_map(file.config);
    const LoadedStays data = load_windowed(dict_path, obs_path, cfg);

    std::set<std::string> held_out(file.test_patients.begin(), file.test_patients.end());
    held_out.insert(file.val_patients.begin(), file.val_patients.end());
    std::vector<TokenizedStay> train_tok;
    for (const TimeWindowedStay& s : data.windowed) {
        if (!held_out.count(s.patient_id)) train_tok.push_back(tokenize_stay(s, vocab));
    }
    const BaselineTokens baseline = build_baseline_tokens(train_tok, vocab);

    auto it = data.by_id.find(patient);
    if (it == data.by_id.end()) throw DataError("patient '" + patient + "' has no observations");
    TokenizedStay stay = tokenize_stay(data.windowed[it->second], vocab);
    if (t_hours) {
        if (*t_hours < 0.0) throw UsageError("--t-hours must be >= 0");
        const int k = std::min(static_cast<int>(stay.windows.size()) - 1,
                               static_cast<int>(*t_hours / cfg.window_hours));
        stay.windows.resize(static_cast<std::size_t>(k) + 1);
    }

    ShapleyConfig scfg;
    scfg.mode = mode;
    scfg.samples = samples;
    scfg.seed = seed.value_or(0);
    scfg.prune_eta = target == kExpectedScore ? 0.15 : 0.025;

    std::vector<Attribution> attributions;
    attributions.push_back(timeshap_windows(file.model, stay, baseline, target, scfg));
    attributions.push_back(timeshap_tokens(file.model, stay, baseline, vocab, target, scfg));

    const std::string stem = "attribution_" + sanitize(patient) + "_t" +
                             fmt_hours((stay.windows.size()) * cfg.window_hours) + "_" +
                             target_text;
    const std::string out_path = (dir / (stem + ".csv")).string();
    save_attributions(attributions, vocab, out_path);
    log_info("explain: wrote " + out_path);

    Manifest m;
    m.command = "explain";
    m.config = file.config;
    if (seed) m.seed = *seed;
    m.inputs = {dict_path, obs_path, mpath, vpath};
    m.outputs = {out_path};
    write_manifest(m, dir, "manifest_explain_" + sanitize(patient) + "_" + target_text);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"token-embedded time-window trajectories of ordinal outcome"};
    app.set_version_flag("--version", std::string("tokentraj ") + kToolVersion);
    app.require_subcommand(1);

    std::string dict_path, obs_path, outcomes_path, config_path, out_dir;
    std::string alignment_text = "from_admission";
    std::string target_text = "expected";
    std::string mode_text = "exact";
    std::string patient;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int repeat = -1, fold = -1, jobs = 1, samples = 1000;
    std::vector<double> t_list;
    double t_single = -1.0;
    bool t_single_set = false;

    auto add_seed = [&](CLI::App* cmd, bool required) {
        auto* opt = cmd->add_option_function<std::uint64_t>(
            "--seed",
            [&](std::uint64_t v) {
                seed = v;
                seed_set = true;
            },
            "master seed");
        if (required) opt->required();
        return opt;
    };

    auto* synth = app.add_subcommand("synth", "generate a synthetic cohort");
    synth->add_option("--config", config_path, "flat key=value config file");
    add_seed(synth, true);
    synth->add_option("--out", out_dir, "output directory")->required();

    auto* fitv = app.add_subcommand("fit-vocab", "fit a token vocabulary");
    fitv->add_option("--dict", dict_path, "variable dictionary CSV")->required();
    fitv->add_option("--obs", obs_path, "observations CSV or JSONL")->required();
    fitv->add_option("--config", config_path, "flat key=value config file");
    fitv->add_option("--out", out_dir, "output directory")->required();

    auto* train = app.add_subcommand("train", "train trajectory models over cross-validation");
    train->add_option("--dict", dict_path, "variable dictionary CSV")->required();
    train->add_option("--obs", obs_path, "observations CSV or JSONL")->required();
    train->add_option("--outcomes", outcomes_path, "outcome labels CSV")->required();
    train->add_option("--config", config_path, "flat key=value config file");
    add_seed(train, true);
    train->add_option("--out", out_dir, "output directory")->required();
    train->add_option("--repeat", repeat, "train only this repeat");
    train->add_option("--fold", fold, "train only this fold");
    train->add_option("--jobs", jobs, "parallel fold jobs (default 1)");

    auto* predict = app.add_subcommand("predict", "write out-of-fold trajectory predictions");
    predict->add_option("--dict", dict_path, "variable dictionary CSV")->required();
    predict->add_option("--obs", obs_path, "observations CSV or JSONL")->required();
    predict->add_option("--out", out_dir, "run directory holding the model files")->required();
    predict->add_option("--repeat", repeat, "predict only this repeat");
    predict->add_option("--fold", fold, "predict only this fold");

    auto* baseline = app.add_subcommand("baseline", "static admission-window outcome model");
    baseline->add_option("--dict", dict_path, "variable dictionary CSV")->required();
    baseline->add_option("--obs", obs_path, "observations CSV or JSONL")->required();
    baseline->add_option("--outcomes", outcomes_path, "outcome labels CSV")->required();
    baseline->add_option("--config", config_path, "flat key=value config file");
    add_seed(baseline, true);
    baseline->add_option("--out", out_dir, "output directory")->required();
    baseline->add_option("--repeat", repeat, "fit only this repeat");
    baseline->add_option("--fold", fold, "fit only this fold");

    auto* evaluate = app.add_subcommand("evaluate", "discrimination and calibration with BBC-CV");
    evaluate->add_option("--dict", dict_path, "variable dictionary CSV")->required();
    evaluate->add_option("--obs", obs_path, "observations CSV or JSONL")->required();
    evaluate->add_option("--outcomes", outcomes_path, "outcome labels CSV")->required();
    evaluate->add_option("--config", config_path, "flat key=value config file");
    add_seed(evaluate, true);
    evaluate->add_option("--out", out_dir, "run directory holding predictions.csv")->required();
    evaluate->add_option("--alignment", alignment_text, "from_admission or to_discharge");
    evaluate->add_option("--t-hours", t_list, "timepoints to evaluate (hours)");

    auto* transitions =
        app.add_subcommand("transitions", "percentile cutoffs and transition events");
    transitions->add_option("--out", out_dir, "run directory holding predictions.csv")
        ->required();

    auto* explain = app.add_subcommand("explain", "attribution of one patient's prediction");
    explain->add_option("--dict", dict_path, "variable dictionary CSV")->required();
    explain->add_option("--obs", obs_path, "observations CSV or JSONL")->required();
    explain->add_option("--out", out_dir, "run directory holding the model files")->required();
    explain->add_option("--repeat", repeat, "model repeat")->required();
    explain->add_option("--fold", fold, "model fold")->required();
    explain->add_option("--patient", patient, "patient id to explain")->required();
    explain->add_option_function<double>(
        "--t-hours",
        [&](double v) {
            t_single = v;
            t_single_set = true;
        },
        "explain the window covering this time (default: last window)");
    explain->add_option("--target", target_text,
                        "gt1|gt3|gt4|gt5|gt6|gt7|expected (default expected)");
    explain->add_option("--mode", mode_text, "exact or sampled (default exact)");
    add_seed(explain, false);
    explain->add_option("--samples", samples, "coalitions in sampled mode (default 1000)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*synth) return run_synth(config_path, seed, out_dir);
        if (*fitv) return run_fit_vocab(dict_path, obs_path, config_path, out_dir);
        if (*train) {
            return run_train(dict_path, obs_path, outcomes_path, config_path, seed, out_dir,
                             repeat, fold, jobs);
        }
        if (*predict) return run_predict(dict_path, obs_path, out_dir, repeat, fold);
        if (*baseline) {
            return run_baseline(dict_path, obs_path, outcomes_path, config_path, seed, out_dir,
                                repeat, fold);
        }
        if (*evaluate) {
            return run_evaluate(dict_path, obs_path, outcomes_path, config_path, seed, out_dir,
                                alignment_text, t_list);
        }
        if (*transitions) return run_transitions(out_dir);
        if (*explain) {
            return run_explain(dict_path, obs_path, out_dir, repeat, fold, patient,
                               t_single_set ? std::optional<double>(t_single) : std::nullopt,
                               target_text, mode_text,
                               seed_set ? std::optional<std::uint64_t>(seed) : std::nullopt,
                               samples);
        }
        std::fprintf(stderr, "tokentraj: no subcommand selected\n");
        return 1;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "tokentraj: %s\n", e.what());
        return 1;
    } catch (const DataError& e) {
        std::fprintf(stderr, "tokentraj: data error: %s\n", e.what());
        return 2;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "tokentraj: numeric error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "tokentraj: internal error: %s\n", e.what());
        return 3;
    }
}
