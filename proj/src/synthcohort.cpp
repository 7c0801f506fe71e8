#include "tokentraj/synthcohort.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "tokentraj/csv.hpp"
#include "tokentraj/metrics.hpp"

namespace tokentraj {

namespace {

double get_double(const std::map<std::string, std::string>& kv, const std::string& key,
                  double fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    double value = 0.0;
    if (!try_parse_double(it->second, value)) {
        throw DataError("config key '" + key + "': not a number: '" + it->second + "'");
    }
    return value;
}

int get_int(const std::map<std::string, std::string>& kv, const std::string& key, int fallback) {
    const double value = get_double(kv, key, static_cast<double>(fallback));
    if (value != std::floor(value)) {
        throw DataError("config key '" + key + "': expected an integer");
    }
    return static_cast<int>(value);
}

std::string join_doubles(const double* values, std::size_t count) {
    std::string out;
    for (std::size_t i = 0; i < count; ++i) {
        if (i) out += ',';
        out += format_double(values[i]);
    }
    return out;
}

std::string two_digits(int i) {
    std::string s = std::to_string(i);
    return s.size() < 2 ? "0" + s : s;
}

}  // namespace

SynthConfig synth_config_from_map(const std::map<std::string, std::string>& kv) {
    SynthConfig cfg;
    static const std::vector<std::string> known = {
        "synth_patients",        "synth_static_signal",    "synth_static_noise",
        "synth_dynamic_signal",  "synth_dynamic_noise",    "synth_text_vars",
        "synth_noise_scale",     "synth_feature_noise",    "synth_missing_rate",
        "synth_missing_severity", "synth_stay_meanlog",    "synth_stay_sdlog",
        "synth_stay_min_hours",  "synth_stay_max_hours",   "synth_obs_interval_hours",
        "synth_cutpoints"};
    for (const auto& [key, value] : kv) {
        if (key.rfind("synth_", 0) != 0) continue;
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw DataError("unknown config key '" + key + "'");
        }
    }
    cfg.patients = get_int(kv, "synth_patients", cfg.patients);
    cfg.static_signal = get_int(kv, "synth_static_signal", cfg.static_signal);
    cfg.static_noise = get_int(kv, "synth_static_noise", cfg.static_noise);
    cfg.dynamic_signal = get_int(kv, "synth_dynamic_signal", cfg.dynamic_signal);
    cfg.dynamic_noise = get_int(kv, "synth_dynamic_noise", cfg.dynamic_noise);
    cfg.text_vars = get_int(kv, "synth_text_vars", cfg.text_vars);
    cfg.noise_scale = get_double(kv, "synth_noise_scale", cfg.noise_scale);
    cfg.feature_noise = get_double(kv, "synth_feature_noise", cfg.feature_noise);
    cfg.missing_rate = get_double(kv, "synth_missing_rate", cfg.missing_rate);
    cfg.missing_severity = get_double(kv, "synth_missing_severity", cfg.missing_severity);
    cfg.stay_meanlog = get_double(kv, "synth_stay_meanlog", cfg.stay_meanlog);
    cfg.stay_sdlog = get_double(kv, "synth_stay_sdlog", cfg.stay_sdlog);
    cfg.stay_min_hours = get_double(kv, "synth_stay_min_hours", cfg.stay_min_hours);
    cfg.stay_max_hours = get_double(kv, "synth_stay_max_hours", cfg.stay_max_hours);
    cfg.obs_interval_hours = get_double(kv, "synth_obs_interval_hours", cfg.obs_interval_hours);
    auto it = kv.find("synth_cutpoints");
    if (it != kv.end()) {
        std::stringstream ss(it->second);
        std::string piece;
        std::vector<double> cuts;
        while (std::getline(ss, piece, ',')) {
            double v = 0.0;
            if (!try_parse_double(piece, v)) {
                throw DataError("config key 'synth_cutpoints': not a number: '" + piece + "'");
            }
            cuts.push_back(v);
        }
        if (cuts.size() != cfg.cutpoints.size()) {
            throw DataError("config key 'synth_cutpoints': expected " +
                            std::to_string(cfg.cutpoints.size()) + " comma-separated values");
        }
        std::copy(cuts.begin(), cuts.end(), cfg.cutpoints.begin());
    }
    validate_synth_config(cfg);
    return cfg;
}

std::map<std::string, std::string> synth_config_to_map(const SynthConfig& cfg) {
    std::map<std::string, std::string> kv;
    kv["synth_patients"] = std::to_string(cfg.patients);
    kv["synth_static_signal"] = std::to_string(cfg.static_signal);
    kv["synth_static_noise"] = std::to_string(cfg.static_noise);
    kv["synth_dynamic_signal"] = std::to_string(cfg.dynamic_signal);
    kv["synth_dynamic_noise"] = std::to_string(cfg.dynamic_noise);
    kv["synth_text_vars"] = std::to_string(cfg.text_vars);
    kv["synth_noise_scale"] = format_double(cfg.noise_scale);
    kv["synth_feature_noise"] = format_double(cfg.feature_noise);
    kv["synth_missing_rate"] = format_double(cfg.missing_rate);
    kv["synth_missing_severity"] = format_double(cfg.missing_severity);
    kv["synth_stay_meanlog"] = format_double(cfg.stay_meanlog);
    kv["synth_stay_sdlog"] = format_double(cfg.stay_sdlog);
    kv["synth_stay_min_hours"] = format_double(cfg.stay_min_hours);
    kv["synth_stay_max_hours"] = format_double(cfg.stay_max_hours);
    kv["synth_obs_interval_hours"] = format_double(cfg.obs_interval_hours);
    kv["synth_cutpoints"] = join_doubles(cfg.cutpoints.data(), cfg.cutpoints.size());
    return kv;
}

void validate_synth_config(const SynthConfig& cfg) {
    if (cfg.patients < 1) throw DataError("synth_patients must be >= 1");
    if (cfg.static_signal < 0 || cfg.static_noise < 0 || cfg.dynamic_signal < 0 ||
        cfg.dynamic_noise < 0 || cfg.text_vars < 0) {
        throw DataError("synthetic variable counts must be >= 0");
    }
    if (cfg.static_signal + cfg.static_noise + cfg.dynamic_signal + cfg.dynamic_noise +
            cfg.text_vars < 1) {
        throw DataError("synthetic cohort needs at least one variable");
    }
    if (cfg.noise_scale < 0.0) throw DataError("synth_noise_scale must be >= 0");
    if (cfg.feature_noise < 0.0) throw DataError("synth_feature_noise must be >= 0");
    if (cfg.missing_rate < 0.0 || cfg.missing_rate > 1.0) {
        throw DataError("synth_missing_rate must be in [0, 1]");
    }
    if (cfg.missing_severity < 0.0 || cfg.missing_severity > 1.0) {
        throw DataError("synth_missing_severity must be in [0, 1]");
    }
    if (!(cfg.stay_min_hours > 0.0) || cfg.stay_max_hours < cfg.stay_min_hours) {
        throw DataError("synthetic stay-length bounds must satisfy 0 < min <= max");
    }
    if (!(cfg.obs_interval_hours > 0.0)) throw DataError("synth_obs_interval_hours must be > 0");
    for (std::size_t i = 1; i < cfg.cutpoints.size(); ++i) {
        if (!(cfg.cutpoints[i] > cfg.cutpoints[i - 1])) {
            throw DataError("synth_cutpoints must be strictly increasing");
        }
    }
}

namespace {

struct SynthVariable {
    VariableSpec spec;
    bool signal = false;
    double drift_sign = 0.0; // dynamic signal only
    bool categorical = false;
};

std::vector<SynthVariable> plan_variables(const SynthConfig& cfg) {
    std::vector<SynthVariable> vars;
    for (int i = 0; i < cfg.static_signal; ++i) {
        SynthVariable v;
        v.spec.name = "static_sig_" + two_digits(i + 1);
        // every third signal covariate is reported as coarse categories
        v.categorical = i % 3 == 2;
        v.spec.kind = v.categorical ? VariableKind::Categorical : VariableKind::Numeric;
        v.spec.is_static = true;
        v.spec.category = "synthetic";
        v.signal = true;
        vars.push_back(v);
    }
    for (int i = 0; i < cfg.static_noise; ++i) {
        SynthVariable v;
        v.spec.name = "static_noise_" + two_digits(i + 1);
        v.spec.kind = VariableKind::Numeric;
        v.spec.is_static = true;
        v.spec.category = "synthetic";
        vars.push_back(v);
    }
    for (int i = 0; i < cfg.text_vars; ++i) {
        SynthVariable v;
        v.spec.name = "note_" + two_digits(i + 1);
        v.spec.kind = VariableKind::Text;
        v.spec.is_static = true;
        v.spec.category = "synthetic";
        v.signal = true;
        vars.push_back(v);
    }
    for (int i = 0; i < cfg.dynamic_signal; ++i) {
        SynthVariable v;
        v.spec.name = "dyn_sig_" + two_digits(i + 1);
        v.spec.kind = VariableKind::Numeric;
        v.spec.is_static = false;
        v.spec.category = "synthetic";
        v.signal = true;
        v.drift_sign = i % 2 == 0 ? 1.0 : -1.0;
        vars.push_back(v);
    }
    for (int i = 0; i < cfg.dynamic_noise; ++i) {
        SynthVariable v;
        v.spec.name = "dyn_noise_" + two_digits(i + 1);
        v.spec.kind = VariableKind::Numeric;
        v.spec.is_static = false;
        v.spec.category = "synthetic";
        vars.push_back(v);
    }
    return vars;
}

// hours over which a dynamic signal variable ramps from zero to full strength
constexpr double kDriftFullHours = 48.0;

double dynamic_value(const SynthVariable& v, double z, double t, double noise) {
    const double ramp = std::min(t / kDriftFullHours, 1.0);
    return v.signal ? v.drift_sign * z * ramp + noise : noise;
}

std::string categorical_level(double value) {
    if (value < -0.7) return "q1";
    if (value < 0.0) return "q2";
    if (value < 0.7) return "q3";
    return "q4";
}

std::string text_payload(double z) {
    if (z < -0.43) return "condition stable, improving";
    if (z <= 0.43) return "condition guarded; stable";
    return "condition critical, deteriorating";
}

int draw_outcome(double z, const SynthConfig& cfg, Rng& rng) {
    const double u = z + cfg.noise_scale * rng.logistic();
    int y = 0;
    for (double c : cfg.cutpoints) {
        if (u > c) ++y;
    }
    return y;
}

}  // namespace

SynthCohort generate_cohort(const SynthConfig& cfg) {
    validate_synth_config(cfg);
    const std::vector<SynthVariable> vars = plan_variables(cfg);

    SynthCohort cohort;
    cohort.dictionary = VariableDictionary([&] {
        std::vector<VariableSpec> specs;
        for (const SynthVariable& v : vars) specs.push_back(v.spec);
        return specs;
    }());

    int id_width = 1;
    for (int n = cfg.patients; n >= 10; n /= 10) ++id_width;

    for (int p = 0; p < cfg.patients; ++p) {
        Rng rng(derive_seed(cfg.seed, 1000 + p));
        const double z = rng.normal();

        double stay = std::exp(cfg.stay_meanlog + cfg.stay_sdlog * rng.normal());
        stay = std::clamp(stay, cfg.stay_min_hours, cfg.stay_max_hours);

        const int outcome = draw_outcome(z, cfg, rng);

        // higher severity can make measurements likelier to be missing
        double drop_p = cfg.missing_rate +
                        cfg.missing_severity * 2.0 * (sigmoid(z) - 0.5);
        drop_p = std::clamp(drop_p, 0.0, 0.95);

        std::string pid = std::to_string(p + 1);
        while (static_cast<int>(pid.size()) < id_width) pid.insert(pid.begin(), '0');
        pid = "P" + pid;

        StayRecord stay_rec;
        stay_rec.patient_id = pid;
        stay_rec.stay_length_hours = stay;

        const SynthVariable* anchor = nullptr;
        for (const SynthVariable& v : vars) {
            if (v.spec.is_static) {
                Observation obs;
                obs.variable = v.spec.name;
                if (v.spec.kind == VariableKind::Text) {
                    obs.value = text_payload(z);
                } else {
                    const double raw = (v.signal ? z : rng.normal()) +
                                       cfg.feature_noise * rng.normal();
                    obs.value = v.categorical ? categorical_level(raw) : format_double(raw);
                }
                const bool drop = rng.uniform01() < drop_p;
                if (!drop) stay_rec.observations.push_back(std::move(obs));
                continue;
            }
            if (anchor == nullptr) anchor = &v;
            for (double t = 0.0; t < stay; t += cfg.obs_interval_hours) {
                const double noise = (v.signal ? 0.0 : rng.normal()) +
                                     cfg.feature_noise * rng.normal();
                const double raw = dynamic_value(v, z, t, noise);
                const bool drop = rng.uniform01() < drop_p;
                if (drop) continue;
                Observation obs;
                obs.variable = v.spec.name;
                obs.value = format_double(raw);
                obs.t_hours = t;
                stay_rec.observations.push_back(std::move(obs));
            }
        }
        // one observation pinned to the stay end so the recorded length does
        // not depend on which grid points survived the missingness draw
        if (anchor != nullptr) {
            Observation obs;
            obs.variable = anchor->spec.name;
            const double noise = (anchor->signal ? 0.0 : rng.normal()) +
                                 cfg.feature_noise * rng.normal();
            obs.value = format_double(dynamic_value(*anchor, z, stay, noise));
            obs.t_hours = stay;
            stay_rec.observations.push_back(std::move(obs));
        }

        cohort.stays.push_back(std::move(stay_rec));
        cohort.outcomes.push_back({pid, outcome});
        cohort.latent.push_back(z);
    }
    return cohort;
}

void save_dictionary(const VariableDictionary& dict, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open file for writing: " + path);
    out << "name,kind,static,category,intervention,physician_impression\n";
    for (const VariableSpec& spec : dict.entries()) {
        out << csv_escape(spec.name) << ',' << variable_kind_name(spec.kind) << ','
            << (spec.is_static ? "true" : "false") << ',' << csv_escape(spec.category) << ','
            << (spec.intervention ? "true" : "false") << ','
            << (spec.physician_impression ? "true" : "false") << '\n';
    }
    if (!out) throw DataError("failed writing file: " + path);
}

void save_observations(const std::vector<StayRecord>& stays, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open file for writing: " + path);
    out << "patient_id,variable,value,t_hours\n";
    for (const StayRecord& stay : stays) {
        for (const Observation& obs : stay.observations) {
            out << csv_escape(stay.patient_id) << ',' << csv_escape(obs.variable) << ','
                << csv_escape(obs.value) << ','
                << (obs.t_hours ? format_double(*obs.t_hours) : std::string()) << '\n';
        }
    }
    if (!out) throw DataError("failed writing file: " + path);
}

void save_outcomes(const std::vector<OutcomeLabel>& outcomes, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open file for writing: " + path);
    out << "patient_id,gose\n";
    for (const OutcomeLabel& label : outcomes) {
        out << csv_escape(label.patient_id) << ',' << gose_index_to_label(label.gose_index)
            << '\n';
    }
    if (!out) throw DataError("failed writing file: " + path);
}

OracleDxy planted_dxy_oracle(const SynthConfig& cfg, int n_mc) {
    if (n_mc < 10000) throw NumericError("planted_dxy_oracle: need at least 10000 draws");
    constexpr int kBatches = 10;
    const int per_batch = n_mc / kBatches;

    Rng rng(derive_seed(cfg.seed, 77));
    std::vector<double> batch_dxy;
    for (int b = 0; b < kBatches; ++b) {
        std::vector<double> scores(static_cast<std::size_t>(per_batch));
        std::vector<int> labels(static_cast<std::size_t>(per_batch));
        for (int i = 0; i < per_batch; ++i) {
            const double z = rng.normal();
            scores[static_cast<std::size_t>(i)] = z;
            labels[static_cast<std::size_t>(i)] = draw_outcome(z, cfg, rng);
        }
        batch_dxy.push_back(somers_dxy(scores, labels));
    }
    OracleDxy out;
    for (double d : batch_dxy) out.dxy += d;
    out.dxy /= kBatches;
    double var = 0.0;
    for (double d : batch_dxy) var += (d - out.dxy) * (d - out.dxy);
    var /= (kBatches - 1);
    out.se = std::sqrt(var / kBatches);
    return out;
}

}  // namespace tokentraj
