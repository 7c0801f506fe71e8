#include "tokentraj/schema.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "tokentraj/csv.hpp"

namespace tokentraj {

namespace {

bool parse_bool_field(const std::string& text, const std::string& what, std::size_t line) {
    if (text == "true") return true;
    if (text == "false") return false;
    throw DataError("line " + std::to_string(line) + ": " + what + " must be true|false, got '" + text + "'");
}

void expect_header(const CsvRow& row, const std::vector<std::string>& expected, const std::string& path) {
    if (row.fields != expected) {
        std::string want;
        for (std::size_t i = 0; i < expected.size(); ++i) {
            if (i) want += ',';
            want += expected[i];
        }
        throw DataError(path + ": expected header '" + want + "'");
    }
}

} // namespace

VariableKind parse_variable_kind(const std::string& text) {
    if (text == "numeric") return VariableKind::Numeric;
    if (text == "categorical") return VariableKind::Categorical;
    if (text == "text") return VariableKind::Text;
    throw DataError("unknown variable kind '" + text + "' (expected numeric|categorical|text)");
}

std::string variable_kind_name(VariableKind kind) {
    switch (kind) {
        case VariableKind::Numeric: return "numeric";
        case VariableKind::Categorical: return "categorical";
        case VariableKind::Text: return "text";
    }
    return "?";
}

VariableDictionary::VariableDictionary(std::vector<VariableSpec> entries)
    : entries_(std::move(entries)) {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const auto [it, inserted] = by_name_.emplace(entries_[i].name, i);
        if (!inserted) throw DataError("duplicate variable name '" + entries_[i].name + "'");
    }
}

const VariableSpec* VariableDictionary::find(const std::string& name) const {
    const auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : &entries_[it->second];
}

VariableDictionary load_dictionary(const std::string& path) {
    CsvReader reader(path);
    CsvRow row;
    if (!reader.next(row)) throw DataError(path + ": empty dictionary file");
    expect_header(row, {"name", "kind", "static", "category", "intervention", "physician_impression"}, path);

    std::vector<VariableSpec> entries;
    while (reader.next(row)) {
        if (row.fields.size() != 6) {
            throw DataError(path + ":" + std::to_string(row.line) + ": expected 6 fields, got " +
                            std::to_string(row.fields.size()));
        }
        VariableSpec spec;
        spec.name = row.fields[0];
        if (spec.name.empty()) throw DataError(path + ":" + std::to_string(row.line) + ": empty variable name");
        try {
            spec.kind = parse_variable_kind(row.fields[1]);
        } catch (const DataError& e) {
            throw DataError(path + ":" + std::to_string(row.line) + ": " + e.what());
        }
        spec.is_static = parse_bool_field(row.fields[2], "static", row.line);
        spec.category = row.fields[3];
        spec.intervention = parse_bool_field(row.fields[4], "intervention", row.line);
        spec.physician_impression = parse_bool_field(row.fields[5], "physician_impression", row.line);
        entries.push_back(std::move(spec));
    }
    try {
        return VariableDictionary(std::move(entries));
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
}

int gose_label_to_index(const std::string& label) {
    if (label == "1") return 0;
    if (label == "2_3") return 1;
    if (label == "4") return 2;
    if (label == "5") return 3;
    if (label == "6") return 4;
    if (label == "7") return 5;
    if (label == "8") return 6;
    // "2" or "3" alone are rejected so the merged category is explicit.
    throw DataError("unknown GOSE label '" + label + "' (expected 1|2_3|4|5|6|7|8)");
}

std::string gose_index_to_label(int index) {
    static const char* kLabels[kOutcomeClasses] = {"1", "2_3", "4", "5", "6", "7", "8"};
    if (index < 0 || index >= kOutcomeClasses) throw NumericError("GOSE index out of range");
    return kLabels[index];
}

std::vector<OutcomeLabel> load_outcomes(const std::string& path) {
    CsvReader reader(path);
    CsvRow row;
    if (!reader.next(row)) throw DataError(path + ": empty outcomes file");
    expect_header(row, {"patient_id", "gose"}, path);

    std::vector<OutcomeLabel> labels;
    std::map<std::string, std::size_t> seen;
    while (reader.next(row)) {
        if (row.fields.size() != 2) {
            throw DataError(path + ":" + std::to_string(row.line) + ": expected 2 fields");
        }
        OutcomeLabel label;
        label.patient_id = row.fields[0];
        try {
            label.gose_index = gose_label_to_index(row.fields[1]);
        } catch (const DataError& e) {
            throw DataError(path + ":" + std::to_string(row.line) + ": " + e.what());
        }
        if (!seen.emplace(label.patient_id, row.line).second) {
            throw DataError(path + ":" + std::to_string(row.line) + ": duplicate patient '" + label.patient_id + "'");
        }
        labels.push_back(std::move(label));
    }
    std::sort(labels.begin(), labels.end(),
              [](const OutcomeLabel& a, const OutcomeLabel& b) { return a.patient_id < b.patient_id; });
    return labels;
}

namespace {

struct RawObsRow {
    std::string patient_id;
    std::string variable;
    std::string value;
    std::string t_hours_text;
    std::size_t line = 0;
};

void append_observation(std::map<std::string, StayRecord>& stays, const RawObsRow& raw,
                        const VariableDictionary& dict, const std::string& path) {
    const VariableSpec* spec = dict.find(raw.variable);
    if (spec == nullptr) {
        throw DataError(path + ":" + std::to_string(raw.line) + ": unknown variable '" + raw.variable + "'");
    }

    Observation obs;
    obs.variable = raw.variable;
    obs.value = raw.value;
    if (!raw.t_hours_text.empty()) {
        double t;
        if (!try_parse_double(raw.t_hours_text, t) || t < 0.0) {
            throw DataError(path + ":" + std::to_string(raw.line) + ": malformed timestamp '" + raw.t_hours_text +
                            "' (must be a nonnegative number of hours)");
        }
        if (spec->is_static) {
            throw DataError(path + ":" + std::to_string(raw.line) + ": static variable '" + raw.variable +
                            "' must not carry a timestamp");
        }
        obs.t_hours = t;
    } else if (!spec->is_static) {
        throw DataError(path + ":" + std::to_string(raw.line) + ": dynamic variable '" + raw.variable +
                        "' requires a timestamp");
    }

    StayRecord& stay = stays[raw.patient_id];
    stay.patient_id = raw.patient_id;
    if (spec->is_static) {
        for (const Observation& prev : stay.observations) {
            if (prev.variable == raw.variable && !prev.t_hours.has_value()) {
                throw DataError(path + ":" + std::to_string(raw.line) + ": duplicate static value for '" +
                                raw.variable + "' of patient '" + raw.patient_id + "'");
            }
        }
    }
    stay.observations.push_back(std::move(obs));
}

std::vector<StayRecord> finalize_stays(std::map<std::string, StayRecord>&& stays) {
    std::vector<StayRecord> out;
    out.reserve(stays.size());
    for (auto& [id, stay] : stays) {
        double max_t = 0.0;
        for (const Observation& obs : stay.observations) {
            if (obs.t_hours.has_value()) max_t = std::max(max_t, *obs.t_hours);
        }
        stay.stay_length_hours = max_t;
        out.push_back(std::move(stay));
    }
    return out;
}

std::vector<StayRecord> load_observations_csv(const std::string& path, const VariableDictionary& dict) {
    CsvReader reader(path);
    CsvRow row;
    if (!reader.next(row)) throw DataError(path + ": empty observations file");
    expect_header(row, {"patient_id", "variable", "value", "t_hours"}, path);

    std::map<std::string, StayRecord> stays;
    while (reader.next(row)) {
        if (row.fields.size() != 4) {
            throw DataError(path + ":" + std::to_string(row.line) + ": expected 4 fields");
        }
        RawObsRow raw{row.fields[0], row.fields[1], row.fields[2], row.fields[3], row.line};
        append_observation(stays, raw, dict, path);
    }
    return finalize_stays(std::move(stays));
}

std::vector<StayRecord> load_observations_jsonl(const std::string& path, const VariableDictionary& dict) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open file: " + path);

    std::map<std::string, StayRecord> stays;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        RawObsRow raw;
        raw.line = line_no;
        try {
            raw.patient_id = j.at("patient_id").get<std::string>();
            raw.variable = j.at("variable").get<std::string>();
            const auto& value = j.at("value");
            raw.value = value.is_string() ? value.get<std::string>() : value.dump();
            if (j.contains("t_hours") && !j["t_hours"].is_null()) {
                const auto& t = j["t_hours"];
                raw.t_hours_text = t.is_string() ? t.get<std::string>() : t.dump();
            }
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        append_observation(stays, raw, dict, path);
    }
    return finalize_stays(std::move(stays));
}

} // namespace

std::vector<StayRecord> load_observations(const std::string& path, const VariableDictionary& dict) {
    const bool jsonl = path.size() >= 6 && path.compare(path.size() - 6, 6, ".jsonl") == 0;
    return jsonl ? load_observations_jsonl(path, dict) : load_observations_csv(path, dict);
}

TimeWindowedStay window_stay(const StayRecord& stay, double window_hours, std::optional<int> window_limit) {
    if (!(window_hours > 0.0)) throw NumericError("window_hours must be positive");
    if (window_limit.has_value() && *window_limit < 1) throw NumericError("window_limit must be >= 1");

    // A stay always produces at least one window, even when shorter than one.
    int n_windows = std::max(1, static_cast<int>(std::ceil(stay.stay_length_hours / window_hours)));
    const int full_count = n_windows;
    if (window_limit.has_value()) n_windows = std::min(n_windows, *window_limit);

    TimeWindowedStay out;
    out.patient_id = stay.patient_id;
    out.window_hours = window_hours;
    out.stay_length_hours = stay.stay_length_hours;
    out.windows.resize(static_cast<std::size_t>(n_windows));
    for (int k = 0; k < n_windows; ++k) out.windows[static_cast<std::size_t>(k)].index = k;

    std::vector<std::pair<std::string, std::string>> statics;
    for (const Observation& obs : stay.observations) {
        if (!obs.t_hours.has_value()) {
            statics.emplace_back(obs.variable, obs.value);
            continue;
        }
        const double t = *obs.t_hours;
        if (t > stay.stay_length_hours) {
            throw DataError("observation beyond stay end for patient '" + stay.patient_id + "'");
        }
        int k = static_cast<int>(std::floor(t / window_hours));
        // Observation exactly at stay end belongs to the last (pre-limit) window.
        if (k >= full_count) k = full_count - 1;
        if (k >= n_windows) continue; // beyond the window limit
        out.windows[static_cast<std::size_t>(k)].values.emplace_back(obs.variable, obs.value);
    }

    // Static carry-forward: identical value set in every window.
    std::sort(statics.begin(), statics.end());
    for (WindowObservations& w : out.windows) {
        w.values.insert(w.values.end(), statics.begin(), statics.end());
    }
    return out;
}

} // namespace tokentraj
