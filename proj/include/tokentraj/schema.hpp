#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tokentraj/common.hpp"

// Ingest of variable dictionaries, long-format observations, and outcome
// labels, plus discretisation of stays into aligned time windows with
// static carry-forward.

namespace tokentraj {

enum class VariableKind { Numeric, Categorical, Text };

VariableKind parse_variable_kind(const std::string& text);
std::string variable_kind_name(VariableKind kind);

struct VariableSpec {
    std::string name;
    VariableKind kind = VariableKind::Numeric;
    bool is_static = false;
    std::string category;
    bool intervention = false;
    bool physician_impression = false;
};

class VariableDictionary {
public:
    VariableDictionary() = default;
    explicit VariableDictionary(std::vector<VariableSpec> entries);

    const std::vector<VariableSpec>& entries() const { return entries_; }
    const VariableSpec* find(const std::string& name) const;
    std::size_t size() const { return entries_.size(); }

private:
    std::vector<VariableSpec> entries_;
    std::map<std::string, std::size_t> by_name_;
};

struct Observation {
    std::string variable;
    std::string value;            // raw payload; numeric parse happens at tokenisation
    std::optional<double> t_hours; // absent for static variables
};

struct StayRecord {
    std::string patient_id;
    std::vector<Observation> observations;
    double stay_length_hours = 0.0;
};

// Seven ordered outcome categories {1, 2-or-3, 4, 5, 6, 7, 8} -> index 0..6.
inline constexpr int kOutcomeClasses = 7;

struct OutcomeLabel {
    std::string patient_id;
    int gose_index = 0; // in [0, 6]
};

int gose_label_to_index(const std::string& label);
std::string gose_index_to_label(int index);

struct WindowObservations {
    int index = 0;
    // (variable, raw value) pairs observed in this window; the full static
    // value set is replicated into every window.
    std::vector<std::pair<std::string, std::string>> values;
};

struct TimeWindowedStay {
    std::string patient_id;
    double window_hours = 2.0;
    double stay_length_hours = 0.0;
    std::vector<WindowObservations> windows;
};

// Dictionary CSV: header name,kind,static,category,intervention,physician_impression
VariableDictionary load_dictionary(const std::string& path);

// Observations in CSV (header patient_id,variable,value,t_hours; empty
// t_hours marks a static row) or JSONL (same field names, chosen when the
// path ends in .jsonl). Stay length is derived as the largest dynamic
// timestamp of the stay. Output is sorted by patient id.
std::vector<StayRecord> load_observations(const std::string& path, const VariableDictionary& dict);

// Outcomes CSV: header patient_id,gose with gose in {1,2_3,4,5,6,7,8}.
std::vector<OutcomeLabel> load_outcomes(const std::string& path);

// Assign observations to half-open windows [k*w, (k+1)*w) by floor(t/w);
// an observation exactly at stay end falls into the last window. Static
// values are replicated into every window. window_limit drops windows
// beyond the first `limit`.
TimeWindowedStay window_stay(const StayRecord& stay, double window_hours,
                             std::optional<int> window_limit = std::nullopt);

} // namespace tokentraj
