#include "tokentraj/transitions.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "tokentraj/csv.hpp"

namespace tokentraj {

namespace {
constexpr const char* kThresholdNames[kOutcomeClasses - 1] = {"gt1", "gt3", "gt4",
                                                              "gt5", "gt6", "gt7"};
}

std::string threshold_name(int q_index) {
    if (q_index < 0 || q_index >= kOutcomeClasses - 1) {
        throw NumericError("threshold_name: index out of range");
    }
    return kThresholdNames[q_index];
}

int threshold_index(const std::string& name) {
    for (int k = 0; k < kOutcomeClasses - 1; ++k) {
        if (name == kThresholdNames[k]) return k;
    }
    throw DataError("unknown outcome threshold '" + name +
                    "' (expected gt1, gt3, gt4, gt5, gt6 or gt7)");
}

namespace {

struct DeltaRecord {
    std::string patient_id;
    double t_hours;
    double delta_pct;
};

// Consecutive-window probability changes per (repeat, patient), one list per
// threshold, restricted to the calibrated region.
std::array<std::vector<DeltaRecord>, kOutcomeClasses - 1> collect_deltas(
    std::span<const PredictionRow> rows, double region_lo, double region_hi) {
    std::map<std::pair<int, std::string>, std::map<int, const PredictionRow*>> grouped;
    for (const PredictionRow& r : rows) {
        grouped[{r.repeat, r.patient_id}][r.window] = &r;
    }

    std::array<std::vector<DeltaRecord>, kOutcomeClasses - 1> out;
    for (const auto& [key, by_window] : grouped) {
        for (const auto& [window, row] : by_window) {
            if (window == 0) continue;
            const auto prev = by_window.find(window - 1);
            if (prev == by_window.end()) continue;
            if (row->t_hours < region_lo || row->t_hours > region_hi) continue;
            for (int k = 0; k < kOutcomeClasses - 1; ++k) {
                out[k].push_back({key.second, row->t_hours,
                                  100.0 * (row->q(k) - prev->second->q(k))});
            }
        }
    }
    return out;
}

}  // namespace

CutoffTable compute_cutoffs(std::span<const PredictionRow> rows, double region_lo_hours,
                            double region_hi_hours) {
    if (rows.empty()) throw DataError("compute_cutoffs: no prediction rows");
    if (!(region_lo_hours < region_hi_hours)) {
        throw NumericError("compute_cutoffs: region bounds are inverted");
    }
    CutoffTable table;
    table.region_lo_hours = region_lo_hours;
    table.region_hi_hours = region_hi_hours;

    const auto deltas = collect_deltas(rows, region_lo_hours, region_hi_hours);
    for (int k = 0; k < kOutcomeClasses - 1; ++k) {
        std::vector<double> negative;
        std::vector<double> positive;
        for (const DeltaRecord& d : deltas[k]) {
            if (d.delta_pct < 0.0) negative.push_back(d.delta_pct);
            if (d.delta_pct > 0.0) positive.push_back(d.delta_pct);
        }
        ThresholdCutoffs& tc = table.thresholds[k];
        if (!negative.empty()) {
            tc.has_negative = true;
            tc.negative_cutoff = percentile(negative, 0.01);
        }
        if (!positive.empty()) {
            tc.has_positive = true;
            tc.positive_cutoff = percentile(positive, 0.99);
        }
    }
    return table;
}

std::vector<TransitionEvent> detect_transitions(std::span<const PredictionRow> rows,
                                                const CutoffTable& cutoffs) {
    const auto deltas = collect_deltas(rows, cutoffs.region_lo_hours, cutoffs.region_hi_hours);
    std::vector<TransitionEvent> events;
    for (int k = 0; k < kOutcomeClasses - 1; ++k) {
        const ThresholdCutoffs& tc = cutoffs.thresholds[k];
        for (const DeltaRecord& d : deltas[k]) {
            if (tc.has_negative && d.delta_pct <= tc.negative_cutoff) {
                events.push_back({d.patient_id, k, d.t_hours, d.delta_pct, -1});
            } else if (tc.has_positive && d.delta_pct >= tc.positive_cutoff) {
                events.push_back({d.patient_id, k, d.t_hours, d.delta_pct, +1});
            }
        }
    }
    std::sort(events.begin(), events.end(), [](const TransitionEvent& a, const TransitionEvent& b) {
        if (a.patient_id != b.patient_id) return a.patient_id < b.patient_id;
        if (a.t_hours != b.t_hours) return a.t_hours < b.t_hours;
        return a.threshold < b.threshold;
    });
    return events;
}

void save_cutoffs(const CutoffTable& table, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open cutoff file for writing: " + path);
    out << "threshold,negative_cutoff,positive_cutoff\n";
    for (int k = 0; k < kOutcomeClasses - 1; ++k) {
        const ThresholdCutoffs& tc = table.thresholds[k];
        out << threshold_name(k) << ','
            << (tc.has_negative ? format_double(tc.negative_cutoff) : std::string()) << ','
            << (tc.has_positive ? format_double(tc.positive_cutoff) : std::string()) << '\n';
    }
    if (!out) throw DataError("failed writing cutoff file: " + path);
}

CutoffTable load_cutoffs(const std::string& path) {
    CsvReader reader(path);
    CsvRow row;
    if (!reader.next(row) || row.fields.size() != 3 || row.fields[0] != "threshold") {
        throw DataError("cutoff file " + path + " has an unexpected header");
    }
    CutoffTable table;
    std::array<bool, kOutcomeClasses - 1> seen{};
    while (reader.next(row)) {
        if (row.fields.size() != 3) {
            throw DataError("cutoff file " + path + " line " + std::to_string(row.line) +
                            ": expected 3 fields");
        }
        const int k = threshold_index(row.fields[0]);
        if (seen[k]) {
            throw DataError("cutoff file " + path + ": duplicate threshold " + row.fields[0]);
        }
        seen[k] = true;
        ThresholdCutoffs& tc = table.thresholds[k];
        if (!row.fields[1].empty()) {
            tc.has_negative = true;
            tc.negative_cutoff = parse_double_field(row.fields[1], "negative_cutoff", row.line);
        }
        if (!row.fields[2].empty()) {
            tc.has_positive = true;
            tc.positive_cutoff = parse_double_field(row.fields[2], "positive_cutoff", row.line);
        }
    }
    return table;
}

void save_transitions(std::span<const TransitionEvent> events, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open transitions file for writing: " + path);
    out << "patient_id,threshold,t_hours,delta_pct,direction\n";
    for (const TransitionEvent& e : events) {
        out << csv_escape(e.patient_id) << ',' << threshold_name(e.threshold) << ','
            << format_double(e.t_hours) << ',' << format_double(e.delta_pct) << ','
            << e.direction << '\n';
    }
    if (!out) throw DataError("failed writing transitions file: " + path);
}

std::vector<TransitionEvent> load_transitions(const std::string& path) {
    CsvReader reader(path);
    CsvRow row;
    if (!reader.next(row) || row.fields.size() != 5 || row.fields[0] != "patient_id") {
        throw DataError("transitions file " + path + " has an unexpected header");
    }
    std::vector<TransitionEvent> events;
    while (reader.next(row)) {
        if (row.fields.size() != 5) {
            throw DataError("transitions file " + path + " line " + std::to_string(row.line) +
                            ": expected 5 fields");
        }
        TransitionEvent e;
        e.patient_id = row.fields[0];
        e.threshold = threshold_index(row.fields[1]);
        e.t_hours = parse_double_field(row.fields[2], "t_hours", row.line);
        e.delta_pct = parse_double_field(row.fields[3], "delta_pct", row.line);
        const long dir = parse_long_field(row.fields[4], "direction", row.line);
        if (dir != 1 && dir != -1) {
            throw DataError("transitions file " + path + " line " + std::to_string(row.line) +
                            ": direction must be 1 or -1");
        }
        e.direction = static_cast<int>(dir);
        events.push_back(std::move(e));
    }
    return events;
}

}  // namespace tokentraj
