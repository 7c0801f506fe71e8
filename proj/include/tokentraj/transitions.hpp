#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "tokentraj/metrics.hpp"

namespace tokentraj {

// Outcome threshold naming: index k (0..5) is the probability column
// P(GOSE > class k), written gt1, gt3, gt4, gt5, gt6, gt7 after the GOSE
// label the threshold sits above.
std::string threshold_name(int q_index);
int threshold_index(const std::string& name);

struct ThresholdCutoffs {
    bool has_negative = false;
    double negative_cutoff = 0.0;  // percentage points, negative side
    bool has_positive = false;
    double positive_cutoff = 0.0;  // percentage points, positive side
};

struct CutoffTable {
    std::array<ThresholdCutoffs, kOutcomeClasses - 1> thresholds;
    double region_lo_hours = 10.0;
    double region_hi_hours = 168.0;
};

// Between-window probability changes in percentage points,
// 100 * (q_k(t) - q_k(t - w)), pooled over all patients and repeats, keeping
// pairs whose later window ends inside the calibrated region.  The negative
// cutoff is the 1st percentile of the strictly negative changes, the positive
// cutoff the 99th percentile of the strictly positive ones; a side with no
// changes is flagged absent.
CutoffTable compute_cutoffs(std::span<const PredictionRow> rows, double region_lo_hours = 10.0,
                            double region_hi_hours = 168.0);

struct TransitionEvent {
    std::string patient_id;
    int threshold = 0;  // q column index 0..5
    double t_hours = 0.0;
    double delta_pct = 0.0;
    int direction = 0;  // +1 rise, -1 drop
};

// High-magnitude transitions: changes at or below the negative cutoff, or at
// or above the positive one, inside the calibrated region.  Events are
// ordered by (patient, time, threshold).
std::vector<TransitionEvent> detect_transitions(std::span<const PredictionRow> rows,
                                                const CutoffTable& cutoffs);

void save_cutoffs(const CutoffTable& table, const std::string& path);
CutoffTable load_cutoffs(const std::string& path);

void save_transitions(std::span<const TransitionEvent> events, const std::string& path);
std::vector<TransitionEvent> load_transitions(const std::string& path);

}  // namespace tokentraj
