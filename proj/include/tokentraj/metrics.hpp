#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tokentraj/common.hpp"
#include "tokentraj/schema.hpp"

namespace tokentraj {

// Exceedance probabilities q_k = P(Y > class k), k = 1..6, become the seven
// class probabilities p_0 = 1 - q_1, p_i = q_i - q_{i+1}, p_6 = q_6.  Inputs
// outside [0, 1] are clamped and negative differences are zeroed with a final
// renormalization; `adjusted` reports whether any of that was needed.
struct ClassProbs {
    Eigen::VectorXd p;
    bool adjusted = false;
};
ClassProbs threshold_to_class_probs(std::span<const double> q);

// Suffix sums of class probabilities: q_k = sum_{i >= k} p_i.
Eigen::VectorXd class_to_threshold_probs(std::span<const double> p);

double expected_index(std::span<const double> p);

// Somers' Dxy between a continuous score and an ordinal label: (C - D) / N
// over comparable pairs (labels differ), where score ties split evenly.
// Throws UndefinedMetricError when no comparable pair exists.
double somers_dxy(std::span<const double> scores, std::span<const int> labels);

// Slope of the logistic recalibration fit: regress the binary outcome on the
// logit of the forecast probability (probabilities clamped to
// [1e-6, 1 - 1e-6]) and report the slope.  1 means well calibrated.
double calibration_slope(std::span<const double> probs, std::span<const int> outcomes);

// Average of the per-threshold calibration slopes.  Column k of `q` holds
// P(Y > class k); the matching binary outcome is label > k.  Thresholds whose
// slope is undefined (degenerate outcomes) are skipped.
double mean_calibration_slope(const Eigen::MatrixXd& q, std::span<const int> labels);

// Local-linear smoother (tricube weights, 75% nearest-neighbor span) of the
// binary outcome against the forecast probability, evaluated on the grid
// 0.01, 0.02, ..., 0.99 and clamped to [0, 1].  `mae` is the mean absolute
// gap to the diagonal over grid points inside the observed probability range.
struct CalibrationCurve {
    std::vector<double> grid;
    std::vector<double> value;
    double mae = 0.0;
    int n = 0;
    bool low_n = false;  // fewer than 50 pairs
};
CalibrationCurve smoothed_calibration_curve(std::span<const double> probs,
                                            std::span<const int> outcomes);

// One evaluation row per patient within one cross-validation repeat.
struct RepeatSamples {
    std::vector<std::string> patient_ids;
    std::vector<double> scores;
    std::vector<int> labels;
};

using MetricFn = std::function<double(std::span<const double>, std::span<const int>)>;

struct BootstrapResult {
    double point = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    int n_patients = 0;
};

// Patient-level bootstrap over pooled out-of-fold predictions.  The point
// estimate is the metric per repeat averaged across repeats; each resample
// draws patients with replacement, applies the same draw to every repeat and
// averages the per-repeat metric.  The interval is the 2.5th/97.5th
// percentile of the resampled values.  Resamples on which the metric is
// undefined are redrawn, up to 10 attempts each.
BootstrapResult bbc_cv(const std::vector<RepeatSamples>& repeats, const MetricFn& metric,
                       int n_resamples, std::uint64_t seed);

// Paired difference a - b on shared patient draws, restricted to patients
// present on both sides.  Used to bound the information one prediction set
// adds over another.
BootstrapResult bbc_cv_difference(const std::vector<RepeatSamples>& a,
                                  const std::vector<RepeatSamples>& b, const MetricFn& metric,
                                  int n_resamples, std::uint64_t seed);

enum class Alignment { FromAdmission, ToDischarge };
Alignment parse_alignment(const std::string& s);
std::string alignment_name(Alignment a);

struct PredictionRow {
    int repeat = 0;
    int fold = 0;
    std::string patient_id;
    int window = 0;
    double t_hours = 0.0;  // end of the window, in hours since admission
    Eigen::VectorXd q;     // kOutcomeClasses - 1
    Eigen::VectorXd p;     // kOutcomeClasses
    double expected = 0.0;
};

void save_predictions(std::span<const PredictionRow> rows, const std::string& path);
std::vector<PredictionRow> load_predictions(const std::string& path);

// Score column selector for evaluation: 0..5 pick q_{k+1}, kExpectedScore
// picks the expected outcome index.
inline constexpr int kExpectedScore = -1;

// Picks, per patient and repeat, the prediction window covering the requested
// time: `t_hours` after admission, or `t_hours` before the end of the stay.
// Patients whose stay does not reach the requested time are left out.
std::vector<RepeatSamples> timepoint_slice(std::span<const PredictionRow> rows,
                                           const std::map<std::string, double>& stay_length_hours,
                                           const std::map<std::string, int>& labels,
                                           double window_hours, Alignment alignment,
                                           double t_hours, int score_index);

}  // namespace tokentraj
