#include "tokentraj/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <unordered_map>

#include "tokentraj/csv.hpp"

namespace tokentraj {

ClassProbs threshold_to_class_probs(std::span<const double> q) {
    if (q.size() != static_cast<std::size_t>(kOutcomeClasses - 1)) {
        throw NumericError("threshold_to_class_probs: expected " +
                           std::to_string(kOutcomeClasses - 1) + " probabilities");
    }
    ClassProbs out;
    out.p.resize(kOutcomeClasses);

    Eigen::VectorXd qc(kOutcomeClasses - 1);
    for (int k = 0; k < kOutcomeClasses - 1; ++k) {
        if (!std::isfinite(q[k])) {
            throw NumericError("threshold_to_class_probs: non-finite probability");
        }
        const double clamped = std::clamp(q[k], 0.0, 1.0);
        if (clamped != q[k]) out.adjusted = true;
        qc(k) = clamped;
    }

    out.p(0) = 1.0 - qc(0);
    for (int i = 1; i < kOutcomeClasses - 1; ++i) out.p(i) = qc(i - 1) - qc(i);
    out.p(kOutcomeClasses - 1) = qc(kOutcomeClasses - 2);

    double total = 0.0;
    for (int i = 0; i < kOutcomeClasses; ++i) {
        if (out.p(i) < 0.0) {
            out.p(i) = 0.0;
            out.adjusted = true;
        }
        total += out.p(i);
    }
    if (out.adjusted) out.p /= total;
    return out;
}

Eigen::VectorXd class_to_threshold_probs(std::span<const double> p) {
    if (p.size() != static_cast<std::size_t>(kOutcomeClasses)) {
        throw NumericError("class_to_threshold_probs: expected " +
                           std::to_string(kOutcomeClasses) + " probabilities");
    }
    Eigen::VectorXd q(kOutcomeClasses - 1);
    double tail = 0.0;
    for (int k = kOutcomeClasses - 1; k >= 1; --k) {
        tail += p[k];
        q(k - 1) = tail;
    }
    return q;
}

double expected_index(std::span<const double> p) {
    if (p.size() != static_cast<std::size_t>(kOutcomeClasses)) {
        throw NumericError("expected_index: expected " + std::to_string(kOutcomeClasses) +
                           " probabilities");
    }
    double e = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) e += static_cast<double>(i) * p[i];
    return e;
}

double somers_dxy(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) {
        throw NumericError("somers_dxy: scores and labels differ in length");
    }
    if (scores.empty()) throw UndefinedMetricError("somers_dxy: no observations");

    std::map<int, std::vector<double>> buckets;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i])) throw NumericError("somers_dxy: non-finite score");
        buckets[labels[i]].push_back(scores[i]);
    }
    if (buckets.size() < 2) {
        throw UndefinedMetricError("somers_dxy: all labels identical, no comparable pairs");
    }

    std::vector<std::vector<double>> sorted;
    sorted.reserve(buckets.size());
    for (auto& [label, values] : buckets) {
        std::sort(values.begin(), values.end());
        sorted.push_back(std::move(values));
    }

    // For each ordered class pair, a single merge pass counts how many scores
    // in the lower class fall strictly below / strictly above each score of
    // the higher class.
    double net = 0.0;    // concordant minus discordant
    double ncomp = 0.0;  // comparable pairs
    for (std::size_t a = 0; a < sorted.size(); ++a) {
        for (std::size_t b = a + 1; b < sorted.size(); ++b) {
            const std::vector<double>& lo = sorted[a];
            const std::vector<double>& hi = sorted[b];
            std::size_t below = 0;  // lo values < current hi value
            std::size_t upto = 0;   // lo values <= current hi value
            for (double v : hi) {
                while (below < lo.size() && lo[below] < v) ++below;
                while (upto < lo.size() && lo[upto] <= v) ++upto;
                net += static_cast<double>(below) - static_cast<double>(lo.size() - upto);
            }
            ncomp += static_cast<double>(lo.size()) * static_cast<double>(hi.size());
        }
    }
    return net / ncomp;
}

double calibration_slope(std::span<const double> probs, std::span<const int> outcomes) {
    if (probs.size() != outcomes.size()) {
        throw NumericError("calibration_slope: probs and outcomes differ in length");
    }
    const std::size_t n = probs.size();
    if (n < 2) throw UndefinedMetricError("calibration_slope: need at least two observations");

    std::vector<double> x(n);
    bool saw0 = false;
    bool saw1 = false;
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(probs[i])) throw NumericError("calibration_slope: non-finite probability");
        if (outcomes[i] != 0 && outcomes[i] != 1) {
            throw NumericError("calibration_slope: outcomes must be 0 or 1");
        }
        const double p = std::clamp(probs[i], 1e-6, 1.0 - 1e-6);
        x[i] = std::log(p / (1.0 - p));
        (outcomes[i] == 1 ? saw1 : saw0) = true;
    }
    if (!saw0 || !saw1) {
        throw UndefinedMetricError("calibration_slope: outcomes are all identical");
    }

    double alpha = 0.0;
    double beta = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
        double g0 = 0.0, g1 = 0.0, h00 = 0.0, h01 = 0.0, h11 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double mu = sigmoid(alpha + beta * x[i]);
            const double r = outcomes[i] - mu;
            const double w = mu * (1.0 - mu);
            g0 += r;
            g1 += r * x[i];
            h00 += w;
            h01 += w * x[i];
            h11 += w * x[i] * x[i];
        }
        const double det = h00 * h11 - h01 * h01;
        if (!(det > 0.0) || det < 1e-12 * std::max(1.0, h00 * h11)) {
            throw UndefinedMetricError("calibration_slope: degenerate design");
        }
        const double d0 = (h11 * g0 - h01 * g1) / det;
        const double d1 = (h00 * g1 - h01 * g0) / det;
        alpha += d0;
        beta += d1;
        if (std::max(std::abs(d0), std::abs(d1)) < 1e-10) break;
    }
    return beta;
}

double mean_calibration_slope(const Eigen::MatrixXd& q, std::span<const int> labels) {
    if (q.rows() != static_cast<Eigen::Index>(labels.size())) {
        throw NumericError("mean_calibration_slope: q and labels differ in length");
    }
    if (q.cols() != kOutcomeClasses - 1) {
        throw NumericError("mean_calibration_slope: expected one column per threshold");
    }
    double total = 0.0;
    int used = 0;
    std::vector<double> probs(labels.size());
    std::vector<int> binary(labels.size());
    for (int k = 0; k < kOutcomeClasses - 1; ++k) {
        for (std::size_t i = 0; i < labels.size(); ++i) {
            probs[i] = q(static_cast<Eigen::Index>(i), k);
            binary[i] = labels[i] > k ? 1 : 0;
        }
        try {
            total += calibration_slope(probs, binary);
            ++used;
        } catch (const UndefinedMetricError&) {
            // threshold carries no information here (degenerate outcomes)
        }
    }
    if (used == 0) {
        throw UndefinedMetricError("mean_calibration_slope: no threshold has both outcomes");
    }
    return total / used;
}

CalibrationCurve smoothed_calibration_curve(std::span<const double> probs,
                                            std::span<const int> outcomes) {
    if (probs.size() != outcomes.size()) {
        throw NumericError("smoothed_calibration_curve: probs and outcomes differ in length");
    }
    const std::size_t n = probs.size();
    if (n == 0) throw UndefinedMetricError("smoothed_calibration_curve: no observations");

    double pmin = 1.0;
    double pmax = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(probs[i]) || probs[i] < -1e-9 || probs[i] > 1.0 + 1e-9) {
            throw NumericError("smoothed_calibration_curve: probability out of [0, 1]");
        }
        if (outcomes[i] != 0 && outcomes[i] != 1) {
            throw NumericError("smoothed_calibration_curve: outcomes must be 0 or 1");
        }
        pmin = std::min(pmin, probs[i]);
        pmax = std::max(pmax, probs[i]);
    }

    CalibrationCurve out;
    out.n = static_cast<int>(n);
    out.low_n = n < 50;

    const std::size_t span_count =
        std::min(n, std::max<std::size_t>(2, static_cast<std::size_t>(std::ceil(0.75 * n))));

    std::vector<double> dist(n);
    std::vector<double> weight(n);
    auto cube = [](double v) { return v * v * v; };

    for (int gi = 1; gi <= 99; ++gi) {
        const double g = gi / 100.0;
        for (std::size_t i = 0; i < n; ++i) dist[i] = std::abs(probs[i] - g);
        std::vector<double> scratch = dist;
        std::nth_element(scratch.begin(), scratch.begin() + (span_count - 1), scratch.end());
        const double bw = scratch[span_count - 1];

        double sw = 0.0;
        if (bw > 0.0) {
            for (std::size_t i = 0; i < n; ++i) {
                weight[i] = dist[i] < bw ? cube(1.0 - cube(dist[i] / bw)) : 0.0;
                sw += weight[i];
            }
        }
        if (!(sw > 0.0)) {
            // everything in the span sits at one distance; fall back to a flat
            // kernel over the span set
            sw = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                weight[i] = dist[i] <= bw ? 1.0 : 0.0;
                sw += weight[i];
            }
        }

        double swx = 0.0, swxx = 0.0, swy = 0.0, swxy = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (weight[i] == 0.0) continue;
            const double xc = probs[i] - g;
            swx += weight[i] * xc;
            swxx += weight[i] * xc * xc;
            swy += weight[i] * outcomes[i];
            swxy += weight[i] * xc * outcomes[i];
        }
        const double det = sw * swxx - swx * swx;
        double fitted;
        if (det > 1e-12 * std::max(1.0, sw * swxx)) {
            fitted = (swxx * swy - swx * swxy) / det;
        } else {
            fitted = swy / sw;
        }
        out.grid.push_back(g);
        out.value.push_back(std::clamp(fitted, 0.0, 1.0));
    }

    double gap = 0.0;
    int inside = 0;
    for (std::size_t i = 0; i < out.grid.size(); ++i) {
        if (out.grid[i] >= pmin - 1e-12 && out.grid[i] <= pmax + 1e-12) {
            gap += std::abs(out.value[i] - out.grid[i]);
            ++inside;
        }
    }
    if (inside == 0) {
        // degenerate forecast range between grid points; report the gap at the
        // nearest grid point instead
        const double mid = 0.5 * (pmin + pmax);
        std::size_t best = 0;
        for (std::size_t i = 1; i < out.grid.size(); ++i) {
            if (std::abs(out.grid[i] - mid) < std::abs(out.grid[best] - mid)) best = i;
        }
        gap = std::abs(out.value[best] - out.grid[best]);
        inside = 1;
    }
    out.mae = gap / inside;
    return out;
}

namespace {

BootstrapResult run_bootstrap(const std::vector<std::string>& patients,
                              const std::function<double(std::span<const int>)>& eval,
                              int n_resamples, std::uint64_t seed) {
    if (patients.empty()) throw UndefinedMetricError("bootstrap: no patients");
    if (n_resamples < 1) throw NumericError("bootstrap: resample count must be positive");

    const int n = static_cast<int>(patients.size());
    std::vector<int> chosen(patients.size());
    for (int i = 0; i < n; ++i) chosen[i] = i;

    BootstrapResult out;
    out.n_patients = n;
    out.point = eval(chosen);

    Rng rng(seed);
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(n_resamples));
    for (int b = 0; b < n_resamples; ++b) {
        bool done = false;
        for (int attempt = 0; attempt < 10 && !done; ++attempt) {
            for (int i = 0; i < n; ++i) {
                chosen[i] = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n)));
            }
            try {
                values.push_back(eval(chosen));
                done = true;
            } catch (const UndefinedMetricError&) {
                // resample landed on a degenerate patient draw; redraw
            }
        }
        if (!done) {
            throw UndefinedMetricError(
                "bootstrap: metric undefined on 10 consecutive redraws of one resample");
        }
    }
    out.lo = percentile(values, 0.025);
    out.hi = percentile(values, 0.975);
    return out;
}

struct RepeatIndex {
    std::unordered_map<std::string, int> position;
};

std::vector<RepeatIndex> index_repeats(const std::vector<RepeatSamples>& repeats) {
    std::vector<RepeatIndex> out(repeats.size());
    for (std::size_t r = 0; r < repeats.size(); ++r) {
        const RepeatSamples& rs = repeats[r];
        if (rs.patient_ids.size() != rs.scores.size() ||
            rs.patient_ids.size() != rs.labels.size()) {
            throw NumericError("bootstrap: repeat sample arrays differ in length");
        }
        for (std::size_t i = 0; i < rs.patient_ids.size(); ++i) {
            if (!out[r].position.emplace(rs.patient_ids[i], static_cast<int>(i)).second) {
                throw NumericError("bootstrap: duplicate patient '" + rs.patient_ids[i] +
                                   "' within one repeat");
            }
        }
    }
    return out;
}

double metric_over_repeats(const std::vector<RepeatSamples>& repeats,
                           const std::vector<RepeatIndex>& index,
                           const std::vector<std::string>& patients,
                           std::span<const int> chosen, const MetricFn& metric) {
    double total = 0.0;
    int used = 0;
    std::vector<double> scores;
    std::vector<int> labels;
    for (std::size_t r = 0; r < repeats.size(); ++r) {
        scores.clear();
        labels.clear();
        for (int idx : chosen) {
            auto it = index[r].position.find(patients[idx]);
            if (it == index[r].position.end()) continue;
            scores.push_back(repeats[r].scores[it->second]);
            labels.push_back(repeats[r].labels[it->second]);
        }
        if (scores.empty()) continue;
        total += metric(scores, labels);
        ++used;
    }
    if (used == 0) throw UndefinedMetricError("bootstrap: no repeat had any drawn patient");
    return total / used;
}

}  // namespace

BootstrapResult bbc_cv(const std::vector<RepeatSamples>& repeats, const MetricFn& metric,
                       int n_resamples, std::uint64_t seed) {
    if (repeats.empty()) throw NumericError("bbc_cv: no repeats");
    std::set<std::string> ids;
    for (const RepeatSamples& rs : repeats) ids.insert(rs.patient_ids.begin(), rs.patient_ids.end());
    std::vector<std::string> patients(ids.begin(), ids.end());
    const std::vector<RepeatIndex> index = index_repeats(repeats);

    auto eval = [&](std::span<const int> chosen) {
        return metric_over_repeats(repeats, index, patients, chosen, metric);
    };
    return run_bootstrap(patients, eval, n_resamples, seed);
}

BootstrapResult bbc_cv_difference(const std::vector<RepeatSamples>& a,
                                  const std::vector<RepeatSamples>& b, const MetricFn& metric,
                                  int n_resamples, std::uint64_t seed) {
    if (a.empty() || b.empty()) throw NumericError("bbc_cv_difference: no repeats");

    std::set<std::string> ids_a;
    for (const RepeatSamples& rs : a) ids_a.insert(rs.patient_ids.begin(), rs.patient_ids.end());
    std::set<std::string> shared;
    for (const RepeatSamples& rs : b) {
        for (const std::string& pid : rs.patient_ids) {
            if (ids_a.count(pid) != 0) shared.insert(pid);
        }
    }
    std::vector<std::string> patients(shared.begin(), shared.end());
    const std::vector<RepeatIndex> index_a = index_repeats(a);
    const std::vector<RepeatIndex> index_b = index_repeats(b);

    auto eval = [&](std::span<const int> chosen) {
        const double va = metric_over_repeats(a, index_a, patients, chosen, metric);
        const double vb = metric_over_repeats(b, index_b, patients, chosen, metric);
        return va - vb;
    };
    return run_bootstrap(patients, eval, n_resamples, seed);
}

Alignment parse_alignment(const std::string& s) {
    if (s == "from_admission" || s == "admission") return Alignment::FromAdmission;
    if (s == "to_discharge" || s == "discharge") return Alignment::ToDischarge;
    throw DataError("unknown alignment '" + s +
                    "' (expected from_admission or to_discharge)");
}

std::string alignment_name(Alignment a) {
    return a == Alignment::FromAdmission ? "from_admission" : "to_discharge";
}

void save_predictions(std::span<const PredictionRow> rows, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open predictions file for writing: " + path);
    out << "repeat,fold,patient_id,window,t_hours";
    for (int k = 1; k < kOutcomeClasses; ++k) out << ",q" << k;
    for (int i = 0; i < kOutcomeClasses; ++i) out << ",p" << i;
    out << ",expected\n";
    for (const PredictionRow& r : rows) {
        out << r.repeat << ',' << r.fold << ',' << csv_escape(r.patient_id) << ',' << r.window
            << ',' << format_double(r.t_hours);
        for (int k = 0; k < kOutcomeClasses - 1; ++k) out << ',' << format_double(r.q(k));
        for (int i = 0; i < kOutcomeClasses; ++i) out << ',' << format_double(r.p(i));
        out << ',' << format_double(r.expected) << '\n';
    }
    if (!out) throw DataError("failed writing predictions file: " + path);
}

std::vector<PredictionRow> load_predictions(const std::string& path) {
    CsvReader reader(path);
    CsvRow row;
    if (!reader.next(row)) throw DataError("predictions file is empty: " + path);
    const std::size_t expected_fields = 6 + (kOutcomeClasses - 1) + kOutcomeClasses;
    if (row.fields.size() != expected_fields || row.fields[0] != "repeat" ||
        row.fields[2] != "patient_id") {
        throw DataError("predictions file " + path + " has an unexpected header");
    }

    std::vector<PredictionRow> rows;
    while (reader.next(row)) {
        if (row.fields.size() != expected_fields) {
            throw DataError("predictions file " + path + " line " + std::to_string(row.line) +
                            ": expected " + std::to_string(expected_fields) + " fields");
        }
        PredictionRow r;
        r.repeat = static_cast<int>(parse_long_field(row.fields[0], "repeat", row.line));
        r.fold = static_cast<int>(parse_long_field(row.fields[1], "fold", row.line));
        r.patient_id = row.fields[2];
        r.window = static_cast<int>(parse_long_field(row.fields[3], "window", row.line));
        r.t_hours = parse_double_field(row.fields[4], "t_hours", row.line);
        r.q.resize(kOutcomeClasses - 1);
        r.p.resize(kOutcomeClasses);
        std::size_t col = 5;
        for (int k = 0; k < kOutcomeClasses - 1; ++k) {
            r.q(k) = parse_double_field(row.fields[col++], "q", row.line);
        }
        for (int i = 0; i < kOutcomeClasses; ++i) {
            r.p(i) = parse_double_field(row.fields[col++], "p", row.line);
        }
        r.expected = parse_double_field(row.fields[col], "expected", row.line);
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<RepeatSamples> timepoint_slice(std::span<const PredictionRow> rows,
                                           const std::map<std::string, double>& stay_length_hours,
                                           const std::map<std::string, int>& labels,
                                           double window_hours, Alignment alignment,
                                           double t_hours, int score_index) {
    if (!(window_hours > 0.0)) throw NumericError("timepoint_slice: window_hours must be positive");
    if (t_hours < 0.0) throw NumericError("timepoint_slice: t_hours must be non-negative");
    if (score_index != kExpectedScore && (score_index < 0 || score_index >= kOutcomeClasses - 1)) {
        throw NumericError("timepoint_slice: score index out of range");
    }

    std::map<int, std::map<std::string, std::map<int, const PredictionRow*>>> grouped;
    for (const PredictionRow& r : rows) grouped[r.repeat][r.patient_id][r.window] = &r;

    std::vector<RepeatSamples> out;
    for (const auto& [repeat, by_patient] : grouped) {
        RepeatSamples rs;
        for (const auto& [pid, by_window] : by_patient) {
            auto len_it = stay_length_hours.find(pid);
            if (len_it == stay_length_hours.end()) {
                throw DataError("timepoint_slice: no stay length for patient '" + pid + "'");
            }
            const double stay = len_it->second;
            double t_abs;
            if (alignment == Alignment::FromAdmission) {
                if (t_hours > stay) continue;
                t_abs = t_hours;
            } else {
                t_abs = stay - t_hours;
                if (t_abs < 0.0) continue;
            }
            // Use the freshest prediction issued by time t: the window whose
            // end lands on t when t sits on the grid, else the one covering t.
            int k = static_cast<int>(std::ceil(t_abs / window_hours)) - 1;
            if (k < 0) k = 0;
            const int last = by_window.rbegin()->first;
            if (k > last) k = last;
            auto win_it = by_window.find(k);
            if (win_it == by_window.end()) continue;

            auto label_it = labels.find(pid);
            if (label_it == labels.end()) {
                throw DataError("timepoint_slice: no outcome label for patient '" + pid + "'");
            }
            const PredictionRow& pr = *win_it->second;
            rs.patient_ids.push_back(pid);
            rs.scores.push_back(score_index == kExpectedScore ? pr.expected
                                                              : pr.q(score_index));
            rs.labels.push_back(label_it->second);
        }
        out.push_back(std::move(rs));
    }
    return out;
}

}  // namespace tokentraj
