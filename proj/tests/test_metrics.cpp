#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "tokentraj/metrics.hpp"

using namespace tokentraj;

namespace {

double oracle_dxy(std::span<const double> scores, std::span<const int> labels) {
    double num = 0.0;
    long long comparable = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        for (std::size_t j = i + 1; j < scores.size(); ++j) {
            if (labels[i] == labels[j]) continue;
            ++comparable;
            const double ds = scores[i] - scores[j];
            const int dl = labels[i] - labels[j];
            if (ds == 0.0) continue;  // tie splits evenly, net zero
            num += (ds > 0) == (dl > 0) ? 1.0 : -1.0;
        }
    }
    REQUIRE(comparable > 0);
    return num / static_cast<double>(comparable);
}

RepeatSamples make_repeat(const std::vector<double>& scores, const std::vector<int>& labels) {
    RepeatSamples rs;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        rs.patient_ids.push_back("p" + std::to_string(i));
        rs.scores.push_back(scores[i]);
        rs.labels.push_back(labels[i]);
    }
    return rs;
}

double mean_metric(std::span<const double> scores, std::span<const int>) {
    double s = 0.0;
    for (double v : scores) s += v;
    return s / static_cast<double>(scores.size());
}

PredictionRow make_row(const std::string& pid, int window, double marker, int repeat = 0) {
    PredictionRow r;
    r.repeat = repeat;
    r.fold = 0;
    r.patient_id = pid;
    r.window = window;
    r.t_hours = 2.0 * (window + 1);
    r.q = Eigen::VectorXd::LinSpaced(kOutcomeClasses - 1, marker + 0.6, marker + 0.1);
    r.p = Eigen::VectorXd::Constant(kOutcomeClasses, 1.0 / kOutcomeClasses);
    r.expected = marker;
    return r;
}

}  // namespace

TEST_CASE("threshold probabilities convert to class probabilities by differencing") {
    {
        std::vector<double> q = {1, 1, 1, 1, 1, 1};
        ClassProbs out = threshold_to_class_probs(q);
        for (int i = 0; i < kOutcomeClasses - 1; ++i) CHECK(out.p(i) == 0.0);
        CHECK(out.p(kOutcomeClasses - 1) == 1.0);
        CHECK_FALSE(out.adjusted);
    }
    {
        std::vector<double> q = {0, 0, 0, 0, 0, 0};
        ClassProbs out = threshold_to_class_probs(q);
        CHECK(out.p(0) == 1.0);
        for (int i = 1; i < kOutcomeClasses; ++i) CHECK(out.p(i) == 0.0);
    }
    {
        std::vector<double> q = {0.9, 0.7, 0.6, 0.4, 0.3, 0.1};
        ClassProbs out = threshold_to_class_probs(q);
        const double expect[7] = {0.1, 0.2, 0.1, 0.2, 0.1, 0.2, 0.1};
        for (int i = 0; i < kOutcomeClasses; ++i) {
            CHECK(out.p(i) == doctest::Approx(expect[i]).epsilon(1e-12));
        }
        CHECK_FALSE(out.adjusted);
        std::vector<double> pv(out.p.data(), out.p.data() + out.p.size());
        CHECK(expected_index(pv) == doctest::Approx(3.0).epsilon(1e-12));

        Eigen::VectorXd back = class_to_threshold_probs(pv);
        for (int k = 0; k < kOutcomeClasses - 1; ++k) {
            CHECK(std::abs(back(k) - q[static_cast<std::size_t>(k)]) < 1e-12);
        }
    }
}

TEST_CASE("non-monotone or out-of-range thresholds are repaired and flagged") {
    std::vector<double> q = {0.5, 0.6, 0.4, 0.3, 0.2, 0.1};
    ClassProbs out = threshold_to_class_probs(q);
    CHECK(out.adjusted);
    double total = 0.0;
    for (int i = 0; i < kOutcomeClasses; ++i) {
        CHECK(out.p(i) >= 0.0);
        total += out.p(i);
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));

    std::vector<double> wild = {1.2, 0.8, 0.5, 0.4, 0.2, -0.1};
    ClassProbs fixed = threshold_to_class_probs(wild);
    CHECK(fixed.adjusted);
    CHECK(fixed.p.minCoeff() >= 0.0);
    CHECK(fixed.p.sum() == doctest::Approx(1.0).epsilon(1e-9));

    std::vector<double> bad = {0.5, 0.5, 0.5};
    CHECK_THROWS_AS(threshold_to_class_probs(bad), NumericError);
}

TEST_CASE("expected index spans the outcome scale") {
    std::vector<double> low = {1, 0, 0, 0, 0, 0, 0};
    CHECK(expected_index(low) == 0.0);
    std::vector<double> high = {0, 0, 0, 0, 0, 0, 1};
    CHECK(expected_index(high) == 6.0);
    std::vector<double> uniform(7, 1.0 / 7.0);
    CHECK(expected_index(uniform) == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("somers dxy on the stated small examples") {
    std::vector<double> s1 = {0.1, 0.5, 0.9};
    std::vector<int> l1 = {0, 1, 2};
    CHECK(somers_dxy(s1, l1) == 1.0);

    std::vector<double> s2 = {0.9, 0.5, 0.1};
    CHECK(somers_dxy(s2, l1) == -1.0);

    std::vector<double> s3 = {0.2, 0.4, 0.3, 0.9};
    std::vector<int> l3 = {0, 0, 1, 2};
    CHECK(somers_dxy(s3, l3) == doctest::Approx(0.6).epsilon(1e-12));

    std::vector<double> tied = {0.5, 0.5};
    std::vector<int> lt = {0, 1};
    CHECK(somers_dxy(tied, lt) == 0.0);

    std::vector<int> same = {2, 2, 2};
    std::vector<double> ss = {0.1, 0.2, 0.3};
    CHECK_THROWS_AS(somers_dxy(ss, same), UndefinedMetricError);
    CHECK_THROWS_AS(somers_dxy({}, {}), UndefinedMetricError);
}

TEST_CASE("somers dxy agrees with the brute-force pair oracle on random instances") {
    Rng rng(313);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 3 + static_cast<int>(rng.uniform_int(58));
        std::vector<double> scores(static_cast<std::size_t>(n));
        std::vector<int> labels(static_cast<std::size_t>(n));
        bool mixed = false;
        for (int i = 0; i < n; ++i) {
            // coarse scores so ties actually happen
            scores[static_cast<std::size_t>(i)] = std::floor(rng.uniform(0.0, 8.0)) / 4.0;
            labels[static_cast<std::size_t>(i)] = static_cast<int>(rng.uniform_int(7));
            if (labels[static_cast<std::size_t>(i)] != labels[0]) mixed = true;
        }
        if (!mixed) labels[0] = (labels[0] + 1) % 7;
        const double got = somers_dxy(scores, labels);
        const double want = oracle_dxy(scores, labels);
        CHECK(std::abs(got - want) < 1e-12);
    }
}

TEST_CASE("somers dxy is invariant under strictly increasing score transforms") {
    Rng rng(99);
    std::vector<double> scores(40);
    std::vector<int> labels(40);
    for (int i = 0; i < 40; ++i) {
        scores[static_cast<std::size_t>(i)] = rng.uniform(-2.0, 2.0);
        labels[static_cast<std::size_t>(i)] = static_cast<int>(rng.uniform_int(7));
    }
    const double base = somers_dxy(scores, labels);
    std::vector<double> warped(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) warped[i] = std::exp(3.0 * scores[i] - 1.0);
    CHECK(somers_dxy(warped, labels) == base);
}

TEST_CASE("calibration slope recovers one on well-specified forecasts") {
    Rng rng(1717);
    const int n = 20000;
    std::vector<double> probs(static_cast<std::size_t>(n));
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double z = 1.2 * rng.normal();
        probs[static_cast<std::size_t>(i)] = sigmoid(z);
        labels[static_cast<std::size_t>(i)] =
            rng.uniform01() < probs[static_cast<std::size_t>(i)] ? 1 : 0;
    }
    const double beta = calibration_slope(probs, labels);
    CHECK(beta > 0.95);
    CHECK(beta < 1.05);
}

TEST_CASE("calibration slope halves when forecast logits are doubled") {
    Rng rng(1718);
    const int n = 20000;
    std::vector<double> probs(static_cast<std::size_t>(n));
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        probs[static_cast<std::size_t>(i)] = sigmoid(2.0 * z);
        labels[static_cast<std::size_t>(i)] = rng.uniform01() < sigmoid(z) ? 1 : 0;
    }
    const double beta = calibration_slope(probs, labels);
    CHECK(beta > 0.45);
    CHECK(beta < 0.55);
}

TEST_CASE("calibration slope rejects degenerate inputs") {
    std::vector<double> probs = {0.2, 0.4, 0.6};
    std::vector<int> ones = {1, 1, 1};
    CHECK_THROWS_AS(calibration_slope(probs, ones), UndefinedMetricError);
    std::vector<double> one_prob = {0.5};
    std::vector<int> one_label = {1};
    CHECK_THROWS_AS(calibration_slope(one_prob, one_label), UndefinedMetricError);
}

TEST_CASE("mean calibration slope averages the defined thresholds") {
    Rng rng(808);
    const int n = 4000;
    const double cuts[6] = {-1.8, -1.0, -0.35, 0.35, 1.0, 1.8};
    Eigen::MatrixXd q(n, kOutcomeClasses - 1);
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double z = 1.4 * rng.normal();
        const double u = rng.uniform01();
        int y = 0;
        for (int k = 0; k < kOutcomeClasses - 1; ++k) {
            q(i, k) = sigmoid(z - cuts[k]);
            if (u < q(i, k)) y = k + 1;
        }
        labels[static_cast<std::size_t>(i)] = y;
    }
    const double mean_beta = mean_calibration_slope(q, labels);
    CHECK(std::abs(mean_beta - 1.0) < 0.1);

    // Collapse the top classes: their thresholds turn single-class and must be
    // skipped rather than poisoning the mean.
    std::vector<int> capped = labels;
    for (int& y : capped) y = std::min(y, 2);
    const double partial = mean_calibration_slope(q, capped);
    CHECK(std::isfinite(partial));

    std::vector<int> constant(static_cast<std::size_t>(n), 3);
    CHECK_THROWS_AS(mean_calibration_slope(q, constant), UndefinedMetricError);
}

TEST_CASE("smoothed calibration curve is near the diagonal when forecasts are honest") {
    Rng rng(2121);
    const int n = 20000;
    std::vector<double> probs(static_cast<std::size_t>(n));
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        probs[static_cast<std::size_t>(i)] = sigmoid(1.2 * rng.normal());
        labels[static_cast<std::size_t>(i)] =
            rng.uniform01() < probs[static_cast<std::size_t>(i)] ? 1 : 0;
    }
    CalibrationCurve curve = smoothed_calibration_curve(probs, labels);
    REQUIRE(curve.grid.size() == 99);
    CHECK(curve.grid.front() == doctest::Approx(0.01));
    CHECK(curve.grid.back() == doctest::Approx(0.99));
    CHECK(curve.n == n);
    CHECK_FALSE(curve.low_n);
    for (double v : curve.value) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK(curve.mae < 0.02);
}

TEST_CASE("smoothed calibration curve flags a deterministic step as miscalibrated") {
    const int n = 2000;
    std::vector<double> probs(static_cast<std::size_t>(n));
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        probs[static_cast<std::size_t>(i)] = (i + 1.0) / (n + 1.0);
        labels[static_cast<std::size_t>(i)] = probs[static_cast<std::size_t>(i)] >= 0.5 ? 1 : 0;
    }
    CalibrationCurve curve = smoothed_calibration_curve(probs, labels);
    CHECK(curve.mae > 0.1);
}

TEST_CASE("smoothed calibration curve handles a constant forecast") {
    const int n = 400;
    std::vector<double> probs(static_cast<std::size_t>(n), 0.3);
    std::vector<int> labels(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < n * 3 / 10; ++i) labels[static_cast<std::size_t>(i)] = 1;
    CalibrationCurve curve = smoothed_calibration_curve(probs, labels);
    CHECK(curve.mae < 1e-9);

    std::vector<double> few(20, 0.4);
    std::vector<int> few_labels(20, 0);
    few_labels[0] = 1;
    CalibrationCurve small = smoothed_calibration_curve(few, few_labels);
    CHECK(small.low_n);

    CHECK_THROWS_AS(smoothed_calibration_curve({}, {}), UndefinedMetricError);
}

TEST_CASE("bootstrap over a constant metric collapses to a point") {
    RepeatSamples rs = make_repeat({0.1, 0.2, 0.3, 0.4}, {0, 1, 2, 3});
    MetricFn constant = [](std::span<const double>, std::span<const int>) { return 0.7; };
    BootstrapResult out = bbc_cv({rs}, constant, 200, 5);
    CHECK(out.point == 0.7);
    CHECK(out.lo == 0.7);
    CHECK(out.hi == 0.7);
    CHECK(out.n_patients == 4);
}

TEST_CASE("bootstrap is deterministic per seed with ordered endpoints") {
    Rng rng(2222);
    std::vector<double> scores;
    std::vector<int> labels;
    for (int i = 0; i < 120; ++i) {
        scores.push_back(rng.normal());
        labels.push_back(static_cast<int>(rng.uniform_int(7)));
    }
    RepeatSamples rs = make_repeat(scores, labels);
    BootstrapResult a = bbc_cv({rs}, mean_metric, 500, 10);
    BootstrapResult b = bbc_cv({rs}, mean_metric, 500, 10);
    BootstrapResult c = bbc_cv({rs}, mean_metric, 500, 11);
    CHECK(a.lo == b.lo);
    CHECK(a.hi == b.hi);
    CHECK(a.point == b.point);
    CHECK((a.lo != c.lo || a.hi != c.hi));
    CHECK(a.lo <= a.hi);
    CHECK(a.lo <= a.point + 1e-9);
    CHECK(a.point <= a.hi + 1e-9);
}

TEST_CASE("bootstrap intervals shrink as the panel grows") {
    auto draw = [](int n, std::uint64_t seed) {
        Rng rng(seed);
        std::vector<double> scores;
        std::vector<int> labels;
        for (int i = 0; i < n; ++i) {
            scores.push_back(0.4 + 0.1 * rng.normal());
            labels.push_back(i % 7);
        }
        return make_repeat(scores, labels);
    };
    BootstrapResult narrow = bbc_cv({draw(800, 1)}, mean_metric, 400, 3);
    BootstrapResult wide = bbc_cv({draw(50, 2)}, mean_metric, 400, 3);
    CHECK(narrow.hi - narrow.lo < wide.hi - wide.lo);
}

TEST_CASE("bootstrap intervals cover the truth at close to nominal rate") {
    Rng rng(4242);
    const double mu = 0.4;
    int covered = 0;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> scores;
        std::vector<int> labels;
        for (int i = 0; i < 200; ++i) {
            scores.push_back(mu + 0.1 * rng.normal());
            labels.push_back(i % 7);
        }
        RepeatSamples rs = make_repeat(scores, labels);
        BootstrapResult ci = bbc_cv({rs}, mean_metric, 500, 9000 + trial);
        if (ci.lo <= mu && mu <= ci.hi) ++covered;
    }
    CHECK(covered >= 90);
}

TEST_CASE("bootstrap covers a planted discrimination signal") {
    Rng rng(777);
    std::vector<double> scores;
    std::vector<int> labels;
    for (int i = 0; i < 100; ++i) {
        const int y = static_cast<int>(rng.uniform_int(7));
        labels.push_back(y);
        scores.push_back(y + 0.5 * rng.normal());
    }
    RepeatSamples rs = make_repeat(scores, labels);
    MetricFn dxy = [](std::span<const double> s, std::span<const int> l) {
        return somers_dxy(s, l);
    };
    const double full = somers_dxy(scores, labels);
    BootstrapResult ci = bbc_cv({rs}, dxy, 500, 31);
    CHECK(ci.point == doctest::Approx(full).epsilon(1e-12));
    CHECK(ci.lo <= full);
    CHECK(full <= ci.hi);
    CHECK(ci.lo > 0.5);  // the signal is clearly present
}

TEST_CASE("bootstrap redraws degenerate resamples and gives up after ten") {
    RepeatSamples tiny = make_repeat({0.2, 0.8, 0.5}, {0, 0, 1});
    MetricFn dxy = [](std::span<const double> s, std::span<const int> l) {
        return somers_dxy(s, l);
    };
    BootstrapResult out = bbc_cv({tiny}, dxy, 300, 8);
    CHECK(out.lo <= out.hi);

    RepeatSamples lone = make_repeat({0.5}, {2});
    CHECK_THROWS_AS(bbc_cv({lone}, dxy, 10, 1), UndefinedMetricError);

    CHECK_THROWS_AS(bbc_cv({}, dxy, 10, 1), NumericError);
    RepeatSamples empty;
    CHECK_THROWS_AS(bbc_cv({empty}, dxy, 10, 1), UndefinedMetricError);
}

TEST_CASE("paired difference of identical prediction sets is exactly zero") {
    Rng rng(555);
    std::vector<double> scores;
    std::vector<int> labels;
    for (int i = 0; i < 60; ++i) {
        scores.push_back(rng.normal());
        labels.push_back(i % 7);
    }
    RepeatSamples rs = make_repeat(scores, labels);
    BootstrapResult d = bbc_cv_difference({rs}, {rs}, mean_metric, 300, 12);
    CHECK(d.point == 0.0);
    CHECK(d.lo == 0.0);
    CHECK(d.hi == 0.0);
}

TEST_CASE("paired difference restricts to the shared panel and beats unpaired width") {
    Rng rng(556);
    std::vector<double> a_scores, b_scores;
    std::vector<int> labels;
    for (int i = 0; i < 150; ++i) {
        const double base = rng.normal();
        a_scores.push_back(base + 0.55);
        b_scores.push_back(base + 0.05 * rng.normal());
        labels.push_back(i % 7);
    }
    RepeatSamples a = make_repeat(a_scores, labels);
    RepeatSamples b = make_repeat(b_scores, labels);

    BootstrapResult diff = bbc_cv_difference({a}, {b}, mean_metric, 400, 21);
    CHECK(diff.point == doctest::Approx(0.55).epsilon(0.15));

    BootstrapResult ca = bbc_cv({a}, mean_metric, 400, 22);
    BootstrapResult cb = bbc_cv({b}, mean_metric, 400, 23);
    const double unpaired_width =
        std::sqrt((ca.hi - ca.lo) * (ca.hi - ca.lo) + (cb.hi - cb.lo) * (cb.hi - cb.lo));
    CHECK(diff.hi - diff.lo < unpaired_width);

    // Only the shared patients enter the paired comparison.
    RepeatSamples a_side = make_repeat({1, 2, 3, 4, 5, 6}, {0, 1, 2, 3, 4, 5});
    RepeatSamples b_side;
    for (int i = 3; i < 9; ++i) {
        b_side.patient_ids.push_back("p" + std::to_string(i));
        b_side.scores.push_back(i);
        b_side.labels.push_back(i % 7);
    }
    BootstrapResult shared = bbc_cv_difference({a_side}, {b_side}, mean_metric, 50, 2);
    CHECK(shared.n_patients == 3);
}

TEST_CASE("timepoint slices pick the prediction issued at the requested time") {
    std::vector<PredictionRow> rows;
    rows.push_back(make_row("A", 0, 10.0));
    rows.push_back(make_row("A", 1, 11.0));
    rows.push_back(make_row("A", 2, 12.0));
    rows.push_back(make_row("B", 0, 20.0));
    rows.push_back(make_row("B", 1, 21.0));
    std::map<std::string, double> stay = {{"A", 6.0}, {"B", 4.0}};
    std::map<std::string, int> labels = {{"A", 3}, {"B", 5}};

    auto at = [&](Alignment al, double t) {
        return timepoint_slice(rows, stay, labels, 2.0, al, t, kExpectedScore);
    };

    {
        auto panels = at(Alignment::FromAdmission, 0.0);
        REQUIRE(panels.size() == 1);
        REQUIRE(panels[0].patient_ids.size() == 2);
        CHECK(panels[0].scores[0] == 10.0);
        CHECK(panels[0].scores[1] == 20.0);
        CHECK(panels[0].labels[0] == 3);
    }
    {
        auto panels = at(Alignment::FromAdmission, 4.0);
        REQUIRE(panels[0].patient_ids.size() == 2);
        CHECK(panels[0].scores[0] == 11.0);
        CHECK(panels[0].scores[1] == 21.0);
    }
    {
        // off-grid time inside a window: the covering window answers
        auto panels = at(Alignment::FromAdmission, 5.0);
        REQUIRE(panels[0].patient_ids.size() == 1);
        CHECK(panels[0].patient_ids[0] == "A");
        CHECK(panels[0].scores[0] == 12.0);
    }
    {
        auto panels = at(Alignment::ToDischarge, 0.0);
        REQUIRE(panels[0].patient_ids.size() == 2);
        CHECK(panels[0].scores[0] == 12.0);
        CHECK(panels[0].scores[1] == 21.0);
    }
    {
        // two hours before discharge lands on the penultimate window
        auto panels = at(Alignment::ToDischarge, 2.0);
        REQUIRE(panels[0].patient_ids.size() == 2);
        CHECK(panels[0].scores[0] == 11.0);
        CHECK(panels[0].scores[1] == 20.0);
    }
    {
        auto panels = at(Alignment::ToDischarge, 6.0);
        REQUIRE(panels[0].patient_ids.size() == 1);
        CHECK(panels[0].patient_ids[0] == "A");
        CHECK(panels[0].scores[0] == 10.0);
    }
    {
        // beyond every stay: panels exist but carry nobody, so any metric on
        // them is undefined
        auto panels = at(Alignment::FromAdmission, 8.0);
        REQUIRE(panels.size() == 1);
        CHECK(panels[0].patient_ids.empty());
        MetricFn dxy = [](std::span<const double> s, std::span<const int> l) {
            return somers_dxy(s, l);
        };
        CHECK_THROWS_AS(bbc_cv(panels, dxy, 10, 1), UndefinedMetricError);
    }
    {
        // q-column scores instead of the expected index
        auto panels =
            timepoint_slice(rows, stay, labels, 2.0, Alignment::FromAdmission, 2.0, 2);
        REQUIRE(panels[0].scores.size() == 2);
        CHECK(panels[0].scores[0] == rows[0].q(2));
    }
}

TEST_CASE("timepoint slices group rows by repeat and validate inputs") {
    std::vector<PredictionRow> rows;
    rows.push_back(make_row("A", 0, 1.0, 0));
    rows.push_back(make_row("A", 0, 2.0, 1));
    std::map<std::string, double> stay = {{"A", 2.0}};
    std::map<std::string, int> labels = {{"A", 2}};
    auto panels =
        timepoint_slice(rows, stay, labels, 2.0, Alignment::FromAdmission, 0.0, kExpectedScore);
    REQUIRE(panels.size() == 2);
    CHECK(panels[0].scores[0] == 1.0);
    CHECK(panels[1].scores[0] == 2.0);

    std::map<std::string, double> no_stay;
    CHECK_THROWS_AS(timepoint_slice(rows, no_stay, labels, 2.0, Alignment::FromAdmission, 0.0,
                                    kExpectedScore),
                    DataError);
    std::map<std::string, int> no_labels;
    CHECK_THROWS_AS(timepoint_slice(rows, stay, no_labels, 2.0, Alignment::FromAdmission, 0.0,
                                    kExpectedScore),
                    DataError);
    CHECK_THROWS_AS(timepoint_slice(rows, stay, labels, 2.0, Alignment::FromAdmission, -1.0,
                                    kExpectedScore),
                    NumericError);
    CHECK_THROWS_AS(
        timepoint_slice(rows, stay, labels, 2.0, Alignment::FromAdmission, 0.0, 6),
        NumericError);
}

TEST_CASE("alignment names parse both ways") {
    CHECK(parse_alignment("from_admission") == Alignment::FromAdmission);
    CHECK(parse_alignment("to_discharge") == Alignment::ToDischarge);
    CHECK(alignment_name(Alignment::FromAdmission) == "from_admission");
    CHECK(alignment_name(Alignment::ToDischarge) == "to_discharge");
    CHECK_THROWS_AS(parse_alignment("sideways"), DataError);
}

TEST_CASE("prediction rows survive a save and load round trip") {
    std::vector<PredictionRow> rows;
    rows.push_back(make_row("A", 0, 0.37));
    rows.push_back(make_row("B, with comma", 1, 0.91));
    const std::string path = "/tmp/tokentraj_predictions_test.csv";
    save_predictions(rows, path);
    std::vector<PredictionRow> back = load_predictions(path);
    REQUIRE(back.size() == rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(back[i].patient_id == rows[i].patient_id);
        CHECK(back[i].repeat == rows[i].repeat);
        CHECK(back[i].fold == rows[i].fold);
        CHECK(back[i].window == rows[i].window);
        CHECK(back[i].t_hours == rows[i].t_hours);
        CHECK(back[i].expected == rows[i].expected);
        for (int k = 0; k < kOutcomeClasses - 1; ++k) CHECK(back[i].q(k) == rows[i].q(k));
        for (int k = 0; k < kOutcomeClasses; ++k) CHECK(back[i].p(k) == rows[i].p(k));
    }
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_predictions("/tmp/tokentraj_missing_predictions.csv"), DataError);
}
