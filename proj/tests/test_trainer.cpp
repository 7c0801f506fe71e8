#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tokentraj/trainer.hpp"

using namespace tokentraj;

namespace {

std::vector<OutcomeLabel> uniform_cohort(int per_class) {
    std::vector<OutcomeLabel> out;
    for (int c = 0; c < kOutcomeClasses; ++c) {
        for (int i = 0; i < per_class; ++i) {
            out.push_back({"c" + std::to_string(c) + "_p" + std::to_string(i), c});
        }
    }
    return out;
}

TokenizedStay make_stay(const std::string& id, const std::vector<std::vector<int>>& windows) {
    TokenizedStay stay;
    stay.patient_id = id;
    stay.window_hours = 2.0;
    stay.windows.resize(windows.size());
    for (std::size_t i = 0; i < windows.size(); ++i) {
        stay.windows[i].window_index = static_cast<int>(i);
        stay.windows[i].ids = windows[i];
    }
    return stay;
}

WindowPrediction flat_prediction(double p_label, int label) {
    WindowPrediction pr;
    pr.p = Eigen::VectorXd::Constant(kOutcomeClasses,
                                     (1.0 - p_label) / (kOutcomeClasses - 1));
    pr.p(label) = p_label;
    pr.q = Eigen::VectorXd::Zero(kOutcomeClasses - 1);
    double tail = 0.0;
    for (int k = kOutcomeClasses - 1; k >= 1; --k) {
        tail += pr.p(k);
        pr.q(k - 1) = tail;
    }
    pr.expected = 0.0;
    for (int i = 0; i < kOutcomeClasses; ++i) pr.expected += i * pr.p(i);
    return pr;
}

double check_gradients(CellKind cell, DecoderKind decoder, std::uint64_t seed) {
    TrajectoryModel model = init_model(6, 4, 5, cell, decoder, seed);
    std::vector<TokenSet> w(3);
    w[0].window_index = 0;
    w[0].ids = {0, 2, 5};  // includes PAD, which must contribute nothing
    w[1].window_index = 1;
    w[1].ids = {3, 4};
    w[2].window_index = 2;
    w[2].ids = {2, 3, 5};
    const int label = 4;

    TrajectoryModel grad = zeros_like(model);
    sequence_loss_and_grad(model, w, label, 0.0, nullptr, &grad);

    std::vector<TensorRef> params = named_tensors(model);
    std::vector<ConstTensorRef> grads = named_tensors(static_cast<const TrajectoryModel&>(grad));
    const double step = 1e-5;
    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        for (std::ptrdiff_t j = 0; j < params[i].size; ++j) {
            double* slot = params[i].data + j;
            const double saved = *slot;
            *slot = saved + step;
            const double up = sequence_loss_and_grad(model, w, label, 0.0, nullptr, nullptr);
            *slot = saved - step;
            const double down = sequence_loss_and_grad(model, w, label, 0.0, nullptr, nullptr);
            *slot = saved;
            const double fd = (up - down) / (2.0 * step);
            const double an = grads[i].data[j];
            const double denom = std::max({std::abs(an), std::abs(fd), 1e-3});
            worst = std::max(worst, std::abs(an - fd) / denom);
        }
    }
    return worst;
}

}  // namespace

TEST_CASE("partitions split ten-per-class cohorts into exactly two per class") {
    std::vector<OutcomeLabel> cohort = uniform_cohort(10);
    auto parts = make_partitions(cohort, 1, 5, 99);
    REQUIRE(parts.size() == 5);
    for (const auto& fa : parts) {
        CHECK(fa.test_patients.size() == 14);
        std::map<int, int> per_class;
        for (const std::string& pid : fa.test_patients) {
            per_class[pid[1] - '0'] += 1;
        }
        for (int c = 0; c < kOutcomeClasses; ++c) CHECK(per_class[c] == 2);
    }
}

TEST_CASE("partitions are deterministic in the seed") {
    std::vector<OutcomeLabel> cohort = uniform_cohort(6);
    auto a = make_partitions(cohort, 3, 5, 404);
    auto b = make_partitions(cohort, 3, 5, 404);
    auto c = make_partitions(cohort, 3, 5, 405);
    REQUIRE(a.size() == b.size());
    bool identical = true;
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].test_patients != b[i].test_patients || a[i].val_patients != b[i].val_patients) {
            identical = false;
        }
        if (a[i].test_patients != c[i].test_patients) differs = true;
    }
    CHECK(identical);
    CHECK(differs);
}

TEST_CASE("seven patients over five folds give sizes 2,2,1,1,1") {
    std::vector<OutcomeLabel> cohort;
    for (int i = 0; i < 7; ++i) cohort.push_back({"p" + std::to_string(i), 2});
    auto parts = make_partitions(cohort, 1, 5, 7);
    REQUIRE(parts.size() == 5);
    std::vector<std::size_t> sizes;
    for (const auto& fa : parts) sizes.push_back(fa.test_patients.size());
    std::sort(sizes.begin(), sizes.end());
    CHECK(sizes == std::vector<std::size_t>({1, 1, 1, 2, 2}));
}

TEST_CASE("partition invariants hold on random cohorts") {
    Rng rng(2024);
    for (int trial = 0; trial < 10; ++trial) {
        const int n = 20 + static_cast<int>(rng.uniform_int(80));
        const int folds = 3 + static_cast<int>(rng.uniform_int(4));
        std::vector<OutcomeLabel> cohort;
        std::map<std::string, int> label_of;
        std::map<int, int> class_total;
        for (int i = 0; i < n; ++i) {
            const int c = static_cast<int>(rng.uniform_int(kOutcomeClasses));
            std::string pid = "p" + std::to_string(i);
            cohort.push_back({pid, c});
            label_of[pid] = c;
            class_total[c] += 1;
        }

        auto parts = make_partitions(cohort, 2, folds, 1234 + trial);
        REQUIRE(parts.size() == static_cast<std::size_t>(2 * folds));

        for (int r = 0; r < 2; ++r) {
            std::set<std::string> seen;
            for (int k = 0; k < folds; ++k) {
                const FoldAssignment& fa = parts[static_cast<std::size_t>(r * folds + k)];
                CHECK(fa.repeat == r);
                CHECK(fa.fold == k);

                std::map<int, int> count;
                for (const std::string& pid : fa.test_patients) {
                    CHECK(seen.insert(pid).second);  // folds are disjoint
                    count[label_of[pid]] += 1;
                }
                for (const auto& [c, total] : class_total) {
                    const double share = static_cast<double>(total) / folds;
                    CHECK(std::abs(count[c] - share) <= 1.0);
                }

                std::set<std::string> test_set(fa.test_patients.begin(),
                                               fa.test_patients.end());
                CHECK(!fa.val_patients.empty());
                for (const std::string& pid : fa.val_patients) {
                    CHECK(test_set.count(pid) == 0);
                }
            }
            CHECK(seen.size() == static_cast<std::size_t>(n));  // folds cover the cohort
        }
    }
}

TEST_CASE("partition input validation") {
    std::vector<OutcomeLabel> cohort = uniform_cohort(2);
    CHECK_THROWS_AS(make_partitions(cohort, 0, 5, 1), NumericError);
    CHECK_THROWS_AS(make_partitions(cohort, 1, 1, 1), NumericError);

    std::vector<OutcomeLabel> dup = {{"a", 1}, {"a", 2}};
    CHECK_THROWS_AS(make_partitions(dup, 1, 2, 1), DataError);

    std::vector<OutcomeLabel> bad = {{"a", 7}};
    CHECK_THROWS_AS(make_partitions(bad, 1, 2, 1), DataError);
}

TEST_CASE("sequence nll closed forms") {
    std::vector<WindowPrediction> sure = {flat_prediction(1.0, 3), flat_prediction(1.0, 3)};
    CHECK(sequence_nll(sure, 3) == doctest::Approx(0.0).epsilon(1e-12));

    std::vector<WindowPrediction> uniform = {flat_prediction(1.0 / 7.0, 2)};
    CHECK(sequence_nll(uniform, 2) == doctest::Approx(std::log(7.0)).epsilon(1e-12));

    std::vector<WindowPrediction> two = {flat_prediction(0.5, 1), flat_prediction(0.25, 1)};
    CHECK(sequence_nll(two, 1) ==
          doctest::Approx((std::log(2.0) + std::log(4.0)) / 2.0).epsilon(1e-12));

    CHECK_THROWS_AS(sequence_nll({}, 0), NumericError);
    CHECK_THROWS_AS(sequence_nll(two, 9), NumericError);
}

TEST_CASE("analytic gradients match central finite differences") {
    CHECK(check_gradients(CellKind::Gru, DecoderKind::Multinomial, 31) < 1e-4);
    CHECK(check_gradients(CellKind::Gru, DecoderKind::Ordinal, 32) < 1e-4);
    CHECK(check_gradients(CellKind::Lstm, DecoderKind::Multinomial, 33) < 1e-4);
    CHECK(check_gradients(CellKind::Lstm, DecoderKind::Ordinal, 34) < 1e-4);
}

TEST_CASE("padding token rows receive no gradient") {
    TrajectoryModel model = init_model(6, 4, 5, CellKind::Gru, DecoderKind::Multinomial, 8);
    std::vector<TokenSet> w(2);
    w[0].window_index = 0;
    w[0].ids = {0, 2};  // PAD plus a live token
    w[1].window_index = 1;
    w[1].ids = {3};
    TrajectoryModel grad = zeros_like(model);
    sequence_loss_and_grad(model, w, 5, 0.0, nullptr, &grad);
    CHECK(grad.embedding.vectors.row(0).norm() == 0.0);
    CHECK(grad.embedding.relevance_raw(0) == 0.0);
    CHECK(grad.embedding.vectors.row(2).norm() > 0.0);
}

TEST_CASE("accumulating the same stay twice doubles every gradient") {
    TrajectoryModel model = init_model(6, 4, 5, CellKind::Gru, DecoderKind::Multinomial, 9);
    std::vector<TokenSet> w(2);
    w[0].window_index = 0;
    w[0].ids = {2, 4};
    w[1].window_index = 1;
    w[1].ids = {3, 5};

    TrajectoryModel once = zeros_like(model);
    sequence_loss_and_grad(model, w, 2, 0.0, nullptr, &once);
    TrajectoryModel twice = zeros_like(model);
    sequence_loss_and_grad(model, w, 2, 0.0, nullptr, &twice);
    sequence_loss_and_grad(model, w, 2, 0.0, nullptr, &twice);

    auto a = named_tensors(static_cast<const TrajectoryModel&>(once));
    auto b = named_tensors(static_cast<const TrajectoryModel&>(twice));
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::ptrdiff_t j = 0; j < a[i].size; ++j) {
            // doubled up to accumulation-order rounding
            CHECK(b[i].data[j] == doctest::Approx(2.0 * a[i].data[j]).epsilon(1e-12));
        }
    }
}

TEST_CASE("global norm clipping rescales exactly once past the threshold") {
    TrajectoryModel g = init_model(6, 3, 4, CellKind::Gru, DecoderKind::Multinomial, 10);
    double sq = 0.0;
    for (const auto& r : named_tensors(static_cast<const TrajectoryModel&>(g))) {
        for (std::ptrdiff_t j = 0; j < r.size; ++j) sq += r.data[j] * r.data[j];
    }
    const double before = std::sqrt(sq);

    TrajectoryModel big = g;
    const double returned = clip_global_norm(big, before / 2.0);
    CHECK(returned == doctest::Approx(before).epsilon(1e-12));
    double sq_after = 0.0;
    for (const auto& r : named_tensors(static_cast<const TrajectoryModel&>(big))) {
        for (std::ptrdiff_t j = 0; j < r.size; ++j) sq_after += r.data[j] * r.data[j];
    }
    CHECK(std::sqrt(sq_after) == doctest::Approx(before / 2.0).epsilon(1e-9));

    TrajectoryModel small = g;
    clip_global_norm(small, before * 2.0);
    auto orig = named_tensors(static_cast<const TrajectoryModel&>(g));
    auto kept = named_tensors(static_cast<const TrajectoryModel&>(small));
    for (std::size_t i = 0; i < orig.size(); ++i) {
        CHECK(std::memcmp(orig[i].data, kept[i].data, orig[i].size * sizeof(double)) == 0);
    }
}

TEST_CASE("adam: zero gradient leaves parameters in place") {
    TrajectoryModel model = init_model(6, 3, 4, CellKind::Gru, DecoderKind::Multinomial, 11);
    TrajectoryModel before = model;
    TrajectoryModel grad = zeros_like(model);
    AdamState state = make_adam_state(model);
    adam_step(model, grad, state, 0.1);
    CHECK(state.step == 1);
    auto a = named_tensors(static_cast<const TrajectoryModel&>(before));
    auto b = named_tensors(static_cast<const TrajectoryModel&>(model));
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(std::memcmp(a[i].data, b[i].data, a[i].size * sizeof(double)) == 0);
    }
}

TEST_CASE("adam: first step with unit gradient moves by almost the learning rate") {
    TrajectoryModel model = init_model(6, 3, 4, CellKind::Gru, DecoderKind::Multinomial, 12);
    const double start = model.embedding.vectors(2, 0);
    TrajectoryModel grad = zeros_like(model);
    grad.embedding.vectors(2, 0) = 1.0;
    AdamState state = make_adam_state(model);
    const double lr = 0.004;
    adam_step(model, grad, state, lr);
    const double delta = model.embedding.vectors(2, 0) - start;
    CHECK(delta == doctest::Approx(-lr).epsilon(1e-6));
}

TEST_CASE("adam: constant gradient settles at learning-rate sized steps") {
    TrajectoryModel model = init_model(6, 3, 4, CellKind::Gru, DecoderKind::Multinomial, 13);
    TrajectoryModel grad = zeros_like(model);
    grad.recurrent.gru.b_n(1) = 0.5;
    AdamState state = make_adam_state(model);
    const double lr = 0.01;
    double prev = model.recurrent.gru.b_n(1);
    double last_step = 0.0;
    for (int k = 0; k < 200; ++k) {
        adam_step(model, grad, state, lr);
        last_step = model.recurrent.gru.b_n(1) - prev;
        prev = model.recurrent.gru.b_n(1);
    }
    CHECK(std::abs(last_step + lr) < 0.01 * lr);
}

namespace {

struct PlantedData {
    std::vector<TokenizedStay> train, val;
    std::vector<int> train_labels, val_labels;
};

// Two outcome groups with disjoint marker tokens; any model that learns the
// markers separates the groups perfectly.
PlantedData planted_signal() {
    PlantedData d;
    auto add = [&](std::vector<TokenizedStay>& stays, std::vector<int>& labels, int idx,
                   int label) {
        const int marker = label == 0 ? 3 : 4;
        stays.push_back(make_stay("s" + std::to_string(label) + "_" + std::to_string(idx),
                                  {{2, marker}, {marker, 5}, {2, marker}}));
        labels.push_back(label);
    };
    for (int i = 0; i < 10; ++i) {
        add(d.train, d.train_labels, i, 0);
        add(d.train, d.train_labels, i, 6);
    }
    for (int i = 0; i < 4; ++i) {
        add(d.val, d.val_labels, 100 + i, 0);
        add(d.val, d.val_labels, 100 + i, 6);
    }
    return d;
}

TrainConfig small_config() {
    TrainConfig cfg;
    cfg.embed_dim = 8;
    cfg.hidden_dim = 8;
    cfg.learning_rate = 0.02;
    cfg.dropout = 0.0;
    cfg.max_epochs = 20;
    cfg.patience = 20;
    return cfg;
}

}  // namespace

TEST_CASE("training on a planted signal improves the loss and separates validation") {
    PlantedData d = planted_signal();
    TrainConfig cfg = small_config();
    TrainResult res = train_fold(d.train, d.train_labels, d.val, d.val_labels, cfg, 8, 555);

    REQUIRE(res.log.size() >= 2);
    CHECK(res.log[1].train_loss < res.log[0].train_loss);
    CHECK(res.best_val_dxy >= 0.9);

    // The snapshot comes from the best epoch: nothing later beats it.
    double best_seen = -2.0;
    int first_best = 0;
    for (const auto& row : res.log) {
        if (row.val_dxy > best_seen) {
            best_seen = row.val_dxy;
            first_best = row.epoch;
        }
    }
    CHECK(res.best_val_dxy == best_seen);
    CHECK(res.best_epoch == first_best);
}

TEST_CASE("training twice with one seed yields bitwise identical snapshots") {
    PlantedData d = planted_signal();
    TrainConfig cfg = small_config();
    cfg.dropout = 0.2;  // exercises the dropout rng as well
    cfg.max_epochs = 5;
    cfg.patience = 5;

    TrainResult a = train_fold(d.train, d.train_labels, d.val, d.val_labels, cfg, 8, 321, 1, 2);
    TrainResult b = train_fold(d.train, d.train_labels, d.val, d.val_labels, cfg, 8, 321, 1, 2);

    auto ta = named_tensors(static_cast<const TrajectoryModel&>(a.model));
    auto tb = named_tensors(static_cast<const TrajectoryModel&>(b.model));
    for (std::size_t i = 0; i < ta.size(); ++i) {
        CHECK(std::memcmp(ta[i].data, tb[i].data, ta[i].size * sizeof(double)) == 0);
    }
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].train_loss == b.log[i].train_loss);
        CHECK(a.log[i].val_dxy == b.log[i].val_dxy);
        CHECK(a.log[i].repeat == 1);
        CHECK(a.log[i].fold == 2);
    }
}

TEST_CASE("early stopping fires after the configured quiet streak") {
    PlantedData d = planted_signal();
    TrainConfig cfg = small_config();
    cfg.learning_rate = 1e-7;  // ranks never move, so epoch one stays best
    cfg.max_epochs = 30;
    cfg.patience = 2;

    TrainResult res = train_fold(d.train, d.train_labels, d.val, d.val_labels, cfg, 8, 77);
    REQUIRE(res.log.size() == 3);
    CHECK(res.best_epoch == 1);
    CHECK(res.log.back().stopped);
    CHECK_FALSE(res.log.front().stopped);
}

TEST_CASE("train_fold validates its inputs") {
    PlantedData d = planted_signal();
    TrainConfig cfg = small_config();
    std::vector<int> short_labels(d.train.size() - 1, 0);
    CHECK_THROWS_AS(train_fold(d.train, short_labels, d.val, d.val_labels, cfg, 8, 1),
                    NumericError);
    CHECK_THROWS_AS(train_fold({}, {}, d.val, d.val_labels, cfg, 8, 1), NumericError);
}

TEST_CASE("training log file carries one row per epoch and appends cleanly") {
    std::vector<TrainLogRow> rows(2);
    rows[0] = {0, 1, 1, 1.5, 0.25, false};
    rows[1] = {0, 1, 2, 1.25, 0.5, true};
    const std::string path = "/tmp/tokentraj_trainlog_test.csv";
    std::remove(path.c_str());
    save_training_log(rows, path);
    std::vector<TrainLogRow> more(1);
    more[0] = {0, 2, 1, 2.0, 0.1, false};
    save_training_log(more, path, true);

    std::ifstream in(path);
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(in, line)) lines.push_back(line);
    REQUIRE(lines.size() == 4);
    CHECK(lines[0] == "repeat,fold,epoch,train_loss,val_dxy,stopped");
    CHECK(lines[1].rfind("0,1,1,", 0) == 0);
    CHECK(lines[2].rfind("0,1,2,", 0) == 0);
    CHECK(lines[3].rfind("0,2,1,", 0) == 0);
    CHECK(lines[2].back() == '1');
    std::remove(path.c_str());
}

TEST_CASE("prediction rows mirror the forward pass window by window") {
    TrajectoryModel m = init_model(8, 4, 5, CellKind::Gru, DecoderKind::Multinomial, 44);
    std::vector<TokenizedStay> stays;
    stays.push_back(make_stay("alpha", {{2, 3}, {4}}));
    stays.push_back(make_stay("beta", {{5}, {2, 6}, {7}}));

    auto rows = predict_stays(m, stays, 4, 1);
    REQUIRE(rows.size() == 5);
    CHECK(rows[0].patient_id == "alpha");
    CHECK(rows[0].window == 0);
    CHECK(rows[0].t_hours == 2.0);
    CHECK(rows[1].t_hours == 4.0);
    CHECK(rows[2].patient_id == "beta");
    CHECK(rows[4].window == 2);
    CHECK(rows[4].t_hours == 6.0);
    for (const auto& r : rows) {
        CHECK(r.repeat == 4);
        CHECK(r.fold == 1);
    }

    auto direct = forward_windows(m, stays[0].windows);
    for (int k = 0; k < kOutcomeClasses - 1; ++k) CHECK(rows[0].q(k) == direct[0].q(k));
    CHECK(rows[1].expected == direct[1].expected);
}

TEST_CASE("baseline with uninformative features reproduces class frequencies") {
    const int n = 56;
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n, 2);
    std::vector<int> labels;
    const int counts[kOutcomeClasses] = {10, 5, 5, 16, 8, 6, 6};
    for (int c = 0; c < kOutcomeClasses; ++c) {
        for (int i = 0; i < counts[c]; ++i) labels.push_back(c);
    }
    StaticBaseline fit = fit_static_baseline(x, labels);
    CHECK(fit.converged);
    Eigen::VectorXd probs = static_baseline_probs(fit, Eigen::VectorXd::Zero(2));
    for (int c = 0; c < kOutcomeClasses; ++c) {
        CHECK(probs(c) == doctest::Approx(counts[c] / static_cast<double>(n)).epsilon(1e-4));
    }
}

TEST_CASE("baseline separates a linearly separable toy exactly") {
    const int n = 20;
    Eigen::MatrixXd x(n, 1);
    std::vector<int> labels;
    for (int i = 0; i < n; ++i) {
        const bool high = i % 2 == 0;
        x(i, 0) = high ? 2.0 : -2.0;
        labels.push_back(high ? 5 : 1);
    }
    StaticBaseline fit = fit_static_baseline(x, labels);
    int correct = 0;
    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd p = static_baseline_probs(fit, x.row(i).transpose());
        int arg = 0;
        p.maxCoeff(&arg);
        if (arg == labels[static_cast<std::size_t>(i)]) ++correct;
    }
    CHECK(correct == n);
}

TEST_CASE("baseline recovers known coefficients from simulated data") {
    Rng rng(606);
    // n sized so sampling error sits several standard errors inside the bound
    const int n = 20000, nf = 2;
    Eigen::MatrixXd true_w(kOutcomeClasses, nf);
    Eigen::VectorXd true_b(kOutcomeClasses);
    for (int c = 0; c < kOutcomeClasses; ++c) {
        true_b(c) = rng.uniform(-0.5, 0.5);
        for (int f = 0; f < nf; ++f) true_w(c, f) = rng.uniform(-0.8, 0.8);
    }
    // center so the generating parameters match the minimum-norm solution the
    // penalty selects
    for (int f = 0; f < nf; ++f) true_w.col(f).array() -= true_w.col(f).mean();
    true_b.array() -= true_b.mean();

    Eigen::MatrixXd x(n, nf);
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
        for (int f = 0; f < nf; ++f) x(i, f) = rng.normal();
        Eigen::VectorXd z = true_w * x.row(i).transpose() + true_b;
        Eigen::VectorXd p = (z.array() - z.maxCoeff()).exp().matrix();
        p /= p.sum();
        double u = rng.uniform01(), acc = 0.0;
        int y = kOutcomeClasses - 1;
        for (int c = 0; c < kOutcomeClasses; ++c) {
            acc += p(c);
            if (u < acc) {
                y = c;
                break;
            }
        }
        labels[static_cast<std::size_t>(i)] = y;
    }

    StaticBaseline fit = fit_static_baseline(x, labels);
    CHECK(fit.converged);
    Eigen::MatrixXd w = fit.weights;
    Eigen::VectorXd b = fit.bias;
    for (int f = 0; f < nf; ++f) w.col(f).array() -= w.col(f).mean();
    b.array() -= b.mean();
    for (int c = 0; c < kOutcomeClasses; ++c) {
        CHECK(std::abs(b(c) - true_b(c)) < 0.05);
        for (int f = 0; f < nf; ++f) CHECK(std::abs(w(c, f) - true_w(c, f)) < 0.05);
    }
}

TEST_CASE("baseline reports non-convergence when starved of iterations") {
    Eigen::MatrixXd x(8, 1);
    std::vector<int> labels;
    for (int i = 0; i < 8; ++i) {
        x(i, 0) = i < 4 ? 1.0 : -1.0;
        labels.push_back(i < 4 ? 6 : 0);
    }
    StaticBaseline fit = fit_static_baseline(x, labels, 1e-4, 2);
    CHECK_FALSE(fit.converged);
    CHECK(fit.iterations == 2);

    CHECK_THROWS_AS(fit_static_baseline(Eigen::MatrixXd(0, 1), {}), NumericError);
    std::vector<int> bad = {9};
    CHECK_THROWS_AS(fit_static_baseline(Eigen::MatrixXd::Zero(1, 1), bad), NumericError);
}

TEST_CASE("config maps round-trip and reject bad values") {
    TrainConfig cfg;
    cfg.window_hours = 4.0;
    cfg.window_limit = 42;
    cfg.bin_count = 10;
    cfg.embed_dim = 16;
    cfg.hidden_dim = 32;
    cfg.cell = CellKind::Lstm;
    cfg.decoder = DecoderKind::Ordinal;
    cfg.dropout = 0.1;
    cfg.learning_rate = 0.005;
    cfg.batch_size = 2;
    cfg.max_epochs = 12;
    cfg.patience = 3;
    cfg.cv_repeats = 4;
    cfg.cv_folds = 3;

    TrainConfig back = train_config_from_map(train_config_to_map(cfg));
    CHECK(back.window_hours == cfg.window_hours);
    CHECK(back.window_limit == cfg.window_limit);
    CHECK(back.bin_count == cfg.bin_count);
    CHECK(back.embed_dim == cfg.embed_dim);
    CHECK(back.hidden_dim == cfg.hidden_dim);
    CHECK(back.cell == cfg.cell);
    CHECK(back.decoder == cfg.decoder);
    CHECK(back.dropout == cfg.dropout);
    CHECK(back.learning_rate == cfg.learning_rate);
    CHECK(back.batch_size == cfg.batch_size);
    CHECK(back.max_epochs == cfg.max_epochs);
    CHECK(back.patience == cfg.patience);
    CHECK(back.cv_repeats == cfg.cv_repeats);
    CHECK(back.cv_folds == cfg.cv_folds);

    TrainConfig defaults = train_config_from_map({});
    CHECK(defaults.learning_rate == 0.001);
    CHECK(defaults.max_epochs == 30);
    CHECK(defaults.patience == 10);
    CHECK(defaults.window_limit == 84);
    CHECK(defaults.cv_repeats == 20);
    CHECK(defaults.cv_folds == 5);

    CHECK_THROWS_AS(train_config_from_map({{"learning_rate", "fast"}}), DataError);
    CHECK_THROWS_AS(train_config_from_map({{"patience", "0"}}), DataError);
    CHECK_THROWS_AS(train_config_from_map({{"dropout", "1.0"}}), DataError);
    CHECK_THROWS_AS(train_config_from_map({{"cv_folds", "1"}}), DataError);
    CHECK_THROWS_AS(train_config_from_map({{"mystery_key", "1"}}), DataError);
    CHECK_NOTHROW(train_config_from_map({{"synth_patients", "50"}}));
}
