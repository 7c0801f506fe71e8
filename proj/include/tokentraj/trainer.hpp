#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "tokentraj/metrics.hpp"
#include "tokentraj/seqmodel.hpp"
#include "tokentraj/tokenizer.hpp"

namespace tokentraj {

// Repeated stratified k-fold assignment.  Within each repeat every outcome
// class is shuffled and dealt round-robin across folds, so per-class test
// counts differ by at most one between folds.  The validation set is a
// stratified 1/k share of the non-test patients, dealt the same way.
struct FoldAssignment {
    int repeat = 0;
    int fold = 0;
    std::vector<std::string> test_patients;  // sorted
    std::vector<std::string> val_patients;   // sorted; disjoint from test
};

std::vector<FoldAssignment> make_partitions(std::span<const OutcomeLabel> outcomes, int repeats,
                                            int folds, std::uint64_t seed);

struct TrainConfig {
    double window_hours = 2.0;
    int window_limit = 84;
    int bin_count = 20;
    int embed_dim = 128;
    int hidden_dim = 128;
    CellKind cell = CellKind::Gru;
    DecoderKind decoder = DecoderKind::Multinomial;
    double dropout = 0.2;
    double learning_rate = 0.001;
    int batch_size = 1;
    int max_epochs = 30;
    int patience = 10;
    int cv_repeats = 20;
    int cv_folds = 5;
};

// Reads the train_* keys out of a flat key=value map; keys outside the known
// set (for instance the synth_* block of a shared config file) are ignored
// only when they carry a recognized prefix.
TrainConfig train_config_from_map(const std::map<std::string, std::string>& kv);
std::map<std::string, std::string> train_config_to_map(const TrainConfig& cfg);

// Mean over windows of -log p(class), probabilities floored at 1e-12.
double sequence_nll(std::span<const WindowPrediction> preds, int label);

// Forward pass with dropout plus full backpropagation through time.  The
// gradient of the mean-window negative log-likelihood is accumulated into
// `grad` (pass nullptr to skip the backward pass).  With dropout_p > 0 an
// RNG must be supplied; masks are drawn per window and coordinate.
double sequence_loss_and_grad(const TrajectoryModel& model, std::span<const TokenSet> windows,
                              int label, double dropout_p, Rng* rng, TrajectoryModel* grad);

// Scales every gradient so the global L2 norm is at most max_norm; returns
// the norm before clipping.
double clip_global_norm(TrajectoryModel& grad, double max_norm);

struct AdamState {
    TrajectoryModel m1;
    TrajectoryModel m2;
    long long step = 0;
};

AdamState make_adam_state(const TrajectoryModel& model);
void adam_step(TrajectoryModel& model, const TrajectoryModel& grad, AdamState& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

struct TrainLogRow {
    int repeat = 0;
    int fold = 0;
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_dxy = 0.0;
    bool stopped = false;  // early stop fired after this epoch
};

struct TrainResult {
    TrajectoryModel model;  // parameters from the best validation epoch
    std::vector<TrainLogRow> log;
    int best_epoch = 0;
    double best_val_dxy = 0.0;
};

// One fold: Adam on per-stay gradients (batches of batch_size stays), global
// gradient norm clipped at 10, validation Somers' Dxy on the expected outcome
// of each stay's last window after every epoch, early stop after `patience`
// epochs without improvement, parameters restored from the best epoch.
TrainResult train_fold(const std::vector<TokenizedStay>& train_stays,
                       std::span<const int> train_labels,
                       const std::vector<TokenizedStay>& val_stays,
                       std::span<const int> val_labels, const TrainConfig& cfg, int vocab_size,
                       std::uint64_t seed, int repeat = 0, int fold = 0);

void save_training_log(std::span<const TrainLogRow> rows, const std::string& path,
                       bool append = false);

std::vector<PredictionRow> predict_stays(const TrajectoryModel& model,
                                         const std::vector<TokenizedStay>& stays, int repeat,
                                         int fold);

// Multinomial logistic model over static features, fitted by full-batch
// gradient descent with backtracking line search.  The L2 penalty applies to
// the weights only, so with no informative feature the fitted probabilities
// reproduce the class frequencies exactly.
struct StaticBaseline {
    Eigen::MatrixXd weights;  // kOutcomeClasses x n_features
    Eigen::VectorXd bias;     // kOutcomeClasses
    bool converged = false;
    int iterations = 0;
};

StaticBaseline fit_static_baseline(const Eigen::MatrixXd& features, std::span<const int> labels,
                                   double l2 = 1e-4, int max_iters = 10000,
                                   double grad_tol = 1e-6);
Eigen::VectorXd static_baseline_probs(const StaticBaseline& model, const Eigen::VectorXd& x);

}  // namespace tokentraj
