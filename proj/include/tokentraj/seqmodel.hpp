#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tokentraj/common.hpp"
#include "tokentraj/embedder.hpp"
#include "tokentraj/tokenizer.hpp"

namespace tokentraj {

enum class CellKind { Gru, Lstm };
enum class DecoderKind { Multinomial, Ordinal };

CellKind parse_cell_kind(const std::string& s);
std::string cell_kind_name(CellKind k);
DecoderKind parse_decoder_kind(const std::string& s);
std::string decoder_kind_name(DecoderKind k);

// Gates: r = reset, z = update, n = candidate.  The update gate keeps the old
// state: h' = (1 - z) * n + z * h, so z -> 1 freezes the hidden state.
struct GruParams {
    Eigen::MatrixXd w_r, w_z, w_n;  // hidden x input
    Eigen::MatrixXd u_r, u_z, u_n;  // hidden x hidden
    Eigen::VectorXd b_r, b_z, b_n;  // hidden
};

struct LstmParams {
    Eigen::MatrixXd w_i, w_f, w_g, w_o;  // hidden x input
    Eigen::MatrixXd u_i, u_f, u_g, u_o;  // hidden x hidden
    Eigen::VectorXd b_i, b_f, b_g, b_o;  // hidden
};

struct RecurrentParams {
    CellKind kind = CellKind::Gru;
    GruParams gru;
    LstmParams lstm;

    int input_dim() const;
    int hidden_dim() const;
};

struct DecoderParams {
    DecoderKind kind = DecoderKind::Multinomial;

    // multinomial head: one logit per outcome class
    Eigen::MatrixXd class_weights;  // kOutcomeClasses x hidden
    Eigen::VectorXd class_bias;     // kOutcomeClasses

    // ordinal head: scalar score with ordered cutpoints.  Cutpoint k is
    // first_cutpoint + sum of softplus(cutpoint_raw[0..k-1]), which keeps the
    // sequence strictly increasing for any raw values.
    Eigen::VectorXd score_weights;  // hidden
    double score_bias = 0.0;
    double first_cutpoint = 0.0;
    Eigen::VectorXd cutpoint_raw;  // kOutcomeClasses - 2
};

struct TrajectoryModel {
    EmbeddingParams embedding;
    RecurrentParams recurrent;
    DecoderParams decoder;
};

EmbeddingParams zeros_like(const EmbeddingParams& p);
RecurrentParams zeros_like(const RecurrentParams& p);
DecoderParams zeros_like(const DecoderParams& p);
TrajectoryModel zeros_like(const TrajectoryModel& m);

// Flat named views over every trainable scalar, in a fixed order shared by the
// optimizer, the gradient checker, and the model file writer.
struct TensorRef {
    std::string name;
    double* data = nullptr;
    std::ptrdiff_t size = 0;
};
struct ConstTensorRef {
    std::string name;
    const double* data = nullptr;
    std::ptrdiff_t size = 0;
};
std::vector<TensorRef> named_tensors(TrajectoryModel& m);
std::vector<ConstTensorRef> named_tensors(const TrajectoryModel& m);

RecurrentParams init_recurrent(CellKind kind, int input_dim, int hidden_dim,
                               std::uint64_t seed);
DecoderParams init_decoder(DecoderKind kind, int hidden_dim, std::uint64_t seed);
TrajectoryModel init_model(int vocab_size, int embed_dim, int hidden_dim, CellKind cell,
                           DecoderKind decoder, std::uint64_t seed);

struct GruCache {
    Eigen::VectorXd r, z, n;
};
Eigen::VectorXd gru_step(const GruParams& p, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& h_prev, GruCache* cache = nullptr);

struct LstmCache {
    Eigen::VectorXd i, f, g, o, c, tanh_c;
};
void lstm_step(const LstmParams& p, const Eigen::VectorXd& x, const Eigen::VectorXd& h_prev,
               const Eigen::VectorXd& c_prev, Eigen::VectorXd& h_out, Eigen::VectorXd& c_out,
               LstmCache* cache = nullptr);

// One prediction per window: exceedance probabilities q_k = P(Y > class k) for
// k = 1..6, the seven class probabilities, and the expected outcome index.
struct WindowPrediction {
    Eigen::VectorXd q;  // size kOutcomeClasses - 1
    Eigen::VectorXd p;  // size kOutcomeClasses
    double expected = 0.0;
};

WindowPrediction decode_state(const DecoderParams& d, const Eigen::VectorXd& h);

std::vector<WindowPrediction> forward_windows(const TrajectoryModel& m,
                                              std::span<const TokenSet> windows);
std::vector<WindowPrediction> forward_trajectory(const TrajectoryModel& m,
                                                 const TokenizedStay& stay);

struct ModelFile {
    TrajectoryModel model;
    std::string vocab_hash;
    std::uint64_t seed = 0;
    int repeat = -1;
    int fold = -1;
    std::map<std::string, std::string> config;
    std::vector<std::string> test_patients;
    std::vector<std::string> val_patients;
};

void save_model(const ModelFile& file, const std::string& path);
ModelFile load_model(const std::string& path);

}  // namespace tokentraj
