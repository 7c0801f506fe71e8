#pragma once

#include <Eigen/Dense>

#include "tokentraj/common.hpp"
#include "tokentraj/tokenizer.hpp"

// Token embedding: a learned vector and a positive relevance weight per
// token; a window embeds as the relevance-weighted average of its token
// vectors.

namespace tokentraj {

struct EmbeddingParams {
    Eigen::MatrixXd vectors;       // |V| x d
    Eigen::VectorXd relevance_raw; // |V|; weight = softplus(raw), PAD forced to 0

    int vocab_size() const { return static_cast<int>(vectors.rows()); }
    int dim() const { return static_cast<int>(vectors.cols()); }
};

// Vectors i.i.d. uniform in [-1/sqrt(d), +1/sqrt(d)]; relevance_raw zero.
EmbeddingParams init_embedding(int vocab_size, int dim, std::uint64_t seed);

// softplus(relevance_raw[id]); exactly zero for PAD.
double token_weight(const EmbeddingParams& params, int id);

Eigen::VectorXd weighted_average(std::span<const int> ids, const Eigen::MatrixXd& vectors,
                                 std::span<const double> weights);

// x_t = sum_v w_v E_v / sum_v w_v over the token set. With dropout_p > 0
// (training only) each coordinate of x_t is zeroed independently with
// probability dropout_p and survivors are rescaled by 1/(1-dropout_p).
Eigen::VectorXd embed_window(const TokenSet& tokens, const EmbeddingParams& params,
                             double dropout_p = 0.0, Rng* rng = nullptr);

} // namespace tokentraj
