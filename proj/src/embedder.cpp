#include "tokentraj/embedder.hpp"

#include <algorithm>

namespace tokentraj {

EmbeddingParams init_embedding(int vocab_size, int dim, std::uint64_t seed) {
    if (vocab_size < 2) throw NumericError("init_embedding: vocab_size must be >= 2");
    if (dim < 1) throw NumericError("init_embedding: dim must be >= 1");

    EmbeddingParams params;
    params.vectors.resize(vocab_size, dim);
    params.relevance_raw = Eigen::VectorXd::Zero(vocab_size);

    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
    for (int i = 0; i < vocab_size; ++i) {
        for (int j = 0; j < dim; ++j) {
            params.vectors(i, j) = rng.uniform(-bound, bound);
        }
    }
    return params;
}

double token_weight(const EmbeddingParams& params, int id) {
    if (id == kPadId) return 0.0;
    return softplus(params.relevance_raw(id));
}

Eigen::VectorXd weighted_average(std::span<const int> ids, const Eigen::MatrixXd& vectors,
                                 std::span<const double> weights) {
    if (ids.empty()) throw NumericError("weighted_average: empty token set");
    if (ids.size() != weights.size()) throw NumericError("weighted_average: size mismatch");

    // fix the accumulation order so any ordering of the same token set gives
    // bitwise identical output
    std::vector<std::size_t> order(ids.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });

    double total = 0.0;
    for (double w : weights) total += w;
    if (!(total > 0.0)) throw NumericError("weighted_average: weights sum to zero");

    // normalizing before the sum makes a singleton reproduce its vector
    // exactly (w/w = 1)
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(vectors.cols());
    for (std::size_t i : order) {
        acc += (weights[i] / total) * vectors.row(ids[i]).transpose();
    }
    return acc;
}

Eigen::VectorXd embed_window(const TokenSet& tokens, const EmbeddingParams& params,
                             double dropout_p, Rng* rng) {
    if (tokens.ids.empty()) throw NumericError("embed_window: empty token set");

    std::vector<double> weights;
    weights.reserve(tokens.ids.size());
    for (int id : tokens.ids) weights.push_back(token_weight(params, id));

    Eigen::VectorXd x = weighted_average(tokens.ids, params.vectors, weights);
    if (dropout_p > 0.0) {
        if (rng == nullptr) throw NumericError("embed_window: dropout requires an RNG");
        if (dropout_p >= 1.0) throw NumericError("embed_window: dropout_p must be < 1");
        const double keep_scale = 1.0 / (1.0 - dropout_p);
        for (int j = 0; j < x.size(); ++j) {
            x(j) = rng->uniform01() < dropout_p ? 0.0 : x(j) * keep_scale;
        }
    }
    return x;
}

} // namespace tokentraj
