#include "tokentraj/seqmodel.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace tokentraj {

static_assert(std::endian::native == std::endian::little,
              "model files assume little-endian doubles");

using nlohmann::json;

CellKind parse_cell_kind(const std::string& s) {
    if (s == "gru") return CellKind::Gru;
    if (s == "lstm") return CellKind::Lstm;
    throw DataError("unknown cell kind '" + s + "' (expected gru or lstm)");
}

std::string cell_kind_name(CellKind k) {
    return k == CellKind::Gru ? "gru" : "lstm";
}

DecoderKind parse_decoder_kind(const std::string& s) {
    if (s == "multinomial") return DecoderKind::Multinomial;
    if (s == "ordinal") return DecoderKind::Ordinal;
    throw DataError("unknown decoder kind '" + s + "' (expected multinomial or ordinal)");
}

std::string decoder_kind_name(DecoderKind k) {
    return k == DecoderKind::Multinomial ? "multinomial" : "ordinal";
}

int RecurrentParams::input_dim() const {
    return kind == CellKind::Gru ? static_cast<int>(gru.w_r.cols())
                                 : static_cast<int>(lstm.w_i.cols());
}

int RecurrentParams::hidden_dim() const {
    return kind == CellKind::Gru ? static_cast<int>(gru.w_r.rows())
                                 : static_cast<int>(lstm.w_i.rows());
}

EmbeddingParams zeros_like(const EmbeddingParams& p) {
    EmbeddingParams out;
    out.vectors = Eigen::MatrixXd::Zero(p.vectors.rows(), p.vectors.cols());
    out.relevance_raw = Eigen::VectorXd::Zero(p.relevance_raw.size());
    return out;
}

RecurrentParams zeros_like(const RecurrentParams& p) {
    RecurrentParams out;
    out.kind = p.kind;
    auto zm = [](const Eigen::MatrixXd& m) {
        return Eigen::MatrixXd::Zero(m.rows(), m.cols()).eval();
    };
    auto zv = [](const Eigen::VectorXd& v) { return Eigen::VectorXd::Zero(v.size()).eval(); };
    if (p.kind == CellKind::Gru) {
        out.gru.w_r = zm(p.gru.w_r);
        out.gru.w_z = zm(p.gru.w_z);
        out.gru.w_n = zm(p.gru.w_n);
        out.gru.u_r = zm(p.gru.u_r);
        out.gru.u_z = zm(p.gru.u_z);
        out.gru.u_n = zm(p.gru.u_n);
        out.gru.b_r = zv(p.gru.b_r);
        out.gru.b_z = zv(p.gru.b_z);
        out.gru.b_n = zv(p.gru.b_n);
    } else {
        out.lstm.w_i = zm(p.lstm.w_i);
        out.lstm.w_f = zm(p.lstm.w_f);
        out.lstm.w_g = zm(p.lstm.w_g);
        out.lstm.w_o = zm(p.lstm.w_o);
        out.lstm.u_i = zm(p.lstm.u_i);
        out.lstm.u_f = zm(p.lstm.u_f);
        out.lstm.u_g = zm(p.lstm.u_g);
        out.lstm.u_o = zm(p.lstm.u_o);
        out.lstm.b_i = zv(p.lstm.b_i);
        out.lstm.b_f = zv(p.lstm.b_f);
        out.lstm.b_g = zv(p.lstm.b_g);
        out.lstm.b_o = zv(p.lstm.b_o);
    }
    return out;
}

DecoderParams zeros_like(const DecoderParams& p) {
    DecoderParams out;
    out.kind = p.kind;
    if (p.kind == DecoderKind::Multinomial) {
        out.class_weights = Eigen::MatrixXd::Zero(p.class_weights.rows(), p.class_weights.cols());
        out.class_bias = Eigen::VectorXd::Zero(p.class_bias.size());
    } else {
        out.score_weights = Eigen::VectorXd::Zero(p.score_weights.size());
        out.score_bias = 0.0;
        out.first_cutpoint = 0.0;
        out.cutpoint_raw = Eigen::VectorXd::Zero(p.cutpoint_raw.size());
    }
    return out;
}

TrajectoryModel zeros_like(const TrajectoryModel& m) {
    TrajectoryModel out;
    out.embedding = zeros_like(m.embedding);
    out.recurrent = zeros_like(m.recurrent);
    out.decoder = zeros_like(m.decoder);
    return out;
}

namespace {

template <class RefT, class ModelT>
std::vector<RefT> collect_tensors(ModelT& m) {
    std::vector<RefT> out;
    auto add = [&](const std::string& name, auto& tensor) {
        out.push_back(RefT{name, tensor.data(), tensor.size()});
    };
    auto add_scalar = [&](const std::string& name, auto& value) {
        out.push_back(RefT{name, &value, 1});
    };

    add("embedding.vectors", m.embedding.vectors);
    add("embedding.relevance_raw", m.embedding.relevance_raw);

    if (m.recurrent.kind == CellKind::Gru) {
        add("gru.w_r", m.recurrent.gru.w_r);
        add("gru.u_r", m.recurrent.gru.u_r);
        add("gru.b_r", m.recurrent.gru.b_r);
        add("gru.w_z", m.recurrent.gru.w_z);
        add("gru.u_z", m.recurrent.gru.u_z);
        add("gru.b_z", m.recurrent.gru.b_z);
        add("gru.w_n", m.recurrent.gru.w_n);
        add("gru.u_n", m.recurrent.gru.u_n);
        add("gru.b_n", m.recurrent.gru.b_n);
    } else {
        add("lstm.w_i", m.recurrent.lstm.w_i);
        add("lstm.u_i", m.recurrent.lstm.u_i);
        add("lstm.b_i", m.recurrent.lstm.b_i);
        add("lstm.w_f", m.recurrent.lstm.w_f);
        add("lstm.u_f", m.recurrent.lstm.u_f);
        add("lstm.b_f", m.recurrent.lstm.b_f);
        add("lstm.w_g", m.recurrent.lstm.w_g);
        add("lstm.u_g", m.recurrent.lstm.u_g);
        add("lstm.b_g", m.recurrent.lstm.b_g);
        add("lstm.w_o", m.recurrent.lstm.w_o);
        add("lstm.u_o", m.recurrent.lstm.u_o);
        add("lstm.b_o", m.recurrent.lstm.b_o);
    }

    if (m.decoder.kind == DecoderKind::Multinomial) {
        add("decoder.class_weights", m.decoder.class_weights);
        add("decoder.class_bias", m.decoder.class_bias);
    } else {
        add("decoder.score_weights", m.decoder.score_weights);
        add_scalar("decoder.score_bias", m.decoder.score_bias);
        add_scalar("decoder.first_cutpoint", m.decoder.first_cutpoint);
        add("decoder.cutpoint_raw", m.decoder.cutpoint_raw);
    }
    return out;
}

void fill_uniform(Eigen::MatrixXd& m, double bound, Rng& rng) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            m(i, j) = rng.uniform(-bound, bound);
        }
    }
}

void fill_uniform(Eigen::VectorXd& v, double bound, Rng& rng) {
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.uniform(-bound, bound);
}

}  // namespace

std::vector<TensorRef> named_tensors(TrajectoryModel& m) {
    return collect_tensors<TensorRef>(m);
}

std::vector<ConstTensorRef> named_tensors(const TrajectoryModel& m) {
    return collect_tensors<ConstTensorRef>(m);
}

RecurrentParams init_recurrent(CellKind kind, int input_dim, int hidden_dim,
                               std::uint64_t seed) {
    if (input_dim < 1 || hidden_dim < 1) {
        throw NumericError("init_recurrent: dimensions must be positive");
    }
    RecurrentParams p;
    p.kind = kind;
    Rng rng(seed);
    const double wb = 1.0 / std::sqrt(static_cast<double>(input_dim));
    const double ub = 1.0 / std::sqrt(static_cast<double>(hidden_dim));

    auto make = [&](Eigen::MatrixXd& w, Eigen::MatrixXd& u, Eigen::VectorXd& b) {
        w.resize(hidden_dim, input_dim);
        u.resize(hidden_dim, hidden_dim);
        b = Eigen::VectorXd::Zero(hidden_dim);
        fill_uniform(w, wb, rng);
        fill_uniform(u, ub, rng);
    };

    if (kind == CellKind::Gru) {
        make(p.gru.w_r, p.gru.u_r, p.gru.b_r);
        make(p.gru.w_z, p.gru.u_z, p.gru.b_z);
        make(p.gru.w_n, p.gru.u_n, p.gru.b_n);
    } else {
        make(p.lstm.w_i, p.lstm.u_i, p.lstm.b_i);
        make(p.lstm.w_f, p.lstm.u_f, p.lstm.b_f);
        make(p.lstm.w_g, p.lstm.u_g, p.lstm.b_g);
        make(p.lstm.w_o, p.lstm.u_o, p.lstm.b_o);
    }
    return p;
}

DecoderParams init_decoder(DecoderKind kind, int hidden_dim, std::uint64_t seed) {
    if (hidden_dim < 1) throw NumericError("init_decoder: hidden_dim must be positive");
    DecoderParams d;
    d.kind = kind;
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
    if (kind == DecoderKind::Multinomial) {
        d.class_weights.resize(kOutcomeClasses, hidden_dim);
        d.class_bias = Eigen::VectorXd::Zero(kOutcomeClasses);
        fill_uniform(d.class_weights, bound, rng);
    } else {
        d.score_weights.resize(hidden_dim);
        fill_uniform(d.score_weights, bound, rng);
        d.score_bias = 0.0;
        // Start the cutpoints at -2.5 with unit spacing so the initial class
        // probabilities cover all seven levels.  softplus(0.5413...) = 1.
        d.first_cutpoint = -2.5;
        d.cutpoint_raw =
            Eigen::VectorXd::Constant(kOutcomeClasses - 2, 0.5413248546129181);
    }
    return d;
}

TrajectoryModel init_model(int vocab_size, int embed_dim, int hidden_dim, CellKind cell,
                           DecoderKind decoder, std::uint64_t seed) {
    TrajectoryModel m;
    m.embedding = init_embedding(vocab_size, embed_dim, derive_seed(seed, 1, 0));
    m.recurrent = init_recurrent(cell, embed_dim, hidden_dim, derive_seed(seed, 2, 0));
    m.decoder = init_decoder(decoder, hidden_dim, derive_seed(seed, 3, 0));
    return m;
}

Eigen::VectorXd gru_step(const GruParams& p, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& h_prev, GruCache* cache) {
    Eigen::VectorXd r = (p.w_r * x + p.u_r * h_prev + p.b_r).unaryExpr([](double a) {
        return sigmoid(a);
    });
    Eigen::VectorXd z = (p.w_z * x + p.u_z * h_prev + p.b_z).unaryExpr([](double a) {
        return sigmoid(a);
    });
    Eigen::VectorXd n =
        (p.w_n * x + p.u_n * (r.cwiseProduct(h_prev)) + p.b_n).array().tanh().matrix();
    Eigen::VectorXd h =
        ((1.0 - z.array()) * n.array() + z.array() * h_prev.array()).matrix();
    if (cache != nullptr) {
        cache->r = std::move(r);
        cache->z = std::move(z);
        cache->n = std::move(n);
    }
    return h;
}

void lstm_step(const LstmParams& p, const Eigen::VectorXd& x, const Eigen::VectorXd& h_prev,
               const Eigen::VectorXd& c_prev, Eigen::VectorXd& h_out, Eigen::VectorXd& c_out,
               LstmCache* cache) {
    auto sig = [](double a) { return sigmoid(a); };
    Eigen::VectorXd i = (p.w_i * x + p.u_i * h_prev + p.b_i).unaryExpr(sig);
    Eigen::VectorXd f = (p.w_f * x + p.u_f * h_prev + p.b_f).unaryExpr(sig);
    Eigen::VectorXd g = (p.w_g * x + p.u_g * h_prev + p.b_g).array().tanh().matrix();
    Eigen::VectorXd o = (p.w_o * x + p.u_o * h_prev + p.b_o).unaryExpr(sig);
    c_out = f.cwiseProduct(c_prev) + i.cwiseProduct(g);
    Eigen::VectorXd tanh_c = c_out.array().tanh().matrix();
    h_out = o.cwiseProduct(tanh_c);
    if (cache != nullptr) {
        cache->i = std::move(i);
        cache->f = std::move(f);
        cache->g = std::move(g);
        cache->o = std::move(o);
        cache->c = c_out;
        cache->tanh_c = std::move(tanh_c);
    }
}

WindowPrediction decode_state(const DecoderParams& d, const Eigen::VectorXd& h) {
    WindowPrediction out;
    out.p.resize(kOutcomeClasses);
    out.q.resize(kOutcomeClasses - 1);

    if (d.kind == DecoderKind::Multinomial) {
        Eigen::VectorXd logits = d.class_weights * h + d.class_bias;
        const double peak = logits.maxCoeff();
        Eigen::VectorXd ex = (logits.array() - peak).exp().matrix();
        out.p = ex / ex.sum();
        double tail = 0.0;
        for (int k = kOutcomeClasses - 1; k >= 1; --k) {
            tail += out.p(k);
            out.q(k - 1) = tail;
        }
    } else {
        const double s = d.score_weights.dot(h) + d.score_bias;
        double cut = d.first_cutpoint;
        for (int k = 0; k < kOutcomeClasses - 1; ++k) {
            if (k > 0) cut += softplus(d.cutpoint_raw(k - 1));
            out.q(k) = sigmoid(s - cut);
        }
        out.p(0) = 1.0 - out.q(0);
        for (int i = 1; i < kOutcomeClasses - 1; ++i) out.p(i) = out.q(i - 1) - out.q(i);
        out.p(kOutcomeClasses - 1) = out.q(kOutcomeClasses - 2);
        // The cutpoints are strictly increasing, so the differences are
        // non-negative up to rounding; clamp and renormalize if rounding bites.
        bool clamped = false;
        for (int i = 0; i < kOutcomeClasses; ++i) {
            if (out.p(i) < 0.0) {
                out.p(i) = 0.0;
                clamped = true;
            }
        }
        if (clamped) {
            const double total = out.p.sum();
            if (total > 0.0) out.p /= total;
        }
    }

    out.expected = 0.0;
    for (int i = 0; i < kOutcomeClasses; ++i) out.expected += i * out.p(i);
    return out;
}

std::vector<WindowPrediction> forward_windows(const TrajectoryModel& m,
                                              std::span<const TokenSet> windows) {
    if (windows.empty()) throw DataError("forward_windows: stay has no windows");
    const int hidden = m.recurrent.hidden_dim();
    Eigen::VectorXd h = Eigen::VectorXd::Zero(hidden);
    Eigen::VectorXd c = Eigen::VectorXd::Zero(hidden);

    std::vector<WindowPrediction> out;
    out.reserve(windows.size());
    for (const TokenSet& w : windows) {
        Eigen::VectorXd x = embed_window(w, m.embedding);
        if (m.recurrent.kind == CellKind::Gru) {
            h = gru_step(m.recurrent.gru, x, h);
        } else {
            Eigen::VectorXd h_next, c_next;
            lstm_step(m.recurrent.lstm, x, h, c, h_next, c_next);
            h = std::move(h_next);
            c = std::move(c_next);
        }
        out.push_back(decode_state(m.decoder, h));
    }
    return out;
}

std::vector<WindowPrediction> forward_trajectory(const TrajectoryModel& m,
                                                 const TokenizedStay& stay) {
    return forward_windows(m, stay.windows);
}

namespace {

json tensor_to_json(const ConstTensorRef& t) {
    std::vector<unsigned char> bytes(static_cast<std::size_t>(t.size) * sizeof(double));
    std::memcpy(bytes.data(), t.data, bytes.size());
    json j;
    j["name"] = t.name;
    j["size"] = t.size;
    j["data"] = base64_encode(bytes);
    return j;
}

void tensor_from_json(const json& j, const TensorRef& t) {
    const auto size = j.at("size").get<std::ptrdiff_t>();
    if (size != t.size) {
        throw DataError("model tensor '" + t.name + "' has size " + std::to_string(size) +
                        ", expected " + std::to_string(t.size));
    }
    std::vector<unsigned char> bytes = base64_decode(j.at("data").get<std::string>());
    if (bytes.size() != static_cast<std::size_t>(t.size) * sizeof(double)) {
        throw DataError("model tensor '" + t.name + "' has a truncated payload");
    }
    std::memcpy(t.data, bytes.data(), bytes.size());
}

}  // namespace

void save_model(const ModelFile& file, const std::string& path) {
    const TrajectoryModel& m = file.model;
    json j;
    j["format"] = "tokentraj-model-v1";
    j["cell"] = cell_kind_name(m.recurrent.kind);
    j["decoder"] = decoder_kind_name(m.decoder.kind);
    j["vocab_size"] = m.embedding.vocab_size();
    j["embed_dim"] = m.embedding.dim();
    j["hidden_dim"] = m.recurrent.hidden_dim();
    j["vocab_hash"] = file.vocab_hash;
    j["seed"] = file.seed;
    j["repeat"] = file.repeat;
    j["fold"] = file.fold;
    j["config"] = file.config;
    j["test_patients"] = file.test_patients;
    j["val_patients"] = file.val_patients;

    json tensors = json::array();
    for (const ConstTensorRef& t : named_tensors(m)) tensors.push_back(tensor_to_json(t));
    j["tensors"] = std::move(tensors);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open model file for writing: " + path);
    out << j.dump(1) << "\n";
    if (!out) throw DataError("failed writing model file: " + path);
}

ModelFile load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open model file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("model file " + path + " is not valid JSON: " + e.what());
    }

    try {
        if (j.at("format").get<std::string>() != "tokentraj-model-v1") {
            throw DataError("model file " + path + " has an unsupported format tag");
        }
        const CellKind cell = parse_cell_kind(j.at("cell").get<std::string>());
        const DecoderKind decoder = parse_decoder_kind(j.at("decoder").get<std::string>());
        const int vocab_size = j.at("vocab_size").get<int>();
        const int embed_dim = j.at("embed_dim").get<int>();
        const int hidden_dim = j.at("hidden_dim").get<int>();

        ModelFile file;
        file.model = init_model(vocab_size, embed_dim, hidden_dim, cell, decoder, 0);
        file.vocab_hash = j.at("vocab_hash").get<std::string>();
        file.seed = j.at("seed").get<std::uint64_t>();
        file.repeat = j.at("repeat").get<int>();
        file.fold = j.at("fold").get<int>();
        file.config = j.at("config").get<std::map<std::string, std::string>>();
        file.test_patients = j.at("test_patients").get<std::vector<std::string>>();
        file.val_patients = j.at("val_patients").get<std::vector<std::string>>();

        std::map<std::string, const json*> by_name;
        for (const json& t : j.at("tensors")) {
            by_name[t.at("name").get<std::string>()] = &t;
        }
        std::vector<TensorRef> refs = named_tensors(file.model);
        if (by_name.size() != refs.size()) {
            throw DataError("model file " + path + " has an unexpected tensor count");
        }
        for (const TensorRef& ref : refs) {
            auto it = by_name.find(ref.name);
            if (it == by_name.end()) {
                throw DataError("model file " + path + " is missing tensor '" + ref.name + "'");
            }
            tensor_from_json(*it->second, ref);
        }
        return file;
    } catch (const json::exception& e) {
        throw DataError("model file " + path + " is malformed: " + e.what());
    }
}

}  // namespace tokentraj
