#include "tokentraj/trainer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "tokentraj/csv.hpp"

namespace tokentraj {

std::vector<FoldAssignment> make_partitions(std::span<const OutcomeLabel> outcomes, int repeats,
                                            int folds, std::uint64_t seed) {
    if (repeats < 1) throw NumericError("make_partitions: repeats must be >= 1");
    if (folds < 2) throw NumericError("make_partitions: folds must be >= 2");

    std::array<std::vector<std::string>, kOutcomeClasses> by_class;
    std::set<std::string> seen;
    for (const OutcomeLabel& o : outcomes) {
        if (o.gose_index < 0 || o.gose_index >= kOutcomeClasses) {
            throw DataError("make_partitions: outcome class out of range for patient '" +
                            o.patient_id + "'");
        }
        if (!seen.insert(o.patient_id).second) {
            throw DataError("make_partitions: duplicate patient '" + o.patient_id + "'");
        }
        by_class[o.gose_index].push_back(o.patient_id);
    }
    for (auto& members : by_class) std::sort(members.begin(), members.end());

    std::vector<FoldAssignment> out;
    out.reserve(static_cast<std::size_t>(repeats) * folds);
    for (int r = 0; r < repeats; ++r) {
        Rng deal_rng(derive_seed(seed, static_cast<std::uint64_t>(r), 101));
        std::vector<std::vector<std::string>> test(folds);
        std::vector<std::set<std::string>> test_sets(folds);
        for (int c = 0; c < kOutcomeClasses; ++c) {
            std::vector<std::string> members = by_class[c];
            deal_rng.shuffle(members);
            // the class-dependent offset spreads remainders across folds
            for (std::size_t i = 0; i < members.size(); ++i) {
                const int fold = static_cast<int>((i + c) % static_cast<std::size_t>(folds));
                test[fold].push_back(members[i]);
                test_sets[fold].insert(members[i]);
            }
        }

        for (int k = 0; k < folds; ++k) {
            FoldAssignment fa;
            fa.repeat = r;
            fa.fold = k;
            fa.test_patients = test[k];
            std::sort(fa.test_patients.begin(), fa.test_patients.end());

            Rng val_rng(derive_seed(seed, static_cast<std::uint64_t>(r),
                                    1000 + static_cast<std::uint64_t>(k)));
            for (int c = 0; c < kOutcomeClasses; ++c) {
                std::vector<std::string> members;
                for (const std::string& pid : by_class[c]) {
                    if (test_sets[k].count(pid) == 0) members.push_back(pid);
                }
                val_rng.shuffle(members);
                for (std::size_t i = 0; i < members.size(); ++i) {
                    if ((i + c) % static_cast<std::size_t>(folds) == 0) {
                        fa.val_patients.push_back(members[i]);
                    }
                }
            }
            std::sort(fa.val_patients.begin(), fa.val_patients.end());
            out.push_back(std::move(fa));
        }
    }
    return out;
}

namespace {

double parse_config_double(const std::string& key, const std::string& value) {
    double out;
    if (!try_parse_double(value, out)) {
        throw DataError("config key '" + key + "' has a non-numeric value '" + value + "'");
    }
    return out;
}

int parse_config_int(const std::string& key, const std::string& value) {
    const double v = parse_config_double(key, value);
    const double rounded = std::floor(v);
    if (rounded != v || v < -2e9 || v > 2e9) {
        throw DataError("config key '" + key + "' must be an integer, got '" + value + "'");
    }
    return static_cast<int>(v);
}

}  // namespace

TrainConfig train_config_from_map(const std::map<std::string, std::string>& kv) {
    TrainConfig cfg;
    for (const auto& [key, value] : kv) {
        if (key == "window_hours") {
            cfg.window_hours = parse_config_double(key, value);
        } else if (key == "window_limit") {
            cfg.window_limit = parse_config_int(key, value);
        } else if (key == "bin_count") {
            cfg.bin_count = parse_config_int(key, value);
        } else if (key == "embed_dim") {
            cfg.embed_dim = parse_config_int(key, value);
        } else if (key == "hidden_dim") {
            cfg.hidden_dim = parse_config_int(key, value);
        } else if (key == "cell") {
            cfg.cell = parse_cell_kind(value);
        } else if (key == "decoder") {
            cfg.decoder = parse_decoder_kind(value);
        } else if (key == "dropout") {
            cfg.dropout = parse_config_double(key, value);
        } else if (key == "learning_rate") {
            cfg.learning_rate = parse_config_double(key, value);
        } else if (key == "batch_size") {
            cfg.batch_size = parse_config_int(key, value);
        } else if (key == "max_epochs") {
            cfg.max_epochs = parse_config_int(key, value);
        } else if (key == "patience") {
            cfg.patience = parse_config_int(key, value);
        } else if (key == "cv_repeats") {
            cfg.cv_repeats = parse_config_int(key, value);
        } else if (key == "cv_folds") {
            cfg.cv_folds = parse_config_int(key, value);
        } else if (key.rfind("synth_", 0) == 0) {
            // cohort-generation block of a shared config file
        } else {
            throw DataError("unknown config key '" + key + "'");
        }
    }

    if (!(cfg.window_hours > 0.0)) throw DataError("window_hours must be positive");
    if (cfg.window_limit < 0) throw DataError("window_limit must be >= 0 (0 disables the cap)");
    if (cfg.bin_count < 2) throw DataError("bin_count must be >= 2");
    if (cfg.embed_dim < 1) throw DataError("embed_dim must be >= 1");
    if (cfg.hidden_dim < 1) throw DataError("hidden_dim must be >= 1");
    if (cfg.dropout < 0.0 || cfg.dropout >= 1.0) throw DataError("dropout must be in [0, 1)");
    if (!(cfg.learning_rate > 0.0)) throw DataError("learning_rate must be positive");
    if (cfg.batch_size < 1) throw DataError("batch_size must be >= 1");
    if (cfg.max_epochs < 1) throw DataError("max_epochs must be >= 1");
    if (cfg.patience < 1) throw DataError("patience must be >= 1");
    if (cfg.cv_repeats < 1) throw DataError("cv_repeats must be >= 1");
    if (cfg.cv_folds < 2) throw DataError("cv_folds must be >= 2");
    return cfg;
}

std::map<std::string, std::string> train_config_to_map(const TrainConfig& cfg) {
    std::map<std::string, std::string> kv;
    kv["window_hours"] = format_double(cfg.window_hours);
    kv["window_limit"] = std::to_string(cfg.window_limit);
    kv["bin_count"] = std::to_string(cfg.bin_count);
    kv["embed_dim"] = std::to_string(cfg.embed_dim);
    kv["hidden_dim"] = std::to_string(cfg.hidden_dim);
    kv["cell"] = cell_kind_name(cfg.cell);
    kv["decoder"] = decoder_kind_name(cfg.decoder);
    kv["dropout"] = format_double(cfg.dropout);
    kv["learning_rate"] = format_double(cfg.learning_rate);
    kv["batch_size"] = std::to_string(cfg.batch_size);
    kv["max_epochs"] = std::to_string(cfg.max_epochs);
    kv["patience"] = std::to_string(cfg.patience);
    kv["cv_repeats"] = std::to_string(cfg.cv_repeats);
    kv["cv_folds"] = std::to_string(cfg.cv_folds);
    return kv;
}

double sequence_nll(std::span<const WindowPrediction> preds, int label) {
    if (preds.empty()) throw NumericError("sequence_nll: empty prediction sequence");
    if (label < 0 || label >= kOutcomeClasses) throw NumericError("sequence_nll: label out of range");
    double total = 0.0;
    for (const WindowPrediction& pr : preds) {
        total += -std::log(std::max(pr.p(label), 1e-12));
    }
    return total / static_cast<double>(preds.size());
}

double sequence_loss_and_grad(const TrajectoryModel& model, std::span<const TokenSet> windows,
                              int label, double dropout_p, Rng* rng, TrajectoryModel* grad) {
    const int T = static_cast<int>(windows.size());
    if (T == 0) throw NumericError("sequence_loss_and_grad: empty sequence");
    if (label < 0 || label >= kOutcomeClasses) {
        throw NumericError("sequence_loss_and_grad: label out of range");
    }
    if (dropout_p < 0.0 || dropout_p >= 1.0) {
        throw NumericError("sequence_loss_and_grad: dropout must be in [0, 1)");
    }
    if (dropout_p > 0.0 && rng == nullptr) {
        throw NumericError("sequence_loss_and_grad: dropout requires an RNG");
    }

    const int dim = model.embedding.dim();
    const int hidden = model.recurrent.hidden_dim();
    const bool is_gru = model.recurrent.kind == CellKind::Gru;
    const Eigen::VectorXd zero_h = Eigen::VectorXd::Zero(hidden);

    std::vector<std::vector<double>> token_w(windows.size());
    std::vector<double> wsum(windows.size());
    std::vector<Eigen::VectorXd> x_raw(windows.size());
    std::vector<Eigen::VectorXd> x(windows.size());
    std::vector<Eigen::VectorXd> mask;
    if (dropout_p > 0.0) mask.resize(windows.size());
    std::vector<Eigen::VectorXd> h(windows.size());
    std::vector<GruCache> gcache;
    std::vector<LstmCache> lcache;
    if (is_gru) {
        gcache.resize(windows.size());
    } else {
        lcache.resize(windows.size());
    }
    std::vector<WindowPrediction> preds(windows.size());

    double loss = 0.0;
    Eigen::VectorXd h_prev = zero_h;
    Eigen::VectorXd c_prev = zero_h;
    for (int t = 0; t < T; ++t) {
        const std::vector<int>& ids = windows[t].ids;
        if (ids.empty()) throw NumericError("sequence_loss_and_grad: empty token set");

        token_w[t].resize(ids.size());
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(dim);
        double total = 0.0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            const int id = ids[k];
            if (id < 0 || id >= model.embedding.vocab_size()) {
                throw NumericError("sequence_loss_and_grad: token id out of range");
            }
            const double w = token_weight(model.embedding, id);
            token_w[t][k] = w;
            total += w;
            acc += w * model.embedding.vectors.row(id).transpose();
        }
        if (!(total > 0.0)) {
            throw NumericError("sequence_loss_and_grad: window has zero total token weight");
        }
        wsum[t] = total;
        x_raw[t] = acc / total;

        if (dropout_p > 0.0) {
            mask[t].resize(dim);
            const double keep_scale = 1.0 / (1.0 - dropout_p);
            for (int j = 0; j < dim; ++j) {
                mask[t](j) = rng->uniform01() < dropout_p ? 0.0 : keep_scale;
            }
            x[t] = x_raw[t].cwiseProduct(mask[t]);
        } else {
            x[t] = x_raw[t];
        }

        if (is_gru) {
            h[t] = gru_step(model.recurrent.gru, x[t], h_prev, &gcache[t]);
        } else {
            Eigen::VectorXd c_next;
            lstm_step(model.recurrent.lstm, x[t], h_prev, c_prev, h[t], c_next, &lcache[t]);
            c_prev = std::move(c_next);
        }
        h_prev = h[t];

        preds[t] = decode_state(model.decoder, h[t]);
        loss += -std::log(std::max(preds[t].p(label), 1e-12));
    }
    loss /= static_cast<double>(T);

    if (grad == nullptr) return loss;

    const double inv_t = 1.0 / static_cast<double>(T);
    Eigen::VectorXd dh_carry = zero_h;
    Eigen::VectorXd dc_carry = zero_h;
    for (int t = T - 1; t >= 0; --t) {
        Eigen::VectorXd dh = dh_carry;

        const WindowPrediction& pr = preds[t];
        if (pr.p(label) > 1e-12) {
            if (model.decoder.kind == DecoderKind::Multinomial) {
                Eigen::VectorXd dlogits = pr.p * inv_t;
                dlogits(label) -= inv_t;
                grad->decoder.class_weights.noalias() += dlogits * h[t].transpose();
                grad->decoder.class_bias += dlogits;
                dh.noalias() += model.decoder.class_weights.transpose() * dlogits;
            } else {
                const double gl = -inv_t / pr.p(label);
                Eigen::VectorXd dq = Eigen::VectorXd::Zero(kOutcomeClasses - 1);
                if (label == 0) {
                    dq(0) = -gl;
                } else if (label == kOutcomeClasses - 1) {
                    dq(kOutcomeClasses - 2) = gl;
                } else {
                    dq(label - 1) += gl;
                    dq(label) -= gl;
                }
                double ds = 0.0;
                Eigen::VectorXd dcut = Eigen::VectorXd::Zero(kOutcomeClasses - 1);
                for (int k = 0; k < kOutcomeClasses - 1; ++k) {
                    const double slope = pr.q(k) * (1.0 - pr.q(k));
                    ds += dq(k) * slope;
                    dcut(k) = -dq(k) * slope;
                }
                grad->decoder.score_weights += ds * h[t];
                grad->decoder.score_bias += ds;
                grad->decoder.first_cutpoint += dcut.sum();
                double tail = 0.0;
                for (int j = kOutcomeClasses - 3; j >= 0; --j) {
                    tail += dcut(j + 1);
                    grad->decoder.cutpoint_raw(j) +=
                        sigmoid(model.decoder.cutpoint_raw(j)) * tail;
                }
                dh += ds * model.decoder.score_weights;
            }
        }

        const Eigen::VectorXd& hp = t == 0 ? zero_h : h[t - 1];
        Eigen::VectorXd dx;
        if (is_gru) {
            const GruCache& cc = gcache[t];
            const GruParams& p = model.recurrent.gru;
            GruParams& gp = grad->recurrent.gru;

            Eigen::VectorXd dz = dh.cwiseProduct(hp - cc.n);
            Eigen::VectorXd dn = (dh.array() * (1.0 - cc.z.array())).matrix();
            Eigen::VectorXd dhp = dh.cwiseProduct(cc.z);

            Eigen::VectorXd dan = (dn.array() * (1.0 - cc.n.array().square())).matrix();
            gp.w_n.noalias() += dan * x[t].transpose();
            gp.u_n.noalias() += dan * cc.r.cwiseProduct(hp).transpose();
            gp.b_n += dan;
            Eigen::VectorXd drh = p.u_n.transpose() * dan;
            Eigen::VectorXd dr = drh.cwiseProduct(hp);
            dhp += drh.cwiseProduct(cc.r);

            Eigen::VectorXd dar =
                (dr.array() * cc.r.array() * (1.0 - cc.r.array())).matrix();
            Eigen::VectorXd daz =
                (dz.array() * cc.z.array() * (1.0 - cc.z.array())).matrix();
            gp.w_r.noalias() += dar * x[t].transpose();
            gp.u_r.noalias() += dar * hp.transpose();
            gp.b_r += dar;
            gp.w_z.noalias() += daz * x[t].transpose();
            gp.u_z.noalias() += daz * hp.transpose();
            gp.b_z += daz;
            dhp.noalias() += p.u_r.transpose() * dar;
            dhp.noalias() += p.u_z.transpose() * daz;

            dx = p.w_r.transpose() * dar;
            dx.noalias() += p.w_z.transpose() * daz;
            dx.noalias() += p.w_n.transpose() * dan;
            dh_carry = std::move(dhp);
        } else {
            const LstmCache& cc = lcache[t];
            const LstmParams& p = model.recurrent.lstm;
            LstmParams& gp = grad->recurrent.lstm;
            const Eigen::VectorXd& cp = t == 0 ? zero_h : lcache[t - 1].c;

            Eigen::VectorXd dout = dh.cwiseProduct(cc.tanh_c);
            Eigen::VectorXd dc =
                dc_carry + (dh.array() * cc.o.array() * (1.0 - cc.tanh_c.array().square()))
                               .matrix();
            Eigen::VectorXd df = dc.cwiseProduct(cp);
            Eigen::VectorXd di = dc.cwiseProduct(cc.g);
            Eigen::VectorXd dg = dc.cwiseProduct(cc.i);
            dc_carry = dc.cwiseProduct(cc.f);

            Eigen::VectorXd dai = (di.array() * cc.i.array() * (1.0 - cc.i.array())).matrix();
            Eigen::VectorXd daf = (df.array() * cc.f.array() * (1.0 - cc.f.array())).matrix();
            Eigen::VectorXd dag = (dg.array() * (1.0 - cc.g.array().square())).matrix();
            Eigen::VectorXd dao =
                (dout.array() * cc.o.array() * (1.0 - cc.o.array())).matrix();

            gp.w_i.noalias() += dai * x[t].transpose();
            gp.u_i.noalias() += dai * hp.transpose();
            gp.b_i += dai;
            gp.w_f.noalias() += daf * x[t].transpose();
            gp.u_f.noalias() += daf * hp.transpose();
            gp.b_f += daf;
            gp.w_g.noalias() += dag * x[t].transpose();
            gp.u_g.noalias() += dag * hp.transpose();
            gp.b_g += dag;
            gp.w_o.noalias() += dao * x[t].transpose();
            gp.u_o.noalias() += dao * hp.transpose();
            gp.b_o += dao;

            Eigen::VectorXd dhp = p.u_i.transpose() * dai;
            dhp.noalias() += p.u_f.transpose() * daf;
            dhp.noalias() += p.u_g.transpose() * dag;
            dhp.noalias() += p.u_o.transpose() * dao;

            dx = p.w_i.transpose() * dai;
            dx.noalias() += p.w_f.transpose() * daf;
            dx.noalias() += p.w_g.transpose() * dag;
            dx.noalias() += p.w_o.transpose() * dao;
            dh_carry = std::move(dhp);
        }

        const Eigen::VectorXd dxr = dropout_p > 0.0 ? dx.cwiseProduct(mask[t]).eval() : dx;
        const double total = wsum[t];
        const std::vector<int>& ids = windows[t].ids;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            const int id = ids[k];
            if (id == kPadId) continue;
            grad->embedding.vectors.row(id) += (token_w[t][k] / total) * dxr.transpose();
            const double dwv =
                (model.embedding.vectors.row(id).transpose() - x_raw[t]).dot(dxr) / total;
            grad->embedding.relevance_raw(id) +=
                dwv * sigmoid(model.embedding.relevance_raw(id));
        }
    }
    return loss;
}

double clip_global_norm(TrajectoryModel& grad, double max_norm) {
    if (!(max_norm > 0.0)) throw NumericError("clip_global_norm: max_norm must be positive");
    double sq = 0.0;
    std::vector<TensorRef> refs = named_tensors(grad);
    for (const TensorRef& r : refs) {
        for (std::ptrdiff_t i = 0; i < r.size; ++i) sq += r.data[i] * r.data[i];
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double scale = max_norm / norm;
        for (const TensorRef& r : refs) {
            for (std::ptrdiff_t i = 0; i < r.size; ++i) r.data[i] *= scale;
        }
    }
    return norm;
}

AdamState make_adam_state(const TrajectoryModel& model) {
    AdamState s;
    s.m1 = zeros_like(model);
    s.m2 = zeros_like(model);
    s.step = 0;
    return s;
}

void adam_step(TrajectoryModel& model, const TrajectoryModel& grad, AdamState& state, double lr,
               double beta1, double beta2, double eps) {
    std::vector<TensorRef> tm = named_tensors(model);
    std::vector<ConstTensorRef> tg = named_tensors(grad);
    std::vector<TensorRef> t1 = named_tensors(state.m1);
    std::vector<TensorRef> t2 = named_tensors(state.m2);
    if (tm.size() != tg.size() || tm.size() != t1.size() || tm.size() != t2.size()) {
        throw NumericError("adam_step: model and state tensors are misaligned");
    }

    state.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));

    for (std::size_t i = 0; i < tm.size(); ++i) {
        if (tm[i].name != tg[i].name || tm[i].size != tg[i].size || tm[i].size != t1[i].size ||
            tm[i].size != t2[i].size) {
            throw NumericError("adam_step: tensor '" + tm[i].name + "' is misaligned");
        }
        double* theta = tm[i].data;
        const double* g = tg[i].data;
        double* m1 = t1[i].data;
        double* m2 = t2[i].data;
        for (std::ptrdiff_t j = 0; j < tm[i].size; ++j) {
            m1[j] = beta1 * m1[j] + (1.0 - beta1) * g[j];
            m2[j] = beta2 * m2[j] + (1.0 - beta2) * g[j] * g[j];
            const double mhat = m1[j] / bc1;
            const double vhat = m2[j] / bc2;
            theta[j] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

namespace {

void set_zero(TrajectoryModel& m) {
    for (const TensorRef& r : named_tensors(m)) std::fill(r.data, r.data + r.size, 0.0);
}

void scale_params(TrajectoryModel& m, double factor) {
    for (const TensorRef& r : named_tensors(m)) {
        for (std::ptrdiff_t i = 0; i < r.size; ++i) r.data[i] *= factor;
    }
}

}  // namespace

TrainResult train_fold(const std::vector<TokenizedStay>& train_stays,
                       std::span<const int> train_labels,
                       const std::vector<TokenizedStay>& val_stays,
                       std::span<const int> val_labels, const TrainConfig& cfg, int vocab_size,
                       std::uint64_t seed, int repeat, int fold) {
    if (train_stays.size() != train_labels.size()) {
        throw NumericError("train_fold: training stays and labels differ in length");
    }
    if (val_stays.size() != val_labels.size()) {
        throw NumericError("train_fold: validation stays and labels differ in length");
    }
    if (train_stays.empty()) throw NumericError("train_fold: no training stays");
    if (val_stays.empty()) throw NumericError("train_fold: no validation stays");

    TrajectoryModel model = init_model(vocab_size, cfg.embed_dim, cfg.hidden_dim, cfg.cell,
                                       cfg.decoder, derive_seed(seed, 11, 0));
    Rng order_rng(derive_seed(seed, 12, 0));
    Rng dropout_rng(derive_seed(seed, 13, 0));
    AdamState adam = make_adam_state(model);
    TrajectoryModel grad = zeros_like(model);

    TrainResult result;
    result.best_val_dxy = -std::numeric_limits<double>::infinity();
    TrajectoryModel best_model = model;
    int epochs_since_best = 0;

    std::vector<std::size_t> order(train_stays.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        order_rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t start = 0;
        while (start < order.size()) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            set_zero(grad);
            for (std::size_t b = start; b < stop; ++b) {
                const std::size_t idx = order[b];
                loss_sum += sequence_loss_and_grad(model, train_stays[idx].windows,
                                                   train_labels[idx], cfg.dropout, &dropout_rng,
                                                   &grad);
            }
            if (stop - start > 1) scale_params(grad, 1.0 / static_cast<double>(stop - start));
            clip_global_norm(grad, 10.0);
            adam_step(model, grad, adam, cfg.learning_rate);
            start = stop;
        }

        std::vector<double> val_scores;
        val_scores.reserve(val_stays.size());
        for (const TokenizedStay& stay : val_stays) {
            const std::vector<WindowPrediction> preds = forward_windows(model, stay.windows);
            val_scores.push_back(preds.back().expected);
        }
        const double val_dxy = somers_dxy(val_scores, val_labels);

        TrainLogRow row;
        row.repeat = repeat;
        row.fold = fold;
        row.epoch = epoch;
        row.train_loss = loss_sum / static_cast<double>(train_stays.size());
        row.val_dxy = val_dxy;
        result.log.push_back(row);

        if (val_dxy > result.best_val_dxy) {
            result.best_val_dxy = val_dxy;
            result.best_epoch = epoch;
            best_model = model;
            epochs_since_best = 0;
        } else {
            ++epochs_since_best;
        }
        if (epochs_since_best >= cfg.patience) {
            result.log.back().stopped = true;
            break;
        }
    }

    result.model = std::move(best_model);
    return result;
}

void save_training_log(std::span<const TrainLogRow> rows, const std::string& path, bool append) {
    const bool write_header = !append || !std::ifstream(path).good();
    std::ofstream out(path, append ? std::ios::app | std::ios::binary : std::ios::binary);
    if (!out) throw DataError("cannot open training log for writing: " + path);
    if (write_header) out << "repeat,fold,epoch,train_loss,val_dxy,stopped\n";
    for (const TrainLogRow& r : rows) {
        out << r.repeat << ',' << r.fold << ',' << r.epoch << ',' << format_double(r.train_loss)
            << ',' << format_double(r.val_dxy) << ',' << (r.stopped ? 1 : 0) << '\n';
    }
    if (!out) throw DataError("failed writing training log: " + path);
}

std::vector<PredictionRow> predict_stays(const TrajectoryModel& model,
                                         const std::vector<TokenizedStay>& stays, int repeat,
                                         int fold) {
    std::vector<PredictionRow> rows;
    for (const TokenizedStay& stay : stays) {
        const std::vector<WindowPrediction> preds = forward_windows(model, stay.windows);
        for (std::size_t t = 0; t < preds.size(); ++t) {
            PredictionRow row;
            row.repeat = repeat;
            row.fold = fold;
            row.patient_id = stay.patient_id;
            row.window = static_cast<int>(t);
            row.t_hours = (static_cast<double>(t) + 1.0) * stay.window_hours;
            row.q = preds[t].q;
            row.p = preds[t].p;
            row.expected = preds[t].expected;
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

namespace {

double baseline_objective(const Eigen::MatrixXd& features, std::span<const int> labels,
                          const Eigen::MatrixXd& w, const Eigen::VectorXd& b, double l2) {
    const Eigen::Index n = features.rows();
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::VectorXd z = w * features.row(i).transpose() + b;
        const double peak = z.maxCoeff();
        const double lse = peak + std::log((z.array() - peak).exp().sum());
        loss += lse - z(labels[static_cast<std::size_t>(i)]);
    }
    loss /= static_cast<double>(n);
    loss += 0.5 * l2 * w.squaredNorm();
    return loss;
}

}  // namespace

StaticBaseline fit_static_baseline(const Eigen::MatrixXd& features, std::span<const int> labels,
                                   double l2, int max_iters, double grad_tol) {
    const Eigen::Index n = features.rows();
    if (n == 0) throw NumericError("fit_static_baseline: no rows");
    if (static_cast<std::size_t>(n) != labels.size()) {
        throw NumericError("fit_static_baseline: features and labels differ in length");
    }
    for (int y : labels) {
        if (y < 0 || y >= kOutcomeClasses) {
            throw NumericError("fit_static_baseline: label out of range");
        }
    }
    if (l2 < 0.0) throw NumericError("fit_static_baseline: l2 must be non-negative");

    const Eigen::Index nf = features.cols();
    StaticBaseline out;
    out.weights = Eigen::MatrixXd::Zero(kOutcomeClasses, nf);
    out.bias = Eigen::VectorXd::Zero(kOutcomeClasses);

    double step = 1.0;
    double objective = baseline_objective(features, labels, out.weights, out.bias, l2);
    for (int iter = 1; iter <= max_iters; ++iter) {
        out.iterations = iter;
        Eigen::MatrixXd gw = Eigen::MatrixXd::Zero(kOutcomeClasses, nf);
        Eigen::VectorXd gb = Eigen::VectorXd::Zero(kOutcomeClasses);
        for (Eigen::Index i = 0; i < n; ++i) {
            Eigen::VectorXd z = out.weights * features.row(i).transpose() + out.bias;
            const double peak = z.maxCoeff();
            Eigen::VectorXd p = (z.array() - peak).exp().matrix();
            p /= p.sum();
            p(labels[static_cast<std::size_t>(i)]) -= 1.0;
            gw.noalias() += p * features.row(i);
            gb += p;
        }
        gw /= static_cast<double>(n);
        gb /= static_cast<double>(n);
        gw += l2 * out.weights;

        const double gnorm_sq = gw.squaredNorm() + gb.squaredNorm();
        if (std::sqrt(gnorm_sq) < grad_tol) {
            out.converged = true;
            return out;
        }

        // backtracking line search with Armijo's condition, warm-started from
        // twice the last accepted step
        step = std::min(step * 2.0, 1e4);
        bool moved = false;
        while (step >= 1e-14) {
            const Eigen::MatrixXd cw = out.weights - step * gw;
            const Eigen::VectorXd cb = out.bias - step * gb;
            const double candidate = baseline_objective(features, labels, cw, cb, l2);
            if (candidate <= objective - 1e-4 * step * gnorm_sq) {
                out.weights = cw;
                out.bias = cb;
                objective = candidate;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if (!moved) return out;  // stalled below step precision
    }
    return out;
}

Eigen::VectorXd static_baseline_probs(const StaticBaseline& model, const Eigen::VectorXd& x) {
    if (x.size() != model.weights.cols()) {
        throw NumericError("static_baseline_probs: feature length mismatch");
    }
    Eigen::VectorXd z = model.weights * x + model.bias;
    const double peak = z.maxCoeff();
    Eigen::VectorXd p = (z.array() - peak).exp().matrix();
    return p / p.sum();
}

}  // namespace tokentraj
