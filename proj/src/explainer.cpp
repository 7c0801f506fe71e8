#include "tokentraj/explainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include "tokentraj/csv.hpp"
#include "tokentraj/transitions.hpp"

namespace tokentraj {

BaselineTokens build_baseline_tokens(const std::vector<TokenizedStay>& training_stays,
                                     const Vocabulary& vocab) {
    if (training_stays.empty()) throw DataError("build_baseline_tokens: no training stays");

    std::vector<long long> count(static_cast<std::size_t>(vocab.size()), 0);
    long long total_windows = 0;
    for (const TokenizedStay& stay : training_stays) {
        for (const TokenSet& w : stay.windows) {
            ++total_windows;
            for (int id : w.ids) {
                if (id < 0 || id >= vocab.size()) {
                    throw NumericError("build_baseline_tokens: token id out of range");
                }
                ++count[static_cast<std::size_t>(id)];
            }
        }
    }
    if (total_windows == 0) throw DataError("build_baseline_tokens: training stays have no windows");

    const std::vector<std::string> var_of = token_variable_map(vocab);
    std::map<std::string, std::vector<int>> frequent;
    for (int id = 0; id < vocab.size(); ++id) {
        if (2 * count[static_cast<std::size_t>(id)] >= total_windows && !var_of[id].empty()) {
            frequent[var_of[id]].push_back(id);
        }
    }

    BaselineTokens out;
    std::set<int> window_ids;
    for (const VariableVocab& vv : vocab.variables()) {
        auto it = frequent.find(vv.name);
        std::vector<int>& ids = out.by_variable[vv.name];
        if (it != frequent.end() && !it->second.empty()) {
            ids = it->second;
        } else {
            ids = {vv.missing_id};
        }
        window_ids.insert(ids.begin(), ids.end());
    }
    out.window_ids.assign(window_ids.begin(), window_ids.end());
    return out;
}

std::vector<std::string> token_variable_map(const Vocabulary& vocab) {
    std::vector<std::string> out(static_cast<std::size_t>(vocab.size()));
    for (int id = 0; id < vocab.size(); ++id) {
        const std::string& token = vocab.token(id);
        // rightmost '=' whose prefix names a variable wins, i.e. the longest
        // matching variable name
        for (std::size_t pos = token.rfind('='); pos != std::string::npos;
             pos = pos == 0 ? std::string::npos : token.rfind('=', pos - 1)) {
            const std::string prefix = token.substr(0, pos);
            if (vocab.variable(prefix) != nullptr) {
                out[static_cast<std::size_t>(id)] = prefix;
                break;
            }
        }
    }
    return out;
}

namespace {

double pick_target(const WindowPrediction& pred, int q_index) {
    if (q_index == kExpectedScore) return pred.expected;
    if (q_index < 0 || q_index >= kOutcomeClasses - 1) {
        throw NumericError("explain target index out of range");
    }
    return pred.q(q_index);
}

}  // namespace

double explain_output(const TrajectoryModel& model, std::span<const TokenSet> windows,
                      int q_index) {
    if (windows.empty()) throw NumericError("explain_output: empty window sequence");
    const std::vector<WindowPrediction> preds = forward_windows(model, windows);
    return pick_target(preds.back(), q_index);
}

ShapleyMode parse_shapley_mode(const std::string& s) {
    if (s == "exact") return ShapleyMode::Exact;
    if (s == "sampled") return ShapleyMode::Sampled;
    throw DataError("unknown attribution mode '" + s + "' (expected exact or sampled)");
}

std::string shapley_mode_name(ShapleyMode m) {
    return m == ShapleyMode::Exact ? "exact" : "sampled";
}

ShapleyEstimate shapley_values(int n_units,
                               const std::function<double(const std::vector<bool>&)>& value,
                               ShapleyMode mode, int samples, std::uint64_t seed) {
    if (n_units < 1) throw NumericError("shapley_values: need at least one unit");
    const int n = n_units;

    ShapleyEstimate out;
    std::vector<bool> mask(static_cast<std::size_t>(n), false);
    out.v_empty = value(mask);
    std::fill(mask.begin(), mask.end(), true);
    out.v_full = value(mask);
    out.phi.assign(static_cast<std::size_t>(n), 0.0);
    out.se.assign(static_cast<std::size_t>(n), 0.0);
    if (n == 1) {
        out.phi[0] = out.v_full - out.v_empty;
        return out;
    }

    if (mode == ShapleyMode::Exact) {
        if (n > 12) {
            throw NumericError(
                "shapley_values: exact mode enumerates 2^n coalitions and supports at most "
                "12 units; use sampled mode");
        }
        const std::uint32_t total = 1u << n;
        std::vector<double> v(total);
        v[0] = out.v_empty;
        v[total - 1] = out.v_full;
        for (std::uint32_t m = 1; m + 1 < total; ++m) {
            for (int i = 0; i < n; ++i) mask[static_cast<std::size_t>(i)] = ((m >> i) & 1u) != 0;
            v[m] = value(mask);
        }

        std::vector<double> fact(static_cast<std::size_t>(n) + 1, 1.0);
        for (int i = 1; i <= n; ++i) fact[i] = fact[i - 1] * static_cast<double>(i);
        std::vector<double> weight(static_cast<std::size_t>(n));
        for (int s = 0; s < n; ++s) weight[s] = fact[s] * fact[n - 1 - s] / fact[n];

        for (std::uint32_t m = 0; m < total; ++m) {
            const int s = std::popcount(m);
            for (int i = 0; i < n; ++i) {
                if ((m >> i) & 1u) continue;
                out.phi[static_cast<std::size_t>(i)] += weight[s] * (v[m | (1u << i)] - v[m]);
            }
        }
        return out;
    }

    if (samples < std::max(100, 2 * n)) {
        throw NumericError("shapley_values: sampled mode needs at least max(100, 2n) coalitions");
    }

    Rng rng(seed);
    std::vector<double> size_cdf(static_cast<std::size_t>(n - 1));
    double acc = 0.0;
    for (int s = 1; s <= n - 1; ++s) {
        acc += static_cast<double>(n - 1) / (static_cast<double>(s) * static_cast<double>(n - s));
        size_cdf[s - 1] = acc;
    }
    for (double& c : size_cdf) c /= acc;

    const double delta = out.v_full - out.v_empty;
    const int dim = n - 1;
    Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::VectorXd xtz = Eigen::VectorXd::Zero(dim);
    constexpr int kBatches = 10;
    std::vector<Eigen::MatrixXd> batch_xtx(kBatches, Eigen::MatrixXd::Zero(dim, dim));
    std::vector<Eigen::VectorXd> batch_xtz(kBatches, Eigen::VectorXd::Zero(dim));

    std::vector<int> indices(static_cast<std::size_t>(n));
    std::iota(indices.begin(), indices.end(), 0);
    Eigen::VectorXd x(dim);
    for (int j = 0; j < samples; ++j) {
        const double u = rng.uniform01();
        int s = 1 + static_cast<int>(std::lower_bound(size_cdf.begin(), size_cdf.end(), u) -
                                     size_cdf.begin());
        if (s > n - 1) s = n - 1;
        rng.shuffle(indices);
        std::fill(mask.begin(), mask.end(), false);
        for (int t = 0; t < s; ++t) mask[static_cast<std::size_t>(indices[t])] = true;

        const double y = value(mask);
        const bool last_on = mask[static_cast<std::size_t>(n - 1)];
        const double z = y - out.v_empty - (last_on ? delta : 0.0);
        for (int i = 0; i < dim; ++i) {
            x(i) = (mask[static_cast<std::size_t>(i)] ? 1.0 : 0.0) - (last_on ? 1.0 : 0.0);
        }
        xtx.noalias() += x * x.transpose();
        xtz.noalias() += z * x;
        const int b = j % kBatches;
        batch_xtx[b].noalias() += x * x.transpose();
        batch_xtz[b].noalias() += z * x;
    }

    auto solve = [&](Eigen::MatrixXd a, const Eigen::VectorXd& rhs) {
        a.diagonal().array() += 1e-10;
        Eigen::VectorXd head = a.ldlt().solve(rhs);
        Eigen::VectorXd full(n);
        full.head(dim) = head;
        full(n - 1) = delta - head.sum();
        return full;
    };

    const Eigen::VectorXd phi = solve(xtx, xtz);
    for (int i = 0; i < n; ++i) out.phi[static_cast<std::size_t>(i)] = phi(i);

    if (samples / kBatches >= dim) {
        Eigen::MatrixXd batch_phi(n, kBatches);
        for (int b = 0; b < kBatches; ++b) batch_phi.col(b) = solve(batch_xtx[b], batch_xtz[b]);
        for (int i = 0; i < n; ++i) {
            const double mean = batch_phi.row(i).mean();
            double var = 0.0;
            for (int b = 0; b < kBatches; ++b) {
                const double d = batch_phi(i, b) - mean;
                var += d * d;
            }
            var /= static_cast<double>(kBatches - 1);
            out.se[static_cast<std::size_t>(i)] = std::sqrt(var / kBatches);
        }
    } else {
        // too few coalitions per batch to estimate a spread
        std::fill(out.se.begin(), out.se.end(), std::numeric_limits<double>::quiet_NaN());
    }
    return out;
}

int prune_windows(const TrajectoryModel& model, std::span<const TokenSet> windows,
                  const BaselineTokens& baseline, int q_index, double eta) {
    if (windows.empty()) throw NumericError("prune_windows: empty window sequence");
    if (eta < 0.0) throw NumericError("prune_windows: eta must be non-negative");
    const int T = static_cast<int>(windows.size());

    TokenSet base_window;
    base_window.ids = baseline.window_ids;
    const std::vector<TokenSet> base_seq(static_cast<std::size_t>(T), base_window);

    const double f_real = explain_output(model, windows, q_index);
    const double f_base = explain_output(model, base_seq, q_index);

    std::vector<TokenSet> seq(windows.begin(), windows.end());
    for (int len = T - 1; len >= 1; --len) {
        for (int w = 0; w < T; ++w) seq[w] = w < len ? base_window : windows[w];
        const double swapped_out = explain_output(model, seq, q_index);
        if (std::abs(swapped_out - f_real) > eta) continue;
        for (int w = 0; w < T; ++w) seq[w] = w < len ? windows[w] : base_window;
        const double prefix_only = explain_output(model, seq, q_index);
        if (std::abs(prefix_only - f_base) > eta) continue;
        return len;
    }
    return 0;
}

Attribution timeshap_windows(const TrajectoryModel& model, const TokenizedStay& stay,
                             const BaselineTokens& baseline, int q_index,
                             const ShapleyConfig& cfg) {
    const std::vector<TokenSet>& windows = stay.windows;
    if (windows.empty()) throw NumericError("timeshap_windows: stay has no windows");
    const int T = static_cast<int>(windows.size());
    const int pruned = prune_windows(model, windows, baseline, q_index, cfg.prune_eta);

    TokenSet base_window;
    base_window.ids = baseline.window_ids;

    const int free_windows = T - pruned;
    const int n_units = free_windows + (pruned > 0 ? 1 : 0);

    std::vector<TokenSet> seq(static_cast<std::size_t>(T));
    auto value = [&](const std::vector<bool>& mask) {
        const bool pruned_on = pruned > 0 && mask[static_cast<std::size_t>(n_units - 1)];
        for (int w = 0; w < pruned; ++w) seq[w] = pruned_on ? windows[w] : base_window;
        for (int w = pruned; w < T; ++w) {
            seq[w] = mask[static_cast<std::size_t>(w - pruned)] ? windows[w] : base_window;
        }
        return explain_output(model, seq, q_index);
    };

    const ShapleyEstimate est = shapley_values(n_units, value, cfg.mode, cfg.samples, cfg.seed);

    Attribution a;
    a.patient_id = stay.patient_id;
    a.t_star = T - 1;
    a.target_index = q_index;
    a.pruned_before = pruned;
    a.base_value = est.v_empty;
    a.full_value = est.v_full;
    a.mode = cfg.mode;
    for (int i = 0; i < free_windows; ++i) {
        a.units.push_back({"window", std::to_string(pruned + i), est.phi[i], est.se[i]});
    }
    if (pruned > 0) {
        a.units.push_back({"pruned", "windows:0-" + std::to_string(pruned - 1),
                           est.phi[static_cast<std::size_t>(n_units - 1)],
                           est.se[static_cast<std::size_t>(n_units - 1)]});
    }
    return a;
}

Attribution timeshap_tokens(const TrajectoryModel& model, const TokenizedStay& stay,
                            const BaselineTokens& baseline, const Vocabulary& vocab, int q_index,
                            const ShapleyConfig& cfg) {
    const std::vector<TokenSet>& windows = stay.windows;
    if (windows.empty()) throw NumericError("timeshap_tokens: stay has no windows");
    const int T = static_cast<int>(windows.size());
    const int pruned = prune_windows(model, windows, baseline, q_index, cfg.prune_eta);

    const std::vector<std::string> var_of = token_variable_map(vocab);

    std::set<int> unit_set;
    for (int w = pruned; w < T; ++w) {
        for (int id : windows[w].ids) {
            if (id != kPadId) unit_set.insert(id);
        }
    }
    const std::vector<int> unit_tokens(unit_set.begin(), unit_set.end());
    const int n_units = static_cast<int>(unit_tokens.size());
    if (n_units == 0) throw NumericError("timeshap_tokens: no tokens to attribute");
    std::map<int, int> unit_of;
    for (int i = 0; i < n_units; ++i) unit_of[unit_tokens[i]] = i;

    // per suffix window: variable-grouped attributable ids plus the rest (UNK)
    struct WindowGroups {
        std::vector<std::pair<std::string, std::vector<int>>> by_variable;
        std::vector<int> unattributed;
    };
    std::vector<WindowGroups> groups(static_cast<std::size_t>(T - pruned));
    for (int w = pruned; w < T; ++w) {
        std::map<std::string, std::vector<int>> vars;
        for (int id : windows[w].ids) {
            if (id == kPadId) continue;
            const std::string& var = var_of[static_cast<std::size_t>(id)];
            if (var.empty()) {
                groups[w - pruned].unattributed.push_back(id);
            } else {
                vars[var].push_back(id);
            }
        }
        for (auto& [name, ids] : vars) {
            groups[w - pruned].by_variable.emplace_back(name, std::move(ids));
        }
    }

    std::vector<TokenSet> seq(windows.begin(), windows.end());
    auto value = [&](const std::vector<bool>& mask) {
        for (int w = pruned; w < T; ++w) {
            const WindowGroups& g = groups[w - pruned];
            std::set<int> ids;
            for (const auto& [var, real_ids] : g.by_variable) {
                bool kept = false;
                for (int id : real_ids) {
                    if (mask[static_cast<std::size_t>(unit_of.at(id))]) {
                        ids.insert(id);
                        kept = true;
                    }
                }
                if (!kept) {
                    const std::vector<int>& fallback = baseline.by_variable.at(var);
                    ids.insert(fallback.begin(), fallback.end());
                }
            }
            for (int id : g.unattributed) {
                if (mask[static_cast<std::size_t>(unit_of.at(id))]) ids.insert(id);
            }
            seq[w].ids.assign(ids.begin(), ids.end());
        }
        return explain_output(model, seq, q_index);
    };

    const ShapleyEstimate est = shapley_values(n_units, value, cfg.mode, cfg.samples, cfg.seed);

    Attribution a;
    a.patient_id = stay.patient_id;
    a.t_star = T - 1;
    a.target_index = q_index;
    a.pruned_before = pruned;
    a.full_value = est.v_full;
    a.mode = cfg.mode;
    for (int i = 0; i < n_units; ++i) {
        a.units.push_back({"token", vocab.token(unit_tokens[i]), est.phi[i], est.se[i]});
    }
    if (pruned > 0) {
        TokenSet base_window;
        base_window.ids = baseline.window_ids;
        const std::vector<TokenSet> base_seq(static_cast<std::size_t>(T), base_window);
        const double base_value = explain_output(model, base_seq, q_index);
        a.base_value = base_value;
        // whatever the pruned prefix contributes beyond the all-baseline stay
        a.units.push_back({"pruned", "windows:0-" + std::to_string(pruned - 1),
                           est.v_empty - base_value, 0.0});
    } else {
        // Anchoring at the all-off stay rather than the all-baseline one keeps
        // the sum exact even when a window's variable survives only as an
        // unknown token, which has no baseline to substitute.
        a.base_value = est.v_empty;
    }
    return a;
}

void save_attributions(std::span<const Attribution> attributions, const Vocabulary&,
                       const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open attribution file for writing: " + path);
    out << "patient_id,t_star,target,unit_kind,unit,phi,mode,se\n";
    for (const Attribution& a : attributions) {
        const std::string target =
            a.target_index == kExpectedScore ? "expected" : threshold_name(a.target_index);
        for (const ShapleyUnit& u : a.units) {
            out << csv_escape(a.patient_id) << ',' << a.t_star << ',' << target << ',' << u.kind
                << ',' << csv_escape(u.unit) << ',' << format_double(u.phi) << ','
                << shapley_mode_name(a.mode) << ','
                << (std::isnan(u.se) ? std::string() : format_double(u.se)) << '\n';
        }
    }
    if (!out) throw DataError("failed writing attribution file: " + path);
}

}  // namespace tokentraj
