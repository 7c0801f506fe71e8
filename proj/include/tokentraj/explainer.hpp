#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tokentraj/metrics.hpp"
#include "tokentraj/seqmodel.hpp"
#include "tokentraj/tokenizer.hpp"

namespace tokentraj {

// The reference window used when an input unit is switched off: per variable,
// the tokens of that variable appearing in at least half of all training
// windows, or the variable's missing token when none does.  The full baseline
// window is the union over variables.
struct BaselineTokens {
    std::vector<int> window_ids;                          // sorted union
    std::map<std::string, std::vector<int>> by_variable;  // per-variable reference tokens
};

BaselineTokens build_baseline_tokens(const std::vector<TokenizedStay>& training_stays,
                                     const Vocabulary& vocab);

// token id -> owning variable name, resolved by longest-prefix match on the
// "name=payload" token strings; PAD and UNK map to an empty string.
std::vector<std::string> token_variable_map(const Vocabulary& vocab);

// Model output under explanation, always read at the last supplied window:
// q_index 0..5 picks the threshold probability, kExpectedScore the expected
// outcome index.
double explain_output(const TrajectoryModel& model, std::span<const TokenSet> windows,
                      int q_index);

enum class ShapleyMode { Exact, Sampled };
ShapleyMode parse_shapley_mode(const std::string& s);
std::string shapley_mode_name(ShapleyMode m);

struct ShapleyEstimate {
    std::vector<double> phi;
    std::vector<double> se;  // zeros in exact mode
    double v_empty = 0.0;
    double v_full = 0.0;
};

// Shapley values of a set game given by `value` over unit masks.  Exact mode
// enumerates all 2^n coalitions (n <= 12).  Sampled mode draws coalitions
// with the Shapley kernel (size s with probability proportional to
// (n-1)/(s(n-s)), then a uniform subset of that size) and solves the
// constrained least-squares system; the additivity constraint pins the last
// unit, so phi always sums to value(full) - value(empty) exactly.  Standard
// errors come from re-solving on 10 disjoint sample batches.
ShapleyEstimate shapley_values(int n_units,
                               const std::function<double(const std::vector<bool>&)>& value,
                               ShapleyMode mode, int samples, std::uint64_t seed);

// Largest prefix length in [0, T-1] whose windows can be swapped with the
// baseline window while moving the output by at most eta, and whose own
// content (followed by a baseline suffix) stays within eta of the
// all-baseline output.
int prune_windows(const TrajectoryModel& model, std::span<const TokenSet> windows,
                  const BaselineTokens& baseline, int q_index, double eta);

struct ShapleyConfig {
    ShapleyMode mode = ShapleyMode::Exact;
    int samples = 1000;      // sampled mode only
    std::uint64_t seed = 0;  // sampled mode only
    double prune_eta = 0.025;
};

struct ShapleyUnit {
    std::string kind;  // "window", "token" or "pruned"
    std::string unit;  // window index or token string
    double phi = 0.0;
    double se = 0.0;
};

struct Attribution {
    std::string patient_id;
    int t_star = 0;       // index of the explained window
    int target_index = kExpectedScore;
    int pruned_before = 0;  // windows [0, pruned_before) form the pruned block
    // Anchor of the decomposition: base_value plus the phi of every unit
    // reproduces full_value. It is the all-baseline output except in
    // token-level runs without pruning, where it is the all-units-off output
    // (identical unless an unknown token stood in for a variable).
    double base_value = 0.0;
    double full_value = 0.0;  // output on the real stay
    ShapleyMode mode = ShapleyMode::Exact;
    std::vector<ShapleyUnit> units;
};

// Window-level attribution: one unit per unpruned window plus, when pruning
// fired, a single unit for the whole pruned prefix.
Attribution timeshap_windows(const TrajectoryModel& model, const TokenizedStay& stay,
                             const BaselineTokens& baseline, int q_index,
                             const ShapleyConfig& cfg);

// Token-level attribution over the unpruned suffix: one unit per distinct
// token, toggled across all suffix windows at once; switching a token off
// removes it and, when that empties a variable in a window, substitutes the
// variable's baseline tokens.  The pruned prefix stays at its real content
// and its remainder (all tokens off versus the all-baseline stay) is reported
// as the "pruned" unit, so the attribution still adds up exactly.
Attribution timeshap_tokens(const TrajectoryModel& model, const TokenizedStay& stay,
                            const BaselineTokens& baseline, const Vocabulary& vocab, int q_index,
                            const ShapleyConfig& cfg);

void save_attributions(std::span<const Attribution> attributions, const Vocabulary& vocab,
                       const std::string& path);

}  // namespace tokentraj
