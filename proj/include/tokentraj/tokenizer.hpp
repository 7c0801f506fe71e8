#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tokentraj/schema.hpp"

// Vocabulary learning (quantile bin edges, categorical levels, text tokens,
// missing tokens) and window tokenisation into sorted token-id sets.

namespace tokentraj {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr const char* kPadToken = "<PAD>";
inline constexpr const char* kUnkToken = "<UNK>";
inline constexpr const char* kMissingPayload = "__MISSING__";

struct VariableVocab {
    std::string name;
    VariableKind kind = VariableKind::Numeric;
    int missing_id = 0;
    std::vector<double> bin_edges; // sorted, length bin_count-1; numeric only
    int first_bin_id = 0;          // id of VAR=BIN01; bins are contiguous ids
};

class Vocabulary {
public:
    Vocabulary() = default;

    int size() const { return static_cast<int>(tokens_.size()); }
    const std::vector<std::string>& tokens() const { return tokens_; }
    const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    int lookup(const std::string& token) const; // kUnkId when absent
    int bin_count() const { return bin_count_; }
    const std::vector<VariableVocab>& variables() const { return variables_; }
    const VariableVocab* variable(const std::string& name) const;

    std::uint64_t content_hash() const;

    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

    // Construction is owned by fit_vocabulary.
    friend Vocabulary fit_vocabulary(const std::vector<TimeWindowedStay>&, const VariableDictionary&, int);

private:
    int add_token(const std::string& token);

    std::vector<std::string> tokens_;
    std::map<std::string, int> ids_;
    std::vector<VariableVocab> variables_;
    std::map<std::string, std::size_t> variable_index_;
    int bin_count_ = 0;
};

struct TokenSet {
    int window_index = 0;
    std::vector<int> ids; // sorted ascending, deduplicated, never empty
};

struct TokenizedStay {
    std::string patient_id;
    double window_hours = 2.0;
    std::vector<TokenSet> windows;
};

// Learn the token universe from training stays. Numeric edges are the k/B
// empirical quantiles (k = 1..B-1) of all non-missing training values of the
// variable pooled across windows; categorical/text payloads come from the
// observed training values; every variable gets a missing token.
Vocabulary fit_vocabulary(const std::vector<TimeWindowedStay>& training_stays,
                          const VariableDictionary& dict, int bin_count);

// 1 + number of edges strictly below value, so ties go to the lower bin and
// out-of-range values clamp into bins 1 or B. Non-finite values signal
// missingness via nullopt.
std::optional<int> bin_numeric(double value, std::span<const double> edges);

// Lowercase and strip every character outside [a-z0-9].
std::string normalize_text(const std::string& raw);

// Every declared variable contributes at least one token (value tokens or
// its missing token); unseen value tokens map to UNK.
TokenSet tokenize_window(const WindowObservations& window, const Vocabulary& vocab);

TokenizedStay tokenize_stay(const TimeWindowedStay& stay, const Vocabulary& vocab);

std::string bin_payload(int bin, int bin_count);

} // namespace tokentraj
