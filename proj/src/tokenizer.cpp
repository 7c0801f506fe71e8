#include "tokentraj/tokenizer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include <json.hpp>

namespace tokentraj {

int Vocabulary::lookup(const std::string& token) const {
    const auto it = ids_.find(token);
    return it == ids_.end() ? kUnkId : it->second;
}

const VariableVocab* Vocabulary::variable(const std::string& name) const {
    const auto it = variable_index_.find(name);
    return it == variable_index_.end() ? nullptr : &variables_[it->second];
}

int Vocabulary::add_token(const std::string& token) {
    const auto it = ids_.find(token);
    if (it != ids_.end()) return it->second;
    const int id = static_cast<int>(tokens_.size());
    tokens_.push_back(token);
    ids_.emplace(token, id);
    return id;
}

std::uint64_t Vocabulary::content_hash() const {
    std::string blob = "tokentraj-vocab-v1|" + std::to_string(bin_count_);
    for (const std::string& t : tokens_) {
        blob += '|';
        blob += t;
    }
    for (const VariableVocab& v : variables_) {
        blob += '|';
        blob += v.name;
        for (double e : v.bin_edges) {
            blob += ';';
            blob += format_double(e);
        }
    }
    return fnv1a64_str(blob);
}

std::string bin_payload(int bin, int bin_count) {
    const int width = bin_count >= 100 ? 3 : 2;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "BIN%0*d", width, bin);
    return buf;
}

std::string normalize_text(const std::string& raw) {
    std::string out;
    out.reserve(raw.size());
    for (char c : raw) {
        if (c >= 'A' && c <= 'Z') {
            out.push_back(static_cast<char>(c - 'A' + 'a'));
        } else if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9')) {
            out.push_back(c);
        }
    }
    return out;
}

std::optional<int> bin_numeric(double value, std::span<const double> edges) {
    if (!std::isfinite(value)) return std::nullopt;
    int below = 0;
    for (double e : edges) {
        if (e < value) ++below;
    }
    return below + 1;
}

Vocabulary fit_vocabulary(const std::vector<TimeWindowedStay>& training_stays,
                          const VariableDictionary& dict, int bin_count) {
    if (bin_count < 2) throw NumericError("bin_count must be >= 2");
    if (training_stays.empty()) throw DataError("fit_vocabulary: no training stays");

    // Pool raw values per variable across all training windows (static
    // values repeat once per window via carry-forward).
    std::map<std::string, std::vector<double>> numeric_pool;
    std::map<std::string, std::set<std::string>> payload_pool;
    for (const TimeWindowedStay& stay : training_stays) {
        for (const WindowObservations& window : stay.windows) {
            for (const auto& [var, raw] : window.values) {
                const VariableSpec* spec = dict.find(var);
                if (spec == nullptr) throw DataError("fit_vocabulary: undeclared variable '" + var + "'");
                switch (spec->kind) {
                    case VariableKind::Numeric: {
                        char* end = nullptr;
                        const double v = std::strtod(raw.c_str(), &end);
                        if (!raw.empty() && end == raw.c_str() + raw.size() && std::isfinite(v)) {
                            numeric_pool[var].push_back(v);
                        }
                        break;
                    }
                    case VariableKind::Categorical:
                        if (!raw.empty()) payload_pool[var].insert(raw);
                        break;
                    case VariableKind::Text: {
                        const std::string norm = normalize_text(raw);
                        if (!norm.empty()) payload_pool[var].insert(norm);
                        break;
                    }
                }
            }
        }
    }

    Vocabulary vocab;
    vocab.bin_count_ = bin_count;
    vocab.add_token(kPadToken);
    vocab.add_token(kUnkToken);

    for (const VariableSpec& spec : dict.entries()) {
        VariableVocab vv;
        vv.name = spec.name;
        vv.kind = spec.kind;
        if (spec.kind == VariableKind::Numeric) {
            auto it = numeric_pool.find(spec.name);
            if (it != numeric_pool.end() && !it->second.empty()) {
                vv.bin_edges.reserve(static_cast<std::size_t>(bin_count - 1));
                for (int k = 1; k < bin_count; ++k) {
                    vv.bin_edges.push_back(percentile(it->second, static_cast<double>(k) / bin_count));
                }
            }
            // A numeric variable never seen in training keeps an empty edge
            // vector; every later value lands in bin 1.
            vv.first_bin_id = vocab.add_token(spec.name + "=" + bin_payload(1, bin_count));
            for (int b = 2; b <= bin_count; ++b) {
                vocab.add_token(spec.name + "=" + bin_payload(b, bin_count));
            }
        } else {
            const auto it = payload_pool.find(spec.name);
            if (it != payload_pool.end()) {
                for (const std::string& payload : it->second) {
                    vocab.add_token(spec.name + "=" + payload);
                }
            }
        }
        vv.missing_id = vocab.add_token(spec.name + "=" + kMissingPayload);
        vocab.variable_index_.emplace(spec.name, vocab.variables_.size());
        vocab.variables_.push_back(std::move(vv));
    }
    return vocab;
}

TokenSet tokenize_window(const WindowObservations& window, const Vocabulary& vocab) {
    TokenSet out;
    out.window_index = window.index;

    std::set<int> ids;
    // Group the window's raw values by variable; untouched variables emit
    // their missing token below.
    std::map<std::string, std::vector<const std::string*>> by_var;
    for (const auto& [var, raw] : window.values) {
        by_var[var].push_back(&raw);
    }

    for (const VariableVocab& vv : vocab.variables()) {
        const auto it = by_var.find(vv.name);
        bool emitted = false;
        if (it != by_var.end()) {
            for (const std::string* raw : it->second) {
                switch (vv.kind) {
                    case VariableKind::Numeric: {
                        char* end = nullptr;
                        const double v = std::strtod(raw->c_str(), &end);
                        const bool parsed = !raw->empty() && end == raw->c_str() + raw->size();
                        const auto bin = parsed ? bin_numeric(v, vv.bin_edges) : std::nullopt;
                        if (bin.has_value()) {
                            ids.insert(vv.first_bin_id + (*bin - 1));
                            emitted = true;
                        }
                        break;
                    }
                    case VariableKind::Categorical:
                        if (!raw->empty()) {
                            ids.insert(vocab.lookup(vv.name + "=" + *raw));
                            emitted = true;
                        }
                        break;
                    case VariableKind::Text: {
                        const std::string norm = normalize_text(*raw);
                        if (!norm.empty()) {
                            ids.insert(vocab.lookup(vv.name + "=" + norm));
                            emitted = true;
                        }
                        break;
                    }
                }
            }
        }
        if (!emitted) ids.insert(vv.missing_id);
    }

    out.ids.assign(ids.begin(), ids.end());
    return out;
}

TokenizedStay tokenize_stay(const TimeWindowedStay& stay, const Vocabulary& vocab) {
    TokenizedStay out;
    out.patient_id = stay.patient_id;
    out.window_hours = stay.window_hours;
    out.windows.reserve(stay.windows.size());
    for (const WindowObservations& w : stay.windows) {
        out.windows.push_back(tokenize_window(w, vocab));
    }
    return out;
}

void Vocabulary::save(const std::string& path) const {
    nlohmann::json j;
    j["format"] = "tokentraj-vocab-v1";
    j["bin_count"] = bin_count_;
    j["tokens"] = tokens_;
    nlohmann::json vars = nlohmann::json::array();
    for (const VariableVocab& v : variables_) {
        nlohmann::json jv;
        jv["name"] = v.name;
        jv["kind"] = variable_kind_name(v.kind);
        jv["missing_id"] = v.missing_id;
        jv["first_bin_id"] = v.first_bin_id;
        // Edges as decimal strings so reload is bit-exact.
        nlohmann::json edges = nlohmann::json::array();
        for (double e : v.bin_edges) edges.push_back(format_double(e));
        jv["edges"] = edges;
        vars.push_back(std::move(jv));
    }
    j["variables"] = std::move(vars);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write vocabulary file: " + path);
    out << j.dump(2) << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open vocabulary file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": " + e.what());
    }
    if (j.value("format", "") != "tokentraj-vocab-v1") {
        throw DataError(path + ": not a tokentraj-vocab-v1 file");
    }

    Vocabulary vocab;
    vocab.bin_count_ = j.at("bin_count").get<int>();
    for (const auto& t : j.at("tokens")) {
        vocab.add_token(t.get<std::string>());
    }
    for (const auto& jv : j.at("variables")) {
        VariableVocab v;
        v.name = jv.at("name").get<std::string>();
        v.kind = parse_variable_kind(jv.at("kind").get<std::string>());
        v.missing_id = jv.at("missing_id").get<int>();
        v.first_bin_id = jv.at("first_bin_id").get<int>();
        for (const auto& e : jv.at("edges")) {
            v.bin_edges.push_back(std::strtod(e.get<std::string>().c_str(), nullptr));
        }
        vocab.variable_index_.emplace(v.name, vocab.variables_.size());
        vocab.variables_.push_back(std::move(v));
    }
    return vocab;
}

} // namespace tokentraj
