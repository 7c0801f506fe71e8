#include "tokentraj/csv.hpp"

#include <cerrno>
#include <cstdlib>

namespace tokentraj {

namespace {
// A record may span physical lines when a quoted field embeds newlines;
// balance check: an even number of quotes means the record is complete.
bool quotes_balanced(const std::string& s) {
    std::size_t n = 0;
    for (char c : s) {
        if (c == '"') ++n;
    }
    return n % 2 == 0;
}
} // namespace

bool CsvReader::next(CsvRow& row) {
    std::string record;
    while (std::getline(in_, record)) {
        ++line_;
        if (!record.empty() && record.back() == '\r') record.pop_back();
        if (record.empty()) continue;

        row.line = line_;
        std::string cont;
        while (!quotes_balanced(record) && std::getline(in_, cont)) {
            ++line_;
            if (!cont.empty() && cont.back() == '\r') cont.pop_back();
            record += '\n';
            record += cont;
        }
        if (!quotes_balanced(record)) {
            throw DataError(path_ + ":" + std::to_string(row.line) + ": unterminated quoted field");
        }

        row.fields.clear();
        std::string field;
        bool in_quotes = false;
        for (std::size_t i = 0; i < record.size(); ++i) {
            const char c = record[i];
            if (in_quotes) {
                if (c == '"') {
                    if (i + 1 < record.size() && record[i + 1] == '"') {
                        field.push_back('"');
                        ++i;
                    } else {
                        in_quotes = false;
                    }
                } else {
                    field.push_back(c);
                }
            } else if (c == '"' && field.empty()) {
                in_quotes = true;
            } else if (c == ',') {
                row.fields.push_back(field);
                field.clear();
            } else {
                field.push_back(c);
            }
        }
        row.fields.push_back(field);
        return true;
    }
    return false;
}

std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += '"';
    return out;
}

std::string csv_join(const std::vector<std::string>& fields) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out.push_back(',');
        out += csv_escape(fields[i]);
    }
    return out;
}

bool try_parse_double(const std::string& text, double& out) {
    if (text.empty()) return false;
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(text.c_str(), &end);
    if (end != text.c_str() + text.size() || errno == ERANGE) return false;
    if (!std::isfinite(v)) return false;
    out = v;
    return true;
}

double parse_double_field(const std::string& text, const std::string& what, std::size_t line) {
    double v;
    if (!try_parse_double(text, v)) {
        throw DataError("line " + std::to_string(line) + ": cannot parse " + what + " from '" + text + "'");
    }
    return v;
}

long parse_long_field(const std::string& text, const std::string& what, std::size_t line) {
    errno = 0;
    char* end = nullptr;
    const long v = std::strtol(text.c_str(), &end, 10);
    if (text.empty() || end != text.c_str() + text.size() || errno == ERANGE) {
        throw DataError("line " + std::to_string(line) + ": cannot parse " + what + " from '" + text + "'");
    }
    return v;
}

} // namespace tokentraj
