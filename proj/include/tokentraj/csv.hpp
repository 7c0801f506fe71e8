#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "tokentraj/common.hpp"

namespace tokentraj {

// Minimal RFC-4180-ish CSV support: comma separator, double-quote quoting
// with "" escapes, UTF-8 passthrough, '.' decimal separator.

struct CsvRow {
    std::vector<std::string> fields;
    std::size_t line = 0; // 1-based line number in the source file
};

class CsvReader {
public:
    explicit CsvReader(const std::string& path) : path_(path), in_(path) {
        if (!in_) throw DataError("cannot open file: " + path);
    }

    // Returns false at end of file. Skips blank lines.
    bool next(CsvRow& row);

    const std::string& path() const { return path_; }

private:
    std::string path_;
    std::ifstream in_;
    std::size_t line_ = 0;
};

std::string csv_escape(const std::string& field);
std::string csv_join(const std::vector<std::string>& fields);

// Strict numeric parse of a whole field; throws DataError on failure.
double parse_double_field(const std::string& text, const std::string& what, std::size_t line);
long parse_long_field(const std::string& text, const std::string& what, std::size_t line);

// Lenient value parse used for observation payloads: returns false when the
// text is not a complete finite number.
bool try_parse_double(const std::string& text, double& out);

} // namespace tokentraj
