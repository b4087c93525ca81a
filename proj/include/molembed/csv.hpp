#pragma once

#include <optional>
#include <string>
#include <vector>

namespace molembed::csv {

/// Minimal CSV table: header row + string cells. Comma-separated, no quoting
/// (none of the emitted formats need escaping; SMILES never contains a comma).
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const;           // -1 when absent
    int require_column(const std::string& name) const;   // throws SchemaError
};

Table read_file(const std::string& path);
Table read_string(const std::string& text);

void write_file(const std::string& path, const Table& t);

/// Strict double parse; throws ParseError carrying `row` on failure.
double parse_double(const std::string& cell, long row);

/// Canonical numeric formatting used by all emitted CSV files (shortest
/// round-trip representation, so reruns are byte-identical).
std::string format_double(double v);

}  // namespace molembed::csv
