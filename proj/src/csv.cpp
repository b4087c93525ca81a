#include "molembed/csv.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "molembed/errors.hpp"

namespace molembed::csv {

int Table::column(const std::string& name) const {
    for (size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return static_cast<int>(i);
    return -1;
}

int Table::require_column(const std::string& name) const {
    int c = column(name);
    if (c < 0) throw SchemaError("missing required column '" + name + "'");
    return c;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return out;
}

Table read_stream(std::istream& in) {
    Table t;
    std::string line;
    bool first = true;
    long rowno = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split_line(line);
        if (first) {
            t.header = std::move(cells);
            first = false;
            continue;
        }
        if (cells.size() != t.header.size())
            throw ParseError("row has " + std::to_string(cells.size()) + " cells, header has " +
                                 std::to_string(t.header.size()),
                             rowno);
        t.rows.push_back(std::move(cells));
        ++rowno;
    }
    if (first) throw SchemaError("empty file: no header row");
    return t;
}

}  // namespace

Table read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open CSV file: " + path);
    return read_stream(in);
}

Table read_string(const std::string& text) {
    std::istringstream in(text);
    return read_stream(in);
}

void write_file(const std::string& path, const Table& t) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write CSV file: " + path);
    for (size_t i = 0; i < t.header.size(); ++i)
        out << (i ? "," : "") << t.header[i];
    out << '\n';
    for (const auto& row : t.rows) {
        for (size_t i = 0; i < row.size(); ++i)
            out << (i ? "," : "") << row[i];
        out << '\n';
    }
}

double parse_double(const std::string& cell, long row) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc() || ptr != cell.data() + cell.size())
        throw ParseError("not a number: '" + cell + "'", row);
    return v;
}

std::string format_double(double v) {
    char buf[32];
    // %.17g round-trips; try shorter forms first for readable files
    for (int prec = 6; prec <= 17; ++prec) {
        snprintf(buf, sizeof(buf), "%.*g", prec, v);
        double back = 0.0;
        std::from_chars(buf, buf + std::char_traits<char>::length(buf), back);
        if (back == v) break;
    }
    return buf;
}

}  // namespace molembed::csv
