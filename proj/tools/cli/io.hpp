#pragma once

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "hbar/error.hpp"

namespace hbar::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

// Doubles are rounded to 12 significant digits before they reach the JSON
// serializer; non-finite values become null.
inline Json num(double v) {
    if (!std::isfinite(v)) return nullptr;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return std::strtod(buf, nullptr);
}

inline Json num_array(const std::vector<double>& v) {
    Json a = Json::array();
    for (double x : v) a.push_back(num(x));
    return a;
}

inline Json document(const std::string& kind) {
    Json j;
    j["schema_version"] = kSchemaVersion;
    j["kind"] = kind;
    return j;
}

// Write to a sibling temporary, then rename over the target.
inline void write_atomic(const fs::path& target, const std::string& text) {
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ValidationError("cannot write " + tmp.string());
        out << text;
        if (!out.flush()) throw ValidationError("write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) throw ValidationError("cannot move " + tmp.string() + " to " + target.string() + ": " + ec.message());
}

inline void write_json(const fs::path& target, const Json& j) { write_atomic(target, j.dump(2) + "\n"); }

struct CsvTable {
    fs::path file;
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;

    std::optional<std::size_t> column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        return std::nullopt;
    }
    std::vector<double> values(std::size_t col) const {
        std::vector<double> v;
        v.reserve(rows.size());
        for (const auto& r : rows) v.push_back(r[col]);
        return v;
    }
};

inline std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return "";
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

inline std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

// Numeric CSV with a header row. Blank lines and lines starting with '#' are skipped.
// Empty cells read as NaN.
inline CsvTable read_csv(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw ValidationError("cannot open " + file.string());
    CsvTable t;
    t.file = file;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string s = trim(line);
        if (s.empty() || s.front() == '#') continue;
        auto cells = split(s);
        if (t.header.empty()) {
            t.header = cells;
            continue;
        }
        if (cells.size() != t.header.size())
            throw ValidationError(file.string() + ":" + std::to_string(lineno) + ": expected " +
                                  std::to_string(t.header.size()) + " columns, found " + std::to_string(cells.size()));
        std::vector<double> row;
        for (std::size_t c = 0; c < cells.size(); ++c) {
            if (cells[c].empty()) {
                row.push_back(std::nan(""));
                continue;
            }
            double v = 0.0;
            const char* b = cells[c].data();
            const char* e = b + cells[c].size();
            const auto res = std::from_chars(b, e, v);
            if (res.ec != std::errc() || res.ptr != e)
                throw ValidationError(file.string() + ":" + std::to_string(lineno) + ": column '" + t.header[c] +
                                      "' is not a number: '" + cells[c] + "'");
            row.push_back(v);
        }
        t.rows.push_back(std::move(row));
    }
    if (t.header.empty()) throw ValidationError(file.string() + ": empty file");
    return t;
}

inline std::size_t require_column(const CsvTable& t, const std::string& name) {
    auto c = t.column(name);
    if (!c) throw ValidationError(t.file.string() + ": missing column '" + name + "'");
    return *c;
}

}  // namespace hbar::cli
