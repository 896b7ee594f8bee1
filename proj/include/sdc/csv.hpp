#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sdc/errors.hpp"

namespace sdc {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

// Reads a CSV with the exact expected header; returns data rows as string
// fields. Our formats are plain (no quoting, no embedded commas).
inline std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path,
                                                      const std::string& expected_header) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open csv file: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw Error("empty csv file: " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != expected_header) {
        throw Error("unexpected csv header in " + path.string() + ": got '" + line +
                    "', want '" + expected_header + "'");
    }
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        rows.push_back(split_csv_line(line));
    }
    return rows;
}

inline long long parse_ll(const std::string& s, const char* what) {
    try {
        std::size_t pos = 0;
        long long v = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw Error(std::string("cannot parse integer field '") + s + "' (" + what + ")");
    }
}

inline double parse_double(const std::string& s, const char* what) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw Error(std::string("cannot parse numeric field '") + s + "' (" + what + ")");
    }
}

} // namespace sdc
