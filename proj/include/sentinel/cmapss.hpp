#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "datasets.hpp"

namespace sentinel {

inline constexpr std::size_t kCmapssColumns = 26;
inline constexpr std::size_t kCmapssSensors = 21;
inline constexpr std::size_t kFd002UnitCount = 519;

/// Signal names for the 24 value columns: op1..op3 then s1..s21.
inline std::vector<std::string> cmapss_signal_names() {
    std::vector<std::string> names{"op1", "op2", "op3"};
    for (std::size_t s = 1; s <= kCmapssSensors; ++s) names.push_back("s" + std::to_string(s));
    return names;
}

inline std::vector<std::string> cmapss_sensor_names() {
    std::vector<std::string> names;
    for (std::size_t s = 1; s <= kCmapssSensors; ++s) names.push_back("s" + std::to_string(s));
    return names;
}

struct CmapssLoad {
    std::vector<RunSeries> runs;
    std::vector<std::string> warnings;
};

/// Parses the whitespace-separated C-MAPSS text format: unit, cycle, 3 settings,
/// 21 sensors per row. Runs are grouped by unit and ordered by cycle.
inline CmapssLoad load_cmapss(std::istream &is, const std::string &source = "cmapss") {
    std::map<std::int64_t, std::vector<std::pair<std::int64_t, std::vector<double>>>> units;
    std::vector<std::int64_t> first_seen;
    std::string line;
    std::size_t line_no = 0;
    std::vector<double> fields;
    while (std::getline(is, line)) {
        ++line_no;
        fields.clear();
        const char *p = line.data();
        const char *end = p + line.size();
        while (p < end) {
            while (p < end && (*p == ' ' || *p == '\t' || *p == '\r')) ++p;
            if (p >= end) break;
            double v = 0;
            auto [next, ec] = std::from_chars(p, end, v);
            if (ec != std::errc() || (next < end && *next != ' ' && *next != '\t' && *next != '\r'))
                throw ParseError(line_no, "malformed number");
            fields.push_back(v);
            p = next;
        }
        if (fields.empty()) continue;
        if (fields.size() != kCmapssColumns)
            throw ParseError(line_no, "expected " + std::to_string(kCmapssColumns) + " columns, found " +
                                          std::to_string(fields.size()));
        const auto unit = static_cast<std::int64_t>(fields[0]);
        const auto cycle = static_cast<std::int64_t>(fields[1]);
        if (static_cast<double>(unit) != fields[0] || static_cast<double>(cycle) != fields[1])
            throw ParseError(line_no, "unit and cycle must be integers");
        auto [it, inserted] = units.try_emplace(unit);
        if (inserted) first_seen.push_back(unit);
        it->second.emplace_back(cycle, std::vector<double>(fields.begin() + 2, fields.end()));
    }

    CmapssLoad out;
    const auto names = cmapss_signal_names();
    for (std::int64_t unit : first_seen) {
        auto &rows = units[unit];
        const bool ordered = std::is_sorted(rows.begin(), rows.end(),
                                            [](const auto &a, const auto &b) { return a.first < b.first; });
        if (!ordered) {
            out.warnings.push_back(source + ": unit " + std::to_string(unit) + " rows out of cycle order, re-ordered");
            std::stable_sort(rows.begin(), rows.end(), [](const auto &a, const auto &b) { return a.first < b.first; });
        }
        RunSeries run;
        run.unit = unit;
        run.source = source;
        run.columns = names;
        run.values.resize(rows.size(), names.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (i > 0 && rows[i].first == rows[i - 1].first)
                throw FormatError(source + ": unit " + std::to_string(unit) + " repeats cycle " +
                                  std::to_string(rows[i].first));
            run.index.push_back(rows[i].first);
            std::copy(rows[i].second.begin(), rows[i].second.end(), run.values.row(i).begin());
        }
        out.runs.push_back(std::move(run));
    }
    return out;
}

inline CmapssLoad load_cmapss(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw PathError(path.string(), "cannot open");
    return load_cmapss(in, path.filename().string());
}

/// Writes runs back in the 26-column text format.
inline void write_cmapss(std::ostream &os, const std::vector<RunSeries> &runs) {
    char buf[64];
    for (const RunSeries &run : runs) {
        for (std::size_t i = 0; i < run.length(); ++i) {
            os << run.unit << ' ' << run.index[i];
            for (double v : run.values.row(i)) {
                std::snprintf(buf, sizeof buf, " %.9g", v);
                os << buf;
            }
            os << '\n';
        }
    }
}

/// FD002 with the training/test roles of the original files swapped: runs from
/// test_FD002.txt (low degradation, no failures) form the training pool, runs from
/// train_FD002.txt (run to failure) are the designated test runs.
struct Fd002 {
    std::vector<RunSeries> runs;
    std::vector<std::string> warnings;
    std::size_t unit_count = 0;

    bool unit_count_matches() const noexcept { return unit_count == kFd002UnitCount; }
};

inline Fd002 load_fd002(const std::filesystem::path &dir) {
    if (!std::filesystem::is_directory(dir)) throw PathError(dir.string(), "no data directory at");
    Fd002 out;
    for (auto [file, is_test] : {std::pair{"test_FD002.txt", false}, std::pair{"train_FD002.txt", true}}) {
        CmapssLoad part = load_cmapss(dir / file);
        for (auto &run : part.runs) {
            run.designated_test = is_test;
            out.runs.push_back(std::move(run));
        }
        out.warnings.insert(out.warnings.end(), part.warnings.begin(), part.warnings.end());
    }
    out.unit_count = out.runs.size();
    return out;
}

} // namespace sentinel
