#pragma once

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "datasets.hpp"
#include "errors.hpp"

namespace sentinel {

/// Line that resets the input buffer when it appears in a stream CSV.
inline constexpr std::string_view kBoundaryMarker = "#boundary";

/// One parsed stream event: either a sample row or a boundary marker.
struct StreamEvent {
    bool boundary = false;
    std::vector<double> values;
};

namespace detail {

inline std::vector<std::string> split_csv(const std::string &line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

inline std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

inline double parse_field(const std::string &raw) {
    const std::string f = trim(raw);
    if (f.empty()) return std::numeric_limits<double>::quiet_NaN();
    double v = 0;
    auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
    if (ec != std::errc() || p != f.data() + f.size()) {
        if (f == "nan" || f == "NaN") return std::numeric_limits<double>::quiet_NaN();
        if (f == "inf" || f == "+inf") return std::numeric_limits<double>::infinity();
        if (f == "-inf") return -std::numeric_limits<double>::infinity();
        return std::numeric_limits<double>::quiet_NaN();
    }
    return v;
}

} // namespace detail

/// Incremental reader for stream CSV: a header of signal names, then one row per sample.
/// Empty or unparsable fields become NaN so that the runtime can reject the sample.
class CsvStreamReader {
  public:
    explicit CsvStreamReader(std::istream &is) : is_(is) {
        std::string line;
        while (std::getline(is_, line)) {
            ++line_;
            if (detail::trim(line).empty()) continue;
            for (auto &name : detail::split_csv(line)) columns_.push_back(detail::trim(name));
            return;
        }
        throw FormatError("stream CSV has no header");
    }

    const std::vector<std::string> &columns() const noexcept { return columns_; }

    std::optional<StreamEvent> next() {
        std::string line;
        while (std::getline(is_, line)) {
            ++line_;
            const std::string t = detail::trim(line);
            if (t.empty()) continue;
            if (t == kBoundaryMarker) return StreamEvent{true, {}};
            if (t[0] == '#') continue;
            StreamEvent ev;
            for (const auto &f : detail::split_csv(line)) ev.values.push_back(detail::parse_field(f));
            return ev;
        }
        return std::nullopt;
    }

    std::size_t line() const noexcept { return line_; }

  private:
    std::istream &is_;
    std::vector<std::string> columns_;
    std::size_t line_ = 0;
};

inline void write_stream_header(std::ostream &os, const std::vector<std::string> &columns) {
    for (std::size_t c = 0; c < columns.size(); ++c) os << (c ? "," : "") << columns[c];
    os << '\n';
}

inline void write_stream_row(std::ostream &os, std::span<const double> row) {
    char buf[40];
    for (std::size_t c = 0; c < row.size(); ++c) {
        std::snprintf(buf, sizeof buf, "%s%.10g", c ? "," : "", row[c]);
        os << buf;
    }
    os << '\n';
}

/// Writes a series as stream CSV.
inline void write_stream_csv(std::ostream &os, const RunSeries &series) {
    write_stream_header(os, series.columns);
    for (std::size_t i = 0; i < series.length(); ++i) write_stream_row(os, series.values.row(i));
}

/// Reads a whole stream CSV into a single series; boundary markers split it into runs.
inline std::vector<RunSeries> read_stream_csv(std::istream &is, const std::string &source = "stream") {
    CsvStreamReader reader(is);
    std::vector<RunSeries> runs;
    std::vector<std::vector<double>> rows;
    std::int64_t index = 0;
    std::vector<std::int64_t> idx;
    auto flush = [&] {
        if (rows.empty()) return;
        RunSeries s;
        s.unit = static_cast<std::int64_t>(runs.size() + 1);
        s.source = source;
        s.columns = reader.columns();
        s.index = idx;
        s.values.resize(rows.size(), s.columns.size());
        for (std::size_t r = 0; r < rows.size(); ++r) std::copy(rows[r].begin(), rows[r].end(), s.values.row(r).begin());
        runs.push_back(std::move(s));
        rows.clear();
        idx.clear();
    };
    while (auto ev = reader.next()) {
        if (ev->boundary) {
            flush();
            continue;
        }
        if (ev->values.size() != reader.columns().size())
            throw ParseError(reader.line(), "expected " + std::to_string(reader.columns().size()) + " fields");
        rows.push_back(std::move(ev->values));
        idx.push_back(index++);
    }
    flush();
    return runs;
}

/// Binary stream: "SNTS", u16 version, u32 column count, then per column a u16 length
/// and UTF-8 name; then frames of u32 value count followed by that many f32 values. A
/// frame with count 0 is a boundary marker. All integers little-endian.
namespace binary {

inline constexpr char kStreamMagic[4] = {'S', 'N', 'T', 'S'};
inline constexpr std::uint16_t kStreamVersion = 1;

template <class T> void put(std::ostream &os, T v) {
    static_assert(std::is_integral_v<T> || std::is_same_v<T, float>);
    unsigned char b[sizeof(T)];
    if constexpr (std::is_same_v<T, float>) {
        const auto bits = std::bit_cast<std::uint32_t>(v);
        for (std::size_t i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    } else {
        using U = std::make_unsigned_t<T>;
        const auto u = static_cast<U>(v);
        for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
    }
    os.write(reinterpret_cast<const char *>(b), sizeof(T));
}

template <class T> T get(std::istream &is) {
    unsigned char b[sizeof(T)];
    if (!is.read(reinterpret_cast<char *>(b), sizeof(T))) throw FormatError("unexpected end of binary data");
    if constexpr (std::is_same_v<T, float>) {
        std::uint32_t bits = 0;
        for (std::size_t i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(b[i]) << (8 * i);
        return std::bit_cast<float>(bits);
    } else {
        using U = std::make_unsigned_t<T>;
        U u = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(static_cast<U>(b[i]) << (8 * i));
        return static_cast<T>(u);
    }
}

} // namespace binary

inline void write_stream_binary_header(std::ostream &os, const std::vector<std::string> &columns) {
    os.write(binary::kStreamMagic, 4);
    binary::put<std::uint16_t>(os, binary::kStreamVersion);
    binary::put<std::uint32_t>(os, static_cast<std::uint32_t>(columns.size()));
    for (const auto &c : columns) {
        binary::put<std::uint16_t>(os, static_cast<std::uint16_t>(c.size()));
        os.write(c.data(), static_cast<std::streamsize>(c.size()));
    }
}

inline void write_stream_binary_frame(std::ostream &os, std::span<const double> row) {
    binary::put<std::uint32_t>(os, static_cast<std::uint32_t>(row.size()));
    for (double v : row) binary::put<float>(os, static_cast<float>(v));
}

class BinaryStreamReader {
  public:
    explicit BinaryStreamReader(std::istream &is) : is_(is) {
        char magic[4];
        if (!is_.read(magic, 4) || std::memcmp(magic, binary::kStreamMagic, 4) != 0)
            throw FormatError("not a binary sample stream");
        const auto version = binary::get<std::uint16_t>(is_);
        if (version != binary::kStreamVersion)
            throw FormatError("unsupported stream version " + std::to_string(version));
        const auto n = binary::get<std::uint32_t>(is_);
        for (std::uint32_t c = 0; c < n; ++c) {
            const auto len = binary::get<std::uint16_t>(is_);
            std::string name(len, '\0');
            if (!is_.read(name.data(), len)) throw FormatError("truncated column name");
            columns_.push_back(std::move(name));
        }
    }

    const std::vector<std::string> &columns() const noexcept { return columns_; }

    std::optional<StreamEvent> next() {
        if (is_.peek() == std::char_traits<char>::eof()) return std::nullopt;
        const auto n = binary::get<std::uint32_t>(is_);
        StreamEvent ev;
        if (n == 0) {
            ev.boundary = true;
            return ev;
        }
        ev.values.resize(n);
        for (auto &v : ev.values) v = binary::get<float>(is_);
        return ev;
    }

  private:
    std::istream &is_;
    std::vector<std::string> columns_;
};

} // namespace sentinel
