#pragma once

#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "datasets.hpp"
#include "network.hpp"
#include "stream_io.hpp"

namespace sentinel {

/// A trained model together with everything needed to run it on raw stream data.
struct ModelFile {
    std::string id;
    ModelParams params;
    /// Scaling pairs for every input signal and the output signal.
    ScalingTable scaling;

    bool operator==(const ModelFile &) const = default;
};

inline constexpr char kModelMagic[4] = {'S', 'N', 'T', 'L'};
inline constexpr std::uint16_t kModelVersion = 1;

namespace detail {

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void check_name(const std::string &name) {
    if (name.empty() || name.find_first_of(",=\n\r \t") != std::string::npos)
        throw InvalidArgument("signal or model name '" + name + "' cannot be stored in a model file");
}

inline std::string join(const std::vector<std::string> &xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + xs[i];
    return out;
}

inline std::vector<std::string> split_commas(const std::string &s) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(',', start);
        out.push_back(s.substr(start, pos - start));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

template <class T> T parse_number(const std::string &key, const std::string &value) {
    T v{};
    auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
    if (ec != std::errc() || p != value.data() + value.size())
        throw FormatError("model header field '" + key + "' has invalid value '" + value + "'");
    return v;
}

} // namespace detail

/// The text block: one key=value per line.
inline std::string model_header_text(const ModelFile &m) {
    const ModelSpec &s = m.params.spec;
    detail::check_name(m.id);
    for (const auto &n : s.input_signals) detail::check_name(n);
    detail::check_name(s.output_signal);
    std::ostringstream os;
    os << "id=" << m.id << '\n'
       << "inputs=" << detail::join(s.input_signals) << '\n'
       << "output=" << s.output_signal << '\n'
       << "window_len=" << s.window_len << '\n'
       << "conv_filters=" << s.conv_filters << '\n'
       << "dense_units=" << s.dense_units << '\n'
       << "lrelu_slope=" << detail::fmt_double(s.lrelu_slope) << '\n'
       << "dropout_rate=" << detail::fmt_double(s.dropout_rate) << '\n'
       << "seed=" << m.params.seed << '\n';
    for (const auto &[name, p] : m.scaling)
        os << "scale." << name << '=' << detail::fmt_double(p.q_low) << ' ' << detail::fmt_double(p.q_high) << '\n';
    return os.str();
}

inline void write_model(std::ostream &os, const ModelFile &m) {
    const ParamLayout layout(m.params.spec);
    if (m.params.weights.size() != layout.total()) throw ShapeError("weights", "weight count does not match spec");
    for (const auto &name : m.params.spec.input_signals)
        if (!m.scaling.count(name)) throw MissingSignal(name);
    if (!m.scaling.count(m.params.spec.output_signal)) throw MissingSignal(m.params.spec.output_signal);

    const std::string text = model_header_text(m);
    os.write(kModelMagic, 4);
    binary::put<std::uint16_t>(os, kModelVersion);
    binary::put<std::uint32_t>(os, static_cast<std::uint32_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    binary::put<std::uint32_t>(os, static_cast<std::uint32_t>(layout.tensors().size()));
    for (const TensorInfo &t : layout.tensors()) {
        binary::put<std::uint16_t>(os, static_cast<std::uint16_t>(t.name.size()));
        os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        binary::put<std::uint8_t>(os, static_cast<std::uint8_t>(t.dims.size()));
        for (auto d : t.dims) binary::put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
        for (std::size_t i = 0; i < t.size; ++i) binary::put<float>(os, static_cast<float>(m.params.weights[t.offset + i]));
    }
}

inline ModelFile read_model(std::istream &is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kModelMagic, 4) != 0) throw FormatError("not a model file");
    const auto version = binary::get<std::uint16_t>(is);
    if (version != kModelVersion) throw FormatError("unsupported model format version " + std::to_string(version));
    const auto text_len = binary::get<std::uint32_t>(is);
    std::string text(text_len, '\0');
    if (!is.read(text.data(), text_len)) throw FormatError("truncated model header");

    ModelFile m;
    ModelSpec &spec = m.params.spec;
    std::map<std::string, std::string> kv;
    std::istringstream ts(text);
    std::string line;
    while (std::getline(ts, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("model header line without '=': " + line);
        const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        if (key.starts_with("scale.")) {
            std::istringstream vs(value);
            ScalingPair p;
            if (!(vs >> p.q_low >> p.q_high)) throw FormatError("bad scaling entry for '" + key + "'");
            m.scaling[key.substr(6)] = p;
        } else {
            kv[key] = value;
        }
    }
    for (const char *key : {"id", "inputs", "output", "window_len", "conv_filters", "dense_units", "lrelu_slope",
                            "dropout_rate", "seed"})
        if (!kv.count(key)) throw FormatError(std::string("model header lacks '") + key + "'");
    m.id = kv["id"];
    spec.input_signals = detail::split_commas(kv["inputs"]);
    spec.output_signal = kv["output"];
    spec.window_len = detail::parse_number<std::size_t>("window_len", kv["window_len"]);
    spec.conv_filters = detail::parse_number<std::size_t>("conv_filters", kv["conv_filters"]);
    spec.dense_units = detail::parse_number<std::size_t>("dense_units", kv["dense_units"]);
    spec.lrelu_slope = detail::parse_number<double>("lrelu_slope", kv["lrelu_slope"]);
    spec.dropout_rate = detail::parse_number<double>("dropout_rate", kv["dropout_rate"]);
    m.params.seed = detail::parse_number<std::uint64_t>("seed", kv["seed"]);
    try {
        spec.validate();
    } catch (const InvalidArgument &e) {
        throw FormatError(std::string("model header: ") + e.what());
    }

    const ParamLayout layout(spec);
    m.params.weights.assign(layout.total(), 0.0);
    const auto count = binary::get<std::uint32_t>(is);
    if (count != layout.tensors().size())
        throw FormatError("model has " + std::to_string(count) + " tensors, spec implies " +
                          std::to_string(layout.tensors().size()));
    std::vector<bool> seen(layout.tensors().size(), false);
    for (std::uint32_t k = 0; k < count; ++k) {
        const auto len = binary::get<std::uint16_t>(is);
        std::string name(len, '\0');
        if (!is.read(name.data(), len)) throw FormatError("truncated tensor name");
        const auto rank = binary::get<std::uint8_t>(is);
        std::vector<std::size_t> dims(rank);
        for (auto &d : dims) d = binary::get<std::uint32_t>(is);
        const TensorInfo *t = layout.find(name);
        if (!t) throw FormatError("unexpected tensor '" + name + "'");
        if (t->dims != dims) throw FormatError("tensor '" + name + "' has the wrong shape");
        const auto idx = static_cast<std::size_t>(t - layout.tensors().data());
        if (seen[idx]) throw FormatError("tensor '" + name + "' appears twice");
        seen[idx] = true;
        for (std::size_t i = 0; i < t->size; ++i) m.params.weights[t->offset + i] = binary::get<float>(is);
    }
    if (!all_finite(m.params.weights)) throw FormatError("model weights contain non-finite values");
    return m;
}

inline void save_model(const std::filesystem::path &path, const ModelFile &m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    write_model(out, m);
    if (!out) throw Error("write failed for '" + path.string() + "'");
}

inline ModelFile load_model_file(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PathError(path.string(), "cannot open model");
    return read_model(in);
}

/// Weights rounded to what a model file stores.
inline ModelParams round_to_file_precision(ModelParams p) {
    for (double &w : p.weights) w = static_cast<float>(w);
    return p;
}

} // namespace sentinel
