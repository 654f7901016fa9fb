#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "matrix.hpp"
#include "network.hpp"
#include "training.hpp"

namespace sentinel {

/// One engine run (C-MAPSS) or one recorded stream: named columns sampled at increasing
/// indices.
struct RunSeries {
    std::int64_t unit = 0;
    std::string source;
    bool designated_test = false;
    std::vector<std::string> columns;
    std::vector<std::int64_t> index;
    Matrix values;

    std::size_t length() const noexcept { return index.size(); }

    std::size_t column(const std::string &name) const {
        auto it = std::find(columns.begin(), columns.end(), name);
        if (it == columns.end()) throw MissingSignal(name);
        return static_cast<std::size_t>(it - columns.begin());
    }
};

/// Empirical quantile of already sorted data, linear interpolation between order
/// statistics: position h = (n - 1) p, value = x[floor h] + (h - floor h)(x[floor h + 1] - x[floor h]).
inline double quantile_sorted(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw InvalidArgument("quantile of empty data");
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("quantile level outside [0,1]");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline double quantile(std::vector<double> values, double p) {
    std::sort(values.begin(), values.end());
    return quantile_sorted(values, p);
}

/// Affine map sending the 2% training quantile to 0 and the 98% quantile to 1.
struct ScalingPair {
    double q_low = 0.0;
    double q_high = 1.0;

    double scale(double x) const noexcept { return (x - q_low) / (q_high - q_low); }
    double unscale(double s) const noexcept { return q_low + s * (q_high - q_low); }
    double span() const noexcept { return q_high - q_low; }

    bool operator==(const ScalingPair &) const = default;
};

using ScalingTable = std::map<std::string, ScalingPair>;

inline constexpr double kScaleLowQuantile = 0.02;
inline constexpr double kScaleHighQuantile = 0.98;
inline constexpr std::size_t kMinScalingSamples = 50;

/// Text form: one "name q_low q_high" line per signal.
inline void write_scaling_table(std::ostream &os, const ScalingTable &table) {
    for (const auto &[name, pair] : table) {
        char buf[80];
        std::snprintf(buf, sizeof buf, " %.17g %.17g\n", pair.q_low, pair.q_high);
        os << name << buf;
    }
}

inline ScalingTable read_scaling_table(std::istream &is) {
    ScalingTable table;
    std::string line;
    std::size_t n = 0;
    while (std::getline(is, line)) {
        ++n;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string name;
        ScalingPair p;
        if (!(ls >> name >> p.q_low >> p.q_high)) throw ParseError(n, "expected 'name q_low q_high'");
        table[name] = p;
    }
    return table;
}

enum class Role : std::uint8_t { excluded, train, validation, test };

/// Assignment of every sample of every run to a split.
struct SplitPlan {
    double fraction_of_run = 0.5;
    double val_ratio = 0.0;
    std::uint64_t seed = 0;
    std::vector<std::vector<Role>> roles;

    std::size_t count(Role r) const {
        std::size_t n = 0;
        for (const auto &run : roles) n += static_cast<std::size_t>(std::count(run.begin(), run.end(), r));
        return n;
    }
};

/// Training pool = runs not designated as test. The first floor(fraction * n) samples of
/// each pool run are eligible; each eligible sample goes to validation with probability
/// val_ratio, otherwise to training. The rest of a pool run is excluded. Designated test
/// runs are test in full.
inline SplitPlan cmapss_split(const std::vector<RunSeries> &runs, double fraction_of_run, double val_ratio,
                              std::uint64_t seed) {
    if (!(fraction_of_run > 0.0 && fraction_of_run <= 1.0))
        throw InvalidArgument("fraction_of_run must lie in (0,1]");
    if (!(val_ratio >= 0.0 && val_ratio < 1.0)) throw InvalidArgument("val_ratio must lie in [0,1)");
    SplitPlan plan{fraction_of_run, val_ratio, seed, {}};
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (const RunSeries &run : runs) {
        std::vector<Role> roles(run.length(), Role::excluded);
        if (run.designated_test) {
            std::fill(roles.begin(), roles.end(), Role::test);
        } else {
            const auto eligible = static_cast<std::size_t>(
                std::floor(fraction_of_run * static_cast<double>(run.length()) + 1e-9));
            for (std::size_t i = 0; i < eligible; ++i) roles[i] = u(rng) < val_ratio ? Role::validation : Role::train;
        }
        plan.roles.push_back(std::move(roles));
    }
    if (plan.count(Role::train) == 0) throw EmptySplit("training");
    return plan;
}

/// Raw rows assigned to the training split. Only constructible from a SplitPlan, so
/// scaling can never be fitted on validation or test data.
class TrainingRows {
  public:
    const std::vector<std::string> &columns() const noexcept { return columns_; }
    const Matrix &values() const noexcept { return values_; }
    std::size_t size() const noexcept { return values_.rows(); }

    friend TrainingRows training_rows(const std::vector<RunSeries> &runs, const SplitPlan &plan);

  private:
    TrainingRows() = default;
    std::vector<std::string> columns_;
    Matrix values_;
};

inline TrainingRows training_rows(const std::vector<RunSeries> &runs, const SplitPlan &plan) {
    if (runs.size() != plan.roles.size()) throw InvalidArgument("split plan does not match runs");
    TrainingRows rows;
    if (runs.empty()) return rows;
    rows.columns_ = runs.front().columns;
    const std::size_t n = plan.count(Role::train);
    rows.values_.resize(n, rows.columns_.size());
    std::size_t r = 0;
    for (std::size_t k = 0; k < runs.size(); ++k) {
        if (runs[k].columns != rows.columns_) throw InvalidArgument("runs disagree on column layout");
        for (std::size_t i = 0; i < runs[k].length(); ++i) {
            if (plan.roles[k][i] != Role::train) continue;
            auto src = runs[k].values.row(i);
            std::copy(src.begin(), src.end(), rows.values_.row(r++).begin());
        }
    }
    return rows;
}

/// Per-signal 2%/98% quantiles over training rows. Restrict to `columns` when given.
inline ScalingTable fit_scaling(const TrainingRows &rows, const std::vector<std::string> &columns = {}) {
    const auto &names = rows.columns();
    std::vector<std::size_t> picks;
    if (columns.empty()) {
        for (std::size_t c = 0; c < names.size(); ++c) picks.push_back(c);
    } else {
        for (const auto &name : columns) {
            auto it = std::find(names.begin(), names.end(), name);
            if (it == names.end()) throw MissingSignal(name);
            picks.push_back(static_cast<std::size_t>(it - names.begin()));
        }
    }
    ScalingTable table;
    std::vector<double> col(rows.size());
    for (std::size_t c : picks) {
        std::size_t n = 0;
        for (std::size_t r = 0; r < rows.size(); ++r) {
            const double v = rows.values()(r, c);
            if (std::isfinite(v)) col[n++] = v;
        }
        if (n < kMinScalingSamples)
            throw InvalidArgument("signal '" + names[c] + "' has " + std::to_string(n) + " training samples, need " +
                                  std::to_string(kMinScalingSamples));
        std::sort(col.begin(), col.begin() + static_cast<std::ptrdiff_t>(n));
        std::span<const double> sorted(col.data(), n);
        ScalingPair p{quantile_sorted(sorted, kScaleLowQuantile), quantile_sorted(sorted, kScaleHighQuantile)};
        if (!(p.q_high > p.q_low)) throw ConstantSignal(names[c]);
        table[names[c]] = p;
    }
    return table;
}

inline std::vector<double> apply_scaling(std::span<const double> sample, const std::vector<std::string> &columns,
                                         const ScalingTable &table) {
    if (sample.size() != columns.size()) throw ShapeError("signals", "sample width differs from column list");
    std::vector<double> out(sample.size());
    for (std::size_t c = 0; c < columns.size(); ++c) {
        auto it = table.find(columns[c]);
        if (it == table.end()) throw MissingSignal(columns[c]);
        out[c] = it->second.scale(sample[c]);
    }
    return out;
}

/// Where a sample in a SampleSet came from.
struct SampleOrigin {
    std::size_t run = 0;
    std::size_t position = 0;
};

struct LabelledSamples {
    SampleSet samples;
    std::vector<SampleOrigin> origins;
};

/// Scaled (window, target) pairs for a model, one per sample with the given role whose
/// full window history lies inside its run.
inline LabelledSamples build_samples(const std::vector<RunSeries> &runs, const SplitPlan &plan, Role role,
                                     const ModelSpec &spec, const ScalingTable &scaling) {
    spec.validate();
    LabelledSamples out{SampleSet(spec.window_len, spec.num_inputs()), {}};
    const std::size_t T = spec.window_len;
    const std::size_t S = spec.num_inputs();
    std::vector<double> window(T * S);
    for (std::size_t k = 0; k < runs.size(); ++k) {
        const RunSeries &run = runs[k];
        std::vector<std::size_t> cols;
        std::vector<ScalingPair> pairs;
        for (const auto &name : spec.input_signals) {
            cols.push_back(run.column(name));
            auto it = scaling.find(name);
            if (it == scaling.end()) throw MissingSignal(name);
            pairs.push_back(it->second);
        }
        const std::size_t out_col = run.column(spec.output_signal);
        auto out_it = scaling.find(spec.output_signal);
        if (out_it == scaling.end()) throw MissingSignal(spec.output_signal);
        for (std::size_t i = T - 1; i < run.length(); ++i) {
            if (plan.roles[k][i] != role) continue;
            bool finite = std::isfinite(run.values(i, out_col));
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t s = 0; s < S; ++s) {
                    const double v = run.values(i + 1 - T + t, cols[s]);
                    finite = finite && std::isfinite(v);
                    window[t * S + s] = pairs[s].scale(v);
                }
            if (!finite) continue;
            out.samples.add(window, out_it->second.scale(run.values(i, out_col)));
            out.origins.push_back({k, i});
        }
    }
    return out;
}

} // namespace sentinel
