#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "datasets.hpp"
#include "errors.hpp"
#include "runtime.hpp"

namespace sentinel {

// ---------------------------------------------------------------------------------------
// MAE

inline double mae(std::span<const double> predictions, std::span<const double> targets,
                  std::optional<ScalingPair> scale = std::nullopt) {
    if (predictions.size() != targets.size()) throw ShapeError("batch", "predictions and targets differ in length");
    if (predictions.empty()) throw InvalidArgument("mae of an empty set");
    double sum = 0.0;
    const double k = scale ? std::abs(scale->span()) : 1.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) sum += std::abs(targets[i] - predictions[i]) * k;
    return sum / static_cast<double>(predictions.size());
}

struct MaeRow {
    std::string model;
    std::size_t n = 0;
    double mae = 0.0;
    /// Standard deviation of the absolute errors.
    double abs_error_std = 0.0;
    double mae_original = 0.0;
};

inline MaeRow mae_row(const std::string &model, std::span<const double> predictions, std::span<const double> targets,
                      const ScalingPair &scale) {
    MaeRow row{model, predictions.size(), mae(predictions, targets), 0.0, mae(predictions, targets, scale)};
    double ss = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const double d = std::abs(targets[i] - predictions[i]) - row.mae;
        ss += d * d;
    }
    row.abs_error_std = predictions.size() > 1 ? std::sqrt(ss / static_cast<double>(predictions.size() - 1)) : 0.0;
    return row;
}

/// Both readings of "MAE +/- spread" over several models.
struct MaeAggregate {
    double pooled_mae = 0.0;
    double pooled_abs_error_std = 0.0;
    double per_model_mean = 0.0;
    double per_model_std = 0.0;
    std::size_t n = 0;
};

inline MaeAggregate aggregate_mae(const std::vector<MaeRow> &rows) {
    MaeAggregate a;
    if (rows.empty()) return a;
    double sum = 0.0, ss = 0.0;
    for (const auto &r : rows) {
        a.n += r.n;
        sum += r.mae * static_cast<double>(r.n);
        // sum of squared absolute errors recovered from mean and std
        ss += r.abs_error_std * r.abs_error_std * static_cast<double>(r.n > 0 ? r.n - 1 : 0) +
              r.mae * r.mae * static_cast<double>(r.n);
    }
    const double N = static_cast<double>(a.n);
    a.pooled_mae = sum / N;
    a.pooled_abs_error_std = a.n > 1 ? std::sqrt(std::max(0.0, (ss - N * a.pooled_mae * a.pooled_mae) / (N - 1))) : 0.0;
    double m = 0.0;
    for (const auto &r : rows) m += r.mae;
    a.per_model_mean = m / static_cast<double>(rows.size());
    double v = 0.0;
    for (const auto &r : rows) v += (r.mae - a.per_model_mean) * (r.mae - a.per_model_mean);
    a.per_model_std = rows.size() > 1 ? std::sqrt(v / static_cast<double>(rows.size() - 1)) : 0.0;
    return a;
}

// ---------------------------------------------------------------------------------------
// Mann-Whitney U

struct UTestResult {
    double u_statistic = 0.0;
    double p_value = 1.0;
    double mean_first = 0.0;
    double mean_second = 0.0;
    std::size_t n1 = 0;
    std::size_t n2 = 0;
    double z = 0.0;
    bool exact = false;
    bool degenerate = false;
};

inline constexpr std::size_t kExactUTestMaxProduct = 400;

namespace detail {

/// Midranks of the pooled sample (first a, then b) and the tie term sum(t^3 - t).
inline std::pair<std::vector<double>, double> midranks(std::span<const double> a, std::span<const double> b) {
    const std::size_t N = a.size() + b.size();
    std::vector<std::pair<double, std::size_t>> all;
    all.reserve(N);
    for (std::size_t i = 0; i < a.size(); ++i) all.emplace_back(a[i], i);
    for (std::size_t i = 0; i < b.size(); ++i) all.emplace_back(b[i], a.size() + i);
    std::sort(all.begin(), all.end());
    std::vector<double> ranks(N);
    double ties = 0.0;
    for (std::size_t i = 0; i < N;) {
        std::size_t j = i;
        while (j < N && all[j].first == all[i].first) ++j;
        const double r = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) ranks[all[k].second] = r;
        const double t = static_cast<double>(j - i);
        ties += t * t * t - t;
        i = j;
    }
    return {ranks, ties};
}

/// Two-sided permutation p-value of the rank sum of a subset of size k, using doubled
/// midranks so every score is an integer.
inline double exact_rank_sum_p(const std::vector<double> &ranks, std::size_t k, double observed_sum) {
    std::vector<std::size_t> scores(ranks.size());
    for (std::size_t i = 0; i < ranks.size(); ++i) scores[i] = static_cast<std::size_t>(std::llround(2.0 * ranks[i]));
    std::vector<std::size_t> sorted = scores;
    std::sort(sorted.rbegin(), sorted.rend());
    std::size_t max_sum = 0;
    for (std::size_t i = 0; i < k; ++i) max_sum += sorted[i];
    // ways[j][s]: number of j-subsets with doubled-rank sum s, as a fraction to avoid overflow
    std::vector<std::vector<double>> ways(k + 1, std::vector<double>(max_sum + 1, 0.0));
    ways[0][0] = 1.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const std::size_t sc = scores[i];
        for (std::size_t j = std::min(k, i + 1); j >= 1; --j) {
            auto &dst = ways[j];
            const auto &src = ways[j - 1];
            for (std::size_t s = max_sum; s >= sc; --s) {
                dst[s] += src[s - sc];
                if (s == sc) break;
            }
        }
    }
    const auto obs = static_cast<std::size_t>(std::llround(2.0 * observed_sum));
    double all = 0.0, le = 0.0, ge = 0.0;
    for (std::size_t s = 0; s <= max_sum; ++s) {
        all += ways[k][s];
        if (s <= obs) le += ways[k][s];
        if (s >= obs) ge += ways[k][s];
    }
    return std::min(1.0, 2.0 * std::min(le, ge) / all);
}

} // namespace detail

/// U for the first sample: #(a > b) + 0.5 #(a == b). Normal approximation with tie and
/// continuity correction (two-sided); exact permutation distribution when n1 n2 <= 400.
inline UTestResult mann_whitney(std::span<const double> first, std::span<const double> second,
                                bool allow_exact = true) {
    if (first.empty() || second.empty()) throw InvalidArgument("Mann-Whitney test needs two non-empty samples");
    UTestResult r;
    r.n1 = first.size();
    r.n2 = second.size();
    r.mean_first = std::accumulate(first.begin(), first.end(), 0.0) / static_cast<double>(r.n1);
    r.mean_second = std::accumulate(second.begin(), second.end(), 0.0) / static_cast<double>(r.n2);
    const auto [ranks, ties] = detail::midranks(first, second);
    double r1 = 0.0;
    for (std::size_t i = 0; i < r.n1; ++i) r1 += ranks[i];
    const double n1 = static_cast<double>(r.n1), n2 = static_cast<double>(r.n2), N = n1 + n2;
    r.u_statistic = r1 - n1 * (n1 + 1.0) / 2.0;

    const double var = n1 * n2 / 12.0 * ((N + 1.0) - ties / (N * (N - 1.0)));
    if (!(var > 0.0)) {
        r.degenerate = true;
        r.p_value = 1.0;
        return r;
    }
    const double mu = n1 * n2 / 2.0;
    r.z = (std::abs(r.u_statistic - mu) - 0.5) / std::sqrt(var);
    if (allow_exact && r.n1 * r.n2 <= kExactUTestMaxProduct) {
        r.exact = true;
        // enumerate over the smaller sample
        if (r.n1 <= r.n2) {
            r.p_value = detail::exact_rank_sum_p(ranks, r.n1, r1);
        } else {
            double r2 = 0.0;
            for (std::size_t i = r.n1; i < ranks.size(); ++i) r2 += ranks[i];
            std::vector<double> swapped(ranks.begin() + static_cast<std::ptrdiff_t>(r.n1), ranks.end());
            swapped.insert(swapped.end(), ranks.begin(), ranks.begin() + static_cast<std::ptrdiff_t>(r.n1));
            r.p_value = detail::exact_rank_sum_p(swapped, r.n2, r2);
        }
        return r;
    }
    r.p_value = std::min(1.0, std::erfc(r.z / std::numbers::sqrt2));
    return r;
}

/// Normalised run position (0 at the first sample, 1 at the last) with the MSED there.
struct MsedSeries {
    std::vector<double> position;
    std::vector<double> msed;

    static MsedSeries from_values(std::vector<double> values) {
        MsedSeries s;
        const std::size_t n = values.size();
        for (std::size_t i = 0; i < n; ++i)
            s.position.push_back(n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0);
        s.msed = std::move(values);
        return s;
    }
};

/// Pools the first ceil(n/2) MSEDs of every run against the remaining ones.
inline UTestResult half_run_comparison(const std::vector<MsedSeries> &runs) {
    std::vector<double> first, second;
    for (const auto &run : runs) {
        const std::size_t n = run.msed.size();
        if (n < 2) throw InvalidArgument("half-run comparison needs runs of length >= 2");
        const std::size_t half = (n + 1) / 2;
        first.insert(first.end(), run.msed.begin(), run.msed.begin() + static_cast<std::ptrdiff_t>(half));
        second.insert(second.end(), run.msed.begin() + static_cast<std::ptrdiff_t>(half), run.msed.end());
    }
    return mann_whitney(first, second);
}

// ---------------------------------------------------------------------------------------
// MSED by run position

struct PositionBin {
    double lo = 0.0, hi = 0.0;
    std::size_t count = 0;
    double mean = std::numeric_limits<double>::quiet_NaN();
    double q1 = std::numeric_limits<double>::quiet_NaN();
    double median = std::numeric_limits<double>::quiet_NaN();
    double q3 = std::numeric_limits<double>::quiet_NaN();
};

inline std::vector<PositionBin> msed_by_position(const std::vector<MsedSeries> &runs, std::size_t bins) {
    if (bins < 2) throw InvalidArgument("msed_by_position needs at least 2 bins");
    std::vector<std::vector<double>> values(bins);
    std::size_t total = 0;
    for (const auto &run : runs) {
        if (run.position.size() != run.msed.size()) throw ShapeError("run", "positions and msed differ in length");
        for (std::size_t i = 0; i < run.msed.size(); ++i) {
            if (!std::isfinite(run.msed[i])) continue;
            const double p = std::clamp(run.position[i], 0.0, 1.0);
            const auto b = std::min(bins - 1, static_cast<std::size_t>(p * static_cast<double>(bins)));
            values[b].push_back(run.msed[i]);
            ++total;
        }
    }
    if (total == 0) throw InvalidArgument("msed_by_position on empty input");
    std::vector<PositionBin> out(bins);
    for (std::size_t b = 0; b < bins; ++b) {
        PositionBin &bin = out[b];
        bin.lo = static_cast<double>(b) / static_cast<double>(bins);
        bin.hi = static_cast<double>(b + 1) / static_cast<double>(bins);
        auto &v = values[b];
        bin.count = v.size();
        if (v.empty()) continue;
        std::sort(v.begin(), v.end());
        bin.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        bin.q1 = quantile_sorted(v, 0.25);
        bin.median = quantile_sorted(v, 0.5);
        bin.q3 = quantile_sorted(v, 0.75);
    }
    return out;
}

// ---------------------------------------------------------------------------------------
// Histograms

struct HistogramBin {
    double lo = 0.0, hi = 0.0;
    std::size_t count = 0;
};

/// Number of peaks whose topographic prominence is at least `min_prominence` times the
/// tallest bin. Plateaus count once.
inline std::size_t count_modes(const std::vector<HistogramBin> &bins, double min_prominence = 0.1) {
    const std::size_t n = bins.size();
    if (n == 0) return 0;
    std::vector<double> h(n);
    for (std::size_t i = 0; i < n; ++i) h[i] = static_cast<double>(bins[i].count);
    const double top = *std::max_element(h.begin(), h.end());
    if (top <= 0.0) return 0;
    std::size_t modes = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && h[j + 1] == h[i]) ++j;
        const bool left_lower = i == 0 || h[i - 1] < h[i];
        const bool right_lower = j + 1 == n || h[j + 1] < h[i];
        if (h[i] > 0.0 && left_lower && right_lower) {
            double left_min = h[i], right_min = h[i];
            for (std::size_t k = i; k-- > 0;) {
                if (h[k] > h[i]) break;
                left_min = std::min(left_min, h[k]);
            }
            bool left_higher = false;
            for (std::size_t k = i; k-- > 0;)
                if (h[k] > h[i]) left_higher = true;
            bool right_higher = false;
            for (std::size_t k = j + 1; k < n; ++k) {
                if (h[k] > h[i]) {
                    right_higher = true;
                    break;
                }
                right_min = std::min(right_min, h[k]);
            }
            // prominence: height above the higher of the two saddles toward taller peaks
            double base;
            if (left_higher && right_higher) base = std::max(left_min, right_min);
            else if (left_higher) base = left_min;
            else if (right_higher) base = right_min;
            else base = 0.0;
            if (h[i] - base >= min_prominence * top) ++modes;
        }
        i = j + 1;
    }
    return modes;
}

struct DurationSummary {
    std::size_t records = 0;
    std::size_t included = 0;
    double quantile_cut = 0.95;
    double mean_us = 0.0;
    double median_us = 0.0;
    double p95_us = 0.0;
    double max_us = 0.0;
    /// 1 / p95, in runs per second.
    double max_rate_hz = 0.0;
    std::vector<HistogramBin> bins;
    std::size_t modes = 0;
};

/// Duration histogram up to the `quantile_cut` quantile of non-rejected runs.
inline DurationSummary duration_histogram(const std::vector<RunRecord> &records, double quantile_cut = 0.95,
                                          std::size_t bins = 50) {
    if (!(quantile_cut > 0.0 && quantile_cut <= 1.0)) throw InvalidArgument("quantile_cut must lie in (0,1]");
    if (bins < 1) throw InvalidArgument("histogram needs at least one bin");
    std::vector<double> d;
    for (const auto &r : records)
        if (!r.rejected) d.push_back(r.duration_us);
    if (d.empty()) throw InvalidArgument("duration histogram of no runs");
    std::sort(d.begin(), d.end());
    DurationSummary s;
    s.records = d.size();
    s.quantile_cut = quantile_cut;
    s.mean_us = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
    s.median_us = quantile_sorted(d, 0.5);
    s.p95_us = quantile_sorted(d, 0.95);
    s.max_us = d.back();
    s.max_rate_hz = 1e6 / s.p95_us;
    const double cut = quantile_sorted(d, quantile_cut);
    const auto end = std::upper_bound(d.begin(), d.end(), cut);
    s.included = static_cast<std::size_t>(end - d.begin());
    const double lo = d.front();
    if (cut <= lo) {
        s.bins.push_back({lo, lo, s.included});
    } else {
        const double w = (cut - lo) / static_cast<double>(bins);
        s.bins.resize(bins);
        for (std::size_t b = 0; b < bins; ++b) s.bins[b] = {lo + w * b, lo + w * (b + 1), 0};
        for (auto it = d.begin(); it != end; ++it) {
            const auto b = std::min(bins - 1, static_cast<std::size_t>((*it - lo) / w));
            ++s.bins[b].count;
        }
    }
    s.modes = count_modes(s.bins);
    return s;
}

struct LogHistogram {
    std::vector<HistogramBin> bins;
    /// Values <= 0 (outside any log bin).
    std::size_t non_positive = 0;
};

/// Geometrically spaced bins between the smallest and largest positive value.
inline LogHistogram log_histogram(std::span<const double> values, std::size_t bins = 30) {
    if (bins < 1) throw InvalidArgument("histogram needs at least one bin");
    LogHistogram h;
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (double v : values) {
        if (!std::isfinite(v)) continue;
        if (v <= 0.0) {
            ++h.non_positive;
            continue;
        }
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (!(hi > 0.0)) return h;
    if (hi == lo) {
        h.bins.push_back({lo, hi, values.size() - h.non_positive});
        return h;
    }
    const double llo = std::log10(lo), step = (std::log10(hi) - llo) / static_cast<double>(bins);
    for (std::size_t b = 0; b < bins; ++b)
        h.bins.push_back({std::pow(10.0, llo + step * b), std::pow(10.0, llo + step * (b + 1)), 0});
    for (double v : values) {
        if (!std::isfinite(v) || v <= 0.0) continue;
        const auto b = std::min(bins - 1, static_cast<std::size_t>((std::log10(v) - llo) / step));
        ++h.bins[b].count;
    }
    return h;
}

// ---------------------------------------------------------------------------------------
// Report emitters. Column names are stable.

namespace detail {
inline std::string g(double v, int digits = 9) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}
} // namespace detail

inline void write_mae_csv(std::ostream &os, const std::vector<MaeRow> &rows) {
    os << "model,n,mae_scaled,abs_error_std_scaled,mae_original\n";
    for (const auto &r : rows)
        os << r.model << ',' << r.n << ',' << detail::g(r.mae) << ',' << detail::g(r.abs_error_std) << ','
           << detail::g(r.mae_original) << '\n';
}

inline void write_msed_by_position_csv(std::ostream &os, const std::vector<PositionBin> &bins) {
    os << "bin,position_lo,position_hi,count,mean,q1,median,q3\n";
    for (std::size_t b = 0; b < bins.size(); ++b) {
        const auto &x = bins[b];
        os << b << ',' << detail::g(x.lo) << ',' << detail::g(x.hi) << ',' << x.count << ',' << detail::g(x.mean)
           << ',' << detail::g(x.q1) << ',' << detail::g(x.median) << ',' << detail::g(x.q3) << '\n';
    }
}

inline void write_utest_csv(std::ostream &os, const UTestResult &r) {
    os << "n1,n2,u_statistic,z,p_value,mean_first,mean_second,exact,degenerate\n"
       << r.n1 << ',' << r.n2 << ',' << detail::g(r.u_statistic, 17) << ',' << detail::g(r.z, 17) << ','
       << detail::g(r.p_value, 17) << ',' << detail::g(r.mean_first) << ',' << detail::g(r.mean_second) << ','
       << (r.exact ? 1 : 0) << ',' << (r.degenerate ? 1 : 0) << '\n';
}

inline void write_durations_csv(std::ostream &os, const DurationSummary &s) {
    os << "bin,duration_lo_us,duration_hi_us,count\n";
    for (std::size_t b = 0; b < s.bins.size(); ++b)
        os << b << ',' << detail::g(s.bins[b].lo) << ',' << detail::g(s.bins[b].hi) << ',' << s.bins[b].count << '\n';
}

inline void write_histogram_csv(std::ostream &os, const LogHistogram &h) {
    os << "bin,lo,hi,count\n";
    for (std::size_t b = 0; b < h.bins.size(); ++b)
        os << b << ',' << detail::g(h.bins[b].lo) << ',' << detail::g(h.bins[b].hi) << ',' << h.bins[b].count << '\n';
}

/// "key value" lines, sorted by key.
inline void write_summary(std::ostream &os, const std::map<std::string, std::string> &entries) {
    for (const auto &[k, v] : entries) os << k << ' ' << v << '\n';
}

} // namespace sentinel
