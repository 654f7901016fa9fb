#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "cmapss.hpp"
#include "datasets.hpp"

namespace sentinel {

enum class FaultKind { spike, regime_shift, drift };

/// Injected fault. `magnitude` is in units of the channel's nominal standard deviation
/// over the generated series. `width` is the number of affected samples; 0 means "until
/// the end of the series" for regime shifts and drifts.
struct FaultSpec {
    FaultKind kind = FaultKind::spike;
    std::string channel;
    std::size_t onset = 0;
    std::size_t width = 1;
    double magnitude = 10.0;
};

enum class ChannelPreset { case_study, generic };

struct SyntheticConfig {
    ChannelPreset preset = ChannelPreset::case_study;
    /// Channel count for the generic preset.
    std::size_t generic_channels = 25;
    std::size_t length = 10'000;
    std::uint64_t seed = 0;
    /// Measurement noise as a fraction of each channel's nominal standard deviation.
    double noise = 0.01;
    /// Mean samples per flight of the latent flight profile.
    std::size_t flight_length = 600;
    std::vector<FaultSpec> faults;
};

struct SyntheticSeries {
    RunSeries series;
    /// 1 where any fault is active.
    std::vector<std::uint8_t> fault_mask;
    std::map<std::string, std::vector<std::uint8_t>> channel_masks;
    std::vector<double> channel_scale;
};

inline std::vector<std::string> case_study_channels() {
    return {"outside-temp", "outside-pressure", "N1", "P30", "T30", "TGT"};
}

/// Input -> output maps of the four in-service case-study models.
inline std::vector<std::pair<std::vector<std::string>, std::string>> case_study_models() {
    return {
        {{"outside-temp", "outside-pressure", "N1"}, "P30"},
        {{"outside-temp", "outside-pressure", "P30", "N1"}, "TGT"},
        {{"outside-temp", "outside-pressure", "P30", "N1"}, "T30"},
        {{"outside-temp", "outside-pressure", "P30"}, "N1"},
    };
}

namespace detail {

/// Piecewise-linear flight profile: altitude and throttle in [0,1] plus a per-flight
/// ambient temperature offset.
struct FlightProfile {
    std::vector<double> altitude;
    std::vector<double> throttle;
    std::vector<double> ambient;
};

inline FlightProfile flight_profile(std::size_t length, std::size_t flight_length, std::mt19937_64 &rng) {
    FlightProfile fp;
    fp.altitude.reserve(length);
    fp.throttle.reserve(length);
    fp.ambient.reserve(length);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> n(0.0, 1.0);
    const double L = static_cast<double>(std::max<std::size_t>(flight_length, 60));
    while (fp.altitude.size() < length) {
        const double scale = 0.7 + 0.6 * u(rng);
        const double cruise_alt = 0.6 + 0.4 * u(rng);
        const double cruise_thr = 0.65 + 0.15 * u(rng);
        const double day = 8.0 * n(rng);
        // (duration, altitude target, throttle target) knots
        struct Knot {
            double dur, alt, thr;
        };
        const Knot knots[] = {
            {0.05 * L * scale, 0.0, 0.15},  {0.02 * L * scale, 0.0, 1.0},         {0.15 * L * scale, cruise_alt, 0.9},
            {0.05 * L * scale, cruise_alt, cruise_thr}, {0.25 * L * scale, cruise_alt, cruise_thr + 0.05 * n(rng)},
            {0.10 * L * scale, cruise_alt + 0.05 * u(rng), cruise_thr},
            {0.20 * L * scale, 0.05, 0.3},  {0.10 * L * scale, 0.0, 0.35},        {0.08 * L * scale, 0.0, 0.15},
        };
        double alt = 0.0, thr = 0.15;
        for (const Knot &k : knots) {
            const auto steps = std::max<std::size_t>(1, static_cast<std::size_t>(k.dur));
            for (std::size_t s = 1; s <= steps && fp.altitude.size() < length; ++s) {
                const double f = static_cast<double>(s) / static_cast<double>(steps);
                fp.altitude.push_back(std::clamp(alt + f * (k.alt - alt), 0.0, 1.0));
                fp.throttle.push_back(std::clamp(thr + f * (k.thr - thr), 0.0, 1.0));
                fp.ambient.push_back(day);
            }
            alt = k.alt;
            thr = k.thr;
        }
    }
    return fp;
}

inline std::vector<std::vector<double>> case_study_values(const FlightProfile &fp) {
    const std::size_t n = fp.altitude.size();
    std::vector<std::vector<double>> ch(6, std::vector<double>(n));
    double spool = fp.throttle.empty() ? 0.0 : fp.throttle[0];
    for (std::size_t t = 0; t < n; ++t) {
        spool += (fp.throttle[t] - spool) / 4.0; // shaft lag
        const double temp = 15.0 + fp.ambient[t] - 56.5 * fp.altitude[t];
        const double pres = 101.325 * std::exp(-1.45 * fp.altitude[t]);
        const double n1 = 22.0 + 75.0 * spool + 0.04 * (temp - 15.0);
        const double ratio = 1.0 + 0.0011 * n1 * n1;
        const double p30 = pres * ratio;
        const double t30 = (temp + 273.15) * std::pow(ratio, 0.2857) - 273.15;
        const double tgt = t30 + 180.0 + 4.5 * n1 + 0.8 * temp;
        ch[0][t] = temp;
        ch[1][t] = pres;
        ch[2][t] = n1;
        ch[3][t] = p30;
        ch[4][t] = t30;
        ch[5][t] = tgt;
    }
    return ch;
}

inline std::vector<std::vector<double>> generic_values(const FlightProfile &fp, std::size_t channels,
                                                       std::mt19937_64 &rng) {
    const std::size_t n = fp.altitude.size();
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<std::vector<double>> ch(channels, std::vector<double>(n));
    for (std::size_t c = 0; c < channels; ++c) {
        const double a = g(rng), b = g(rng), x = 0.5 * g(rng), d = 0.1 * g(rng), off = 10.0 * g(rng);
        double lag = 0.0;
        const double tau = 1.0 + static_cast<double>(c % 5);
        for (std::size_t t = 0; t < n; ++t) {
            lag += (fp.throttle[t] - lag) / tau;
            ch[c][t] = off + a * fp.altitude[t] + b * lag + x * fp.altitude[t] * lag + d * fp.ambient[t];
        }
    }
    return ch;
}

inline double stddev(const std::vector<double> &v) {
    if (v.size() < 2) return 0.0;
    double m = 0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

} // namespace detail

/// Correlated channels driven by a latent flight profile, with injected faults and the
/// ground-truth fault mask.
inline SyntheticSeries generate_synthetic(const SyntheticConfig &config) {
    std::mt19937_64 rng(config.seed);
    const detail::FlightProfile fp = detail::flight_profile(config.length, config.flight_length, rng);

    std::vector<std::string> names;
    std::vector<std::vector<double>> ch;
    if (config.preset == ChannelPreset::case_study) {
        names = case_study_channels();
        ch = detail::case_study_values(fp);
    } else {
        for (std::size_t c = 0; c < config.generic_channels; ++c) names.push_back("c" + std::to_string(c));
        ch = detail::generic_values(fp, config.generic_channels, rng);
    }

    SyntheticSeries out;
    const std::size_t n = config.length;
    out.fault_mask.assign(n, 0);
    for (const auto &name : names) out.channel_masks[name].assign(n, 0);
    for (const auto &c : ch) out.channel_scale.push_back(detail::stddev(c));

    // faults: validate placement and overlap before touching data
    for (const FaultSpec &f : config.faults) {
        auto it = std::find(names.begin(), names.end(), f.channel);
        if (it == names.end()) throw MissingSignal(f.channel);
        if (f.onset >= n) throw InvalidArgument("fault onset beyond series length");
        const std::size_t stop = f.width == 0 ? n : f.onset + f.width;
        if (f.kind == FaultKind::spike && f.width == 0) throw InvalidArgument("spike width must be >= 1");
        if (stop > n) throw InvalidArgument("fault window extends past series end");
        auto &mask = out.channel_masks[f.channel];
        for (std::size_t t = f.onset; t < stop; ++t) {
            if (mask[t]) throw InvalidArgument("overlapping faults on channel '" + f.channel + "'");
            mask[t] = 1;
            out.fault_mask[t] = 1;
        }
    }

    std::normal_distribution<double> g(0.0, 1.0);
    for (const FaultSpec &f : config.faults) {
        const auto c = static_cast<std::size_t>(std::find(names.begin(), names.end(), f.channel) - names.begin());
        const double amp = f.magnitude * out.channel_scale[c];
        const std::size_t stop = f.width == 0 ? n : f.onset + f.width;
        switch (f.kind) {
        case FaultKind::spike:
            for (std::size_t t = f.onset; t < stop; ++t) ch[c][t] += amp;
            break;
        case FaultKind::regime_shift: {
            // an independent slow AR(1) disturbance breaks the channel's relationship to
            // its drivers
            double z = 0.0;
            const double phi = 0.98;
            const double innov = std::sqrt(1.0 - phi * phi);
            for (std::size_t t = f.onset; t < stop; ++t) {
                z = phi * z + innov * g(rng);
                ch[c][t] += amp * z;
            }
            break;
        }
        case FaultKind::drift: {
            const double ramp = static_cast<double>(stop - f.onset);
            for (std::size_t t = f.onset; t < stop; ++t)
                ch[c][t] += amp * static_cast<double>(t - f.onset + 1) / ramp;
            break;
        }
        }
    }

    if (config.noise > 0.0) {
        for (std::size_t c = 0; c < ch.size(); ++c) {
            const double sd = config.noise * out.channel_scale[c];
            for (double &v : ch[c]) v += sd * g(rng);
        }
    }

    RunSeries &s = out.series;
    s.unit = 1;
    s.source = "synthetic";
    s.columns = names;
    s.index.resize(n);
    s.values.resize(n, names.size());
    for (std::size_t t = 0; t < n; ++t) {
        s.index[t] = static_cast<std::int64_t>(t);
        for (std::size_t c = 0; c < names.size(); ++c) s.values(t, c) = ch[c][t];
    }
    return out;
}

struct CmapssSurrogateConfig {
    std::size_t pool_units = 40;
    std::size_t test_units = 40;
    std::uint64_t seed = 0;
};

/// Data in the C-MAPSS layout with FD002-like structure: six operating conditions,
/// sensors that depend on the condition plus an exponential degradation term. Pool runs
/// stop early (low degradation), test runs continue to failure. Used to exercise the
/// real-data pipeline when the public files are not present.
inline std::vector<RunSeries> generate_cmapss_surrogate(const CmapssSurrogateConfig &config) {
    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    static constexpr double conditions[6][3] = {{0.0, 0.0, 100.0},   {10.0, 0.25, 100.0}, {20.0, 0.70, 100.0},
                                                {25.0, 0.62, 60.0},  {35.0, 0.84, 100.0}, {42.0, 0.84, 100.0}};
    struct Sensor {
        double base, alt, mach, tra, cross, degrade, noise;
    };
    std::vector<Sensor> sensors;
    for (std::size_t k = 0; k < kCmapssSensors; ++k) {
        sensors.push_back({500.0 + 200.0 * u(rng), 10.0 * g(rng), 40.0 * g(rng), 2.0 * g(rng), 0.5 * g(rng),
                           (0.5 + u(rng)) * (g(rng) > 0 ? 1.0 : -1.0), 0.2 + 0.3 * u(rng)});
    }
    const auto names = cmapss_signal_names();
    std::vector<RunSeries> runs;
    auto make_run = [&](std::int64_t unit, bool test) {
        const auto life = static_cast<std::size_t>(130 + u(rng) * 230);
        const std::size_t len = test ? life : static_cast<std::size_t>(life * (0.25 + 0.45 * u(rng)));
        const double wear = 0.02 + 0.03 * u(rng);
        RunSeries run;
        run.unit = unit;
        run.source = test ? "surrogate_run_to_failure" : "surrogate_partial";
        run.designated_test = test;
        run.columns = names;
        run.values.resize(len, names.size());
        for (std::size_t i = 0; i < len; ++i) {
            run.index.push_back(static_cast<std::int64_t>(i + 1));
            const auto &c = conditions[rng() % 6];
            const double alt = c[0] + 0.002 * g(rng), mach = c[1] + 0.0003 * g(rng), tra = c[2];
            const double health = 8.0 * std::exp(wear * (static_cast<double>(i) - static_cast<double>(life)));
            run.values(i, 0) = alt;
            run.values(i, 1) = mach;
            run.values(i, 2) = tra;
            for (std::size_t k = 0; k < kCmapssSensors; ++k) {
                const Sensor &s = sensors[k];
                run.values(i, 3 + k) = s.base + s.alt * alt / 42.0 + s.mach * mach + s.tra * tra / 100.0 +
                                       s.cross * alt * mach + s.degrade * s.noise * health + s.noise * g(rng);
            }
        }
        return run;
    };
    std::int64_t unit = 1;
    for (std::size_t r = 0; r < config.pool_units; ++r) runs.push_back(make_run(unit++, false));
    unit = 1;
    for (std::size_t r = 0; r < config.test_units; ++r) runs.push_back(make_run(unit++, true));
    return runs;
}

} // namespace sentinel
