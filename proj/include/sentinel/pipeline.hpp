#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cmapss.hpp"
#include "datasets.hpp"
#include "evaluation.hpp"
#include "model_io.hpp"
#include "runtime.hpp"
#include "synthetic.hpp"
#include "training.hpp"

namespace sentinel {

/// Stable per-purpose seed: FNV-1a of the label mixed into the root seed with splitmix64.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view label) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : label) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::uint64_t z = root + 0x9e3779b97f4a7c15ULL * (h | 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// One model to train: an id and its input -> output map.
struct ModelTask {
    std::string id;
    std::vector<std::string> inputs;
    std::string output;
};

/// One model per output, all sharing the same inputs. Defaults to the three operating
/// settings predicting each of the 21 sensors.
inline std::vector<ModelTask> cmapss_tasks(std::vector<std::string> outputs = {},
                                           std::vector<std::string> inputs = {}) {
    if (inputs.empty()) inputs = {"op1", "op2", "op3"};
    if (outputs.empty()) outputs = cmapss_sensor_names();
    std::vector<ModelTask> tasks;
    for (auto &o : outputs) tasks.push_back({o, inputs, o});
    return tasks;
}

/// The four case-study maps over the synthetic channels, optionally filtered by output.
inline std::vector<ModelTask> case_study_tasks(const std::vector<std::string> &outputs = {}) {
    std::vector<ModelTask> tasks;
    for (auto &[in, out] : case_study_models())
        if (outputs.empty() || std::find(outputs.begin(), outputs.end(), out) != outputs.end())
            tasks.push_back({out, in, out});
    for (const auto &o : outputs)
        if (std::none_of(tasks.begin(), tasks.end(), [&](const ModelTask &t) { return t.output == o; }))
            throw MissingSignal(o);
    return tasks;
}

/// Generic tasks for a recorded stream: every output modelled from the given inputs.
inline std::vector<ModelTask> stream_tasks(const std::vector<std::string> &outputs,
                                           const std::vector<std::string> &inputs) {
    if (outputs.empty()) throw InvalidArgument("csv datasets need --outputs");
    if (inputs.empty()) throw InvalidArgument("csv datasets need --inputs");
    std::vector<ModelTask> tasks;
    for (const auto &o : outputs) tasks.push_back({o, inputs, o});
    return tasks;
}

/// Runs with a designated-test flag on each; the split plan is derived from them.
struct Dataset {
    std::string name;
    std::vector<RunSeries> runs;
    std::vector<std::string> warnings;

    const std::vector<std::string> &columns() const {
        if (runs.empty()) throw EmptySplit("dataset");
        return runs.front().columns;
    }
};

inline Dataset fd002_dataset(const std::filesystem::path &dir) {
    Fd002 fd = load_fd002(dir);
    Dataset d{"fd002", std::move(fd.runs), std::move(fd.warnings)};
    if (!fd.unit_count_matches())
        d.warnings.push_back("FD002 unit count " + std::to_string(fd.unit_count) + ", expected " +
                             std::to_string(kFd002UnitCount));
    return d;
}

/// Nominal flights for training plus a separate test stream carrying the requested faults.
inline Dataset synthetic_dataset(SyntheticConfig config) {
    std::vector<FaultSpec> faults = std::move(config.faults);
    config.faults.clear();
    Dataset d{"synth", {}, {}};
    const std::uint64_t root = config.seed;
    config.seed = derive_seed(root, "synth.train");
    SyntheticSeries train = generate_synthetic(config);
    train.series.source = "synthetic_nominal";
    d.runs.push_back(std::move(train.series));
    config.seed = derive_seed(root, "synth.test");
    config.faults = std::move(faults);
    SyntheticSeries test = generate_synthetic(config);
    test.series.source = "synthetic_test";
    test.series.unit = 2;
    test.series.designated_test = true;
    d.runs.push_back(std::move(test.series));
    return d;
}

/// Network, split and optimiser settings shared by every task of a pipeline run.
struct PipelineConfig {
    std::size_t window_len = 1;
    std::size_t conv_filters = 64;
    std::size_t dense_units = 64;
    double lrelu_slope = 0.3;
    double dropout_rate = 0.5;
    double fraction_of_run = 0.5;
    double val_ratio = 0.2;
    std::uint64_t seed = 0;
    /// total_steps == 0 means max_epochs full passes over each model's training set.
    TrainConfig train = [] {
        TrainConfig t;
        t.total_steps = 0;
        return t;
    }();
    std::size_t store_capacity = 50;
    std::size_t threads = 1;
    std::size_t position_bins = 10;
    std::size_t histogram_bins = 30;

    ModelSpec spec_for(const ModelTask &task) const {
        ModelSpec s;
        s.input_signals = task.inputs;
        s.output_signal = task.output;
        s.window_len = window_len;
        s.conv_filters = conv_filters;
        s.dense_units = dense_units;
        s.lrelu_slope = lrelu_slope;
        s.dropout_rate = dropout_rate;
        return s;
    }

    SplitPlan split(const Dataset &d) const {
        return cmapss_split(d.runs, fraction_of_run, val_ratio, derive_seed(seed, "split"));
    }

    /// key=value lines; replaying them reproduces the run.
    void describe(std::ostream &os) const {
        os << "window_len=" << window_len << "\n"
           << "conv_filters=" << conv_filters << "\n"
           << "dense_units=" << dense_units << "\n"
           << "lrelu_slope=" << detail::fmt_double(lrelu_slope) << "\n"
           << "dropout_rate=" << detail::fmt_double(dropout_rate) << "\n"
           << "fraction_of_run=" << detail::fmt_double(fraction_of_run) << "\n"
           << "val_ratio=" << detail::fmt_double(val_ratio) << "\n"
           << "seed=" << seed << "\n"
           << "batch_size=" << train.batch_size << "\n"
           << "learning_rate=" << detail::fmt_double(train.learning_rate) << "\n"
           << "min_learning_rate=" << detail::fmt_double(train.min_learning_rate) << "\n"
           << "total_steps=" << train.total_steps << "\n"
           << "warmup_proportion=" << detail::fmt_double(train.warmup_proportion) << "\n"
           << "patience=" << train.patience << "\n"
           << "max_epochs=" << train.max_epochs << "\n"
           << "stop_gradient_on_mean_input=" << (train.stop_gradient_on_mean_input ? 1 : 0) << "\n"
           << "store_capacity=" << store_capacity << "\n"
           << "threads=" << threads << "\n"
           << "position_bins=" << position_bins << "\n"
           << "histogram_bins=" << histogram_bins << "\n";
    }
};

struct TrainedModel {
    ModelFile file;
    TrainReport report;
    MaeRow validation;
};

using ProgressFn = std::function<void(const std::string &)>;

/// Validation MAE of a model (scaled and original units) on its validation samples.
inline MaeRow validation_mae(const ModelFile &m, const Dataset &d, const SplitPlan &plan) {
    LabelledSamples val = build_samples(d.runs, plan, Role::validation, m.params.spec, m.scaling);
    if (val.samples.empty()) throw EmptySplit("validation");
    std::vector<double> mu;
    for (const Prediction &p : predict_all(m.params, val.samples)) mu.push_back(p.mu);
    return mae_row(m.id, mu, val.samples.targets(), m.scaling.at(m.params.spec.output_signal));
}

/// Fits scaling on the training split, trains every task and scores it on validation.
/// The returned model files hold f32-rounded weights, as they will be read back.
inline std::vector<TrainedModel> train_models(const Dataset &d, const std::vector<ModelTask> &tasks,
                                              const PipelineConfig &config, const ProgressFn &progress = {}) {
    if (tasks.empty()) throw InvalidArgument("no models requested");
    const SplitPlan plan = config.split(d);
    std::vector<std::string> needed;
    for (const auto &t : tasks) {
        for (const auto &c : t.inputs) needed.push_back(c);
        needed.push_back(t.output);
    }
    std::sort(needed.begin(), needed.end());
    needed.erase(std::unique(needed.begin(), needed.end()), needed.end());
    const ScalingTable scaling = fit_scaling(training_rows(d.runs, plan), needed);

    std::vector<TrainedModel> out;
    for (const ModelTask &task : tasks) {
        const ModelSpec spec = config.spec_for(task);
        ScalingTable own;
        for (const auto &c : task.inputs) own[c] = scaling.at(c);
        own[task.output] = scaling.at(task.output);
        LabelledSamples tr = build_samples(d.runs, plan, Role::train, spec, own);
        LabelledSamples val = build_samples(d.runs, plan, Role::validation, spec, own);
        TrainConfig tc = config.train;
        tc.seed = derive_seed(config.seed, "train." + task.id);
        if (tr.samples.empty()) throw EmptySplit("training");
        if (tc.total_steps == 0)
            tc.total_steps = tc.max_epochs * ((tr.samples.size() + tc.batch_size - 1) / tc.batch_size);
        TrainResult r = train(spec, tr.samples, val.samples, tc);
        r.params.seed = tc.seed;
        TrainedModel tm{{task.id, round_to_file_precision(std::move(r.params)), std::move(own)}, std::move(r.report), {}};
        tm.validation = validation_mae(tm.file, d, plan);
        if (progress) {
            std::ostringstream msg;
            msg << "trained " << task.id << " params=" << tm.file.params.weights.size()
                << " epochs=" << tm.report.epochs_run << " best_epoch=" << tm.report.best_epoch
                << " val_nll=" << detail::g(tm.report.best_validation_nll)
                << " val_mae=" << detail::g(tm.validation.mae);
            progress(msg.str());
        }
        out.push_back(std::move(tm));
    }
    return out;
}

/// Everything the evaluate step produces.
struct EvaluationResult {
    std::vector<MaeRow> mae_rows;
    MaeAggregate mae;
    std::vector<MsedSeries> runs;
    UTestResult utest;
    std::vector<PositionBin> by_position;
    LogHistogram histogram;
    std::vector<ScoredWindow> stored;
    std::vector<RunRecord> records;
    EngineCounters counters;
    std::vector<std::string> columns;
};

/// Validation MAE per model, then every designated test run streamed through the engine
/// with a boundary between runs. Sample indices are global so stored windows stay
/// distinguishable across runs.
inline EvaluationResult evaluate_models(const Dataset &d, const std::vector<ModelFile> &models,
                                        const PipelineConfig &config) {
    if (models.empty()) throw InvalidArgument("no models to evaluate");
    EvaluationResult res;
    res.columns = d.columns();
    const SplitPlan plan = config.split(d);
    for (const auto &m : models) res.mae_rows.push_back(validation_mae(m, d, plan));
    res.mae = aggregate_mae(res.mae_rows);

    EngineConfig ec;
    ec.store_capacity = config.store_capacity;
    ec.threads = config.threads;
    ec.stream_id = d.name;
    Engine engine(res.columns, ec);
    for (const auto &m : models) engine.load(m);

    std::int64_t index = 0;
    for (const RunSeries &run : d.runs) {
        if (!run.designated_test) continue;
        if (run.columns != res.columns) throw InvalidArgument("runs disagree on column layout");
        engine.boundary();
        std::vector<double> msed;
        for (std::size_t i = 0; i < run.length(); ++i) {
            RunRecord rec = engine.tick(run.values.row(i), index++);
            if (std::isfinite(rec.msed)) msed.push_back(rec.msed);
            res.records.push_back(rec);
        }
        if (msed.size() >= 2) res.runs.push_back(MsedSeries::from_values(std::move(msed)));
    }
    if (res.runs.empty()) throw EmptySplit("test");

    res.utest = half_run_comparison(res.runs);
    res.by_position = msed_by_position(res.runs, config.position_bins);
    std::vector<double> all;
    for (const auto &r : res.runs) all.insert(all.end(), r.msed.begin(), r.msed.end());
    res.histogram = log_histogram(all, config.histogram_bins);
    res.stored = engine.drain();
    res.counters = engine.counters();
    return res;
}

inline std::map<std::string, std::string> summary_entries(const EvaluationResult &r) {
    using detail::g;
    std::size_t test_samples = 0;
    for (const auto &run : r.runs) test_samples += run.msed.size();
    return {
        {"models", std::to_string(r.mae_rows.size())},
        {"mae.pooled_scaled", g(r.mae.pooled_mae)},
        {"mae.pooled_abs_error_std_scaled", g(r.mae.pooled_abs_error_std)},
        {"mae.per_model_mean_scaled", g(r.mae.per_model_mean)},
        {"mae.per_model_std_scaled", g(r.mae.per_model_std)},
        {"mae.validation_samples", std::to_string(r.mae.n)},
        {"test.runs", std::to_string(r.runs.size())},
        {"test.scored_samples", std::to_string(test_samples)},
        {"msed.mean_first_half", g(r.utest.mean_first)},
        {"msed.mean_second_half", g(r.utest.mean_second)},
        {"msed.mean_ratio", g(r.utest.mean_second / r.utest.mean_first)},
        {"utest.u_statistic", g(r.utest.u_statistic)},
        {"utest.z", g(r.utest.z)},
        {"utest.p_value", g(r.utest.p_value)},
        {"store.windows", std::to_string(r.stored.size())},
        {"engine.ticks", std::to_string(r.counters.ticks)},
        {"engine.rejected", std::to_string(r.counters.rejected)},
        {"engine.numeric_faults", std::to_string(r.counters.numeric_faults)},
        {"engine.sigma_floor_hits", std::to_string(r.counters.sigma_floor_hits)},
    };
}

/// Files written by write_report_bundle whose content depends only on the inputs.
inline const std::vector<std::string> &deterministic_report_files() {
    static const std::vector<std::string> files{"mae_per_model.csv", "msed_by_position.csv", "utest.csv",
                                                "msed_histogram.csv", "stored_windows.txt", "summary.txt"};
    return files;
}

/// Writes the report bundle. durations.csv and timing.txt carry wall-clock data and are
/// the only files that differ between identical runs.
inline void write_report_bundle(const std::filesystem::path &dir, const EvaluationResult &r) {
    std::filesystem::create_directories(dir);
    auto open = [&](const char *name) {
        std::ofstream os(dir / name, std::ios::binary);
        if (!os) throw PathError((dir / name).string(), "cannot write");
        return os;
    };
    {
        auto os = open("mae_per_model.csv");
        write_mae_csv(os, r.mae_rows);
    }
    {
        auto os = open("msed_by_position.csv");
        write_msed_by_position_csv(os, r.by_position);
    }
    {
        auto os = open("utest.csv");
        write_utest_csv(os, r.utest);
    }
    {
        auto os = open("msed_histogram.csv");
        write_histogram_csv(os, r.histogram);
    }
    {
        auto os = open("stored_windows.txt");
        write_drain(os, r.stored, r.columns);
    }
    {
        auto os = open("summary.txt");
        write_summary(os, summary_entries(r));
    }
    const DurationSummary ds = duration_histogram(r.records);
    {
        auto os = open("durations.csv");
        write_durations_csv(os, ds);
    }
    {
        auto os = open("timing.txt");
        using detail::g;
        write_summary(os, {{"duration.mean_us", g(ds.mean_us)},
                           {"duration.median_us", g(ds.median_us)},
                           {"duration.p95_us", g(ds.p95_us)},
                           {"duration.max_us", g(ds.max_us)},
                           {"duration.max_rate_hz", g(ds.max_rate_hz)},
                           {"duration.modes", std::to_string(ds.modes)}});
    }
}

} // namespace sentinel
