#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sentinel/pipeline.hpp"
#include "sentinel/stream_io.hpp"

namespace fs = std::filesystem;
using namespace sentinel;

namespace {

constexpr int kExitError = 1;
constexpr int kExitPath = 2;

struct Options {
    std::string dataset = "cmapss";
    std::string data_dir;
    std::vector<std::string> outputs;
    std::vector<std::string> inputs;
    std::vector<std::string> models;
    std::string model_dir = "models";
    std::string report_dir = "report";
    std::string stream;
    std::string control_file;
    std::string out;
    std::string cmapss_dir;
    std::vector<std::string> faults;
    std::string preset = "case_study";
    std::size_t channels = 25;
    std::size_t length = 10'000;
    std::size_t flight_length = 600;
    double noise = 0.01;
    std::size_t pool_units = 40;
    std::size_t test_units = 40;
    std::size_t random_models = 20;
    std::size_t samples = 100'000;
    std::int64_t min_spacing = 0;
    std::size_t threads = 1;
    PipelineConfig pipeline;
};

std::size_t resolve_threads(std::size_t requested) {
    std::size_t n = std::max<std::size_t>(requested, 1);
    if (const char *env = std::getenv("SENTINEL_THREADS")) {
        try {
            const auto cap = static_cast<std::size_t>(std::stoul(env));
            if (cap > 0) n = std::min(n, cap);
        } catch (const std::exception &) {
            throw InvalidArgument(std::string("SENTINEL_THREADS is not a positive integer: ") + env);
        }
    }
    return n;
}

std::string join(const std::vector<std::string> &xs, char sep = ',') {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? std::string(1, sep) : "") + xs[i];
    return out;
}

FaultSpec parse_fault(const std::string &text) {
    std::vector<std::string> f;
    std::stringstream ss(text);
    for (std::string part; std::getline(ss, part, ':');) f.push_back(part);
    if (f.size() != 5) throw InvalidArgument("fault '" + text + "' is not kind:channel:onset:width:magnitude");
    FaultSpec spec;
    if (f[0] == "spike") spec.kind = FaultKind::spike;
    else if (f[0] == "regime_shift") spec.kind = FaultKind::regime_shift;
    else if (f[0] == "drift") spec.kind = FaultKind::drift;
    else throw InvalidArgument("unknown fault kind '" + f[0] + "'");
    try {
        spec.channel = f[1];
        spec.onset = std::stoul(f[2]);
        spec.width = std::stoul(f[3]);
        spec.magnitude = std::stod(f[4]);
    } catch (const std::logic_error &) {
        throw InvalidArgument("fault '" + text + "' has a malformed number");
    }
    return spec;
}

SyntheticConfig synthetic_config(const Options &o) {
    SyntheticConfig c;
    if (o.preset == "generic") c.preset = ChannelPreset::generic;
    c.generic_channels = o.channels;
    c.length = o.length;
    c.seed = o.pipeline.seed;
    c.noise = o.noise;
    c.flight_length = o.flight_length;
    for (const auto &f : o.faults) c.faults.push_back(parse_fault(f));
    return c;
}

std::vector<RunSeries> read_csv_runs(const fs::path &path, bool test) {
    std::ifstream in(path);
    if (!in) throw PathError(path.string(), "cannot open");
    auto runs = read_stream_csv(in, path.filename().string());
    for (auto &r : runs) r.designated_test = test;
    return runs;
}

Dataset load_dataset(const Options &o) {
    if (o.dataset == "synth") return synthetic_dataset(synthetic_config(o));
    if (o.data_dir.empty()) throw InvalidArgument("--data-dir is required for dataset '" + o.dataset + "'");
    if (!fs::is_directory(o.data_dir)) throw PathError(o.data_dir, "no data directory at");
    if (o.dataset == "cmapss") return fd002_dataset(o.data_dir);
    Dataset d{"csv", read_csv_runs(fs::path(o.data_dir) / "train.csv", false), {}};
    for (auto &r : read_csv_runs(fs::path(o.data_dir) / "test.csv", true)) d.runs.push_back(std::move(r));
    return d;
}

std::vector<ModelTask> tasks_for(const Options &o) {
    if (o.dataset == "cmapss") return cmapss_tasks(o.outputs, o.inputs);
    if (o.dataset == "synth") {
        if (!o.inputs.empty()) return stream_tasks(o.outputs, o.inputs);
        return case_study_tasks(o.outputs);
    }
    return stream_tasks(o.outputs, o.inputs);
}

/// Model files named on the command line; directories contribute their *.sntl files.
std::vector<fs::path> model_paths(const std::vector<std::string> &items) {
    std::vector<fs::path> out;
    for (const auto &item : items) {
        if (fs::is_directory(item)) {
            std::vector<fs::path> found;
            for (const auto &e : fs::directory_iterator(item))
                if (e.path().extension() == ".sntl") found.push_back(e.path());
            std::sort(found.begin(), found.end());
            out.insert(out.end(), found.begin(), found.end());
        } else if (fs::exists(item)) {
            out.emplace_back(item);
        } else {
            throw PathError(item, "no model file at");
        }
    }
    return out;
}

void print_config(const std::string &command, const Options &o, const std::vector<std::string> &keys) {
    std::map<std::string, std::string> v{
        {"dataset", o.dataset},
        {"data_dir", o.data_dir},
        {"outputs", join(o.outputs)},
        {"inputs", join(o.inputs)},
        {"models", join(o.models)},
        {"model_dir", o.model_dir},
        {"report_dir", o.report_dir},
        {"stream", o.stream},
        {"control_file", o.control_file},
        {"out", o.out},
        {"cmapss_dir", o.cmapss_dir},
        {"faults", join(o.faults, ';')},
        {"preset", o.preset},
        {"channels", std::to_string(o.channels)},
        {"length", std::to_string(o.length)},
        {"flight_length", std::to_string(o.flight_length)},
        {"noise", detail::fmt_double(o.noise)},
        {"pool_units", std::to_string(o.pool_units)},
        {"test_units", std::to_string(o.test_units)},
        {"random_models", std::to_string(o.random_models)},
        {"samples", std::to_string(o.samples)},
        {"min_spacing", std::to_string(o.min_spacing)},
        {"seed", std::to_string(o.pipeline.seed)},
    };
    std::cout << "# effective configuration: " << command << "\n";
    for (const auto &k : keys) std::cout << k << "=" << v.at(k) << "\n";
    if (command == "train" || command == "evaluate" || command == "run" || command == "bench")
        o.pipeline.describe(std::cout);
    std::cout << "# end configuration" << std::endl;
}

std::ofstream open_out(const fs::path &path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw PathError(path.string(), "cannot write");
    return os;
}

int cmd_train(const Options &o) {
    print_config("train", o, {"dataset", "data_dir", "outputs", "inputs", "model_dir", "faults", "preset", "length",
                              "flight_length", "noise"});
    const Dataset d = load_dataset(o);
    for (const auto &w : d.warnings) std::cerr << "warning: " << w << "\n";
    const auto tasks = tasks_for(o);
    const auto trained = train_models(d, tasks, o.pipeline, [](const std::string &m) { std::cout << m << std::endl; });
    fs::create_directories(o.model_dir);
    ScalingTable all;
    std::vector<MaeRow> rows;
    for (const auto &t : trained) {
        save_model(fs::path(o.model_dir) / (t.file.id + ".sntl"), t.file);
        auto log = open_out(fs::path(o.model_dir) / (t.file.id + ".log"));
        t.report.write_log(log);
        for (const auto &[k, p] : t.file.scaling) all[k] = p;
        rows.push_back(t.validation);
        std::cout << "model " << t.file.id << " parameters " << t.file.params.weights.size() << "\n";
    }
    auto sc = open_out(fs::path(o.model_dir) / "scaling.txt");
    write_scaling_table(sc, all);
    auto mae = open_out(fs::path(o.model_dir) / "validation_mae.csv");
    write_mae_csv(mae, rows);
    const MaeAggregate agg = aggregate_mae(rows);
    std::cout << "validation pooled_mae " << detail::g(agg.pooled_mae) << " +/- " << detail::g(agg.pooled_abs_error_std)
              << " per_model_mean " << detail::g(agg.per_model_mean) << " +/- " << detail::g(agg.per_model_std)
              << std::endl;
    return 0;
}

int cmd_evaluate(const Options &o) {
    print_config("evaluate", o, {"dataset", "data_dir", "outputs", "models", "report_dir", "faults", "preset",
                                 "length", "flight_length", "noise"});
    std::vector<ModelFile> models;
    for (const auto &p : model_paths(o.models.empty() ? std::vector<std::string>{o.model_dir} : o.models))
        models.push_back(load_model_file(p));
    for (const auto &out : o.outputs)
        if (std::none_of(models.begin(), models.end(),
                         [&](const ModelFile &m) { return m.params.spec.output_signal == out; }))
            throw InvalidArgument("no model predicts requested signal '" + out + "'");
    if (models.empty()) throw InvalidArgument("no models to evaluate");
    const Dataset d = load_dataset(o);
    for (const auto &w : d.warnings) std::cerr << "warning: " << w << "\n";
    const EvaluationResult r = evaluate_models(d, models, o.pipeline);
    write_report_bundle(o.report_dir, r);
    write_summary(std::cout, summary_entries(r));
    return 0;
}

/// Lines "load <path>", "unload <id>" or "drain", optionally prefixed by "@<index>" to
/// take effect before the sample with that index. New lines are picked up between ticks.
class ControlFile {
  public:
    struct Command {
        std::optional<std::int64_t> at;
        std::string verb;
        std::string arg;
    };

    explicit ControlFile(fs::path path) : path_(std::move(path)) {}

    /// Reads complete lines appended since the last poll.
    void poll() {
        if (path_.empty()) return;
        std::error_code ec;
        const auto size = fs::file_size(path_, ec);
        if (ec || size <= offset_) return;
        std::ifstream in(path_, std::ios::binary);
        in.seekg(static_cast<std::streamoff>(offset_));
        std::string chunk((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        const auto last = chunk.rfind('\n');
        if (last == std::string::npos) return;
        offset_ += last + 1;
        std::stringstream ss(chunk.substr(0, last));
        for (std::string line; std::getline(ss, line);) parse(line);
    }

    /// Commands due before the sample with `index`, in file order.
    std::vector<Command> due(std::int64_t index) {
        std::vector<Command> out;
        auto it = pending_.begin();
        while (it != pending_.end()) {
            if (!it->at || *it->at <= index) {
                out.push_back(*it);
                it = pending_.erase(it);
            } else {
                ++it;
            }
        }
        return out;
    }

    std::vector<Command> rest() { return std::exchange(pending_, {}); }

  private:
    void parse(std::string line) {
        if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
        std::stringstream ss(line);
        Command c;
        std::string word;
        if (!(ss >> word)) return;
        if (word[0] == '@') {
            try {
                c.at = std::stoll(word.substr(1));
            } catch (const std::logic_error &) {
                throw FormatError("control file: bad index '" + word + "'");
            }
            if (!(ss >> word)) throw FormatError("control file: index without a command");
        }
        c.verb = word;
        std::getline(ss >> std::ws, c.arg);
        if (c.verb != "load" && c.verb != "unload" && c.verb != "drain")
            throw FormatError("control file: unknown command '" + c.verb + "'");
        if (c.verb != "drain" && c.arg.empty()) throw FormatError("control file: '" + c.verb + "' needs an argument");
        pending_.push_back(std::move(c));
    }

    fs::path path_;
    std::uintmax_t offset_ = 0;
    std::vector<Command> pending_;
};

EngineConfig engine_config(const Options &o, const std::string &stream_id) {
    EngineConfig ec;
    ec.store_capacity = o.pipeline.store_capacity;
    ec.min_index_spacing = o.min_spacing;
    ec.threads = o.pipeline.threads;
    ec.stream_id = stream_id;
    return ec;
}

int cmd_run(const Options &o) {
    print_config("run", o, {"models", "stream", "control_file", "report_dir", "min_spacing"});
    if (o.stream.empty()) throw InvalidArgument("--stream is required");
    std::ifstream in(o.stream, std::ios::binary);
    if (!in) throw PathError(o.stream, "cannot open stream");
    char magic[4] = {};
    in.read(magic, 4);
    const bool is_binary = in.gcount() == 4 && std::equal(magic, magic + 4, binary::kStreamMagic);
    in.clear();
    in.seekg(0);
    std::unique_ptr<CsvStreamReader> csv;
    std::unique_ptr<BinaryStreamReader> bin;
    if (is_binary) bin = std::make_unique<BinaryStreamReader>(in);
    else csv = std::make_unique<CsvStreamReader>(in);
    const auto &columns = is_binary ? bin->columns() : csv->columns();
    auto next = [&] { return is_binary ? bin->next() : csv->next(); };

    Engine engine(columns, engine_config(o, fs::path(o.stream).filename().string()));
    for (const auto &p : model_paths(o.models)) {
        const std::string id = engine.load(p);
        std::cout << "loaded " << id << "\n";
    }

    const fs::path dir(o.report_dir);
    auto telemetry = open_out(dir / "telemetry.csv");
    write_telemetry_header(telemetry);
    ControlFile control(o.control_file);
    std::size_t drains = 0;
    auto apply = [&](const ControlFile::Command &c, std::int64_t index) {
        if (c.verb == "load") {
            const std::string id = engine.load(fs::path(c.arg));
            std::cout << "@" << index << " loaded " << id << std::endl;
        } else if (c.verb == "unload") {
            const bool ok = engine.unload(c.arg);
            std::cout << "@" << index << (ok ? " unloaded " : " not loaded: ") << c.arg << std::endl;
        } else {
            auto os = open_out(dir / ("drain_" + std::to_string(++drains) + ".txt"));
            write_drain(os, engine.drain(), columns);
        }
    };

    std::int64_t index = 0;
    std::vector<RunRecord> records;
    while (auto ev = next()) {
        control.poll();
        for (const auto &c : control.due(index)) apply(c, index);
        if (ev->boundary) {
            engine.boundary();
            continue;
        }
        const RunRecord rec = engine.tick(ev->values, index++);
        write_telemetry_row(telemetry, rec);
        records.push_back(rec);
    }
    control.poll();
    for (const auto &c : control.rest()) apply(c, index);

    auto drain = open_out(dir / "drain.txt");
    write_drain(drain, engine.drain(), columns);
    const auto &k = engine.counters();
    std::cout << "ticks " << k.ticks << "\nrejected " << k.rejected << "\nmodels_run " << k.models_run
              << "\nnumeric_faults " << k.numeric_faults << "\nsigma_floor_hits " << k.sigma_floor_hits
              << "\naccepted " << k.accepted << std::endl;
    if (!records.empty()) {
        const DurationSummary ds = duration_histogram(records);
        auto os = open_out(dir / "durations.csv");
        write_durations_csv(os, ds);
    }
    return 0;
}

/// FD002-sized (3 inputs, T=1) randomly initialised models over the generic channels.
std::vector<ModelFile> bench_models(const Options &o, const RunSeries &stream) {
    std::vector<ModelFile> models;
    const auto &cols = stream.columns;
    const std::size_t C = cols.size();
    if (C < 4) throw InvalidArgument("bench needs at least 4 signals");
    ScalingTable scaling;
    for (std::size_t c = 0; c < C; ++c) {
        std::vector<double> v(stream.values.rows());
        for (std::size_t r = 0; r < v.size(); ++r) v[r] = stream.values(r, c);
        scaling[cols[c]] = {quantile(v, kScaleLowQuantile), quantile(v, kScaleHighQuantile)};
    }
    for (std::size_t k = 0; k < o.random_models; ++k) {
        ModelTask t{"bench" + std::to_string(k), {cols[k % C], cols[(k + 1) % C], cols[(k + 2) % C]}, cols[(k + 3) % C]};
        const ModelSpec spec = o.pipeline.spec_for(t);
        ModelFile m{t.id, round_to_file_precision(init_parameters(spec, derive_seed(o.pipeline.seed, t.id))), {}};
        for (const auto &c : t.inputs) m.scaling[c] = scaling.at(c);
        m.scaling[t.output] = scaling.at(t.output);
        models.push_back(std::move(m));
    }
    return models;
}

int cmd_bench(const Options &o) {
    print_config("bench", o, {"models", "random_models", "channels", "samples", "report_dir"});
    SyntheticConfig sc;
    sc.preset = ChannelPreset::generic;
    sc.generic_channels = o.channels;
    sc.length = o.samples;
    sc.seed = derive_seed(o.pipeline.seed, "bench.stream");
    const RunSeries stream = generate_synthetic(sc).series;

    Engine engine(stream.columns, engine_config(o, "bench"));
    if (!o.models.empty()) {
        for (const auto &p : model_paths(o.models)) engine.load(p);
    } else {
        for (auto &m : bench_models(o, stream)) engine.load(std::move(m));
    }

    std::vector<RunRecord> records;
    records.reserve(stream.length());
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < stream.length(); ++i)
        records.push_back(engine.tick(stream.values.row(i), static_cast<std::int64_t>(i)));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const DurationSummary ds = duration_histogram(records);
    auto os = open_out(fs::path(o.report_dir) / "durations.csv");
    write_durations_csv(os, ds);
    auto tel = open_out(fs::path(o.report_dir) / "telemetry.csv");
    write_telemetry_header(tel);
    for (const auto &r : records) write_telemetry_row(tel, r);
    std::cout << "models " << engine.registry().size() << "\nticks " << records.size() << "\nmodels_run "
              << engine.counters().models_run << "\nticks_per_second " << detail::g(records.size() / secs, 6)
              << "\nmean_us " << detail::g(ds.mean_us, 6) << "\nmedian_us " << detail::g(ds.median_us, 6)
              << "\np95_us " << detail::g(ds.p95_us, 6) << "\nmax_rate_hz " << detail::g(ds.max_rate_hz, 6)
              << "\nmodes " << ds.modes << std::endl;
    return 0;
}

int cmd_inspect(const Options &o) {
    print_config("inspect", o, {"models"});
    if (o.models.empty()) throw InvalidArgument("--models is required");
    for (const auto &p : model_paths(o.models)) {
        const ModelFile m = load_model_file(p);
        std::cout << "# " << p.string() << "\n" << model_header_text(m);
        std::cout << "parameters=" << m.params.weights.size() << "\n";
        for (const auto &t : ParamLayout(m.params.spec).tensors()) {
            std::cout << "tensor " << t.name << " [";
            for (std::size_t i = 0; i < t.dims.size(); ++i) std::cout << (i ? "," : "") << t.dims[i];
            std::cout << "] " << t.size << "\n";
        }
    }
    return 0;
}

int cmd_synth(const Options &o) {
    print_config("synth", o, {"out", "cmapss_dir", "preset", "channels", "length", "flight_length", "noise", "faults",
                              "pool_units", "test_units", "seed"});
    if (o.out.empty() && o.cmapss_dir.empty()) throw InvalidArgument("synth needs --out or --cmapss-dir");
    if (!o.out.empty()) {
        const SyntheticSeries s = generate_synthetic(synthetic_config(o));
        auto os = open_out(o.out);
        if (fs::path(o.out).extension() == ".bin") {
            write_stream_binary_header(os, s.series.columns);
            for (std::size_t i = 0; i < s.series.length(); ++i) write_stream_binary_frame(os, s.series.values.row(i));
        } else {
            write_stream_csv(os, s.series);
        }
        auto mask = open_out(fs::path(o.out).concat(".mask.csv"));
        mask << "index,fault";
        for (const auto &c : s.series.columns) mask << ',' << c;
        mask << '\n';
        for (std::size_t i = 0; i < s.series.length(); ++i) {
            mask << i << ',' << int(s.fault_mask[i]);
            for (const auto &c : s.series.columns) mask << ',' << int(s.channel_masks.at(c)[i]);
            mask << '\n';
        }
        std::cout << "wrote " << s.series.length() << " samples to " << o.out << std::endl;
    }
    if (!o.cmapss_dir.empty()) {
        const auto runs = generate_cmapss_surrogate({o.pool_units, o.test_units, o.pipeline.seed});
        std::vector<RunSeries> pool, test;
        for (const auto &r : runs) (r.designated_test ? test : pool).push_back(r);
        // role swap: the low-degradation pool lives in test_FD002.txt
        auto a = open_out(fs::path(o.cmapss_dir) / "test_FD002.txt");
        write_cmapss(a, pool);
        auto b = open_out(fs::path(o.cmapss_dir) / "train_FD002.txt");
        write_cmapss(b, test);
        std::cout << "wrote " << pool.size() << " pool and " << test.size() << " test runs to " << o.cmapss_dir
                  << std::endl;
    }
    return 0;
}

int report_error(const std::exception &e, int code, const std::string &type, const std::string &path = {}) {
    nlohmann::json j{{"error", type}, {"message", e.what()}, {"exit_code", code}};
    if (!path.empty()) j["path"] = path;
    std::cerr << j.dump() << std::endl;
    return code;
}

void add_dataset_options(CLI::App *cmd, Options &o) {
    cmd->add_option("--dataset", o.dataset, "cmapss, synth or csv")
        ->check(CLI::IsMember({"cmapss", "synth", "csv"}))
        ->capture_default_str();
    cmd->add_option("--data-dir", o.data_dir, "FD002 directory (cmapss) or directory with train.csv/test.csv (csv)");
    cmd->add_option("--outputs", o.outputs, "output signals, one model each")->delimiter(',');
    cmd->add_option("--inputs", o.inputs, "input signals shared by every model")->delimiter(',');
    cmd->add_option("--fraction", o.pipeline.fraction_of_run, "leading fraction of each pool run used for training")
        ->capture_default_str();
    cmd->add_option("--val-ratio", o.pipeline.val_ratio, "share of eligible samples held out for validation")
        ->capture_default_str();
}

void add_synth_options(CLI::App *cmd, Options &o) {
    cmd->add_option("--preset", o.preset, "case_study or generic")
        ->check(CLI::IsMember({"case_study", "generic"}))
        ->capture_default_str();
    cmd->add_option("--channels", o.channels, "channel count for the generic preset")->capture_default_str();
    cmd->add_option("--length", o.length, "samples per synthetic series")->capture_default_str();
    cmd->add_option("--flight-length", o.flight_length, "nominal samples per flight")->capture_default_str();
    cmd->add_option("--noise", o.noise, "noise sd as a fraction of each channel's sd")->capture_default_str();
    cmd->add_option("--fault", o.faults, "kind:channel:onset:width:magnitude (width 0 = to end)");
}

void add_model_options(CLI::App *cmd, Options &o) {
    auto &p = o.pipeline;
    cmd->add_option("--window-len", p.window_len)->capture_default_str();
    cmd->add_option("--filters", p.conv_filters)->capture_default_str();
    cmd->add_option("--dense-units", p.dense_units)->capture_default_str();
    cmd->add_option("--dropout", p.dropout_rate)->capture_default_str();
    cmd->add_option("--lrelu-slope", p.lrelu_slope)->capture_default_str();
}

void add_train_options(CLI::App *cmd, Options &o) {
    auto &t = o.pipeline.train;
    cmd->add_option("--batch-size", t.batch_size)->capture_default_str();
    cmd->add_option("--learning-rate", t.learning_rate)->capture_default_str();
    cmd->add_option("--min-learning-rate", t.min_learning_rate)->capture_default_str();
    cmd->add_option("--total-steps", t.total_steps, "schedule length in steps (0: epochs x batches)")->capture_default_str();
    cmd->add_option("--warmup", t.warmup_proportion)->capture_default_str();
    cmd->add_option("--patience", t.patience)->capture_default_str();
    cmd->add_option("--epochs", t.max_epochs, "maximum epochs")->capture_default_str();
    cmd->add_flag("--stop-gradient", t.stop_gradient_on_mean_input,
                  "treat the mean input of the confidence head as a constant");
}

} // namespace

int main(int argc, char **argv) {
    Options o;
    CLI::App app{"sentinel: streaming anomaly prioritisation with heteroscedastic networks"};
    app.require_subcommand(1);
    app.add_option("--seed", o.pipeline.seed, "root seed for every random choice")->capture_default_str();
    app.add_option("--threads", o.threads, "worker threads (capped by SENTINEL_THREADS)")->capture_default_str();
    app.add_option("--store-capacity", o.pipeline.store_capacity, "windows kept by the priority store")
        ->capture_default_str();
    app.fallthrough();

    auto *train = app.add_subcommand("train", "train one model per output signal");
    add_dataset_options(train, o);
    add_synth_options(train, o);
    add_model_options(train, o);
    add_train_options(train, o);
    train->add_option("--model-dir", o.model_dir, "where model files and logs are written")->capture_default_str();

    auto *evaluate = app.add_subcommand("evaluate", "score models and write the report bundle");
    add_dataset_options(evaluate, o);
    add_synth_options(evaluate, o);
    evaluate->add_option("--models", o.models, "model files or directories (default: --model-dir)");
    evaluate->add_option("--model-dir", o.model_dir)->capture_default_str();
    evaluate->add_option("--report-dir", o.report_dir)->capture_default_str();

    auto *run = app.add_subcommand("run", "stream samples through the loaded models");
    run->add_option("--models", o.models, "model files or directories");
    run->add_option("--stream", o.stream, "stream CSV or binary frames")->required();
    run->add_option("--control-file", o.control_file, "load/unload commands polled between ticks");
    run->add_option("--report-dir", o.report_dir)->capture_default_str();
    run->add_option("--min-spacing", o.min_spacing, "minimum index distance between stored windows")
        ->capture_default_str();

    auto *bench = app.add_subcommand("bench", "replay a synthetic stream and histogram run durations");
    bench->add_option("--models", o.models, "model files or directories (default: random FD002-sized models)");
    bench->add_option("--random-models", o.random_models)->capture_default_str();
    bench->add_option("--channels", o.channels)->capture_default_str();
    bench->add_option("--samples", o.samples)->capture_default_str();
    bench->add_option("--report-dir", o.report_dir)->capture_default_str();
    add_model_options(bench, o);

    auto *inspect = app.add_subcommand("inspect", "print model headers and tensor shapes");
    inspect->add_option("--models", o.models)->required();

    auto *synth = app.add_subcommand("synth", "write synthetic streams or surrogate C-MAPSS files");
    synth->add_option("--out", o.out, "stream file (.csv or .bin)");
    synth->add_option("--cmapss-dir", o.cmapss_dir, "write surrogate FD002 files here");
    synth->add_option("--pool-units", o.pool_units)->capture_default_str();
    synth->add_option("--test-units", o.test_units)->capture_default_str();
    add_synth_options(synth, o);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        return app.exit(e);
    }

    try {
        o.pipeline.threads = resolve_threads(o.threads);
        if (*train) return cmd_train(o);
        if (*evaluate) return cmd_evaluate(o);
        if (*run) return cmd_run(o);
        if (*bench) return cmd_bench(o);
        if (*inspect) return cmd_inspect(o);
        if (*synth) return cmd_synth(o);
    } catch (const PathError &e) {
        return report_error(e, kExitPath, "PathError", e.path());
    } catch (const MissingSignal &e) {
        return report_error(e, kExitError, "MissingSignal");
    } catch (const EmptySplit &e) {
        return report_error(e, kExitError, "EmptySplit");
    } catch (const TrainingDiverged &e) {
        return report_error(e, kExitError, "TrainingDiverged");
    } catch (const FormatError &e) {
        return report_error(e, kExitError, "FormatError");
    } catch (const Error &e) {
        return report_error(e, kExitError, "Error");
    } catch (const std::exception &e) {
        return report_error(e, kExitError, "InternalError");
    }
    return kExitError;
}
