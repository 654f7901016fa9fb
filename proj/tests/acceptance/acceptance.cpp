// Acceptance checks. Prints one "PASS|FAIL|SKIP <n> <name>: <details>" line per criterion.
// With --only N exits 0 (pass), 1 (fail) or 77 (skip) for that criterion alone.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sentinel/pipeline.hpp"
#include "support/gradcheck.hpp"
#include "support/utest_reference.hpp"

namespace fs = std::filesystem;
using namespace sentinel;

namespace {

enum class Status { pass, fail, skip };

struct Outcome {
    Status status;
    std::string detail;
};

std::string fmt(const char *f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

Outcome verdict(bool ok, std::string detail) { return {ok ? Status::pass : Status::fail, std::move(detail)}; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path work_dir() {
    fs::path p = SENTINEL_ACCEPTANCE_WORK;
    fs::create_directories(p);
    return p;
}

double pearson(const std::vector<double> &x, const std::vector<double> &y) {
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

// 1 ---------------------------------------------------------------------------------------

Outcome gradient_correctness() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(2024);
    double worst = 0.0;
    std::string worst_tensor;
    std::size_t refined = 0, checked = 0;
    const int nets = 12;
    for (int k = 0; k < nets; ++k) {
        ModelSpec spec = testing::random_tiny_spec(rng);
        ModelParams p = init_parameters(spec, rng());
        SampleSet set = testing::random_samples(spec, 4, rng);
        auto r = testing::check_gradients(p, set, false, std::nullopt);
        if (r.max_rel_error > worst) {
            worst = r.max_rel_error;
            worst_tensor = r.worst_tensor;
        }
        refined += r.kink_refined;
        checked += r.checked;
    }
    const double secs = seconds_since(t0);
    return verdict(worst < 1e-4 && secs < 60.0,
                   fmt("%d networks, %zu components, max_rel_error=%.3g (%s), kink_refined=%zu, %.1fs", nets, checked,
                       worst, worst_tensor.c_str(), refined, secs));
}

// 2 ---------------------------------------------------------------------------------------

Outcome nll_sanity() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> g(0.0, 1.0);
    auto make = [&](std::size_t n, std::vector<double> &sigma) {
        SampleSet s(1, 2);
        for (std::size_t i = 0; i < n; ++i) {
            const double a = u(rng), b = u(rng), xbar = (a + b) / 2;
            const double sd = 0.05 + 0.2 * xbar;
            const double w[2] = {a, b};
            s.add(w, std::sin(2 * std::numbers::pi * xbar) + sd * g(rng));
            sigma.push_back(sd);
        }
        return s;
    };
    std::vector<double> unused, truth;
    const SampleSet train_set = make(6000, unused), val_set = make(2000, truth);

    ModelSpec spec;
    spec.input_signals = {"a", "b"};
    spec.output_signal = "y";
    spec.conv_filters = 8;
    spec.dense_units = 32;
    spec.dropout_rate = 0.0;
    TrainConfig cfg;
    cfg.batch_size = 64;
    cfg.learning_rate = 3e-3;
    cfg.min_learning_rate = 1e-4;
    cfg.total_steps = 30000;
    cfg.max_epochs = 300;
    cfg.patience = 20;
    cfg.seed = 3;
    auto [params, report] = train(spec, train_set, val_set, cfg);

    std::vector<double> predicted;
    for (const auto &p : predict_all(params, val_set)) predicted.push_back(p.sigma);
    double entropy = 0;
    for (double s : truth) entropy += 0.5 * std::log(2 * std::numbers::pi * std::numbers::e * s * s);
    entropy /= static_cast<double>(truth.size());
    const double r = pearson(predicted, truth);
    const double gap = std::abs(report.best_validation_nll - entropy);
    const double secs = seconds_since(t0);
    return verdict(r > 0.8 && gap <= 0.05 && secs < 600.0,
                   fmt("pearson_r=%.4f, val_nll=%.4f, entropy=%.4f, gap=%.4f, epochs=%zu, %.1fs", r,
                       report.best_validation_nll, entropy, gap, report.epochs_run, secs));
}

// 3, 4 ------------------------------------------------------------------------------------

const char *fd002_dir() {
    const char *d = std::getenv("SENTINEL_FD002_DIR");
    if (d && fs::exists(fs::path(d) / "train_FD002.txt") && fs::exists(fs::path(d) / "test_FD002.txt")) return d;
    return nullptr;
}

PipelineConfig fd002_config() {
    PipelineConfig pc;
    pc.conv_filters = 64;
    pc.dense_units = 64;
    pc.window_len = 1;
    pc.seed = 1;
    pc.train.max_epochs = 30;
    pc.train.patience = 5;
    if (const char *e = std::getenv("SENTINEL_FD002_EPOCHS")) pc.train.max_epochs = std::stoul(e);
    return pc;
}

/// Trains the 21 sensor models once and caches them in the work directory.
std::vector<ModelFile> fd002_models(const Dataset &d, const PipelineConfig &pc) {
    std::ostringstream stamp;
    pc.describe(stamp);
    std::size_t rows = 0;
    for (const auto &r : d.runs) rows += r.length();
    stamp << "data=" << fs::absolute(fd002_dir()).string() << " units=" << d.runs.size() << " rows=" << rows << "\n";
    const fs::path dir = work_dir() / "fd002_models";
    const fs::path stamp_file = dir / "config.txt";
    const auto tasks = cmapss_tasks();
    std::vector<ModelFile> out;
    if (fs::exists(stamp_file)) {
        std::ifstream in(stamp_file);
        const std::string old((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        if (old == stamp.str()) {
            for (const auto &t : tasks) out.push_back(load_model_file(dir / (t.id + ".sntl")));
            return out;
        }
    }
    fs::create_directories(dir);
    for (auto &t : train_models(d, tasks, pc, [](const std::string &m) { std::cerr << m << std::endl; })) {
        save_model(dir / (t.file.id + ".sntl"), t.file);
        out.push_back(std::move(t.file));
    }
    std::ofstream(stamp_file) << stamp.str();
    return out;
}

Outcome fd002_quality() {
    const char *dir = fd002_dir();
    if (!dir) return {Status::skip, "FD002 files not found; set SENTINEL_FD002_DIR to the C-MAPSS directory"};
    const auto t0 = std::chrono::steady_clock::now();
    const Dataset d = fd002_dataset(dir);
    const PipelineConfig pc = fd002_config();
    const auto models = fd002_models(d, pc);
    const SplitPlan plan = pc.split(d);
    std::vector<MaeRow> rows;
    for (const auto &m : models) rows.push_back(validation_mae(m, d, plan));
    const MaeAggregate agg = aggregate_mae(rows);
    return verdict(agg.pooled_mae <= 0.06,
                   fmt("units=%zu, pooled_mae=%.4f +/- %.4f, per_model_mean=%.4f +/- %.4f, epochs<=%zu, %.0fs",
                       d.runs.size(), agg.pooled_mae, agg.pooled_abs_error_std, agg.per_model_mean,
                       agg.per_model_std, pc.train.max_epochs, seconds_since(t0)));
}

Outcome fd002_prioritisation() {
    const char *dir = fd002_dir();
    if (!dir) return {Status::skip, "FD002 files not found; set SENTINEL_FD002_DIR to the C-MAPSS directory"};
    const auto t0 = std::chrono::steady_clock::now();
    const Dataset d = fd002_dataset(dir);
    const PipelineConfig pc = fd002_config();
    const EvaluationResult r = evaluate_models(d, fd002_models(d, pc), pc);
    write_report_bundle(work_dir() / "fd002_report", r);
    const double ratio = r.utest.mean_second / r.utest.mean_first;
    return verdict(ratio > 1.5 && r.utest.p_value < 1e-6,
                   fmt("mean_first=%.4f, mean_second=%.4f, ratio=%.3f, p=%.3g, %.0fs", r.utest.mean_first,
                       r.utest.mean_second, ratio, r.utest.p_value, seconds_since(t0)));
}

// 5 ---------------------------------------------------------------------------------------

Outcome mann_whitney_oracle() {
    std::mt19937_64 rng(77);
    std::uniform_int_distribution<std::size_t> size(1, 100);
    std::size_t u_mismatch = 0;
    for (int k = 0; k < 1000; ++k) {
        const std::size_t n1 = size(rng), n2 = size(rng);
        // a coarse grid on half the instances forces heavy ties
        const bool coarse = k % 2 == 0;
        std::normal_distribution<double> g(0.0, 1.0);
        auto draw = [&](std::size_t n, double shift) {
            std::vector<double> v(n);
            for (auto &x : v) x = coarse ? std::round(2 * (g(rng) + shift)) : g(rng) + shift;
            return v;
        };
        const auto a = draw(n1, 0.0), b = draw(n2, k % 3 == 0 ? 0.5 : 0.0);
        if (mann_whitney(a, b).u_statistic != testing::brute_force_u(a, b)) ++u_mismatch;
    }

    const auto refs = testing::load_utest_reference(SENTINEL_TEST_DATA "/utest_reference.txt");
    std::size_t approx = 0, exact = 0;
    double worst = 0.0;
    for (const auto &ref : refs) {
        const bool asymptotic = ref.method == "asymptotic";
        const UTestResult r = mann_whitney(ref.first, ref.second, !asymptotic);
        if (r.u_statistic != ref.u) ++u_mismatch;
        worst = std::max(worst, std::abs(r.p_value - ref.p));
        ++(asymptotic ? approx : exact);
    }
    return verdict(u_mismatch == 0 && approx >= 1000 && worst <= 1e-9,
                   fmt("1000 random instances + %zu reference, U mismatches=%zu, reference p max |diff|=%.3g "
                       "(%zu approximation, %zu exact)",
                       refs.size(), u_mismatch, worst, approx, exact));
}

// 6 ---------------------------------------------------------------------------------------

Outcome store_oracle() {
    std::mt19937_64 rng(99);
    const std::size_t capacities[] = {1, 5, 50};
    std::size_t mismatches = 0, offers = 0;
    for (int k = 0; k < 1000; ++k) {
        const std::size_t K = capacities[k % 3];
        const std::size_t n = 1 + rng() % 10'000;
        std::vector<std::int64_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::int64_t{0});
        if (k % 4 == 1) std::shuffle(idx.begin(), idx.end(), rng);
        std::vector<std::pair<double, std::int64_t>> all;
        PriorityStore store(K);
        for (std::size_t i = 0; i < n; ++i) {
            // every other sequence draws from a small set so equal scores are common
            const double msed = k % 2 ? static_cast<double>(rng() % 8) : std::exponential_distribution<double>(1.0)(rng);
            ScoredWindow w;
            w.msed = msed;
            w.end_sample_index = idx[i];
            store.offer(std::move(w));
            all.emplace_back(msed, idx[i]);
        }
        offers += n;
        std::sort(all.begin(), all.end(), [](const auto &a, const auto &b) {
            return a.first > b.first || (a.first == b.first && a.second < b.second);
        });
        all.resize(std::min(K, all.size()));
        std::vector<std::pair<double, std::int64_t>> got;
        for (const auto &w : store.drain()) got.emplace_back(w.msed, w.end_sample_index);
        if (got != all) ++mismatches;
    }
    return verdict(mismatches == 0, fmt("1000 sequences, %zu offers, mismatches=%zu", offers, mismatches));
}

// 7 ---------------------------------------------------------------------------------------

Outcome drop_in_invariance() {
    SyntheticConfig sc;
    sc.preset = ChannelPreset::generic;
    sc.generic_channels = 8;
    sc.length = 10'000;
    sc.seed = 7;
    const RunSeries stream = generate_synthetic(sc).series;
    const auto &cols = stream.columns;

    auto model = [&](const std::string &id, std::vector<std::string> in, const std::string &out, std::size_t T,
                     bool rounded) {
        ModelSpec spec;
        spec.input_signals = std::move(in);
        spec.output_signal = out;
        spec.window_len = T;
        spec.conv_filters = 8;
        spec.dense_units = 8;
        ModelParams p = init_parameters(spec, derive_seed(3, id));
        ModelFile m{id, rounded ? round_to_file_precision(p) : p, {}};
        for (const auto &c : cols) m.scaling[c] = {-20.0, 20.0};
        return m;
    };
    const std::vector<ModelFile> models{model("A", {"c0", "c1"}, "c2", 1, true), model("B", {"c3"}, "c4", 4, true),
                                        model("C", {"c5", "c6", "c0"}, "c7", 7, false)};

    struct Setup {
        std::vector<std::size_t> loaded;
        std::size_t threads;
        bool churn;
    };
    auto traces = [&](const Setup &s) {
        Engine eng(cols, {.threads = s.threads});
        for (std::size_t m : s.loaded) eng.load(models[m]);
        std::map<std::string, std::vector<double>> out;
        for (std::size_t i = 0; i < stream.length(); ++i) {
            if (s.churn && i % 1000 == 500) {
                // load and drop a throwaway model with a longer window
                ModelFile extra = model("X" + std::to_string(i), {"c1", "c2"}, "c3", 9, i % 2000 == 500);
                eng.load(extra);
                if (i > 2000) eng.unload(extra.id);
            }
            eng.tick(stream.values.row(i), static_cast<std::int64_t>(i));
            for (const auto &[id, sed] : eng.last_sed()) out[id].push_back(sed);
            for (std::size_t m : s.loaded)
                if (!eng.last_sed().count(models[m].id)) out[models[m].id].push_back(-1.0);
        }
        return out;
    };

    std::size_t compared = 0, differing = 0;
    std::vector<std::map<std::string, std::vector<double>>> alone;
    for (std::size_t m = 0; m < models.size(); ++m) alone.push_back(traces({{m}, 1, false}));
    const Setup others[] = {{{0, 1, 2}, 1, false}, {{2, 0, 1}, 4, false}, {{0, 1, 2}, 1, true}, {{1, 2, 0}, 3, true}};
    for (const auto &s : others) {
        const auto got = traces(s);
        for (std::size_t m = 0; m < models.size(); ++m) {
            const auto &id = models[m].id;
            ++compared;
            if (got.at(id) != alone[m].at(id)) ++differing;
        }
    }
    return verdict(differing == 0, fmt("%zu-sample stream, %zu model traces compared against solo runs, %zu differ",
                                       stream.length(), compared, differing));
}

// 8 ---------------------------------------------------------------------------------------

Outcome synthetic_fault_detection() {
    const auto t0 = std::chrono::steady_clock::now();
    SyntheticConfig sc;
    sc.length = 12'000;
    sc.seed = 11;
    sc.faults = {{FaultKind::spike, "P30", 8000, 3, 10.0}, {FaultKind::regime_shift, "P30", 8003, 0, 3.0}};
    const Dataset d = synthetic_dataset(sc);

    PipelineConfig pc;
    pc.conv_filters = 16;
    pc.dense_units = 32;
    pc.fraction_of_run = 1.0;
    pc.seed = 1;
    pc.train.batch_size = 64;
    pc.train.learning_rate = 3e-3;
    pc.train.min_learning_rate = 1e-4;
    pc.train.max_epochs = 20;
    std::vector<ModelFile> models;
    for (auto &t : train_models(d, case_study_tasks(), pc)) models.push_back(std::move(t.file));

    // ground truth for the test stream: regenerate it with the same seed
    SyntheticConfig tc = sc;
    tc.seed = derive_seed(sc.seed, "synth.test");
    const SyntheticSeries truth = generate_synthetic(tc);
    const RunSeries &run = d.runs.at(1);
    if (!(truth.series.values == run.values)) return {Status::fail, "test stream does not match its ground truth"};

    Engine eng(run.columns, {.store_capacity = 50});
    for (const auto &m : models) eng.load(m);
    std::vector<double> nominal;
    double fault_max = 0.0;
    for (std::size_t i = 0; i < run.length(); ++i) {
        const RunRecord r = eng.tick(run.values.row(i), static_cast<std::int64_t>(i));
        if (!std::isfinite(r.msed)) continue;
        if (truth.fault_mask[i]) fault_max = std::max(fault_max, r.msed);
        else nominal.push_back(r.msed);
    }
    const double p99 = quantile(nominal, 0.99);
    const auto stored = eng.drain();
    std::size_t overlapping = 0;
    for (const auto &w : stored) {
        const std::int64_t end = w.end_sample_index;
        const auto span = static_cast<std::int64_t>(w.window.raw ? w.window.raw->rows() : 1);
        bool hit = false;
        for (std::int64_t t = end - span + 1; t <= end; ++t) hit = hit || truth.fault_mask[static_cast<std::size_t>(t)];
        overlapping += hit;
    }
    const bool ok = fault_max > 10.0 * p99 && stored.size() == 50 && overlapping == stored.size();
    return verdict(ok, fmt("fault max msed=%.4g, nominal p99=%.4g (x%.1f), stored windows overlapping fault=%zu/%zu, "
                           "%.0fs",
                           fault_max, p99, fault_max / p99, overlapping, stored.size(), seconds_since(t0)));
}

// 9 ---------------------------------------------------------------------------------------

Outcome throughput() {
    SyntheticConfig sc;
    sc.preset = ChannelPreset::generic;
    sc.generic_channels = 25;
    sc.length = 100'000;
    sc.seed = 9;
    const RunSeries stream = generate_synthetic(sc).series;
    const auto &cols = stream.columns;

    Engine eng(cols, {.threads = 1});
    for (std::size_t k = 0; k < 20; ++k) {
        ModelSpec spec;
        spec.input_signals = {cols[k], cols[(k + 1) % 25], cols[(k + 2) % 25]};
        spec.output_signal = cols[(k + 3) % 25];
        ModelFile m{"m" + std::to_string(k), round_to_file_precision(init_parameters(spec, k + 1)), {}};
        for (const auto &c : cols) m.scaling[c] = {-10.0, 10.0};
        eng.load(std::move(m));
    }
    std::vector<RunRecord> records;
    records.reserve(stream.length());
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < stream.length(); ++i)
        records.push_back(eng.tick(stream.values.row(i), static_cast<std::int64_t>(i)));
    const double secs = seconds_since(t0);
    const double rate = static_cast<double>(records.size()) / secs;

    const DurationSummary ds = duration_histogram(records);
    const fs::path out = work_dir() / "throughput_durations.csv";
    std::ofstream os(out);
    write_durations_csv(os, ds);
    const bool all_ran = eng.counters().models_run == 20 * stream.length();
    return verdict(rate >= 500.0 && all_ran && !ds.bins.empty(),
                   fmt("20 models x %zu params, %zu ticks in %.1fs = %.0f ticks/s, median=%.0fus, p95=%.0fus, "
                       "max_rate=%.0fHz, histogram=%s",
                       count_parameters(eng.registry().entries().begin()->second->spec()), records.size(), secs, rate,
                       ds.median_us, ds.p95_us, ds.max_rate_hz, out.string().c_str()));
}

// 10 --------------------------------------------------------------------------------------

int run_cli(const std::string &args, const fs::path &log) {
    const std::string cmd = std::string("\"") + SENTINEL_CLI + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    return std::system(cmd.c_str());
}

std::string slurp(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism() {
    const fs::path dir = work_dir() / "determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string data = (dir / "data").string();
    if (run_cli("--seed 3 synth --cmapss-dir \"" + data + "\" --pool-units 24 --test-units 12", dir / "synth.log"))
        return {Status::fail, "synth failed, see " + (dir / "synth.log").string()};
    const std::string common = " --dataset cmapss --data-dir \"" + data + "\"";
    const std::string train = " train" + common +
                              " --outputs s2,s9,s14 --filters 16 --dense-units 16 --epochs 8 --batch-size 64";
    for (const char *run : {"1", "2"}) {
        const fs::path models = dir / (std::string("models") + run), report = dir / (std::string("report") + run);
        const std::string threads = run[0] == '1' ? "1" : "2";
        if (run_cli("--seed 5" + train + " --model-dir \"" + models.string() + "\"", dir / ("train" + std::string(run) + ".log")))
            return {Status::fail, "train failed, see " + (dir / ("train" + std::string(run) + ".log")).string()};
        if (run_cli("--seed 5 --threads " + threads + " evaluate" + common + " --models \"" + models.string() +
                        "\" --report-dir \"" + report.string() + "\"",
                    dir / ("evaluate" + std::string(run) + ".log")))
            return {Status::fail, "evaluate failed, see " + (dir / ("evaluate" + std::string(run) + ".log")).string()};
    }
    std::vector<std::string> files;
    for (const auto &e : fs::directory_iterator(dir / "models1")) files.push_back("models/" + e.path().filename().string());
    for (const auto &f : deterministic_report_files()) files.push_back("report/" + f);
    std::sort(files.begin(), files.end());
    std::size_t differing = 0;
    std::string first_diff;
    for (const auto &f : files) {
        const std::string sub = f.substr(0, f.find('/')), name = f.substr(f.find('/') + 1);
        const std::string a = slurp(dir / (sub + "1") / name), b = slurp(dir / (sub + "2") / name);
        if (a.empty() || a != b) {
            ++differing;
            if (first_diff.empty()) first_diff = f;
        }
    }
    return verdict(differing == 0, fmt("%zu model/report files compared across two train+evaluate runs, %zu differ%s%s",
                                       files.size(), differing, first_diff.empty() ? "" : ": ", first_diff.c_str()));
}

struct Criterion {
    int id;
    const char *name;
    std::function<Outcome()> check;
};

} // namespace

int main(int argc, char **argv) {
    const std::vector<Criterion> criteria{
        {1, "gradient correctness", gradient_correctness},
        {2, "nll sanity", nll_sanity},
        {3, "fd002 prediction quality", fd002_quality},
        {4, "fd002 prioritisation", fd002_prioritisation},
        {5, "mann-whitney oracle", mann_whitney_oracle},
        {6, "top-k store oracle", store_oracle},
        {7, "drop-in/drop-out invariance", drop_in_invariance},
        {8, "synthetic fault detection", synthetic_fault_detection},
        {9, "throughput", throughput},
        {10, "determinism", determinism},
    };
    int only = 0;
    for (int i = 1; i < argc; ++i)
        if (std::string(argv[i]) == "--only" && i + 1 < argc) only = std::atoi(argv[++i]);

    bool failed = false, skipped = false;
    for (const auto &c : criteria) {
        if (only && c.id != only) continue;
        Outcome o;
        try {
            o = c.check();
        } catch (const std::exception &e) {
            o = {Status::fail, std::string("exception: ") + e.what()};
        }
        const char *tag = o.status == Status::pass ? "PASS" : o.status == Status::fail ? "FAIL" : "SKIP";
        std::cout << tag << ' ' << c.id << ' ' << c.name << ": " << o.detail << std::endl;
        failed = failed || o.status == Status::fail;
        skipped = skipped || o.status == Status::skip;
    }
    if (failed) return 1;
    return only && skipped ? 77 : 0;
}
