#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "datasets.hpp"
#include "model_io.hpp"
#include "network.hpp"

namespace sentinel {

inline constexpr double kSigmaSquaredFloor = 1e-12;

struct SedResult {
    double value = 0.0;
    bool floored = false;
};

/// Standardised Euclidean distance without the square root: (y - mu)^2 / sigma^2, with
/// sigma^2 floored at `floor`.
inline SedResult sed_checked(double y, const Prediction &p, double floor = kSigmaSquaredFloor) {
    const double var = std::exp(2.0 * p.alpha);
    const double r = y - p.mu;
    if (var < floor) return {r * r / floor, true};
    return {r * r / var, false};
}

inline double sed(double y, const Prediction &p) { return sed_checked(y, p).value; }

/// One loaded model bound to the columns of a stream.
struct RegistryEntry {
    ModelFile model;
    std::vector<std::size_t> input_columns;
    std::size_t output_column = 0;
    std::vector<ScalingPair> input_scaling;
    ScalingPair output_scaling;
    // Exact single-precision copy of the weights, empty if any weight would round.
    std::vector<float> weights32;

    const std::string &id() const noexcept { return model.id; }
    const ModelSpec &spec() const noexcept { return model.params.spec; }

    bool operator==(const RegistryEntry &) const = default;
};

/// Models keyed and iterated by id. Entries are immutable once loaded; loading or
/// unloading one never touches the others.
class ModelRegistry {
  public:
    explicit ModelRegistry(std::vector<std::string> stream_columns = {}) : columns_(std::move(stream_columns)) {}

    const std::vector<std::string> &stream_columns() const noexcept { return columns_; }

    const std::string &load(ModelFile model) {
        auto entry = std::make_shared<RegistryEntry>();
        const ModelSpec &spec = model.params.spec;
        spec.validate();
        if (model.params.weights.size() != count_parameters(spec))
            throw FormatError("model '" + model.id + "' weight count does not match its spec");
        auto bind = [&](const std::string &name) -> std::pair<std::size_t, ScalingPair> {
            auto it = std::find(columns_.begin(), columns_.end(), name);
            if (it == columns_.end()) throw MissingSignal(name);
            auto sc = model.scaling.find(name);
            if (sc == model.scaling.end()) throw FormatError("model '" + model.id + "' has no scaling for '" + name + "'");
            if (!(sc->second.q_high > sc->second.q_low))
                throw FormatError("model '" + model.id + "' has a degenerate scaling pair for '" + name + "'");
            return {static_cast<std::size_t>(it - columns_.begin()), sc->second};
        };
        for (const auto &name : spec.input_signals) {
            auto [col, pair] = bind(name);
            entry->input_columns.push_back(col);
            entry->input_scaling.push_back(pair);
        }
        std::tie(entry->output_column, entry->output_scaling) = bind(spec.output_signal);
        if (entries_.count(model.id)) throw DuplicateModel(model.id);
        const std::string id = model.id;
        entry->weights32.reserve(model.params.weights.size());
        for (double w : model.params.weights) {
            const float f = static_cast<float>(w);
            if (static_cast<double>(f) != w) {
                entry->weights32.clear();
                break;
            }
            entry->weights32.push_back(f);
        }
        entry->weights32.shrink_to_fit();
        entry->model = std::move(model);
        auto [it, ok] = entries_.emplace(id, std::move(entry));
        return it->first;
    }

    std::string load(const std::filesystem::path &path) { return load(load_model_file(path)); }

    bool unload(const std::string &id) { return entries_.erase(id) > 0; }

    bool contains(const std::string &id) const { return entries_.count(id) > 0; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }

    const std::map<std::string, std::shared_ptr<const RegistryEntry>> &entries() const noexcept { return entries_; }

    std::size_t max_window_len() const {
        std::size_t t = 1;
        for (const auto &[id, e] : entries_) t = std::max(t, e->spec().window_len);
        return t;
    }

    bool operator==(const ModelRegistry &o) const {
        if (columns_ != o.columns_ || entries_.size() != o.entries_.size()) return false;
        for (auto a = entries_.begin(), b = o.entries_.begin(); a != entries_.end(); ++a, ++b)
            if (a->first != b->first || !(*a->second == *b->second)) return false;
        return true;
    }

  private:
    std::vector<std::string> columns_;
    std::map<std::string, std::shared_ptr<const RegistryEntry>> entries_;
};

/// Ring of the most recent samples. Capacity only grows (to fit the longest loaded
/// window); the oldest sample is evicted first.
class InputBuffer {
  public:
    InputBuffer(std::size_t columns, std::size_t capacity)
        : cols_(columns), cap_(std::max<std::size_t>(capacity, 1)), data_(cap_ * cols_), index_(cap_) {}

    std::size_t capacity() const noexcept { return cap_; }
    std::size_t size() const noexcept { return size_; }
    std::size_t columns() const noexcept { return cols_; }

    void ensure_capacity(std::size_t n) {
        if (n <= cap_) return;
        std::vector<double> data(n * cols_);
        std::vector<std::int64_t> index(n);
        for (std::size_t k = 0; k < size_; ++k) {
            const std::size_t age = size_ - 1 - k; // oldest first
            auto src = row_back(age);
            std::copy(src.begin(), src.end(), data.begin() + static_cast<std::ptrdiff_t>(k * cols_));
            index[k] = index_back(age);
        }
        data_ = std::move(data);
        index_ = std::move(index);
        cap_ = n;
        head_ = size_ % cap_;
    }

    void push(std::span<const double> row, std::int64_t index) {
        if (row.size() != cols_) throw ShapeError("signals", "sample width differs from buffer width");
        if (size_ > 0 && index <= index_back(0)) throw InvalidArgument("sample indices must increase");
        std::copy(row.begin(), row.end(), data_.begin() + static_cast<std::ptrdiff_t>(head_ * cols_));
        index_[head_] = index;
        head_ = (head_ + 1) % cap_;
        size_ = std::min(size_ + 1, cap_);
    }

    void reset() noexcept {
        size_ = 0;
        head_ = 0;
    }

    /// Row `age` samples back from the newest (0 = newest).
    std::span<const double> row_back(std::size_t age) const {
        const std::size_t pos = (head_ + cap_ - 1 - age) % cap_;
        return {data_.data() + pos * cols_, cols_};
    }

    std::int64_t index_back(std::size_t age) const { return index_[(head_ + cap_ - 1 - age) % cap_]; }

    /// Scaled T x S model window, oldest row first. False when history is too short.
    bool extract(const RegistryEntry &e, std::span<double> out) const {
        const std::size_t T = e.spec().window_len;
        const std::size_t S = e.input_columns.size();
        if (size_ < T) return false;
        if (out.size() != T * S) throw ShapeError("window", "output span does not match the model window");
        for (std::size_t t = 0; t < T; ++t) {
            auto row = row_back(T - 1 - t);
            for (std::size_t s = 0; s < S; ++s) out[t * S + s] = e.input_scaling[s].scale(row[e.input_columns[s]]);
        }
        return true;
    }

    /// Unscaled rows of every column over the last `rows` samples, oldest first.
    Matrix raw(std::size_t rows) const {
        rows = std::min(rows, size_);
        Matrix m(rows, cols_);
        for (std::size_t r = 0; r < rows; ++r) {
            auto src = row_back(rows - 1 - r);
            std::copy(src.begin(), src.end(), m.row(r).begin());
        }
        return m;
    }

  private:
    std::size_t cols_;
    std::size_t cap_;
    std::vector<double> data_;
    std::vector<std::int64_t> index_;
    std::size_t head_ = 0;
    std::size_t size_ = 0;
};

/// A window offered to the store. `window.raw` holds every stream column over the span
/// of the longest model window (not only model inputs); `window.data` is left empty.
struct ScoredWindow {
    Window window;
    double msed = 0.0;
    std::map<std::string, double> per_model_sed;
    std::int64_t end_sample_index = 0;
    std::chrono::system_clock::time_point wall_time{};
};

/// Ranking used by the store: higher msed first, then earlier end index.
inline bool ranks_before(double msed_a, std::int64_t index_a, double msed_b, std::int64_t index_b) noexcept {
    return msed_a > msed_b || (msed_a == msed_b && index_a < index_b);
}

/// Bounded collection of the K highest-msed windows since the last drain. Thread-safe.
class PriorityStore {
  public:
    explicit PriorityStore(std::size_t capacity = 50, std::int64_t min_spacing = 0)
        : cap_(capacity), spacing_(min_spacing) {
        if (capacity < 1) throw InvalidArgument("store capacity must be >= 1");
        if (min_spacing < 0) throw InvalidArgument("min index spacing must be >= 0");
    }

    std::size_t capacity() const noexcept { return cap_; }

    std::size_t size() const {
        std::lock_guard lock(mu_);
        return items_.size();
    }

    /// Whether `offer` would accept a window with this key right now.
    bool would_accept(double msed, std::int64_t index) const {
        std::lock_guard lock(mu_);
        return accepts(msed, index);
    }

    bool offer(ScoredWindow candidate) {
        std::lock_guard lock(mu_);
        if (!accepts(candidate.msed, candidate.end_sample_index)) return false;
        if (spacing_ > 0) {
            std::erase_if(items_, [&](const ScoredWindow &w) { return near(w, candidate.end_sample_index); });
            std::make_heap(items_.begin(), items_.end(), worst_on_top);
        }
        if (items_.size() == cap_) {
            std::pop_heap(items_.begin(), items_.end(), worst_on_top);
            items_.pop_back();
        }
        items_.push_back(std::move(candidate));
        std::push_heap(items_.begin(), items_.end(), worst_on_top);
        return true;
    }

    /// Items by descending msed (earlier index first on ties); empties the store.
    std::vector<ScoredWindow> drain() {
        std::vector<ScoredWindow> out;
        {
            std::lock_guard lock(mu_);
            out.swap(items_);
        }
        std::sort(out.begin(), out.end(), [](const ScoredWindow &a, const ScoredWindow &b) {
            return ranks_before(a.msed, a.end_sample_index, b.msed, b.end_sample_index);
        });
        return out;
    }

  private:
    static bool worst_on_top(const ScoredWindow &a, const ScoredWindow &b) {
        return ranks_before(a.msed, a.end_sample_index, b.msed, b.end_sample_index);
    }

    bool near(const ScoredWindow &w, std::int64_t index) const {
        const std::int64_t d = w.end_sample_index > index ? w.end_sample_index - index : index - w.end_sample_index;
        return d < spacing_;
    }

    bool accepts(double msed, std::int64_t index) const {
        if (!std::isfinite(msed)) return false;
        if (spacing_ > 0) {
            // a candidate close to stored windows must beat all of them
            bool conflict = false;
            for (const auto &w : items_) {
                if (!near(w, index)) continue;
                conflict = true;
                if (!ranks_before(msed, index, w.msed, w.end_sample_index)) return false;
            }
            if (conflict) return true;
        }
        if (items_.size() < cap_) return true;
        const ScoredWindow &worst = items_.front();
        return ranks_before(msed, index, worst.msed, worst.end_sample_index);
    }

    std::size_t cap_;
    std::int64_t spacing_;
    mutable std::mutex mu_;
    std::vector<ScoredWindow> items_;
};

/// Telemetry for one tick.
struct RunRecord {
    std::size_t run_index = 0;
    double duration_us = 0.0;
    std::size_t models_run = 0;
    double msed = std::numeric_limits<double>::quiet_NaN();
    bool rejected = false;
};

struct EngineCounters {
    std::size_t ticks = 0;
    std::size_t rejected = 0;
    std::size_t models_run = 0;
    std::size_t skipped_history = 0;
    std::size_t sigma_floor_hits = 0;
    std::size_t numeric_faults = 0;
    std::size_t offered = 0;
    std::size_t accepted = 0;
};

/// Fixed set of workers that run `fn(i)` for i in [0, n) and wait for completion. The
/// calling thread takes part.
class WorkerPool {
  public:
    explicit WorkerPool(std::size_t threads) {
        for (std::size_t t = 1; t < threads; ++t) workers_.emplace_back([this] { loop(); });
    }

    ~WorkerPool() {
        {
            std::lock_guard lock(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto &w : workers_) w.join();
    }

    WorkerPool(const WorkerPool &) = delete;
    WorkerPool &operator=(const WorkerPool &) = delete;

    std::size_t threads() const noexcept { return workers_.size() + 1; }

    void run(std::size_t n, const std::function<void(std::size_t)> &fn) {
        if (workers_.empty() || n < 2) {
            for (std::size_t i = 0; i < n; ++i) fn(i);
            return;
        }
        {
            std::lock_guard lock(mu_);
            job_ = &fn;
            n_ = n;
            next_.store(0);
            pending_ = workers_.size();
            ++generation_;
        }
        cv_.notify_all();
        work();
        std::unique_lock lock(mu_);
        done_.wait(lock, [this] { return pending_ == 0; });
        job_ = nullptr;
        if (error_) std::rethrow_exception(std::exchange(error_, nullptr));
    }

  private:
    void work() {
        for (std::size_t i; (i = next_.fetch_add(1)) < n_;) {
            try {
                (*job_)(i);
            } catch (...) {
                std::lock_guard lock(mu_);
                if (!error_) error_ = std::current_exception();
            }
        }
    }

    void loop() {
        std::uint64_t seen = 0;
        while (true) {
            {
                std::unique_lock lock(mu_);
                cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
                if (stop_) return;
                seen = generation_;
            }
            work();
            std::lock_guard lock(mu_);
            if (--pending_ == 0) done_.notify_one();
        }
    }

    std::vector<std::thread> workers_;
    std::mutex mu_;
    std::condition_variable cv_, done_;
    const std::function<void(std::size_t)> *job_ = nullptr;
    std::size_t n_ = 0;
    std::atomic<std::size_t> next_{0};
    std::size_t pending_ = 0;
    std::uint64_t generation_ = 0;
    bool stop_ = false;
    std::exception_ptr error_;
};

struct EngineConfig {
    std::size_t store_capacity = 50;
    std::int64_t min_index_spacing = 0;
    std::size_t threads = 1;
    double sigma_squared_floor = kSigmaSquaredFloor;
    std::string stream_id = "stream";
};

/// The run loop: buffer the sample, run every loaded model on its window, score, and
/// offer the window to the store.
class Engine {
  public:
    Engine(std::vector<std::string> stream_columns, EngineConfig config = {})
        : config_(std::move(config)), registry_(stream_columns), buffer_(stream_columns.size(), 1),
          store_(config_.store_capacity, config_.min_index_spacing),
          pool_(std::make_unique<WorkerPool>(std::max<std::size_t>(config_.threads, 1))) {}

    const ModelRegistry &registry() const noexcept { return registry_; }
    const InputBuffer &buffer() const noexcept { return buffer_; }
    PriorityStore &store() noexcept { return store_; }
    const EngineCounters &counters() const noexcept { return counters_; }
    const EngineConfig &config() const noexcept { return config_; }

    const std::string &load(ModelFile model) {
        const std::string &id = registry_.load(std::move(model));
        rebuild();
        return id;
    }

    std::string load(const std::filesystem::path &path) { return load(load_model_file(path)); }

    bool unload(const std::string &id) {
        const bool removed = registry_.unload(id);
        if (removed) rebuild();
        return removed;
    }

    /// Stream boundary: history before it never forms a window with samples after it.
    void boundary() noexcept { buffer_.reset(); }

    /// Per-model SEDs of the most recent tick (models that ran only).
    const std::map<std::string, double> &last_sed() const noexcept { return last_sed_; }

    RunRecord tick(std::span<const double> sample) { return tick(sample, next_index_); }

    RunRecord tick(std::span<const double> sample, std::int64_t index) {
        const auto t0 = std::chrono::steady_clock::now();
        RunRecord rec;
        rec.run_index = counters_.ticks++;
        next_index_ = index + 1;
        last_sed_.clear();

        bool ok = sample.size() == buffer_.columns() &&
                  (buffer_.size() == 0 || index > buffer_.index_back(0));
        for (std::size_t c = 0; ok && c < sample.size(); ++c) ok = std::isfinite(sample[c]);
        if (!ok) {
            ++counters_.rejected;
            rec.rejected = true;
            rec.duration_us = elapsed_us(t0);
            return rec;
        }
        buffer_.push(sample, index);

        const std::size_t n = slots_.size();
        pool_->run(n, [&](std::size_t k) { score(slots_[k], sample); });

        double sum = 0.0;
        std::size_t ran = 0, span = 1;
        for (Slot &s : slots_) {
            if (s.status == Slot::skipped) {
                ++counters_.skipped_history;
                continue;
            }
            if (s.status == Slot::fault) {
                ++counters_.numeric_faults;
                continue;
            }
            counters_.sigma_floor_hits += s.floored ? 1 : 0;
            sum += s.sed;
            ++ran;
            span = std::max(span, s.entry->spec().window_len);
            last_sed_.emplace(s.entry->id(), s.sed);
        }
        rec.models_run = ran;
        counters_.models_run += ran;
        if (ran > 0) {
            rec.msed = sum / static_cast<double>(ran);
            ++counters_.offered;
            if (store_.would_accept(rec.msed, index)) {
                ScoredWindow w;
                w.window.origin = {config_.stream_id, index};
                w.window.raw = buffer_.raw(span);
                w.msed = rec.msed;
                w.per_model_sed = last_sed_;
                w.end_sample_index = index;
                w.wall_time = std::chrono::system_clock::now();
                counters_.accepted += store_.offer(std::move(w)) ? 1 : 0;
            }
        }
        rec.duration_us = elapsed_us(t0);
        return rec;
    }

    std::vector<ScoredWindow> drain() { return store_.drain(); }

  private:
    struct Slot {
        enum Status { skipped, ok, fault };
        std::shared_ptr<const RegistryEntry> entry;
        ForwardPass pass;
        std::vector<double> window;
        Status status = skipped;
        double sed = 0.0;
        bool floored = false;
    };

    void rebuild() {
        buffer_.ensure_capacity(registry_.max_window_len());
        std::vector<Slot> slots;
        for (const auto &[id, e] : registry_.entries()) {
            Slot s;
            s.entry = e;
            s.pass = ForwardPass(e->spec());
            s.window.resize(e->spec().window_size());
            slots.push_back(std::move(s));
        }
        slots_ = std::move(slots);
    }

    void score(Slot &s, std::span<const double> sample) const {
        const RegistryEntry &e = *s.entry;
        if (!buffer_.extract(e, s.window)) {
            s.status = Slot::skipped;
            return;
        }
        try {
            const Prediction p = e.weights32.empty()
                                     ? s.pass.evaluate(e.model.params.weights, s.window, nullptr)
                                     : s.pass.evaluate(std::span<const float>(e.weights32), s.window, nullptr);
            const double y = e.output_scaling.scale(sample[e.output_column]);
            const SedResult r = sed_checked(y, p, config_.sigma_squared_floor);
            s.sed = r.value;
            s.floored = r.floored;
            s.status = std::isfinite(r.value) ? Slot::ok : Slot::fault;
        } catch (const NumericFault &) {
            s.status = Slot::fault;
        }
    }

    static double elapsed_us(std::chrono::steady_clock::time_point t0) {
        const auto ns = std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - t0);
        return static_cast<double>(std::max<std::int64_t>(ns.count(), 1)) / 1000.0;
    }

    EngineConfig config_;
    ModelRegistry registry_;
    InputBuffer buffer_;
    PriorityStore store_;
    std::unique_ptr<WorkerPool> pool_;
    std::vector<Slot> slots_;
    std::map<std::string, double> last_sed_;
    EngineCounters counters_;
    std::int64_t next_index_ = 0;
};

/// Drained windows: per window a metadata line, a CSV header and the raw rows.
inline void write_drain(std::ostream &os, const std::vector<ScoredWindow> &windows,
                        const std::vector<std::string> &columns) {
    char buf[64];
    for (std::size_t k = 0; k < windows.size(); ++k) {
        const ScoredWindow &w = windows[k];
        std::snprintf(buf, sizeof buf, "%.9g", w.msed);
        os << "#window rank=" << k + 1 << " end_index=" << w.end_sample_index << " msed=" << buf
           << " models=" << w.per_model_sed.size();
        for (const auto &[id, v] : w.per_model_sed) {
            std::snprintf(buf, sizeof buf, "%.9g", v);
            os << " sed." << id << '=' << buf;
        }
        os << '\n' << "index";
        for (const auto &c : columns) os << ',' << c;
        os << '\n';
        if (!w.window.raw) continue;
        const Matrix &m = *w.window.raw;
        for (std::size_t r = 0; r < m.rows(); ++r) {
            os << w.end_sample_index - static_cast<std::int64_t>(m.rows() - 1 - r);
            for (double v : m.row(r)) {
                std::snprintf(buf, sizeof buf, ",%.10g", v);
                os << buf;
            }
            os << '\n';
        }
    }
}

inline void write_telemetry_header(std::ostream &os) { os << "run_index,duration_us,models_run,msed,rejected\n"; }

inline void write_telemetry_row(std::ostream &os, const RunRecord &r) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%zu,%.3f,%zu,%.9g,%d\n", r.run_index, r.duration_us, r.models_run, r.msed,
                  r.rejected ? 1 : 0);
    os << buf;
}

} // namespace sentinel
