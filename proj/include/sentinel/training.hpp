#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <vector>

#include "errors.hpp"
#include "network.hpp"

namespace sentinel {

/// Windows (row-major T x S, scaled) paired with scaled targets.
class SampleSet {
  public:
    SampleSet() = default;
    SampleSet(std::size_t window_len, std::size_t num_inputs) : window_len_(window_len), num_inputs_(num_inputs) {}

    void add(std::span<const double> window, double target) {
        if (window.size() != window_size()) throw ShapeError("window", "sample does not match set dimensions");
        windows_.insert(windows_.end(), window.begin(), window.end());
        targets_.push_back(target);
    }

    std::size_t size() const noexcept { return targets_.size(); }
    bool empty() const noexcept { return targets_.empty(); }
    std::size_t window_len() const noexcept { return window_len_; }
    std::size_t num_inputs() const noexcept { return num_inputs_; }
    std::size_t window_size() const noexcept { return window_len_ * num_inputs_; }

    std::span<const double> window(std::size_t i) const {
        return std::span<const double>(windows_).subspan(i * window_size(), window_size());
    }
    double target(std::size_t i) const { return targets_[i]; }
    std::span<const double> targets() const noexcept { return targets_; }

  private:
    std::size_t window_len_ = 0;
    std::size_t num_inputs_ = 0;
    std::vector<double> windows_;
    std::vector<double> targets_;
};

struct TrainConfig {
    std::size_t batch_size = 256;
    double learning_rate = 1e-3;
    double min_learning_rate = 1e-5;
    std::size_t total_steps = 50'000;
    double warmup_proportion = 0.1;
    std::size_t patience = 10;
    std::size_t max_epochs = 200;
    std::uint64_t seed = 0;
    bool stop_gradient_on_mean_input = false;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-7;
    /// Rectification switches on once the SMA length reaches this value.
    double sma_threshold = 5.0;

    void validate() const {
        if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
        if (!(min_learning_rate <= learning_rate)) throw InvalidArgument("min_learning_rate exceeds learning_rate");
        if (!(warmup_proportion > 0.0 && warmup_proportion < 1.0))
            throw InvalidArgument("warmup_proportion must lie in (0,1)");
        if (patience < 1) throw InvalidArgument("patience must be >= 1");
        if (total_steps < 1) throw InvalidArgument("total_steps must be >= 1");
    }
};

struct TrainReport {
    std::size_t epochs_run = 0;
    double best_validation_nll = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
    std::vector<double> train_nll_curve;
    std::vector<double> validation_nll_curve;
    bool stopped_early = false;

    bool operator==(const TrainReport &) const = default;

    /// One line per epoch: index, train NLL, validation NLL.
    void write_log(std::ostream &os) const {
        char buf[96];
        for (std::size_t e = 0; e < validation_nll_curve.size(); ++e) {
            std::snprintf(buf, sizeof buf, "%zu %.9g %.9g\n", e + 1, train_nll_curve[e], validation_nll_curve[e]);
            os << buf;
        }
    }
};

class TrainingDiverged : public Error {
  public:
    explicit TrainingDiverged(TrainReport report)
        : Error("validation NLL became non-finite after epoch " + std::to_string(report.epochs_run)),
          report_(std::move(report)) {}

    const TrainReport &report() const noexcept { return report_; }

  private:
    TrainReport report_;
};

inline const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

/// Per-sample Gaussian negative log-likelihood with alpha = ln(sigma).
inline double nll_term(double y, double mu, double alpha) {
    const double z = (y - mu) * std::exp(-alpha);
    return 0.5 * z * z + alpha + kHalfLog2Pi;
}

/// Batch-mean heteroscedastic Gaussian NLL.
inline double nll_loss(std::span<const Prediction> predictions, std::span<const double> targets) {
    if (predictions.empty()) throw InvalidArgument("nll_loss on an empty batch");
    if (predictions.size() != targets.size()) throw ShapeError("batch", "predictions and targets differ in length");
    double sum = 0.0;
    for (std::size_t n = 0; n < predictions.size(); ++n)
        sum += nll_term(targets[n], predictions[n].mu, predictions[n].alpha);
    return sum / static_cast<double>(predictions.size());
}

/// Gradients of a batch-mean NLL for a batch of windows, in ParamLayout order.
struct GradientResult {
    std::vector<double> gradient;
    double loss = 0.0;
};

namespace detail {

/// Gradient of one sample's NLL term with respect to (mu, alpha).
inline std::pair<double, double> nll_output_grad(double y, double mu, double alpha) {
    const double inv_var = std::exp(-2.0 * alpha);
    const double r = y - mu;
    return {-r * inv_var, 1.0 - r * r * inv_var};
}

} // namespace detail

/// Analytic gradient of the batch-mean NLL over the given sample indices. When `dropout`
/// is non-null the train-mode network is differentiated with the masks it draws.
inline GradientResult backward(const ModelParams &params, const SampleSet &samples,
                               std::span<const std::size_t> indices, const TrainConfig &config,
                               ForwardPass &pass, Dropout *dropout = nullptr) {
    if (indices.empty()) throw InvalidArgument("backward on an empty batch");
    GradientResult result{std::vector<double>(params.weights.size(), 0.0), 0.0};
    const double scale = 1.0 / static_cast<double>(indices.size());
    for (std::size_t i : indices) {
        const double y = samples.target(i);
        const Prediction p = pass.evaluate(params.weights, samples.window(i), dropout);
        result.loss += nll_term(y, p.mu, p.alpha);
        auto [dmu, dalpha] = detail::nll_output_grad(y, p.mu, p.alpha);
        pass.backward(params.weights, dmu * scale, dalpha * scale, config.stop_gradient_on_mean_input,
                      result.gradient);
    }
    result.loss *= scale;
    if (!all_finite(result.gradient)) {
        // name the first offending tensor
        const ParamLayout &layout = pass.layout();
        for (const auto &t : layout.tensors())
            if (!all_finite(std::span<const double>(result.gradient).subspan(t.offset, t.size)))
                throw NumericFault(t.name);
        throw NumericFault("gradient");
    }
    return result;
}

inline GradientResult backward(const ModelParams &params, const SampleSet &samples, const TrainConfig &config) {
    std::vector<std::size_t> all(samples.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    ForwardPass pass(params.spec);
    return backward(params, samples, all, config, pass);
}

/// Learning rate at a 1-based step: linear warm-up from the minimum to the peak over
/// warmup_proportion * total_steps, then linear decay back to the minimum at total_steps.
inline double scheduled_learning_rate(std::size_t step, const TrainConfig &config) {
    const double t = static_cast<double>(step);
    const double warmup = config.warmup_proportion * static_cast<double>(config.total_steps);
    const double lo = config.min_learning_rate;
    const double hi = config.learning_rate;
    if (t <= warmup) return lo + (hi - lo) * (t / warmup);
    const double decay = std::max(static_cast<double>(config.total_steps) - warmup, 1.0);
    const double progress = std::min((t - warmup) / decay, 1.0);
    return hi + (lo - hi) * progress;
}

struct RadamState {
    std::vector<double> m;
    std::vector<double> v;

    explicit RadamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// One rectified-Adam update of `params` in place.
///
/// While the approximated SMA length rho_t is below the threshold the update is plain
/// bias-corrected momentum; afterwards the adaptive step is scaled by the variance
/// rectification term r_t.
inline void radam_step(RadamState &state, std::span<double> params, std::span<const double> grads,
                       std::size_t step_index, const TrainConfig &config) {
    if (step_index < 1) throw InvalidArgument("radam step index starts at 1");
    if (grads.size() != params.size() || state.m.size() != params.size())
        throw ShapeError("parameters", "optimizer state, gradient and parameter sizes differ");

    const double b1 = config.beta1;
    const double b2 = config.beta2;
    const double t = static_cast<double>(step_index);
    const double b1t = std::pow(b1, t);
    const double b2t = std::pow(b2, t);
    const double rho_inf = 2.0 / (1.0 - b2) - 1.0;
    const double rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t);
    const double lr = scheduled_learning_rate(step_index, config);

    const bool rectify = rho_t >= config.sma_threshold;
    double r_t = 0.0;
    if (rectify) {
        r_t = std::sqrt((rho_t - 4.0) / (rho_inf - 4.0) * (rho_t - 2.0) / (rho_inf - 2.0) * rho_inf / rho_t);
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        const double m_hat = state.m[i] / (1.0 - b1t);
        if (rectify) {
            const double v_hat = std::sqrt(state.v[i] / (1.0 - b2t));
            params[i] -= lr * r_t * m_hat / (v_hat + config.epsilon);
        } else {
            params[i] -= lr * m_hat;
        }
    }
}

/// Batch-mean NLL of the network in infer mode.
inline double evaluate_nll(const ModelParams &params, const SampleSet &samples, ForwardPass &pass) {
    if (samples.empty()) throw InvalidArgument("evaluate_nll on an empty set");
    double sum = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const Prediction p = pass.evaluate(params.weights, samples.window(i), nullptr, false);
        sum += nll_term(samples.target(i), p.mu, p.alpha);
    }
    return sum / static_cast<double>(samples.size());
}

/// Predictions for every sample, infer mode.
inline std::vector<Prediction> predict_all(const ModelParams &params, const SampleSet &samples) {
    ForwardPass pass(params.spec);
    std::vector<Prediction> out;
    out.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i)
        out.push_back(pass.evaluate(params.weights, samples.window(i), nullptr));
    return out;
}

struct TrainResult {
    ModelParams params;
    TrainReport report;
};

/// Mini-batch training with early stopping on validation NLL. Returns the parameters of
/// the best validation epoch.
inline TrainResult train(const ModelSpec &spec, const SampleSet &train_set, const SampleSet &validation_set,
                         const TrainConfig &config) {
    spec.validate();
    config.validate();
    if (train_set.empty()) throw EmptySplit("training");
    if (validation_set.empty()) throw EmptySplit("validation");
    if (train_set.window_size() != spec.window_size() || validation_set.window_size() != spec.window_size())
        throw ShapeError("window", "sample windows do not match the model spec");

    ModelParams params = init_parameters(spec, config.seed);
    ModelParams best = params;
    TrainReport report;
    RadamState state(params.weights.size());
    ForwardPass pass(spec);

    std::mt19937_64 shuffle_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    Dropout dropout(spec.dropout_rate, config.seed + 1);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    std::size_t step = 0;
    std::size_t since_best = 0;
    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double train_sum = 0.0;
        double val_nll = 0.0;
        try {
            for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
                const std::size_t stop = std::min(order.size(), start + config.batch_size);
                std::span<const std::size_t> batch(order.data() + start, stop - start);
                GradientResult g = backward(params, train_set, batch, config, pass, &dropout);
                train_sum += g.loss * static_cast<double>(batch.size());
                radam_step(state, params.weights, g.gradient, ++step, config);
            }
            val_nll = evaluate_nll(params, validation_set, pass);
        } catch (const NumericFault &) {
            report.epochs_run = epoch;
            throw TrainingDiverged(report);
        }
        const double train_nll = train_sum / static_cast<double>(order.size());
        report.train_nll_curve.push_back(train_nll);
        report.validation_nll_curve.push_back(val_nll);
        report.epochs_run = epoch;
        if (!std::isfinite(val_nll)) throw TrainingDiverged(report);

        if (val_nll < report.best_validation_nll) {
            report.best_validation_nll = val_nll;
            report.best_epoch = epoch;
            best.weights = params.weights;
            since_best = 0;
        } else if (++since_best >= config.patience) {
            report.stopped_early = true;
            break;
        }
    }
    return {std::move(best), std::move(report)};
}

} // namespace sentinel
