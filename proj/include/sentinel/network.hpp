#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "layers.hpp"
#include "matrix.hpp"

namespace sentinel {

/// Architecture descriptor for one input-output subset model.
struct ModelSpec {
    std::vector<std::string> input_signals;
    std::string output_signal;
    std::size_t window_len = 1;
    std::size_t conv_filters = 64;
    std::size_t dense_units = 64;
    double lrelu_slope = 0.3;
    double dropout_rate = 0.5;

    std::size_t num_inputs() const noexcept { return input_signals.size(); }
    std::size_t window_size() const noexcept { return window_len * input_signals.size(); }

    void validate() const {
        if (input_signals.empty()) throw InvalidArgument("model needs at least one input signal");
        if (output_signal.empty()) throw InvalidArgument("model needs an output signal");
        for (std::size_t i = 0; i < input_signals.size(); ++i) {
            if (input_signals[i] == output_signal)
                throw InvalidArgument("output signal '" + output_signal + "' is also an input");
            for (std::size_t j = i + 1; j < input_signals.size(); ++j)
                if (input_signals[i] == input_signals[j])
                    throw InvalidArgument("input signal '" + input_signals[i] + "' listed twice");
        }
        if (window_len < 1) throw InvalidArgument("window_len must be >= 1");
        if (conv_filters < 1) throw InvalidArgument("conv_filters must be >= 1");
        if (dense_units < 1) throw InvalidArgument("dense_units must be >= 1");
        if (!(lrelu_slope > 0.0 && lrelu_slope < 1.0)) throw InvalidArgument("lrelu_slope must lie in (0,1)");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw InvalidArgument("dropout_rate must lie in [0,1)");
    }

    bool operator==(const ModelSpec &) const = default;
};

struct TensorInfo {
    std::string name;
    std::vector<std::size_t> dims;
    std::size_t offset = 0;
    std::size_t size = 0;
};

struct ConvSlot {
    ConvShape shape;
    std::size_t kernel = 0;
    std::size_t bias = 0;
};

struct DenseSlot {
    std::size_t in = 0;
    std::size_t out = 0;
    std::size_t weight = 0;
    std::size_t bias = 0;
};

inline constexpr std::size_t kHiddenDense = 3;

/// Where every named tensor of a model lives inside the flat weight vector.
///
/// Stage order: temporal fold, squeeze (1x1), the two squeeze branches (1xS "same" and
/// 1x1), one spatial fold per branch, then the mean head and the confidence head. Each
/// head is three hidden dense layers followed by a single linear output unit.
class ParamLayout {
  public:
    ParamLayout() = default;

    explicit ParamLayout(const ModelSpec &spec) {
        const std::size_t S = spec.num_inputs();
        const std::size_t T = spec.window_len;
        const std::size_t F = spec.conv_filters;
        const std::size_t D = spec.dense_units;

        temporal = add_conv("temporal_fold", {T, 1, F});
        squeeze = add_conv("squeeze", {1, F, F});
        squeeze_wide = add_conv("squeeze_wide", {S, F, F});
        squeeze_point = add_conv("squeeze_point", {1, F, F});
        spatial_wide = add_conv("spatial_fold_wide", {S, F, F});
        spatial_point = add_conv("spatial_fold_point", {S, F, F});

        const std::size_t head_in = 2 * F + T * S;
        add_head("mean", head_in, D, mean_head);
        add_head("confidence", head_in + 1, D, confidence_head);
    }

    ConvSlot temporal, squeeze, squeeze_wide, squeeze_point, spatial_wide, spatial_point;
    std::array<DenseSlot, kHiddenDense + 1> mean_head{};
    std::array<DenseSlot, kHiddenDense + 1> confidence_head{};

    const std::vector<TensorInfo> &tensors() const noexcept { return tensors_; }
    std::size_t total() const noexcept { return total_; }

    const TensorInfo *find(const std::string &name) const {
        for (const auto &t : tensors_)
            if (t.name == name) return &t;
        return nullptr;
    }

  private:
    std::size_t add(std::string name, std::vector<std::size_t> dims) {
        std::size_t n = 1;
        for (auto d : dims) n *= d;
        tensors_.push_back({std::move(name), std::move(dims), total_, n});
        total_ += n;
        return tensors_.back().offset;
    }

    ConvSlot add_conv(const std::string &name, ConvShape s) {
        ConvSlot slot{s, 0, 0};
        slot.kernel = add(name + ".kernel", {s.width, s.in_channels, s.out_channels});
        slot.bias = add(name + ".bias", {s.out_channels});
        return slot;
    }

    DenseSlot add_dense(const std::string &name, std::size_t in, std::size_t out) {
        DenseSlot slot{in, out, 0, 0};
        slot.weight = add(name + ".weight", {in, out});
        slot.bias = add(name + ".bias", {out});
        return slot;
    }

    void add_head(const std::string &prefix, std::size_t in, std::size_t units,
                  std::array<DenseSlot, kHiddenDense + 1> &head) {
        for (std::size_t l = 0; l < kHiddenDense; ++l) {
            head[l] = add_dense(prefix + ".dense" + std::to_string(l + 1), l == 0 ? in : units, units);
        }
        head[kHiddenDense] = add_dense(prefix + ".output", units, 1);
    }

    std::vector<TensorInfo> tensors_;
    std::size_t total_ = 0;
};

/// Number of learnable scalars (weights and biases) for a spec.
inline std::size_t count_parameters(const ModelSpec &spec) {
    spec.validate();
    return ParamLayout(spec).total();
}

struct ModelParams {
    ModelSpec spec;
    std::vector<double> weights;
    std::uint64_t seed = 0;

    bool operator==(const ModelParams &) const = default;
};

/// Fan-in scaled uniform weights with variance 1/fan_in; zero biases.
inline ModelParams init_parameters(const ModelSpec &spec, std::uint64_t seed) {
    spec.validate();
    const ParamLayout layout(spec);
    ModelParams params{spec, std::vector<double>(layout.total(), 0.0), seed};
    std::mt19937_64 rng(seed);
    auto fill = [&](std::size_t offset, std::size_t count, std::size_t fan_in) {
        const double limit = std::sqrt(3.0 / static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-limit, limit);
        for (std::size_t i = 0; i < count; ++i) params.weights[offset + i] = dist(rng);
    };
    for (const ConvSlot *c : {&layout.temporal, &layout.squeeze, &layout.squeeze_wide, &layout.squeeze_point,
                              &layout.spatial_wide, &layout.spatial_point}) {
        fill(c->kernel, c->shape.kernel_size(), c->shape.width * c->shape.in_channels);
    }
    for (const auto *head : {&layout.mean_head, &layout.confidence_head})
        for (const DenseSlot &d : *head) fill(d.weight, d.in * d.out, d.in);
    return params;
}

struct WindowOrigin {
    std::string stream;
    std::int64_t end_index = 0;

    bool operator==(const WindowOrigin &) const = default;
};

/// T x S slice of scaled data, optionally carrying the unscaled values.
struct Window {
    Matrix data;
    WindowOrigin origin;
    std::optional<Matrix> raw;
};

struct Prediction {
    double mu = 0.0;
    double alpha = 0.0;
    double sigma = 1.0;

    static Prediction from(double mu, double alpha) { return {mu, alpha, std::exp(alpha)}; }

    bool operator==(const Prediction &) const = default;
};

enum class Mode { train, infer };

/// Inverted dropout: kept units are scaled by 1/(1-rate).
class Dropout {
  public:
    Dropout(double rate, std::uint64_t seed) : rate_(rate), rng_(seed) {}

    double draw() {
        if (rate_ <= 0.0) return 1.0;
        const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
        return u < rate_ ? 0.0 : 1.0 / (1.0 - rate_);
    }

    std::mt19937_64 &engine() noexcept { return rng_; }

  private:
    double rate_;
    std::mt19937_64 rng_;
};

/// Reusable activation storage for one model. Evaluate keeps every intermediate so that
/// backward can be called afterwards for the same sample.
class ForwardPass {
  public:
    ForwardPass() = default;

    explicit ForwardPass(const ModelSpec &spec) : spec_(spec), layout_(spec) {
        spec.validate();
        const std::size_t S = spec.num_inputs();
        const std::size_t F = spec.conv_filters;
        const std::size_t D = spec.dense_units;
        input_.assign(spec.window_size(), 0.0);
        for (auto *v : {&tf_pre_, &tf_, &sq_pre_, &sq_, &wide_pre_, &wide_, &point_pre_, &point_})
            v->assign(S * F, 0.0);
        for (auto *v : {&sfw_pre_, &sfp_pre_}) v->assign(F, 0.0);
        head_in_.assign(2 * F + spec.window_size() + 1, 0.0);
        for (auto *head : {&mean_, &conf_}) {
            for (auto &layer : *head) {
                layer.pre.assign(D, 0.0);
                layer.out.assign(D, 0.0);
                layer.mask.assign(D, 1.0);
            }
        }
        scratch_.assign(std::max<std::size_t>(2 * F + spec.window_size() + 1, S * F), 0.0);
        scratch2_.assign(std::max(S * F, D), 0.0);
    }

    const ModelSpec &spec() const noexcept { return spec_; }
    const ParamLayout &layout() const noexcept { return layout_; }

    /// Runs the network on a row-major T x S window. Dropout is applied when `dropout` is
    /// non-null. `check` enables per-layer finiteness checks.
    Prediction evaluate(std::span<const double> params, std::span<const double> window, Dropout *dropout,
                        bool check = true) {
        return evaluate_impl<double>(params, window, dropout, check);
    }

    /// Inference with single-precision weights; activations still accumulate in double.
    Prediction evaluate(std::span<const float> params, std::span<const double> window, Dropout *dropout,
                        bool check = true) {
        return evaluate_impl<float>(params, window, dropout, check);
    }

    /// Accumulates d(loss)/d(params) into `grad` given the loss gradients with respect to
    /// the last evaluated mu and alpha. When `stop_gradient_on_mean` is set the confidence
    /// head sees its mean input as a constant.
    void backward(std::span<const double> params, double dmu, double dalpha, bool stop_gradient_on_mean,
                  std::span<double> grad) {
        const std::size_t S = spec_.num_inputs();
        const std::size_t F = spec_.conv_filters;
        const std::size_t T = spec_.window_len;
        const double slope = spec_.lrelu_slope;

        std::span<double> dhead(scratch_.data(), head_in_.size());
        std::fill(dhead.begin(), dhead.end(), 0.0);

        head_backward(params, layout_.confidence_head, conf_, head_in_, dalpha, grad, dhead);
        const std::size_t mean_width = head_in_.size() - 1;
        if (!stop_gradient_on_mean) dmu += dhead[mean_width];
        head_backward(params, layout_.mean_head, mean_, std::span<const double>(head_in_).first(mean_width), dmu,
                      grad, dhead.first(mean_width));

        // spatial folds
        std::vector<double> &dfold = scratch2_;
        auto fold_back = [&](const ConvSlot &slot, const std::vector<double> &pre, std::size_t head_offset,
                             const std::vector<double> &in, std::vector<double> &d_in_pre,
                             const std::vector<double> &in_pre) {
            for (std::size_t f = 0; f < F; ++f) dfold[f] = dhead[head_offset + f] * lrelu_grad(pre[f], slope);
            std::fill(d_in_pre.begin(), d_in_pre.end(), 0.0);
            conv1d_backward(in, S, slot.shape, Padding::valid, params.subspan(slot.kernel, slot.shape.kernel_size()),
                            std::span<const double>(dfold).first(F), grad.subspan(slot.kernel, slot.shape.kernel_size()),
                            grad.subspan(slot.bias, F), d_in_pre);
            for (std::size_t i = 0; i < d_in_pre.size(); ++i) d_in_pre[i] *= lrelu_grad(in_pre[i], slope);
        };
        // d_wide_ and d_point_ hold gradients w.r.t. the branch pre-activations
        d_wide_.resize(S * F);
        d_point_.resize(S * F);
        fold_back(layout_.spatial_wide, sfw_pre_, 0, wide_, d_wide_, wide_pre_);
        fold_back(layout_.spatial_point, sfp_pre_, F, point_, d_point_, point_pre_);

        // squeeze branches back into squeeze output
        d_sq_.assign(S * F, 0.0);
        conv1d_backward(sq_, S, layout_.squeeze_wide.shape, Padding::same,
                        params.subspan(layout_.squeeze_wide.kernel, layout_.squeeze_wide.shape.kernel_size()),
                        d_wide_, grad.subspan(layout_.squeeze_wide.kernel, layout_.squeeze_wide.shape.kernel_size()),
                        grad.subspan(layout_.squeeze_wide.bias, F), d_sq_);
        conv1d_backward(sq_, S, layout_.squeeze_point.shape, Padding::valid,
                        params.subspan(layout_.squeeze_point.kernel, layout_.squeeze_point.shape.kernel_size()),
                        d_point_, grad.subspan(layout_.squeeze_point.kernel, layout_.squeeze_point.shape.kernel_size()),
                        grad.subspan(layout_.squeeze_point.bias, F), d_sq_);
        for (std::size_t i = 0; i < d_sq_.size(); ++i) d_sq_[i] *= lrelu_grad(sq_pre_[i], slope);

        d_tf_.assign(S * F, 0.0);
        conv1d_backward(tf_, S, layout_.squeeze.shape, Padding::valid,
                        params.subspan(layout_.squeeze.kernel, layout_.squeeze.shape.kernel_size()), d_sq_,
                        grad.subspan(layout_.squeeze.kernel, layout_.squeeze.shape.kernel_size()),
                        grad.subspan(layout_.squeeze.bias, F), d_tf_);
        for (std::size_t i = 0; i < d_tf_.size(); ++i) d_tf_[i] *= lrelu_grad(tf_pre_[i], slope);

        temporal_conv_backward(input_, T, S, layout_.temporal.shape, d_tf_,
                               grad.subspan(layout_.temporal.kernel, layout_.temporal.shape.kernel_size()),
                               grad.subspan(layout_.temporal.bias, F));
    }

  private:
    template <class W>
    Prediction evaluate_impl(std::span<const W> params, std::span<const double> window, Dropout *dropout,
                             bool check) {
        const std::size_t T = spec_.window_len;
        const std::size_t S = spec_.num_inputs();
        const std::size_t F = spec_.conv_filters;
        const double slope = spec_.lrelu_slope;
        if (window.size() != T * S)
            throw ShapeError("window", "expected " + std::to_string(T * S) + " values, got " +
                                           std::to_string(window.size()));
        if (params.size() != layout_.total())
            throw ShapeError("parameters", "expected " + std::to_string(layout_.total()) + " weights");
        std::copy(window.begin(), window.end(), input_.begin());

        auto tensor = [&](std::size_t offset, std::size_t n) { return params.subspan(offset, n); };
        auto conv_k = [&](const ConvSlot &c) { return tensor(c.kernel, c.shape.kernel_size()); };
        auto conv_b = [&](const ConvSlot &c) { return tensor(c.bias, c.shape.out_channels); };
        auto activate = [&](const std::vector<double> &pre, std::vector<double> &out, const char *name) {
            for (std::size_t i = 0; i < pre.size(); ++i) out[i] = lrelu(pre[i], slope);
            if (check && !all_finite(out)) throw NumericFault(name);
        };

        temporal_conv_forward(input_, T, S, layout_.temporal.shape, conv_k(layout_.temporal),
                              conv_b(layout_.temporal), tf_pre_);
        activate(tf_pre_, tf_, "temporal_fold");

        conv1d_forward(tf_, S, layout_.squeeze.shape, Padding::valid, conv_k(layout_.squeeze),
                       conv_b(layout_.squeeze), sq_pre_);
        activate(sq_pre_, sq_, "squeeze");

        conv1d_forward(sq_, S, layout_.squeeze_wide.shape, Padding::same, conv_k(layout_.squeeze_wide),
                       conv_b(layout_.squeeze_wide), wide_pre_);
        activate(wide_pre_, wide_, "squeeze_wide");
        conv1d_forward(sq_, S, layout_.squeeze_point.shape, Padding::valid, conv_k(layout_.squeeze_point),
                       conv_b(layout_.squeeze_point), point_pre_);
        activate(point_pre_, point_, "squeeze_point");

        std::span<double> head_in(head_in_);
        conv1d_forward(wide_, S, layout_.spatial_wide.shape, Padding::valid, conv_k(layout_.spatial_wide),
                       conv_b(layout_.spatial_wide), sfw_pre_);
        conv1d_forward(point_, S, layout_.spatial_point.shape, Padding::valid, conv_k(layout_.spatial_point),
                       conv_b(layout_.spatial_point), sfp_pre_);
        for (std::size_t f = 0; f < F; ++f) {
            head_in[f] = lrelu(sfw_pre_[f], slope);
            head_in[F + f] = lrelu(sfp_pre_[f], slope);
        }
        if (check && !all_finite(head_in.first(2 * F))) throw NumericFault("spatial_fold");
        std::copy(input_.begin(), input_.end(), head_in.begin() + static_cast<std::ptrdiff_t>(2 * F));

        const std::size_t mean_width = head_in_.size() - 1;
        const double mu = run_head(params, layout_.mean_head, mean_, head_in.first(mean_width), dropout, check,
                                   "mean");
        head_in[mean_width] = mu;
        const double alpha = run_head(params, layout_.confidence_head, conf_, head_in, dropout, check,
                                      "confidence");
        const Prediction p = Prediction::from(mu, alpha);
        if (check && !std::isfinite(p.sigma)) throw NumericFault("confidence.output");
        return p;
    }

    struct HiddenLayer {
        std::vector<double> pre;
        std::vector<double> out;
        std::vector<double> mask;
    };
    using Head = std::array<HiddenLayer, kHiddenDense>;

    template <class W>
    double run_head(std::span<const W> params, const std::array<DenseSlot, kHiddenDense + 1> &slots, Head &head,
                    std::span<const double> in, Dropout *dropout, bool check, const std::string &prefix) {
        const double slope = spec_.lrelu_slope;
        std::span<const double> x = in;
        for (std::size_t l = 0; l < kHiddenDense; ++l) {
            const DenseSlot &d = slots[l];
            HiddenLayer &h = head[l];
            dense_forward(x, params.subspan(d.weight, d.in * d.out), params.subspan(d.bias, d.out), h.pre);
            for (std::size_t o = 0; o < d.out; ++o) {
                h.mask[o] = dropout ? dropout->draw() : 1.0;
                h.out[o] = lrelu(h.pre[o], slope) * h.mask[o];
            }
            if (check && !all_finite(h.out)) throw NumericFault(prefix + ".dense" + std::to_string(l + 1));
            x = h.out;
        }
        const DenseSlot &o = slots[kHiddenDense];
        double y = 0.0;
        dense_forward(x, params.subspan(o.weight, o.in), params.subspan(o.bias, 1), std::span<double>(&y, 1));
        if (check && !std::isfinite(y)) throw NumericFault(prefix + ".output");
        return y;
    }

    void head_backward(std::span<const double> params, const std::array<DenseSlot, kHiddenDense + 1> &slots,
                       Head &head, std::span<const double> in, double dy, std::span<double> grad,
                       std::span<double> din) {
        const double slope = spec_.lrelu_slope;
        const std::size_t D = spec_.dense_units;
        d_a_.assign(D, 0.0);
        d_b_.assign(D, 0.0);

        const DenseSlot &o = slots[kHiddenDense];
        dense_backward(head[kHiddenDense - 1].out, params.subspan(o.weight, o.in), std::span<const double>(&dy, 1),
                       grad.subspan(o.weight, o.in), grad.subspan(o.bias, 1), d_a_);
        for (std::size_t l = kHiddenDense; l-- > 0;) {
            const DenseSlot &d = slots[l];
            HiddenLayer &h = head[l];
            for (std::size_t u = 0; u < D; ++u) d_a_[u] *= h.mask[u] * lrelu_grad(h.pre[u], slope);
            std::span<const double> x = l == 0 ? in : std::span<const double>(head[l - 1].out);
            if (l == 0) {
                dense_backward(x, params.subspan(d.weight, d.in * d.out), d_a_, grad.subspan(d.weight, d.in * d.out),
                               grad.subspan(d.bias, d.out), din);
            } else {
                std::fill(d_b_.begin(), d_b_.end(), 0.0);
                dense_backward(x, params.subspan(d.weight, d.in * d.out), d_a_, grad.subspan(d.weight, d.in * d.out),
                               grad.subspan(d.bias, d.out), d_b_);
                std::swap(d_a_, d_b_);
            }
        }
    }

    ModelSpec spec_;
    ParamLayout layout_;
    std::vector<double> input_;
    std::vector<double> tf_pre_, tf_, sq_pre_, sq_, wide_pre_, wide_, point_pre_, point_;
    std::vector<double> sfw_pre_, sfp_pre_;
    std::vector<double> head_in_;
    Head mean_{}, conf_{};
    std::vector<double> scratch_, scratch2_;
    std::vector<double> d_wide_, d_point_, d_sq_, d_tf_, d_a_, d_b_;
};

/// Single forward pass. Infer mode is deterministic; train mode needs a dropout seed.
inline Prediction forward(const ModelParams &params, const Window &window, Mode mode = Mode::infer,
                          std::optional<std::uint64_t> dropout_seed = std::nullopt) {
    const ModelSpec &spec = params.spec;
    if (window.data.rows() != spec.window_len)
        throw ShapeError("time", "window has " + std::to_string(window.data.rows()) + " rows, model expects " +
                                     std::to_string(spec.window_len));
    if (window.data.cols() != spec.num_inputs())
        throw ShapeError("signals", "window has " + std::to_string(window.data.cols()) +
                                        " columns, model expects " + std::to_string(spec.num_inputs()));
    ForwardPass pass(spec);
    if (mode == Mode::train) {
        if (!dropout_seed) throw InvalidArgument("train-mode forward needs a dropout seed");
        Dropout dropout(spec.dropout_rate, *dropout_seed);
        return pass.evaluate(params.weights, window.data.values(), &dropout);
    }
    return pass.evaluate(params.weights, window.data.values(), nullptr);
}

} // namespace sentinel
