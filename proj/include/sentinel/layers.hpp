#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "matrix.hpp"

namespace sentinel {

enum class Orientation { temporal, spatial, pointwise };
enum class Padding { valid, same };

struct ConvShape {
    std::size_t width = 1;
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;

    std::size_t kernel_size() const noexcept { return width * in_channels * out_channels; }
};

/// Owning convolution kernel. Weights are laid out [width][in_channels][out_channels].
struct ConvKernel {
    ConvShape shape;
    std::vector<double> weights;
    std::vector<double> bias;

    static ConvKernel zeros(ConvShape s) {
        return {s, std::vector<double>(s.kernel_size(), 0.0), std::vector<double>(s.out_channels, 0.0)};
    }

    double &at(std::size_t k, std::size_t in, std::size_t out) {
        return weights[(k * shape.in_channels + in) * shape.out_channels + out];
    }
};

inline double lrelu(double x, double slope) noexcept { return x > 0.0 ? x : slope * x; }

inline double lrelu_grad(double pre, double slope) noexcept { return pre > 0.0 ? 1.0 : slope; }

inline void lrelu_inplace(std::span<double> xs, double slope) noexcept {
    for (double &x : xs) x = lrelu(x, slope);
}

inline std::size_t conv_output_length(std::size_t length, std::size_t width, Padding pad) {
    if (pad == Padding::same) return length;
    return length >= width ? length - width + 1 : 0;
}

namespace detail {

inline std::size_t pad_before(std::size_t width, Padding pad) {
    return pad == Padding::same ? (width - 1) / 2 : 0;
}


template <class W>
void conv1d_forward(std::span<const double> in, std::size_t length, const ConvShape &s, Padding pad,
                    std::span<const W> kernel, std::span<const W> bias, std::span<double> out) {
    const std::size_t out_len = conv_output_length(length, s.width, pad);
    const std::size_t lead = pad_before(s.width, pad);
    const std::size_t C = s.in_channels;
    const std::size_t F = s.out_channels;
    for (std::size_t p = 0; p < out_len; ++p) {
        double *__restrict o = out.data() + p * F;
        for (std::size_t f = 0; f < F; ++f) o[f] = bias[f];
        for (std::size_t k = 0; k < s.width; ++k) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(p + k) - static_cast<std::ptrdiff_t>(lead);
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(length)) continue;
            const double *x = in.data() + static_cast<std::size_t>(src) * C;
            const W *w = kernel.data() + k * C * F;
            for (std::size_t c = 0; c < C; ++c) {
                const double xc = x[c];
                const W *__restrict wc = w + c * F;
                for (std::size_t f = 0; f < F; ++f) o[f] += xc * static_cast<double>(wc[f]);
            }
        }
    }
}

template <class W>
void temporal_conv_forward(std::span<const double> in, std::size_t T, std::size_t S, const ConvShape &s,
                           std::span<const W> kernel, std::span<const W> bias, std::span<double> out) {
    const std::size_t F = s.out_channels;
    const std::size_t out_t = T - s.width + 1;
    for (std::size_t t = 0; t < out_t; ++t) {
        for (std::size_t sig = 0; sig < S; ++sig) {
            double *__restrict o = out.data() + (t * S + sig) * F;
            for (std::size_t f = 0; f < F; ++f) o[f] = bias[f];
            for (std::size_t k = 0; k < s.width; ++k) {
                const double x = in[(t + k) * S + sig];
                const W *__restrict w = kernel.data() + k * F;
                for (std::size_t f = 0; f < F; ++f) o[f] += x * static_cast<double>(w[f]);
            }
        }
    }
}

template <class W>
void dense_forward(std::span<const double> x, std::span<const W> weight, std::span<const W> bias,
                   std::span<double> out) {
    const std::size_t n_out = bias.size();
    double *__restrict y = out.data();
    for (std::size_t o = 0; o < n_out; ++o) y[o] = bias[o];
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        const W *__restrict w = weight.data() + i * n_out;
        for (std::size_t o = 0; o < n_out; ++o) y[o] += xi * static_cast<double>(w[o]);
    }
}

} // namespace detail

/// Sliding-window convolution over a [length x in_channels] row-major input.
/// Writes [out_length x out_channels] to `out`. Float weights are widened exactly, so a
/// float copy of double weights that are float-representable gives identical results.
inline void conv1d_forward(std::span<const double> in, std::size_t length, const ConvShape &s, Padding pad,
                           std::span<const double> kernel, std::span<const double> bias, std::span<double> out) {
    detail::conv1d_forward<double>(in, length, s, pad, kernel, bias, out);
}

inline void conv1d_forward(std::span<const double> in, std::size_t length, const ConvShape &s, Padding pad,
                           std::span<const float> kernel, std::span<const float> bias, std::span<double> out) {
    detail::conv1d_forward<float>(in, length, s, pad, kernel, bias, out);
}

/// Accumulates gradients of a conv1d_forward call. `din` may be empty.
inline void conv1d_backward(std::span<const double> in, std::size_t length, const ConvShape &s, Padding pad,
                            std::span<const double> kernel, std::span<const double> dout,
                            std::span<double> dkernel, std::span<double> dbias, std::span<double> din) {
    const std::size_t out_len = conv_output_length(length, s.width, pad);
    const std::size_t lead = detail::pad_before(s.width, pad);
    const std::size_t C = s.in_channels;
    const std::size_t F = s.out_channels;
    for (std::size_t p = 0; p < out_len; ++p) {
        const double *g = dout.data() + p * F;
        for (std::size_t f = 0; f < F; ++f) dbias[f] += g[f];
        for (std::size_t k = 0; k < s.width; ++k) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(p + k) - static_cast<std::ptrdiff_t>(lead);
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(length)) continue;
            const std::size_t row = static_cast<std::size_t>(src);
            const double *x = in.data() + row * C;
            for (std::size_t c = 0; c < C; ++c) {
                double *dw = dkernel.data() + (k * C + c) * F;
                const double *w = kernel.data() + (k * C + c) * F;
                const double xc = x[c];
                double acc = 0.0;
                for (std::size_t f = 0; f < F; ++f) {
                    dw[f] += xc * g[f];
                    acc += w[f] * g[f];
                }
                if (!din.empty()) din[row * C + c] += acc;
            }
        }
    }
}

/// Full-height convolution down the time axis of a [T x S] window, applied to every
/// signal column independently with a shared single-channel kernel [width x 1 x F].
/// Output row (t * S + s) holds the F filter responses for signal s at offset t.
inline void temporal_conv_forward(std::span<const double> in, std::size_t T, std::size_t S, const ConvShape &s,
                                  std::span<const double> kernel, std::span<const double> bias,
                                  std::span<double> out) {
    detail::temporal_conv_forward<double>(in, T, S, s, kernel, bias, out);
}

inline void temporal_conv_forward(std::span<const double> in, std::size_t T, std::size_t S, const ConvShape &s,
                                  std::span<const float> kernel, std::span<const float> bias,
                                  std::span<double> out) {
    detail::temporal_conv_forward<float>(in, T, S, s, kernel, bias, out);
}

inline void temporal_conv_backward(std::span<const double> in, std::size_t T, std::size_t S, const ConvShape &s,
                                   std::span<const double> dout, std::span<double> dkernel,
                                   std::span<double> dbias) {
    const std::size_t F = s.out_channels;
    const std::size_t out_t = T - s.width + 1;
    for (std::size_t t = 0; t < out_t; ++t) {
        for (std::size_t sig = 0; sig < S; ++sig) {
            const double *g = dout.data() + (t * S + sig) * F;
            for (std::size_t f = 0; f < F; ++f) dbias[f] += g[f];
            for (std::size_t k = 0; k < s.width; ++k) {
                const double x = in[(t + k) * S + sig];
                double *dw = dkernel.data() + k * F;
                for (std::size_t f = 0; f < F; ++f) dw[f] += x * g[f];
            }
        }
    }
}

/// out = bias + x * W with W laid out [in][out].
inline void dense_forward(std::span<const double> x, std::span<const double> weight, std::span<const double> bias,
                          std::span<double> out) {
    detail::dense_forward<double>(x, weight, bias, out);
}

inline void dense_forward(std::span<const double> x, std::span<const float> weight, std::span<const float> bias,
                          std::span<double> out) {
    detail::dense_forward<float>(x, weight, bias, out);
}

/// Accumulates dW, db and (if non-empty) dx.
inline void dense_backward(std::span<const double> x, std::span<const double> weight, std::span<const double> dout,
                           std::span<double> dweight, std::span<double> dbias, std::span<double> dx) {
    const std::size_t n_out = dout.size();
    for (std::size_t o = 0; o < n_out; ++o) dbias[o] += dout[o];
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        const double *w = weight.data() + i * n_out;
        double *dw = dweight.data() + i * n_out;
        double acc = 0.0;
        for (std::size_t o = 0; o < n_out; ++o) {
            dw[o] += xi * dout[o];
            acc += w[o] * dout[o];
        }
        if (!dx.empty()) dx[i] += acc;
    }
}

/// Convolution of a whole matrix under one of the three orientations used by the network.
///
/// temporal:  input [T x S], kernel [w x 1 x F] with w <= T. Each signal column is
///            convolved on its own; output rows are ordered (t, s). With w == T the time
///            axis collapses and the result is [S x F].
/// spatial:   input [L x C], kernel [w x C x F], valid or same padding.
/// pointwise: input [L x C], kernel [1 x C x F]; spatial extent preserved.
inline Matrix conv1d(const Matrix &input, const ConvKernel &kernel, Orientation orientation,
                     Padding padding = Padding::valid) {
    const ConvShape &s = kernel.shape;
    if (kernel.weights.size() != s.kernel_size()) throw ShapeError("kernel", "weight count does not match shape");
    if (kernel.bias.size() != s.out_channels) throw ShapeError("filters", "bias count does not match filters");
    if (s.width == 0) throw ShapeError("kernel", "zero-width kernel");

    switch (orientation) {
    case Orientation::temporal: {
        if (s.in_channels != 1) throw ShapeError("channels", "temporal kernels take one input channel");
        if (s.width > input.rows())
            throw ShapeError("time", "kernel height " + std::to_string(s.width) + " exceeds window length " +
                                         std::to_string(input.rows()));
        const std::size_t out_t = input.rows() - s.width + 1;
        Matrix out(out_t * input.cols(), s.out_channels);
        temporal_conv_forward(input.values(), input.rows(), input.cols(), s, kernel.weights, kernel.bias,
                              out.values());
        return out;
    }
    case Orientation::spatial:
    case Orientation::pointwise: {
        if (orientation == Orientation::pointwise && s.width != 1)
            throw ShapeError("kernel", "pointwise kernels must have width 1");
        if (s.in_channels != input.cols())
            throw ShapeError("channels", "kernel expects " + std::to_string(s.in_channels) + " channels, input has " +
                                             std::to_string(input.cols()));
        if (padding == Padding::valid && s.width > input.rows())
            throw ShapeError("space", "kernel width " + std::to_string(s.width) + " exceeds extent " +
                                          std::to_string(input.rows()));
        Matrix out(conv_output_length(input.rows(), s.width, padding), s.out_channels);
        conv1d_forward(input.values(), input.rows(), s, padding, kernel.weights, kernel.bias, out.values());
        return out;
    }
    }
    return {};
}

} // namespace sentinel
