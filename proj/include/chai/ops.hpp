#ifndef CHAI_OPS_HPP
#define CHAI_OPS_HPP

#include <cstddef>
#include <string>
#include <vector>

#include "tensor.hpp"

/**
 * @file ops.hpp
 *
 * @brief Forward and backward kernels for the primitive layers of the
 * embedding network: 2-D convolution, ReLU, max pooling and global average
 * pooling. All forward kernels are pure.
 */

namespace chai {

struct ConvGeometry {
    std::size_t in_channels, height, width;
    std::size_t out_channels, kernel_h, kernel_w;
    std::size_t stride, pad;
    std::size_t out_h, out_w;

    std::size_t patch_size() const { return in_channels * kernel_h * kernel_w; }
    std::size_t out_pixels() const { return out_h * out_w; }
};

template<typename T>
ConvGeometry conv_geometry(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                           std::size_t stride, std::size_t pad) {
    require_rank(input, 3, "conv2d input");
    require_rank(kernel, 4, "conv2d kernel");
    require_rank(bias, 1, "conv2d bias");
    if (stride == 0) {
        throw InvalidInput("conv2d stride must be positive");
    }
    ConvGeometry g{};
    g.in_channels = input.extent(0);
    g.height = input.extent(1);
    g.width = input.extent(2);
    g.out_channels = kernel.extent(0);
    g.kernel_h = kernel.extent(2);
    g.kernel_w = kernel.extent(3);
    g.stride = stride;
    g.pad = pad;
    if (kernel.extent(1) != g.in_channels) {
        throw InvalidInput("conv2d kernel expects " + std::to_string(kernel.extent(1)) +
                           " input channels, input has " + std::to_string(g.in_channels));
    }
    if (bias.extent(0) != g.out_channels) {
        throw InvalidInput("conv2d bias length does not match output channels");
    }
    if (g.height + 2 * pad < g.kernel_h || g.width + 2 * pad < g.kernel_w) {
        throw InvalidInput("conv2d kernel larger than padded input");
    }
    g.out_h = (g.height + 2 * pad - g.kernel_h) / stride + 1;
    g.out_w = (g.width + 2 * pad - g.kernel_w) / stride + 1;
    return g;
}

namespace detail {

// Unfolds receptive fields into a [patch_size, out_pixels] matrix so the
// convolution becomes a dense product with contiguous inner loops.
template<typename T>
std::vector<T> im2col(const Tensor<T>& input, const ConvGeometry& g) {
    const std::size_t pixels = g.out_pixels();
    std::vector<T> cols(g.patch_size() * pixels, T{0});
    const auto in = input.data();
    std::size_t row = 0;
    for (std::size_t c = 0; c < g.in_channels; ++c) {
        for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
            for (std::size_t kx = 0; kx < g.kernel_w; ++kx, ++row) {
                T* dst = cols.data() + row * pixels;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                              static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
                        continue;
                    }
                    const T* src = in.data() + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                                  static_cast<std::ptrdiff_t>(g.pad);
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width)) {
                            dst[oy * g.out_w + ox] = src[ix];
                        }
                    }
                }
            }
        }
    }
    return cols;
}

template<typename T>
void col2im_accumulate(const std::vector<T>& cols, const ConvGeometry& g, Tensor<T>& out) {
    const std::size_t pixels = g.out_pixels();
    auto dst_all = out.data();
    std::size_t row = 0;
    for (std::size_t c = 0; c < g.in_channels; ++c) {
        for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
            for (std::size_t kx = 0; kx < g.kernel_w; ++kx, ++row) {
                const T* src = cols.data() + row * pixels;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                              static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
                        continue;
                    }
                    T* dst = dst_all.data() + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                                  static_cast<std::ptrdiff_t>(g.pad);
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width)) {
                            dst[ix] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

// Dot product with independent partial sums; the fixed lane count keeps the
// summation order identical across runs while letting the compiler vectorise.
template<typename T>
T dot(const T* a, const T* b, std::size_t n) {
    constexpr std::size_t lanes = 8;
    T acc[lanes] = {};
    std::size_t i = 0;
    for (; i + lanes <= n; i += lanes) {
        for (std::size_t l = 0; l < lanes; ++l) {
            acc[l] += a[i + l] * b[i + l];
        }
    }
    T tail{0};
    for (; i < n; ++i) {
        tail += a[i] * b[i];
    }
    T sum{0};
    for (std::size_t l = 0; l < lanes; ++l) {
        sum += acc[l];
    }
    return sum + tail;
}

template<typename T>
Tensor<T> conv2d_from_cols(const std::vector<T>& cols, const Tensor<T>& kernel, const Tensor<T>& bias,
                           const ConvGeometry& g) {
    Tensor<T> out({g.out_channels, g.out_h, g.out_w});
    const std::size_t pixels = g.out_pixels();
    const std::size_t patch = g.patch_size();
    const auto w = kernel.data();
    auto o = out.data();
    for (std::size_t co = 0; co < g.out_channels; ++co) {
        T* dst = o.data() + co * pixels;
        std::fill(dst, dst + pixels, bias[co]);
        for (std::size_t k = 0; k < patch; ++k) {
            const T wk = w[co * patch + k];
            const T* src = cols.data() + k * pixels;
            for (std::size_t p = 0; p < pixels; ++p) {
                dst[p] += wk * src[p];
            }
        }
    }
    return out;
}

}

template<typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                         std::size_t stride, std::size_t pad) {
    const auto g = conv_geometry(input, kernel, bias, stride, pad);
    require_finite(input, "conv2d input");
    require_finite(kernel, "conv2d kernel");
    require_finite(bias, "conv2d bias");
    return detail::conv2d_from_cols(detail::im2col(input, g), kernel, bias, g);
}

template<typename T>
struct ConvGrads {
    Tensor<T> input;   ///< empty when not requested
    Tensor<T> kernel;
    Tensor<T> bias;
};

/// Gradients of conv2d given the unfolded input columns and the output gradient.
template<typename T>
ConvGrads<T> conv2d_backward_from_cols(const std::vector<T>& cols, const Tensor<T>& kernel,
                                       const Tensor<T>& grad_out, const ConvGeometry& g,
                                       bool want_input_grad) {
    const std::size_t pixels = g.out_pixels();
    const std::size_t patch = g.patch_size();
    if (grad_out.shape() != Shape{g.out_channels, g.out_h, g.out_w}) {
        throw InvalidInput("conv2d_backward gradient shape mismatch");
    }
    ConvGrads<T> grads;
    grads.kernel = Tensor<T>(kernel.shape());
    grads.bias = Tensor<T>({g.out_channels});
    const auto go = grad_out.data();
    auto gk = grads.kernel.data();
    for (std::size_t co = 0; co < g.out_channels; ++co) {
        const T* dout = go.data() + co * pixels;
        T b{0};
        for (std::size_t p = 0; p < pixels; ++p) {
            b += dout[p];
        }
        grads.bias[co] = b;
        for (std::size_t k = 0; k < patch; ++k) {
            gk[co * patch + k] = detail::dot(dout, cols.data() + k * pixels, pixels);
        }
    }
    if (want_input_grad) {
        std::vector<T> dcols(patch * pixels, T{0});
        const auto w = kernel.data();
        for (std::size_t co = 0; co < g.out_channels; ++co) {
            const T* dout = go.data() + co * pixels;
            for (std::size_t k = 0; k < patch; ++k) {
                const T wk = w[co * patch + k];
                T* dst = dcols.data() + k * pixels;
                for (std::size_t p = 0; p < pixels; ++p) {
                    dst[p] += wk * dout[p];
                }
            }
        }
        grads.input = Tensor<T>({g.in_channels, g.height, g.width});
        detail::col2im_accumulate(dcols, g, grads.input);
    }
    return grads;
}

template<typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                             std::size_t stride, std::size_t pad, const Tensor<T>& grad_out) {
    const auto g = conv_geometry(input, kernel, bias, stride, pad);
    return conv2d_backward_from_cols(detail::im2col(input, g), kernel, grad_out, g, true);
}

template<typename T>
Tensor<T> relu_forward(const Tensor<T>& input) {
    Tensor<T> out = input;
    for (auto& v : out.data()) {
        v = v > T{0} ? v : T{0};
    }
    return out;
}

/// Subgradient 0 at the kink.
template<typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
    if (input.shape() != grad_out.shape()) {
        throw InvalidInput("relu_backward shape mismatch");
    }
    Tensor<T> grad(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) {
        grad[i] = input[i] > T{0} ? grad_out[i] : T{0};
    }
    return grad;
}

template<typename T>
struct PoolResult {
    Tensor<T> output;
    /// Flat input index of the winning cell for every output cell.
    std::vector<std::size_t> argmax;
};

/// Max pooling without padding. Ties go to the smallest flat input index.
template<typename T>
PoolResult<T> maxpool2d_forward(const Tensor<T>& input, std::size_t window, std::size_t stride) {
    require_rank(input, 3, "maxpool2d input");
    if (window == 0 || stride == 0) {
        throw InvalidInput("maxpool2d window and stride must be positive");
    }
    const std::size_t channels = input.extent(0), h = input.extent(1), w = input.extent(2);
    if (h < window || w < window) {
        throw InvalidInput("maxpool2d window " + std::to_string(window) + " larger than input " +
                           shape_string(input.shape()));
    }
    const std::size_t oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
    PoolResult<T> result{Tensor<T>({channels, oh, ow}), std::vector<std::size_t>(channels * oh * ow)};
    std::size_t o = 0;
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
                std::size_t best = (c * h + oy * stride) * w + ox * stride;
                for (std::size_t dy = 0; dy < window; ++dy) {
                    for (std::size_t dx = 0; dx < window; ++dx) {
                        const std::size_t idx = (c * h + oy * stride + dy) * w + ox * stride + dx;
                        if (input[idx] > input[best]) {
                            best = idx;
                        }
                    }
                }
                result.output[o] = input[best];
                result.argmax[o] = best;
            }
        }
    }
    return result;
}

template<typename T>
Tensor<T> maxpool2d_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                             const Tensor<T>& grad_out) {
    if (argmax.size() != grad_out.size()) {
        throw InvalidInput("maxpool2d_backward argmax/gradient size mismatch");
    }
    Tensor<T> grad(input_shape);
    for (std::size_t o = 0; o < argmax.size(); ++o) {
        grad[argmax[o]] += grad_out[o];
    }
    return grad;
}

/// Channelwise mean over the full n x n spatial grid.
template<typename T>
Tensor<T> gap_forward(const Tensor<T>& input) {
    require_rank(input, 3, "gap input");
    const std::size_t channels = input.extent(0), h = input.extent(1), w = input.extent(2);
    if (h != w) {
        throw InvalidInput("gap expects square maps, got " + shape_string(input.shape()));
    }
    const std::size_t cells = h * w;
    const T scale = T{1} / static_cast<T>(cells);
    Tensor<T> out({channels});
    const auto in = input.data();
    for (std::size_t c = 0; c < channels; ++c) {
        T sum{0};
        for (std::size_t i = 0; i < cells; ++i) {
            sum += in[c * cells + i];
        }
        out[c] = sum * scale;
    }
    return out;
}

template<typename T>
Tensor<T> gap_backward(const Shape& input_shape, const Tensor<T>& grad_out) {
    const std::size_t cells = input_shape.at(1) * input_shape.at(2);
    const T scale = T{1} / static_cast<T>(cells);
    Tensor<T> grad(input_shape);
    for (std::size_t c = 0; c < input_shape[0]; ++c) {
        const T g = grad_out[c] * scale;
        for (std::size_t i = 0; i < cells; ++i) {
            grad[c * cells + i] = g;
        }
    }
    return grad;
}

}

#endif
