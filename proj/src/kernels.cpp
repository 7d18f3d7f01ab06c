#include "maod/kernels.hpp"

#include <cmath>

namespace maod::kernels {

namespace {

void check_conv_args(const Tensor& input, const Tensor& weights, const ConvSpec& spec) {
    spec.validate();
    require(input.rank() == 3, "conv2d expects CxHxW input, got " + shape_str(input.shape()));
    require(input.dim(0) == spec.in_channels,
            strfmt("conv2d input %s does not match spec in_channels %d",
                   shape_str(input.shape()).c_str(), spec.in_channels));
    Shape want = spec.weight_shape();
    require(weights.shape() == want,
            "conv2d weight shape " + shape_str(weights.shape()) + " does not match spec " +
                shape_str(want) + " for input " + shape_str(input.shape()));
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weights, const ConvSpec& spec) {
    check_conv_args(input, weights, spec);
    const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
    const int O = spec.out_channels, K = spec.kernel_size, S = spec.stride, P = spec.padding;
    const int Ho = spec.out_extent(H), Wo = spec.out_extent(W);
    const bool dw = spec.mode == ConvMode::Depthwise;
    const int mult = dw ? O / C : 1;
    const int wc = dw ? 1 : C;  // input channels per filter

    Tensor out({O, Ho, Wo});
    const double* x = input.data();
    const double* w = weights.data();
    double* y = out.data();

    for (int o = 0; o < O; ++o) {
        const int c0 = dw ? o / mult : 0;
        for (int oy = 0; oy < Ho; ++oy) {
            for (int ox = 0; ox < Wo; ++ox) {
                double acc = 0.0;
                for (int ci = 0; ci < wc; ++ci) {
                    const int c = c0 + ci;
                    const double* xc = x + static_cast<std::size_t>(c) * H * W;
                    const double* wk = w + (static_cast<std::size_t>(o) * wc + ci) * K * K;
                    for (int ky = 0; ky < K; ++ky) {
                        const int iy = oy * S + ky - P;
                        if (iy < 0 || iy >= H) continue;
                        const int ix0 = ox * S - P;
                        for (int kx = 0; kx < K; ++kx) {
                            const int ix = ix0 + kx;
                            if (ix < 0 || ix >= W) continue;
                            acc += xc[iy * W + ix] * wk[ky * K + kx];
                        }
                    }
                }
                y[(static_cast<std::size_t>(o) * Ho + oy) * Wo + ox] = acc;
            }
        }
    }
    return out;
}

Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& weights, const ConvSpec& spec,
                         const Shape& input_shape) {
    const int C = input_shape[0], H = input_shape[1], W = input_shape[2];
    const int O = spec.out_channels, K = spec.kernel_size, S = spec.stride, P = spec.padding;
    const int Ho = spec.out_extent(H), Wo = spec.out_extent(W);
    const bool dw = spec.mode == ConvMode::Depthwise;
    const int mult = dw ? O / C : 1;
    const int wc = dw ? 1 : C;

    Tensor gin(input_shape);
    const double* g = grad_out.data();
    const double* w = weights.data();
    double* gx = gin.data();

    for (int o = 0; o < O; ++o) {
        const int c0 = dw ? o / mult : 0;
        for (int oy = 0; oy < Ho; ++oy) {
            for (int ox = 0; ox < Wo; ++ox) {
                const double go = g[(static_cast<std::size_t>(o) * Ho + oy) * Wo + ox];
                if (go == 0.0) continue;
                for (int ci = 0; ci < wc; ++ci) {
                    const int c = c0 + ci;
                    double* gc = gx + static_cast<std::size_t>(c) * H * W;
                    const double* wk = w + (static_cast<std::size_t>(o) * wc + ci) * K * K;
                    for (int ky = 0; ky < K; ++ky) {
                        const int iy = oy * S + ky - P;
                        if (iy < 0 || iy >= H) continue;
                        const int ix0 = ox * S - P;
                        for (int kx = 0; kx < K; ++kx) {
                            const int ix = ix0 + kx;
                            if (ix < 0 || ix >= W) continue;
                            gc[iy * W + ix] += go * wk[ky * K + kx];
                        }
                    }
                }
            }
        }
    }
    return gin;
}

Tensor conv2d_grad_weights(const Tensor& grad_out, const Tensor& input, const ConvSpec& spec) {
    const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
    const int O = spec.out_channels, K = spec.kernel_size, S = spec.stride, P = spec.padding;
    const int Ho = spec.out_extent(H), Wo = spec.out_extent(W);
    const bool dw = spec.mode == ConvMode::Depthwise;
    const int mult = dw ? O / C : 1;
    const int wc = dw ? 1 : C;

    Tensor gw(spec.weight_shape());
    const double* g = grad_out.data();
    const double* x = input.data();
    double* gwp = gw.data();

    for (int o = 0; o < O; ++o) {
        const int c0 = dw ? o / mult : 0;
        for (int oy = 0; oy < Ho; ++oy) {
            for (int ox = 0; ox < Wo; ++ox) {
                const double go = g[(static_cast<std::size_t>(o) * Ho + oy) * Wo + ox];
                if (go == 0.0) continue;
                for (int ci = 0; ci < wc; ++ci) {
                    const int c = c0 + ci;
                    const double* xc = x + static_cast<std::size_t>(c) * H * W;
                    double* wk = gwp + (static_cast<std::size_t>(o) * wc + ci) * K * K;
                    for (int ky = 0; ky < K; ++ky) {
                        const int iy = oy * S + ky - P;
                        if (iy < 0 || iy >= H) continue;
                        const int ix0 = ox * S - P;
                        for (int kx = 0; kx < K; ++kx) {
                            const int ix = ix0 + kx;
                            if (ix < 0 || ix >= W) continue;
                            wk[ky * K + kx] += go * xc[iy * W + ix];
                        }
                    }
                }
            }
        }
    }
    return gw;
}

Tensor depthwise_separable(const Tensor& input, const Tensor& dw_weights,
                           const Tensor& pw_weights, int stride, int padding) {
    require(input.rank() == 3, "depthwise_separable expects CxHxW input");
    const int C = input.dim(0);
    require(dw_weights.rank() == 4 && dw_weights.dim(1) == 1,
            "depthwise stage expects Cx1xKxK weights, got " + shape_str(dw_weights.shape()));
    require(dw_weights.dim(0) % C == 0,
            strfmt("depthwise stage weights %s do not cover %d input channels",
                   shape_str(dw_weights.shape()).c_str(), C));
    const int K = dw_weights.dim(2);
    const int mult = dw_weights.dim(0) / C;
    ConvSpec dw = ConvSpec::depthwise(C, K, stride, padding, mult);

    require(pw_weights.rank() == 4 && pw_weights.dim(2) == 1 && pw_weights.dim(3) == 1,
            "pointwise stage expects OxCx1x1 weights, got " + shape_str(pw_weights.shape()));
    require(pw_weights.dim(1) == dw.out_channels,
            strfmt("pointwise stage reads %d channels but depthwise stage produces %d",
                   pw_weights.dim(1), dw.out_channels));
    ConvSpec pw = ConvSpec::pointwise(dw.out_channels, pw_weights.dim(0));

    return conv2d(conv2d(input, dw_weights, dw), pw_weights, pw);
}

Tensor global_avg_pool(const Tensor& input) {
    require(input.rank() == 3, "global_avg_pool expects CxHxW input, got " +
                                   shape_str(input.shape()));
    const int C = input.dim(0), H = input.dim(1), W = input.dim(2);
    const double inv = 1.0 / (static_cast<double>(H) * W);
    Tensor out({C});
    for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        const double* xc = input.data() + static_cast<std::size_t>(c) * H * W;
        for (int i = 0; i < H * W; ++i) acc += xc[i];
        out[c] = acc * inv;
    }
    return out;
}

Tensor global_avg_pool_grad(const Tensor& grad_out, const Shape& input_shape) {
    const int C = input_shape[0], H = input_shape[1], W = input_shape[2];
    const double inv = 1.0 / (static_cast<double>(H) * W);
    Tensor gin(input_shape);
    for (int c = 0; c < C; ++c) {
        const double g = grad_out[c] * inv;
        double* gc = gin.data() + static_cast<std::size_t>(c) * H * W;
        for (int i = 0; i < H * W; ++i) gc[i] = g;
    }
    return gin;
}

Tensor linear(const Tensor& input, const Tensor& weights, const Tensor& bias) {
    require(input.rank() == 1, "linear expects a vector input, got " + shape_str(input.shape()));
    require(weights.rank() == 2 && weights.dim(1) == input.dim(0),
            "linear weights " + shape_str(weights.shape()) + " do not match input " +
                shape_str(input.shape()));
    require(bias.rank() == 1 && bias.dim(0) == weights.dim(0),
            "linear bias " + shape_str(bias.shape()) + " does not match weights " +
                shape_str(weights.shape()));
    const int M = weights.dim(0), N = weights.dim(1);
    Tensor out({M});
    for (int m = 0; m < M; ++m) {
        double acc = bias[m];
        const double* row = weights.data() + static_cast<std::size_t>(m) * N;
        for (int n = 0; n < N; ++n) acc += row[n] * input[n];
        out[m] = acc;
    }
    return out;
}

Tensor linear_grad_input(const Tensor& grad_out, const Tensor& weights) {
    const int M = weights.dim(0), N = weights.dim(1);
    Tensor gin({N});
    for (int m = 0; m < M; ++m) {
        const double g = grad_out[m];
        const double* row = weights.data() + static_cast<std::size_t>(m) * N;
        for (int n = 0; n < N; ++n) gin[n] += g * row[n];
    }
    return gin;
}

Tensor linear_grad_weights(const Tensor& grad_out, const Tensor& input) {
    const int M = grad_out.dim(0), N = input.dim(0);
    Tensor gw({M, N});
    for (int m = 0; m < M; ++m) {
        const double g = grad_out[m];
        double* row = gw.data() + static_cast<std::size_t>(m) * N;
        for (int n = 0; n < N; ++n) row[n] = g * input[n];
    }
    return gw;
}

Tensor relu(const Tensor& input) {
    Tensor out(input.shape());
    for (std::size_t i = 0; i < input.numel(); ++i) out[i] = input[i] > 0.0 ? input[i] : 0.0;
    return out;
}

Tensor relu_grad(const Tensor& grad_out, const Tensor& input) {
    Tensor gin(input.shape());
    for (std::size_t i = 0; i < input.numel(); ++i) gin[i] = input[i] > 0.0 ? grad_out[i] : 0.0;
    return gin;
}

Tensor sigmoid(const Tensor& input) {
    Tensor out(input.shape());
    for (std::size_t i = 0; i < input.numel(); ++i) {
        const double x = input[i];
        // split by sign so exp never overflows
        out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    return out;
}

Tensor sigmoid_grad(const Tensor& grad_out, const Tensor& output) {
    Tensor gin(output.shape());
    for (std::size_t i = 0; i < output.numel(); ++i)
        gin[i] = grad_out[i] * output[i] * (1.0 - output[i]);
    return gin;
}

Tensor softmax(const Tensor& input) {
    require(input.rank() == 1 && input.dim(0) >= 1,
            "softmax expects a non-empty vector, got " + shape_str(input.shape()));
    const double m = input.max();
    Tensor out(input.shape());
    double z = 0.0;
    for (std::size_t i = 0; i < input.numel(); ++i) {
        out[i] = std::exp(input[i] - m);
        z += out[i];
    }
    for (std::size_t i = 0; i < input.numel(); ++i) out[i] /= z;
    return out;
}

Tensor softmax_grad(const Tensor& grad_out, const Tensor& output) {
    double dot = 0.0;
    for (std::size_t i = 0; i < output.numel(); ++i) dot += grad_out[i] * output[i];
    Tensor gin(output.shape());
    for (std::size_t i = 0; i < output.numel(); ++i)
        gin[i] = output[i] * (grad_out[i] - dot);
    return gin;
}

DropoutResult dropout(const Tensor& input, double p, bool training, Rng& rng) {
    require(p >= 0.0 && p < 1.0, strfmt("dropout probability must be in [0,1), got %g", p));
    DropoutResult r{Tensor(input.shape()), Tensor(input.shape(), 1.0)};
    if (!training || p == 0.0) {
        r.output = input;
        return r;
    }
    const double keep_scale = 1.0 / (1.0 - p);
    for (std::size_t i = 0; i < input.numel(); ++i) {
        const double s = rng.bernoulli(p) ? 0.0 : keep_scale;
        r.scale[i] = s;
        r.output[i] = input[i] * s;
    }
    return r;
}

int argmax(const Tensor& v) {
    require(v.numel() >= 1, "argmax of empty tensor");
    int best = 0;
    for (std::size_t i = 1; i < v.numel(); ++i)
        if (v[i] > v[best]) best = static_cast<int>(i);
    return best;
}

}  // namespace maod::kernels
