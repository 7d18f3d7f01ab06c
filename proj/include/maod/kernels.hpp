#pragma once

#include "maod/tensor.hpp"

namespace maod::kernels {

// Cross-correlation (no kernel flip), zero padding, square kernels.
// Input CxHxW, weights per ConvSpec::weight_shape(), output OxH'xW' with
// H' = floor((H + 2p - K)/stride) + 1. No bias.
Tensor conv2d(const Tensor& input, const Tensor& weights, const ConvSpec& spec);
Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& weights, const ConvSpec& spec,
                         const Shape& input_shape);
Tensor conv2d_grad_weights(const Tensor& grad_out, const Tensor& input, const ConvSpec& spec);

// Per-channel KxK stage followed by a 1x1 channel-mixing stage.
Tensor depthwise_separable(const Tensor& input, const Tensor& dw_weights,
                           const Tensor& pw_weights, int stride, int padding);

Tensor global_avg_pool(const Tensor& input);                      // CxHxW -> C
Tensor global_avg_pool_grad(const Tensor& grad_out, const Shape& input_shape);

Tensor linear(const Tensor& input, const Tensor& weights, const Tensor& bias);  // MxN * N + M
Tensor linear_grad_input(const Tensor& grad_out, const Tensor& weights);
Tensor linear_grad_weights(const Tensor& grad_out, const Tensor& input);

Tensor relu(const Tensor& input);
Tensor relu_grad(const Tensor& grad_out, const Tensor& input);

Tensor sigmoid(const Tensor& input);
Tensor sigmoid_grad(const Tensor& grad_out, const Tensor& output);

// Shift-stable: subtracts the max logit before exponentiation.
Tensor softmax(const Tensor& input);
Tensor softmax_grad(const Tensor& grad_out, const Tensor& output);

struct DropoutResult {
    Tensor output;
    Tensor scale;  // per-element multiplier (0 or 1/(1-p)); reused by the backward pass
};
// Inverted dropout: train mode zeroes elements with probability p and scales
// survivors by 1/(1-p); eval mode is the identity. Requires 0 <= p < 1.
DropoutResult dropout(const Tensor& input, double p, bool training, Rng& rng);

int argmax(const Tensor& v);  // lowest index wins ties

}  // namespace maod::kernels
