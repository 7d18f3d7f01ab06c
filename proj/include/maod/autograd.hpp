#pragma once

#include <functional>
#include <memory>
#include <string>

#include "maod/kernels.hpp"
#include "maod/tensor.hpp"

namespace maod {

/// One named parameter array. Frozen arrays never get a gradient buffer.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;  // empty while no backward pass has touched it, and always while frozen
    bool frozen = false;

    void zero_grad() { grad = Tensor(); }
    void accumulate(const Tensor& g) {
        if (grad.empty()) grad = Tensor(value.shape());
        grad += g;
    }
};

namespace autograd {

struct Node;
using NodeRef = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;                  // allocated lazily during backward
    bool requires_grad = false;
    std::vector<NodeRef> parents;
    // pushes this node's grad into parents (and bound Parameters)
    std::function<void(Node&)> backprop;
    Parameter* param = nullptr;   // set for parameter leaves

    void ensure_grad() {
        if (grad.empty()) grad = Tensor(value.shape());
    }
};

/// Handle to a node in the recorded computation graph.
class Var {
public:
    Var() = default;
    explicit Var(NodeRef n) : node_(std::move(n)) {}

    const Tensor& value() const { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    NodeRef node() const { return node_; }
    double scalar() const {
        require(node_ && node_->value.numel() == 1, "scalar() on non-scalar var");
        return node_->value[0];
    }

private:
    NodeRef node_;
};

/// Plain-tensor leaf. Set requires_grad to collect d(loss)/d(input) in the
/// node itself (used by the finite-difference checks).
Var leaf(Tensor value, bool requires_grad = false);

/// Parameter leaf: gradients accumulate into param.grad unless frozen.
Var param(Parameter& p);

/// Reverse-mode accumulation from a scalar loss that was produced by a
/// recorded forward pass. Rejects non-scalar losses and bare leaves.
void backward(const Var& loss);

namespace ops {

Var conv2d(const Var& input, const Var& weights, const ConvSpec& spec);
Var depthwise_separable(const Var& input, const Var& dw_weights, const Var& pw_weights,
                        int stride, int padding);
Var global_avg_pool(const Var& input);
Var linear(const Var& input, const Var& weights, const Var& bias);
Var relu(const Var& input);
Var sigmoid(const Var& input);
Var softmax(const Var& input);
Var dropout(const Var& input, double p, bool training, Rng& rng);
Var add(const Var& a, const Var& b);
Var flatten(const Var& input);

// sum_i coeffs[i] * input[i]  (scalar; handy for gradient checks)
Var weighted_sum(const Var& input, const Tensor& coeffs);

// -sum_i alpha[i] * target[i] * log(softmax(logits)[i]),
// computed via log-sum-exp. target must sum to 1 (+-1e-9), alpha > 0.
Var weighted_cross_entropy(const Var& logits, const Tensor& target, const Tensor& alpha);

// sum of squared differences between two equal-length vectors
Var squared_error(const Var& pred, const Tensor& target);

}  // namespace ops
}  // namespace autograd
}  // namespace maod
