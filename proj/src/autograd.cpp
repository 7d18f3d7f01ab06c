#include "maod/autograd.hpp"

#include <cmath>
#include <unordered_set>

namespace maod::autograd {

Var leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(n);
}

Var param(Parameter& p) {
    auto n = std::make_shared<Node>();
    n->value = p.value;
    n->requires_grad = !p.frozen;
    n->param = &p;
    return Var(n);
}

namespace {

NodeRef make_op(Tensor value, std::vector<NodeRef> parents, std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    for (const auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
    return n;
}

void push_grad(const NodeRef& parent, const Tensor& g) {
    if (!parent->requires_grad) return;
    if (parent->param) {
        parent->param->accumulate(g);
        return;
    }
    parent->ensure_grad();
    parent->grad += g;
}

}  // namespace

void backward(const Var& loss) {
    NodeRef root = loss.node();
    require(root != nullptr, "backward on empty var");
    require(root->value.numel() == 1, "backward expects a scalar loss, got shape " +
                                          shape_str(root->value.shape()));
    require(!root->parents.empty(),
            "backward without a recorded forward pass (loss is a bare leaf)");

    // iterative DFS post-order; parent order fixes the accumulation order
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (!seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (!n->backprop || !n->requires_grad) continue;
        if (n->grad.empty()) continue;  // no downstream gradient reached this node
        n->backprop(*n);
    }
}

namespace ops {

Var conv2d(const Var& input, const Var& weights, const ConvSpec& spec) {
    Tensor out = kernels::conv2d(input.value(), weights.value(), spec);
    NodeRef xn = input.node(), wn = weights.node();
    Shape in_shape = input.value().shape();
    return Var(make_op(std::move(out), {xn, wn}, [xn, wn, spec, in_shape](Node& self) {
        if (xn->requires_grad)
            push_grad(xn, kernels::conv2d_grad_input(self.grad, wn->value, spec, in_shape));
        if (wn->requires_grad)
            push_grad(wn, kernels::conv2d_grad_weights(self.grad, xn->value, spec));
    }));
}

Var depthwise_separable(const Var& input, const Var& dw_weights, const Var& pw_weights,
                        int stride, int padding) {
    const Tensor& dw = dw_weights.value();
    const Tensor& pw = pw_weights.value();
    require(input.value().rank() == 3, "depthwise_separable expects CxHxW input");
    require(dw.rank() == 4 && dw.dim(1) == 1 && dw.dim(0) % input.value().dim(0) == 0,
            "depthwise stage weights " + shape_str(dw.shape()) + " do not match input " +
                shape_str(input.value().shape()));
    const int mult = dw.dim(0) / input.value().dim(0);
    ConvSpec dws = ConvSpec::depthwise(input.value().dim(0), dw.dim(2), stride, padding, mult);
    require(pw.rank() == 4 && pw.dim(1) == dws.out_channels && pw.dim(2) == 1 && pw.dim(3) == 1,
            "pointwise stage weights " + shape_str(pw.shape()) + " do not match depthwise output");
    ConvSpec pws = ConvSpec::pointwise(dws.out_channels, pw.dim(0));
    return conv2d(conv2d(input, dw_weights, dws), pw_weights, pws);
}

Var global_avg_pool(const Var& input) {
    Tensor out = kernels::global_avg_pool(input.value());
    NodeRef xn = input.node();
    Shape in_shape = input.value().shape();
    return Var(make_op(std::move(out), {xn}, [xn, in_shape](Node& self) {
        push_grad(xn, kernels::global_avg_pool_grad(self.grad, in_shape));
    }));
}

Var linear(const Var& input, const Var& weights, const Var& bias) {
    Tensor out = kernels::linear(input.value(), weights.value(), bias.value());
    NodeRef xn = input.node(), wn = weights.node(), bn = bias.node();
    return Var(make_op(std::move(out), {xn, wn, bn}, [xn, wn, bn](Node& self) {
        if (xn->requires_grad) push_grad(xn, kernels::linear_grad_input(self.grad, wn->value));
        if (wn->requires_grad) push_grad(wn, kernels::linear_grad_weights(self.grad, xn->value));
        if (bn->requires_grad) push_grad(bn, self.grad);
    }));
}

Var relu(const Var& input) {
    Tensor out = kernels::relu(input.value());
    NodeRef xn = input.node();
    return Var(make_op(std::move(out), {xn}, [xn](Node& self) {
        push_grad(xn, kernels::relu_grad(self.grad, xn->value));
    }));
}

Var sigmoid(const Var& input) {
    Tensor out = kernels::sigmoid(input.value());
    NodeRef xn = input.node();
    auto self_holder = std::make_shared<Tensor>(out);
    return Var(make_op(std::move(out), {xn}, [xn, self_holder](Node& self) {
        push_grad(xn, kernels::sigmoid_grad(self.grad, *self_holder));
    }));
}

Var softmax(const Var& input) {
    Tensor out = kernels::softmax(input.value());
    NodeRef xn = input.node();
    auto self_holder = std::make_shared<Tensor>(out);
    return Var(make_op(std::move(out), {xn}, [xn, self_holder](Node& self) {
        push_grad(xn, kernels::softmax_grad(self.grad, *self_holder));
    }));
}

Var dropout(const Var& input, double p, bool training, Rng& rng) {
    auto r = kernels::dropout(input.value(), p, training, rng);
    NodeRef xn = input.node();
    auto scale = std::make_shared<Tensor>(std::move(r.scale));
    return Var(make_op(std::move(r.output), {xn}, [xn, scale](Node& self) {
        Tensor g(self.grad.shape());
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] = self.grad[i] * (*scale)[i];
        push_grad(xn, g);
    }));
}

Var add(const Var& a, const Var& b) {
    require(a.value().same_shape(b.value()), "add shape mismatch: " +
                                                 shape_str(a.value().shape()) + " vs " +
                                                 shape_str(b.value().shape()));
    Tensor out = a.value();
    out += b.value();
    NodeRef an = a.node(), bn = b.node();
    return Var(make_op(std::move(out), {an, bn}, [an, bn](Node& self) {
        push_grad(an, self.grad);
        push_grad(bn, self.grad);
    }));
}

Var flatten(const Var& input) {
    Tensor out({static_cast<int>(input.value().numel())}, input.value().vec());
    NodeRef xn = input.node();
    Shape in_shape = input.value().shape();
    return Var(make_op(std::move(out), {xn}, [xn, in_shape](Node& self) {
        push_grad(xn, Tensor(in_shape, self.grad.vec()));
    }));
}

Var weighted_sum(const Var& input, const Tensor& coeffs) {
    require(input.value().numel() == coeffs.numel(), "weighted_sum length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < coeffs.numel(); ++i) acc += input.value()[i] * coeffs[i];
    NodeRef xn = input.node();
    auto c = std::make_shared<Tensor>(coeffs);
    return Var(make_op(Tensor::scalar(acc), {xn}, [xn, c](Node& self) {
        Tensor g(xn->value.shape());
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] = self.grad[0] * (*c)[i];
        push_grad(xn, g);
    }));
}

Var weighted_cross_entropy(const Var& logits, const Tensor& target, const Tensor& alpha) {
    const Tensor& o = logits.value();
    require(o.rank() == 1, "weighted_cross_entropy expects a logit vector");
    require(o.all_finite(), "weighted_cross_entropy rejects non-finite logits");
    require(target.numel() == o.numel() && alpha.numel() == o.numel(),
            strfmt("weighted_cross_entropy length mismatch: logits %zu target %zu alpha %zu",
                   o.numel(), target.numel(), alpha.numel()));
    double tsum = 0.0;
    for (std::size_t i = 0; i < target.numel(); ++i) {
        require(alpha[i] > 0.0, "class weights must be positive");
        require(target[i] >= 0.0, "target distribution must be non-negative");
        tsum += target[i];
    }
    require(std::abs(tsum - 1.0) <= 1e-9,
            strfmt("target distribution sums to %.12g, expected 1", tsum));

    // loss = -sum_i alpha_i t_i (o_i - logsumexp(o))
    const double m = o.max();
    double z = 0.0;
    for (std::size_t i = 0; i < o.numel(); ++i) z += std::exp(o[i] - m);
    const double lse = m + std::log(z);
    double loss = 0.0;
    double at = 0.0;  // sum_i alpha_i t_i
    for (std::size_t i = 0; i < o.numel(); ++i) {
        loss -= alpha[i] * target[i] * (o[i] - lse);
        at += alpha[i] * target[i];
    }

    NodeRef xn = logits.node();
    auto t = std::make_shared<Tensor>(target);
    auto a = std::make_shared<Tensor>(alpha);
    auto probs = std::make_shared<Tensor>(kernels::softmax(o));
    return Var(make_op(Tensor::scalar(loss), {xn}, [xn, t, a, probs, at](Node& self) {
        // d loss / d o_i = (sum_j alpha_j t_j) p_i - alpha_i t_i
        Tensor g(xn->value.shape());
        for (std::size_t i = 0; i < g.numel(); ++i)
            g[i] = self.grad[0] * (at * (*probs)[i] - (*a)[i] * (*t)[i]);
        push_grad(xn, g);
    }));
}

Var squared_error(const Var& pred, const Tensor& target) {
    const Tensor& p = pred.value();
    require(p.numel() == target.numel(), "squared_error length mismatch");
    double loss = 0.0;
    for (std::size_t i = 0; i < p.numel(); ++i) {
        const double d = p[i] - target[i];
        loss += d * d;
    }
    NodeRef xn = pred.node();
    auto t = std::make_shared<Tensor>(target);
    return Var(make_op(Tensor::scalar(loss), {xn}, [xn, t](Node& self) {
        Tensor g(xn->value.shape());
        for (std::size_t i = 0; i < g.numel(); ++i)
            g[i] = self.grad[0] * 2.0 * (xn->value[i] - (*t)[i]);
        push_grad(xn, g);
    }));
}

}  // namespace ops
}  // namespace maod::autograd
