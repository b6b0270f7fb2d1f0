#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "gshield/numerics/tensor.hpp"

namespace gshield {

template <class T>
struct Node {
    BasicTensor<T> value;
    BasicTensor<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(Node&)> backward_fn;

    BasicTensor<T>& grad_buffer() {
        if (grad.numel() != value.numel()) grad = BasicTensor<T>(value.shape());
        return grad;
    }
};

/// Handle to a node of the reverse-mode graph. Copies share the node.
/// The graph is recorded implicitly: every op output keeps its inputs and
/// a backward closure, but only when some input requires a gradient, so
/// inference over frozen parameters records nothing.
template <class T>
class BasicVar {
public:
    BasicVar() = default;
    explicit BasicVar(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    static BasicVar constant(BasicTensor<T> value);
    static BasicVar parameter(BasicTensor<T> value);

    const BasicTensor<T>& value() const { return node_->value; }
    BasicTensor<T>& mutable_value() { return node_->value; }
    const BasicTensor<T>& grad() const { return node_->grad; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    bool defined() const { return static_cast<bool>(node_); }

    /// Allocates a zero gradient buffer (used on parameters before a step).
    void zero_grad() {
        node_->grad = BasicTensor<T>(node_->value.shape());
    }

    /// Runs reverse-mode accumulation from this scalar output.
    void backward() const;

    BasicVar detach() const { return constant(node_->value); }

    Node<T>* node() const { return node_.get(); }
    const std::shared_ptr<Node<T>>& shared() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

using Var = BasicVar<float>;
using VarD = BasicVar<double>;

namespace detail {
inline thread_local int no_grad_depth = 0;
}

/// While alive, ops on this thread record no graph (inference mode).
class NoGradGuard {
public:
    NoGradGuard() { ++detail::no_grad_depth; }
    ~NoGradGuard() { --detail::no_grad_depth; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

/// Builds an op output. The backward closure is kept (with the inputs) only
/// when at least one input requires a gradient and no NoGradGuard is active.
template <class T>
BasicVar<T> make_op(BasicTensor<T> value, std::vector<BasicVar<T>> inputs,
                    std::function<void(Node<T>&)> backward_fn) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any && detail::no_grad_depth == 0) {
        node->requires_grad = true;
        for (auto& in : inputs) node->parents.push_back(in.shared());
        node->backward_fn = std::move(backward_fn);
    }
    return BasicVar<T>(std::move(node));
}

/// True when parent `i` of an op node needs its gradient.
template <class T>
bool wants_grad(const Node<T>& self, std::size_t i) {
    return self.parents.size() > i && self.parents[i]->requires_grad;
}

namespace ops {

template <class T> BasicVar<T> add(const BasicVar<T>& a, const BasicVar<T>& b);
template <class T> BasicVar<T> sub(const BasicVar<T>& a, const BasicVar<T>& b);
template <class T> BasicVar<T> mul(const BasicVar<T>& a, const BasicVar<T>& b);
template <class T> BasicVar<T> scale(const BasicVar<T>& a, T factor);
template <class T> BasicVar<T> sum(const BasicVar<T>& a);
template <class T> BasicVar<T> mean(const BasicVar<T>& a);
template <class T> BasicVar<T> reshape(const BasicVar<T>& a, Shape shape);

/// Cross-correlation. weight is [Cout, Cin, k, k], bias is [Cout] (or undefined).
template <class T>
BasicVar<T> conv2d(const BasicVar<T>& input, const BasicVar<T>& weight, const BasicVar<T>& bias,
                   int stride, int padding);

/// Adjoint of conv2d. weight is [Cin, Cout, k, k]; H' = (H - 1) * stride - 2 * padding + k.
template <class T>
BasicVar<T> conv_transpose2d(const BasicVar<T>& input, const BasicVar<T>& weight,
                             const BasicVar<T>& bias, int stride, int padding);

/// input [B, N], weight [M, N], bias [M] -> [B, M].
template <class T>
BasicVar<T> dense(const BasicVar<T>& input, const BasicVar<T>& weight, const BasicVar<T>& bias);

template <class T> BasicVar<T> relu(const BasicVar<T>& x);
template <class T> BasicVar<T> leaky_relu(const BasicVar<T>& x, T slope);
template <class T> BasicVar<T> sigmoid(const BasicVar<T>& x);

/// [B, C, H, W] -> [B, C].
template <class T> BasicVar<T> global_avg_pool(const BasicVar<T>& x);

/// Concatenates two [B, C, H, W] tensors along channels.
template <class T> BasicVar<T> concat_channels(const BasicVar<T>& a, const BasicVar<T>& b);

/// Scales each (b, y, x) channel vector to unit L2 norm.
template <class T> BasicVar<T> channel_normalize(const BasicVar<T>& x, T eps = T(1e-10));

/// Mean absolute difference (subgradient 0 at ties).
template <class T> BasicVar<T> l1(const BasicVar<T>& a, const BasicVar<T>& b);

/// Mean squared difference.
template <class T> BasicVar<T> mse(const BasicVar<T>& a, const BasicVar<T>& b);

/// Mean binary cross-entropy of probabilities against 0/1 labels. Values are
/// clamped to [margin, 1 - margin]; anything outside [0, 1] is rejected.
template <class T>
BasicVar<T> bce(const BasicVar<T>& prob, const BasicTensor<T>& labels, T margin = T(1e-7));

/// bce(sigmoid(logits), labels) computed in log space, so saturated logits
/// keep a gradient of sigmoid(x) - y.
template <class T>
BasicVar<T> bce_with_logits(const BasicVar<T>& logits, const BasicTensor<T>& labels);

} // namespace ops

} // namespace gshield
