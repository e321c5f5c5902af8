#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <utility>
#include <vector>

#include "stconv/tensor.hpp"

namespace stconv {

template <typename S>
struct Node;

template <typename S>
using NodePtr = std::shared_ptr<Node<S>>;

/// One recorded operation (or leaf) in the reverse-mode graph. The forward
/// value is owned by the node; input nodes keep the saved values the
/// backward rule needs alive. Gradients of interior nodes are scratch for a
/// single backward pass; leaf gradients persist and accumulate.
template <typename S>
struct Node {
    Tensor<S> value;
    Tensor<S> grad; // allocated on first touch, same shape as value
    std::vector<NodePtr<S>> inputs;
    std::function<void(Node<S>&)> backprop; // distributes this->grad to inputs
    const char* op = "leaf";
    bool requires_grad = false;
    bool leaf = true;

    Tensor<S>& ensure_grad() {
        if (grad.empty()) grad = Tensor<S>(value.shape());
        return grad;
    }

    void accumulate(const Tensor<S>& g) {
        Tensor<S>& dst = ensure_grad();
        const std::int64_t n = dst.size();
        for (std::int64_t i = 0; i < n; ++i) dst[i] += g[i];
    }
};

inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

inline bool grad_enabled() { return grad_mode_flag(); }

/// Disables graph recording in scope. Ops still validate and compute values.
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode_flag()) { grad_mode_flag() = false; }
    ~NoGradGuard() { grad_mode_flag() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

/// Value-semantic handle onto a graph node.
template <typename S>
class Var {
public:
    Var() = default;

    explicit Var(Tensor<S> value, bool requires_grad = false) : node_(std::make_shared<Node<S>>()) {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }

    static Var param(Tensor<S> value) { return Var(std::move(value), true); }
    static Var constant(Tensor<S> value) { return Var(std::move(value), false); }

    bool defined() const { return node_ != nullptr; }
    const Tensor<S>& value() const { return node_->value; }
    Tensor<S>& value_mut() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }

    Tensor<S>& grad() { return node_->ensure_grad(); }
    const Tensor<S>& grad() const { return const_cast<Node<S>*>(node_.get())->ensure_grad(); }

    void zero_grad() {
        if (node_) node_->ensure_grad().fill(S(0));
    }

    NodePtr<S>& node() { return node_; }
    const NodePtr<S>& node() const { return node_; }

private:
    NodePtr<S> node_;
};

/// Wraps a freshly computed value as an op result. Recording is skipped when
/// grad mode is off or no input carries gradient, in which case the result is
/// a detached constant.
template <typename S>
Var<S> make_op(Tensor<S> value, const char* op, std::vector<Var<S>> inputs,
               std::function<void(Node<S>&)> backprop) {
    bool needs = grad_enabled();
    if (needs) {
        needs = false;
        for (const auto& in : inputs)
            if (in.requires_grad()) {
                needs = true;
                break;
            }
    }
    Var<S> out(std::move(value), false);
    if (needs) {
        Node<S>& n = *out.node();
        n.requires_grad = true;
        n.leaf = false;
        n.op = op;
        n.inputs.reserve(inputs.size());
        for (auto& in : inputs) n.inputs.push_back(in.node());
        n.backprop = std::move(backprop);
    }
    return out;
}

/// Reverse-mode sweep from a scalar. Interior gradients are reset per call;
/// leaf gradients accumulate across calls until zero_grad.
template <typename S>
void backward(const Var<S>& loss) {
    if (!loss.defined()) throw std::invalid_argument("backward: undefined variable");
    if (loss.value().size() != 1)
        throw std::invalid_argument("backward: expected scalar, got shape " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return; // nothing reachable

    // Iterative post-order DFS over grad-requiring nodes.
    std::vector<Node<S>*> order;
    std::unordered_set<Node<S>*> visited;
    struct Frame {
        Node<S>* n;
        std::size_t next;
    };
    std::vector<Frame> stack;
    stack.push_back({loss.node().get(), 0});
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->inputs.size()) {
            Node<S>* child = f.n->inputs[f.next++].get();
            if (child->requires_grad && !visited.count(child)) {
                visited.insert(child);
                stack.push_back({child, 0});
            }
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    for (Node<S>* n : order)
        if (!n->leaf) n->ensure_grad().fill(S(0));
    loss.node()->ensure_grad()[0] = S(1);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<S>* n = *it;
        if (!n->leaf && n->backprop) n->backprop(*n);
    }
}

} // namespace stconv
