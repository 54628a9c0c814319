#pragma once

// Minimal reverse-mode automatic differentiation over Tensor<T>.
//
// A Var is a shared handle to a graph node. Ops record their inputs and a
// backward closure when gradient recording is enabled and any input requires
// a gradient. backward() runs the closures in reverse topological order,
// accumulates into leaf gradients, and releases the intermediate graph.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "xlearner/tensor.hpp"

namespace xl::ag {

template <class T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // empty until something accumulates into it
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    // Zero-initialized on first use.
    Tensor<T>& grad_buffer() {
        if (grad.empty() && !value.empty()) grad = Tensor<T>(value.shape(), T(0));
        return grad;
    }
};

template <class T>
class Var {
public:
    Var() = default;
    explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    static Var parameter(Tensor<T> value) { return Var(std::move(value), true); }

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Tensor<T>& value() const { return node_->value; }
    // Direct access for optimizers, initializers and checkpoint loading.
    Tensor<T>& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t numel() const { return node_->value.numel(); }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool has_grad() const { return node_ && !node_->grad.empty(); }
    const Tensor<T>& grad() const { return node_->grad; }
    Tensor<T>& mutable_grad() { return node_->grad_buffer(); }
    void zero_grad() { node_->grad = Tensor<T>(); }

    // Scalar value of a single-element Var.
    T item() const { return node_->value[0]; }

    Node<T>* node() const noexcept { return node_.get(); }
    const std::shared_ptr<Node<T>>& ptr() const noexcept { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

bool grad_enabled();

// Disables graph recording for its lifetime (inference, teachers, probes).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Creates an op output. The backward closure is stored only when recording is
// enabled and some parent requires a gradient.
template <class T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> backward) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    bool any = false;
    if (grad_enabled()) {
        for (const auto& p : parents) any = any || p.requires_grad();
    }
    if (any) {
        node->requires_grad = true;
        node->parents.reserve(parents.size());
        for (auto& p : parents) node->parents.push_back(p.ptr());
        node->backward_fn = std::move(backward);
    }
    return Var<T>(std::move(node));
}

// Gradient w.r.t. an op's parent, or nullptr when that parent takes none.
template <class T>
Tensor<T>* parent_grad(Node<T>& out, std::size_t i) {
    auto& p = out.parents[i];
    return p && p->requires_grad ? &p->grad_buffer() : nullptr;
}

// Backpropagates from a single-element root (seed 1) or with an explicit seed.
template <class T>
void backward(const Var<T>& root);
template <class T>
void backward(const Var<T>& root, const Tensor<T>& seed);

// A new leaf sharing no graph with x: values flow, gradients stop.
template <class T>
Var<T> detach(const Var<T>& x) {
    return Var<T>(x.value(), false);
}

}  // namespace xl::ag
