#include "xlearner/autograd.hpp"

#include <stdexcept>
#include <unordered_set>

namespace xl::ag {
namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <class T>
void backward(const Var<T>& root, const Tensor<T>& seed) {
    if (!root.requires_grad()) return;
    if (seed.shape() != root.shape())
        throw std::invalid_argument("backward: seed shape " + shape_str(seed.shape()) + " != root shape " +
                                    shape_str(root.shape()));

    // Iterative post-order DFS gives a deterministic topological order.
    // Owning handles: releasing a node's parents below must not free nodes that
    // are still queued.
    std::vector<std::shared_ptr<Node<T>>> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<std::shared_ptr<Node<T>>, std::size_t>> stack{{root.ptr(), 0}};
    visited.insert(root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            std::shared_ptr<Node<T>> child = node->parents[next++];
            if (child && child->requires_grad && visited.insert(child.get()).second)
                stack.emplace_back(std::move(child), 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    Tensor<T>& g = root.node()->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += seed[i];

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = it->get();
        if (!node->backward_fn) continue;
        if (!node->grad.empty()) node->backward_fn(*node);
        // Interior nodes are single-use: release saved tensors and gradients.
        node->backward_fn = nullptr;
        node->parents.clear();
        node->grad = Tensor<T>();
    }
}

template <class T>
void backward(const Var<T>& root) {
    if (root.numel() != 1) throw std::invalid_argument("backward: root must be a scalar, got " + shape_str(root.shape()));
    backward(root, Tensor<T>(root.shape(), T(1)));
}

template void backward(const Var<float>&);
template void backward(const Var<double>&);
template void backward(const Var<float>&, const Tensor<float>&);
template void backward(const Var<double>&, const Tensor<double>&);

}  // namespace xl::ag
