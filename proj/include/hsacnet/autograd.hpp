#pragma once
// Reverse-mode automatic differentiation on tensors. Ops build a DAG of
// Node<T>; backward() walks it in reverse topological order. Gradients
// accumulate with fixed iteration order so results do not depend on the
// number of OpenMP threads.

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "hsacnet/tensor.hpp"

namespace hsacnet {

template <class T>
class Node;

template <class T>
using Var = std::shared_ptr<Node<T>>;

namespace detail {
inline thread_local int no_grad_depth = 0;
}

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

// RAII guard: forwards built under it record no backward closures.
struct NoGrad {
    NoGrad() { ++detail::no_grad_depth; }
    ~NoGrad() { --detail::no_grad_depth; }
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;
};

template <class T>
class Node {
public:
    Tensor<T> value;
    Tensor<T> grad;  // allocated lazily, same shape as value
    bool requires_grad = false;
    std::vector<Var<T>> parents;
    std::function<void(Node<T>&)> backward_fn;

    Node() = default;
    explicit Node(Tensor<T> v) : value(std::move(v)) {}

    Tensor<T>& ensure_grad() {
        if (grad.numel() != value.numel()) grad = Tensor<T>::zeros(value.shape);
        return grad;
    }

    void zero_grad() {
        if (grad.numel() > 0) grad.fill(T(0));
    }
};

template <class T>
Var<T> make_var(Tensor<T> value, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>(std::move(value));
    n->requires_grad = requires_grad && grad_enabled();
    return n;
}

// Wire a freshly computed output node to its parents. The closure is only
// kept when gradients can actually flow.
template <class T>
Var<T> attach(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> bw) {
    auto out = std::make_shared<Node<T>>(std::move(value));
    if (grad_enabled()) {
        bool need = false;
        for (const auto& p : parents)
            if (p && p->requires_grad) need = true;
        if (need) {
            out->requires_grad = true;
            out->parents = std::move(parents);
            out->backward_fn = std::move(bw);
        }
    }
    return out;
}

template <class T>
void topo_order(Node<T>* root, std::vector<Node<T>*>& order) {
    std::unordered_set<Node<T>*> seen;
    std::vector<std::pair<Node<T>*, size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node<T>* p = node->parents[idx++].get();
            if (p && p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
}

// Backpropagate from a scalar root.
template <class T>
void backward(const Var<T>& root) {
    check(root->value.numel() == 1, "backward: root must be scalar");
    if (!root->requires_grad) return;
    std::vector<Node<T>*> order;
    topo_order(root.get(), order);
    root->ensure_grad();
    root->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn && n->grad.numel() > 0) n->backward_fn(*n);
    }
}

}  // namespace hsacnet
