#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace genodiff {

// Reverse-mode autodiff over TensorT values. Ops build a dynamic graph of
// shared nodes; backward() topo-sorts from the scalar root and runs each
// node's pull-back, accumulating into parent grad buffers. A node created
// while grad mode is off (or with no differentiable parents) keeps no
// parents and no closure, so inference builds no graph.

inline bool& grad_mode_ref() {
    thread_local bool enabled = true;
    return enabled;
}

inline bool grad_enabled() { return grad_mode_ref(); }

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_mode_ref()) { grad_mode_ref() = false; }
    ~NoGradGuard() { grad_mode_ref() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <class S>
struct NodeT {
    TensorT<S> value;
    TensorT<S> grad;  // allocated lazily, same shape as value
    bool requires_grad = false;
    std::vector<std::shared_ptr<NodeT>> parents;
    std::function<void(NodeT&)> backward_fn;

    TensorT<S>& grad_buf() {
        if (grad.numel() == 0) grad = TensorT<S>(value.shape());
        return grad;
    }
};

template <class S>
class VarT {
public:
    VarT() = default;

    explicit VarT(TensorT<S> value, bool requires_grad = false)
        : node_(std::make_shared<NodeT<S>>()) {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }

    static VarT param(TensorT<S> value) { return VarT(std::move(value), true); }
    static VarT constant(TensorT<S> value) { return VarT(std::move(value), false); }

    bool defined() const { return node_ != nullptr; }
    const TensorT<S>& value() const { return node_->value; }
    TensorT<S>& value_mut() { return node_->value; }
    const TensorT<S>& grad() const { return node_->grad_buf(); }
    TensorT<S>& grad_mut() { return node_->grad_buf(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    const Shape& shape() const { return node_->value.shape(); }
    int64_t numel() const { return node_->value.numel(); }

    void zero_grad() {
        if (node_ && node_->grad.numel() != 0) node_->grad.fill(S(0));
    }

    std::shared_ptr<NodeT<S>> node() const { return node_; }

    // Backward from this (scalar) node: seeds grad with 1 and pulls through
    // the graph in reverse topological order.
    void backward() const {
        if (!node_) throw UsageError("backward: undefined var");
        if (node_->value.numel() != 1) throw UsageError("backward: root must be a scalar");
        std::vector<NodeT<S>*> order;
        std::unordered_set<NodeT<S>*> seen;
        std::vector<std::pair<NodeT<S>*, size_t>> stack;
        stack.emplace_back(node_.get(), 0);
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, next] = stack.back();
            if (next < n->parents.size()) {
                NodeT<S>* p = n->parents[next].get();
                ++next;
                if (p && !seen.count(p)) {
                    seen.insert(p);
                    stack.emplace_back(p, 0);
                }
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
        node_->grad_buf().fill(S(1));
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            NodeT<S>* n = *it;
            if (n->backward_fn) n->backward_fn(*n);
        }
    }

private:
    std::shared_ptr<NodeT<S>> node_;
};

using Var = VarT<double>;

namespace detail {

// Common op construction: computes whether the result participates in the
// graph and attaches parents/closure only if so.
template <class S>
VarT<S> make_op(TensorT<S> value, std::vector<VarT<S>> inputs,
                std::function<void(NodeT<S>&)> backward_fn) {
    bool track = grad_enabled();
    if (track) {
        bool any = false;
        for (const auto& v : inputs) any = any || v.requires_grad();
        track = any;
    }
    VarT<S> out(std::move(value), track);
    if (track) {
        auto node = out.node();
        node->parents.reserve(inputs.size());
        for (auto& v : inputs) node->parents.push_back(v.node());
        node->backward_fn = std::move(backward_fn);
    }
    return out;
}

}  // namespace detail

template <class S>
struct ParameterT {
    std::string name;
    VarT<S> var;
};

using Parameter = ParameterT<double>;

template <class S>
int64_t total_params(const std::vector<ParameterT<S>>& ps) {
    int64_t n = 0;
    for (const auto& p : ps) n += p.var.numel();
    return n;
}

}  // namespace genodiff
