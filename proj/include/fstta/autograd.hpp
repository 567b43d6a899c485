#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "fstta/tensor.hpp"

namespace fstta {

/// Graph node: a value, its gradient buffer, and how to push gradients to inputs.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    /// Gradient buffer, allocated as zeros on first use.
    Tensor& grad_buffer();
    bool has_grad() const noexcept { return grad.size() == value.size() && !value.empty(); }
};

/// Handle to a node in the reverse-mode graph. Copies share the node.
class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);

    static Var parameter(Tensor value) { return Var(std::move(value), true); }

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }

    bool has_grad() const noexcept { return node_ && node_->has_grad(); }
    /// Gradient accumulated by backward(); zeros if none has reached this node.
    Tensor grad() const;
    Tensor& mutable_grad() { return node_->grad_buffer(); }
    void zero_grad();

    /// Reverse pass from a single-element value, seeding d(self)/d(self) = 1.
    void backward();

    const std::shared_ptr<Node>& node() const noexcept { return node_; }

    /// Builds an op result. Records the inputs and the backward closure only
    /// when gradients are enabled and some input requires them.
    static Var make(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

private:
    std::shared_ptr<Node> node_;
};

bool grad_enabled() noexcept;

/// Disables graph construction on this thread for the guard's lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

}  // namespace fstta
