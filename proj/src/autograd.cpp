#include "fstta/autograd.hpp"

#include <unordered_set>

#include "fstta/errors.hpp"

namespace fstta {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor& Node::grad_buffer() {
    if (grad.shape() != value.shape() || grad.size() != value.size()) grad = Tensor(value.shape());
    return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

Tensor Var::grad() const {
    if (has_grad()) return node_->grad;
    return Tensor(node_->value.shape());
}

void Var::zero_grad() {
    if (node_ && node_->has_grad()) node_->grad.fill(0.0);
}

Var Var::make(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
    Var out(std::move(value));
    if (!g_grad_enabled) return out;
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->inputs.reserve(inputs.size());
    for (auto& in : inputs) out.node_->inputs.push_back(in.node_);
    out.node_->backward = std::move(backward);
    return out;
}

void Var::backward() {
    if (!node_) throw Error("backward() on an undefined Var");
    if (node_->value.size() != 1) {
        throw ShapeError("backward() needs a single-element value, got shape " + shape_str(node_->value.shape()));
    }
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order of the graph.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Interior gradients belong to this pass only; leaves keep accumulating.
    for (Node* node : order)
        if (node->backward) node->grad = Tensor();
    node_->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward && node->has_grad()) node->backward(*node);
    }
}

}  // namespace fstta
