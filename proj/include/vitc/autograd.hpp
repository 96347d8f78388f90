#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "vitc/tensor.hpp"

namespace vitc {

/// One vertex of the dynamically built computation graph.
struct Node {
    Tensor value;
    Tensor grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    /// Reads `self.grad` and accumulates into the inputs' gradients.
    std::function<void(Node& self)> backward;

    Tensor& grad_buffer();
};

using NodePtr = std::shared_ptr<Node>;

/// Handle to a graph node. Copies share the node.
class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);

    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    int dim(int axis) const { return node_->value.dim(axis); }

    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool has_grad() const { return node_ && !node_->grad.empty(); }
    /// Accumulated gradient, or zeros of the value's shape if none reached this node.
    Tensor grad() const;
    void zero_grad();

    const NodePtr& node() const { return node_; }
    bool defined() const { return static_cast<bool>(node_); }

private:
    friend Var make_result(Tensor, std::vector<Var>, std::function<void(Node&)>);
    NodePtr node_;
};

/// Builds an op output. When gradient recording is off, or no input needs a
/// gradient, the result is a constant and `backward` is dropped.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

/// Reverse-mode sweep from `root` (seeded with `seed`, broadcast to its shape).
void backward(const Var& root, double seed = 1.0);

bool grad_enabled() noexcept;

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

}  // namespace vitc
