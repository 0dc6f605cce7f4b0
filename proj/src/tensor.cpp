#include "uidsc/tensor.hpp"

#include <algorithm>
#include <unordered_set>

#include "uidsc/errors.hpp"

namespace uidsc {

std::string Shape::str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.numel(), fill) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
        throw ShapeError("negative tensor dimension " + shape.str());
    }
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape.numel()) {
        throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                         " does not match shape " + shape.str());
    }
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape.numel() != shape_.numel()) {
        throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
    }
    return Tensor(shape, data_);
}

Tensor Tensor::slice_batch(int first, int count) const {
    if (first < 0 || count < 0 || first + count > shape_.n) {
        throw ShapeError("batch slice out of range for " + shape_.str());
    }
    Shape s = shape_;
    s.n = count;
    const std::size_t per = shape_.per_sample();
    std::vector<double> out(data_.begin() + static_cast<std::ptrdiff_t>(first * per),
                            data_.begin() + static_cast<std::ptrdiff_t>((first + count) * per));
    return Tensor(s, std::move(out));
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
    if (!(other.shape_ == shape_)) {
        throw ShapeError("accumulate " + other.shape_.str() + " into " + shape_.str());
    }
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Tensor stack_batch(std::span<const Tensor> samples) {
    if (samples.empty()) throw ShapeError("stack_batch of zero samples");
    Shape s = samples.front().shape();
    for (const auto& t : samples) {
        if (t.n() != 1 || t.c() != s.c || t.h() != s.h || t.w() != s.w) {
            throw ShapeError("stack_batch shape mismatch: " + t.shape().str() + " vs " + s.str());
        }
    }
    s.n = static_cast<int>(samples.size());
    std::vector<double> data;
    data.reserve(s.numel());
    for (const auto& t : samples) data.insert(data.end(), t.storage().begin(), t.storage().end());
    return Tensor(s, std::move(data));
}

namespace ag {

Tensor& Node::grad_buffer() {
    if (grad.empty() && value.size() > 0) grad = Tensor(value.shape(), 0.0);
    return grad;
}

}  // namespace ag

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<ag::Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

void Var::zero_grad() {
    if (node_) node_->grad = Tensor();
}

Var Var::from_op(Tensor value, std::vector<Var> parents, ag::BackwardFn backward) {
    Var out(std::move(value), false);
    if (!g_grad_enabled) return out;
    for (auto& p : parents) {
        if (p.requires_grad()) out.node_->parents.push_back(p.node_);
    }
    if (!out.node_->parents.empty()) {
        out.node_->requires_grad = true;
        out.node_->backward = std::move(backward);
    }
    return out;
}

void backward(const Var& root) {
    if (root.value().size() != 1) {
        throw ShapeError("backward() without a seed needs a scalar root, got " +
                         root.shape().str());
    }
    backward(root, Tensor(root.shape(), 1.0));
}

void backward(const Var& root, const Tensor& seed) {
    if (!root.requires_grad()) return;
    if (!(seed.shape() == root.shape())) {
        throw ShapeError("backward seed shape " + seed.shape().str() + " vs root " +
                         root.shape().str());
    }
    // Iterative post-order DFS yields a topological order.
    std::vector<ag::Node*> order;
    std::unordered_set<ag::Node*> visited;
    std::vector<std::pair<ag::Node*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            ag::Node* parent = node->parents[next++].get();
            if (visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root.node()->grad_buffer() += seed;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        ag::Node* node = *it;
        if (node->backward && !node->grad.empty()) node->backward(node->grad);
    }
}

}  // namespace uidsc
