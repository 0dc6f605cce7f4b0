#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace uidsc {

/// Dimensions of a batched feature map in NCHW order. Vectors use (n, len, 1, 1).
struct Shape {
    int n = 1;
    int c = 1;
    int h = 1;
    int w = 1;

    std::size_t numel() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    std::size_t per_sample() const {
        return static_cast<std::size_t>(c) * h * w;
    }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }

    friend bool operator==(const Shape&, const Shape&) = default;
    std::string str() const;
};

/// Dense float64 NCHW array with value semantics.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    const Shape& shape() const { return shape_; }
    int n() const { return shape_.n; }
    int c() const { return shape_.c; }
    int h() const { return shape_.h; }
    int w() const { return shape_.w; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }
    std::vector<double>& storage() { return data_; }
    const std::vector<double>& storage() const { return data_; }

    double& at(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
    double at(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }

    double* sample(int n) { return data_.data() + n * shape_.per_sample(); }
    const double* sample(int n) const { return data_.data() + n * shape_.per_sample(); }
    double* plane(int n, int c) { return sample(n) + c * shape_.plane(); }
    const double* plane(int n, int c) const { return sample(n) + c * shape_.plane(); }

    /// Same storage order, new dimensions; numel must match.
    Tensor reshaped(Shape shape) const;
    /// Copy of samples [first, first + count).
    Tensor slice_batch(int first, int count) const;

    void fill(double v);
    Tensor& operator+=(const Tensor& other);

private:
    std::size_t index(int n, int c, int h, int w) const {
        return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }

    Shape shape_{0, 0, 0, 0};
    std::vector<double> data_;
};

/// Stacks equally shaped single-sample tensors along the batch axis.
Tensor stack_batch(std::span<const Tensor> samples);

namespace ag {

struct Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(const Tensor& grad_out)>;

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    BackwardFn backward;

    /// Gradient buffer, zero-initialized on first access.
    Tensor& grad_buffer();
};

}  // namespace ag

/// Handle to a node of the dynamic autodiff graph. Copies share the node.
class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }

    bool has_grad() const { return node_ && !node_->grad.empty(); }
    const Tensor& grad() const { return node_->grad; }
    void zero_grad();

    const ag::NodePtr& node() const { return node_; }

    /// Records an op result. Parents that do not require grad are dropped, and
    /// when none remain (or grad mode is off) the result is a constant leaf.
    static Var from_op(Tensor value, std::vector<Var> parents, ag::BackwardFn backward);

private:
    ag::NodePtr node_;
};

/// Runs reverse-mode accumulation from a scalar root (seed gradient 1).
void backward(const Var& root);
/// Same, with an explicit output gradient of the root's shape.
void backward(const Var& root, const Tensor& seed);

bool grad_enabled();

/// Disables graph recording for its lifetime (inference, evaluation).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

}  // namespace uidsc
