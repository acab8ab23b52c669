#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "agpc/errors.hpp"

namespace agpc {

using Shape = std::vector<int>;

/// Tensor storage. Over-aligned so vectorized kernels see the same alignment on every run:
/// with heap-dependent alignment, Eigen's peeled reductions round differently between runs.
template <typename Scalar>
using Buffer = std::vector<Scalar, Eigen::aligned_allocator<Scalar>>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename Scalar>
struct TensorImpl;

/// One recorded operation in the differentiation graph.
template <typename Scalar>
struct GraphNode {
    const char* op = "";
    std::vector<std::shared_ptr<TensorImpl<Scalar>>> inputs;
    /// Receives d(root)/d(output) and accumulates into the inputs' grads.
    std::function<void(std::span<const Scalar>)> backward;
};

template <typename Scalar>
struct TensorImpl {
    Shape shape;
    Buffer<Scalar> data;
    Buffer<Scalar> grad;  // empty until a gradient flows here
    bool requires_grad = false;
    std::shared_ptr<GraphNode<Scalar>> node;

    /// Zero-initialized gradient buffer, allocated on first use.
    Buffer<Scalar>& grad_buffer() {
        if (grad.empty()) grad.assign(data.size(), Scalar(0));
        return grad;
    }
};

/// Shared handle to a dense row-major array. Copies alias the same storage;
/// use clone() for an independent value.
template <typename Scalar>
class Tensor {
public:
    using Impl = TensorImpl<Scalar>;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, Scalar value, bool requires_grad = false);
    static Tensor from(const Shape& shape, Buffer<Scalar> values, bool requires_grad = false);
    static Tensor randn(const Shape& shape, std::mt19937_64& rng, Scalar stddev = Scalar(1),
                        bool requires_grad = false);
    static Tensor uniform(const Shape& shape, std::mt19937_64& rng, Scalar lo, Scalar hi,
                          bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int dim(int axis) const;
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

    std::span<Scalar> data() { return impl_->data; }
    std::span<const Scalar> data() const { return impl_->data; }
    Buffer<Scalar>& values() { return impl_->data; }
    const Buffer<Scalar>& values() const { return impl_->data; }

    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<const Scalar> grad() const { return impl_->grad; }
    std::span<Scalar> grad() { return impl_->grad; }
    void zero_grad() { impl_->grad.clear(); }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool flag = true) {
        impl_->requires_grad = flag;
        return *this;
    }
    bool is_leaf() const { return impl_->node == nullptr; }

    Scalar item() const;
    Scalar& operator[](std::int64_t i) { return impl_->data[static_cast<std::size_t>(i)]; }
    Scalar operator[](std::int64_t i) const { return impl_->data[static_cast<std::size_t>(i)]; }
    Scalar at(std::initializer_list<int> index) const;

    /// Independent copy of the values, detached from the graph.
    Tensor clone() const;
    /// Same values, no graph linkage, no grad.
    Tensor detach() const { return clone(); }

    Impl* impl() const { return impl_.get(); }
    const std::shared_ptr<Impl>& impl_ptr() const { return impl_; }

private:
    std::shared_ptr<Impl> impl_;
};

/// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_mode_enabled();

/// Builds an op result, attaching a graph node only when some input needs a gradient
/// and recording is enabled.
template <typename Scalar>
Tensor<Scalar> make_result(Shape shape, Buffer<Scalar> data, const char* op,
                           std::initializer_list<Tensor<Scalar>> inputs,
                           std::function<void(std::span<const Scalar>)> backward);

template <typename Scalar>
Tensor<Scalar> make_result(Shape shape, Buffer<Scalar> data, const char* op,
                           const std::vector<Tensor<Scalar>>& inputs,
                           std::function<void(std::span<const Scalar>)> backward);

/// Reverse-mode sweep from a scalar root. Gradients accumulate additively into every
/// reachable tensor that requires a gradient; zero them between steps.
template <typename Scalar>
void backward(const Tensor<Scalar>& root);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace agpc
