#include "agpc/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace agpc {

namespace {
thread_local bool g_grad_mode = true;
}

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "," : "") << shape[i];
    out << ']';
    return out.str();
}

NoGradGuard::NoGradGuard() : previous_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = previous_; }

bool grad_mode_enabled() { return g_grad_mode; }

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::zeros(const Shape& shape, bool requires_grad) {
    return full(shape, Scalar(0), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::full(const Shape& shape, Scalar value, bool requires_grad) {
    auto impl = std::make_shared<Impl>();
    impl->shape = shape;
    impl->data.assign(static_cast<std::size_t>(shape_numel(shape)), value);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from(const Shape& shape, Buffer<Scalar> values, bool requires_grad) {
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
        throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                         shape_str(shape));
    auto impl = std::make_shared<Impl>();
    impl->shape = shape;
    impl->data = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::randn(const Shape& shape, std::mt19937_64& rng, Scalar stddev,
                                     bool requires_grad) {
    std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
    Buffer<Scalar> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = static_cast<Scalar>(dist(rng));
    return from(shape, std::move(v), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::uniform(const Shape& shape, std::mt19937_64& rng, Scalar lo, Scalar hi,
                                       bool requires_grad) {
    std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
    Buffer<Scalar> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = static_cast<Scalar>(dist(rng));
    return from(shape, std::move(v), requires_grad);
}

template <typename Scalar>
int Tensor<Scalar>::dim(int axis) const {
    const int r = rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError("axis out of range for shape " + shape_str(shape()));
    return impl_->shape[static_cast<std::size_t>(axis)];
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
    if (numel() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
}

template <typename Scalar>
Scalar Tensor<Scalar>::at(std::initializer_list<int> index) const {
    if (static_cast<int>(index.size()) != rank()) throw ShapeError("index rank mismatch");
    std::int64_t flat = 0;
    int axis = 0;
    for (int i : index) {
        const int extent = impl_->shape[static_cast<std::size_t>(axis++)];
        if (i < 0 || i >= extent) throw ShapeError("index out of range");
        flat = flat * extent + i;
    }
    return impl_->data[static_cast<std::size_t>(flat)];
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::clone() const {
    return from(impl_->shape, impl_->data, false);
}

template <typename Scalar>
Tensor<Scalar> make_result(Shape shape, Buffer<Scalar> data, const char* op,
                           const std::vector<Tensor<Scalar>>& inputs,
                           std::function<void(std::span<const Scalar>)> backward_fn) {
    auto impl = std::make_shared<TensorImpl<Scalar>>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    if (g_grad_mode) {
        const bool any = std::any_of(inputs.begin(), inputs.end(),
                                     [](const Tensor<Scalar>& t) { return t.defined() && t.requires_grad(); });
        if (any) {
            auto node = std::make_shared<GraphNode<Scalar>>();
            node->op = op;
            for (const auto& t : inputs)
                if (t.defined()) node->inputs.push_back(t.impl_ptr());
            node->backward = std::move(backward_fn);
            impl->node = std::move(node);
            impl->requires_grad = true;
        }
    }
    return Tensor<Scalar>(std::move(impl));
}

template <typename Scalar>
Tensor<Scalar> make_result(Shape shape, Buffer<Scalar> data, const char* op,
                           std::initializer_list<Tensor<Scalar>> inputs,
                           std::function<void(std::span<const Scalar>)> backward_fn) {
    return make_result(std::move(shape), std::move(data), op, std::vector<Tensor<Scalar>>(inputs),
                       std::move(backward_fn));
}

template <typename Scalar>
void backward(const Tensor<Scalar>& root) {
    if (!root.defined() || root.numel() != 1)
        throw UsageError("backward() requires a scalar root, got shape " +
                         (root.defined() ? shape_str(root.shape()) : std::string("<undefined>")));
    if (!root.requires_grad()) return;

    // Iterative post-order DFS gives a topological order (inputs before outputs).
    using ImplPtr = TensorImpl<Scalar>*;
    std::vector<ImplPtr> order;
    std::unordered_set<ImplPtr> visited;
    std::vector<std::pair<ImplPtr, std::size_t>> stack;
    stack.emplace_back(root.impl(), 0);
    visited.insert(root.impl());
    while (!stack.empty()) {
        auto& [impl, next] = stack.back();
        const auto* node = impl->node.get();
        if (node && next < node->inputs.size()) {
            ImplPtr child = node->inputs[next++].get();
            if (child->node && visited.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(impl);
            stack.pop_back();
        }
    }

    root.impl()->grad_buffer()[0] += Scalar(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        ImplPtr impl = *it;
        if (impl->grad.empty() || !impl->node || !impl->node->backward) continue;
        impl->node->backward(impl->grad);
    }
}

template class Tensor<float>;
template class Tensor<double>;

template Tensor<float> make_result(Shape, Buffer<float>, const char*, std::initializer_list<Tensor<float>>,
                                   std::function<void(std::span<const float>)>);
template Tensor<double> make_result(Shape, Buffer<double>, const char*, std::initializer_list<Tensor<double>>,
                                    std::function<void(std::span<const double>)>);
template Tensor<float> make_result(Shape, Buffer<float>, const char*, const std::vector<Tensor<float>>&,
                                   std::function<void(std::span<const float>)>);
template Tensor<double> make_result(Shape, Buffer<double>, const char*, const std::vector<Tensor<double>>&,
                                    std::function<void(std::span<const double>)>);
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);

}  // namespace agpc
