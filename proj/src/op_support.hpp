#pragma once

#include <memory>

#include "agpc/tensor.hpp"

namespace agpc::detail {

// Gradient destination for an op input, or nullptr when it does not need one.
template <typename Scalar>
Scalar* grad_ptr(const std::shared_ptr<TensorImpl<Scalar>>& impl) {
    return impl && impl->requires_grad ? impl->grad_buffer().data() : nullptr;
}

inline int ceil_div(int a, int b) { return (a + b - 1) / b; }

}  // namespace agpc::detail
