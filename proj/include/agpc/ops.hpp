#pragma once

#include <utility>
#include <vector>

#include "agpc/tensor.hpp"

namespace agpc {

// Binary elementwise ops accept equal shapes, a one-element operand on either side,
// or an N x C x 1 x 1 channel vector against an N x C x H x W feature map.
template <typename Scalar> Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar> Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar> Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar> Tensor<Scalar> relu(const Tensor<Scalar>& a);
template <typename Scalar> Tensor<Scalar> sigmoid(const Tensor<Scalar>& a);
template <typename Scalar> Tensor<Scalar> exp(const Tensor<Scalar>& a);
template <typename Scalar> Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor);
template <typename Scalar> Tensor<Scalar> add_scalar(const Tensor<Scalar>& a, Scalar value);

/// (m x k) * (k x n)
template <typename Scalar> Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
/// Batched product: (B x m x k) * (B x k x n).
template <typename Scalar> Tensor<Scalar> bmm(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
/// Swaps the last two axes of a rank-2 or rank-3 tensor.
template <typename Scalar> Tensor<Scalar> transpose(const Tensor<Scalar>& a);
/// Softmax along the last axis, max-subtracted.
template <typename Scalar> Tensor<Scalar> softmax_rows(const Tensor<Scalar>& a);

/// Reductions keep no singleton axes; an empty axis list reduces everything to shape {1}.
template <typename Scalar> Tensor<Scalar> sum(const Tensor<Scalar>& a, const std::vector<int>& axes = {});
template <typename Scalar> Tensor<Scalar> mean(const Tensor<Scalar>& a, const std::vector<int>& axes = {});

template <typename Scalar> Tensor<Scalar> reshape(const Tensor<Scalar>& a, const Shape& shape);
template <typename Scalar> Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts, int axis);

/// x: N x C x H x W, weight: O x C x k x k, bias: O or undefined.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias,
                      int stride, int padding);

/// Per-channel batch normalization over N, H, W. In training mode the running statistics are
/// updated in place: running = (1 - momentum) * running + momentum * batch, with the unbiased
/// batch variance feeding running_var.
template <typename Scalar>
Tensor<Scalar> batch_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                          Tensor<Scalar>& running_mean, Tensor<Scalar>& running_var, bool training,
                          Scalar momentum, Scalar eps);

/// Output bin (i, j) averages rows [floor(i*H/sh), ceil((i+1)*H/sh)) and the analogous columns.
template <typename Scalar>
Tensor<Scalar> adaptive_avg_pool(const Tensor<Scalar>& x, int out_h, int out_w);
/// N x C x H x W -> N x C x 1 x 1
template <typename Scalar> Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& x);
/// Half-pixel-center bilinear resampling with source coordinates clamped to the input.
template <typename Scalar>
Tensor<Scalar> bilinear_resize(const Tensor<Scalar>& x, int out_h, int out_w);

/// Window origin (row, col) inside a feature map.
using Origin = std::pair<int, int>;

/// Copies equal-sized windows out of x: N x C x H x W -> (N*k) x C x h x w, sample-major.
template <typename Scalar>
Tensor<Scalar> gather_patches(const Tensor<Scalar>& x, const std::vector<Origin>& origins, int h, int w);
/// Inverse placement of gather_patches into an N x C x H x W canvas of zeros.
template <typename Scalar>
Tensor<Scalar> scatter_patches(const Tensor<Scalar>& patches, const std::vector<Origin>& origins, int height,
                               int width);
/// Nearest expansion of an N x C x sh x sw grid map: cell (i, j) fills rows
/// [row_bounds[i], row_bounds[i+1]) and columns [col_bounds[j], col_bounds[j+1]).
template <typename Scalar>
Tensor<Scalar> expand_cells(const Tensor<Scalar>& grid, const std::vector<int>& row_bounds,
                            const std::vector<int>& col_bounds);

template <typename Scalar> Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return add(a, b); }
template <typename Scalar> Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return sub(a, b); }
template <typename Scalar> Tensor<Scalar> operator*(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return mul(a, b); }

}  // namespace agpc
