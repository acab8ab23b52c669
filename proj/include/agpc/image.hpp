#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "agpc/tensor.hpp"

namespace agpc {

/// Grayscale raster, row-major, values nominally in [0,1].
using Image = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
/// Binary raster: 0 or 1.
using Mask = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Pixel {
    int row = 0, col = 0;
    friend bool operator==(const Pixel&, const Pixel&) = default;
};

/// Stacks equally sized images into an N x 1 x H x W tensor.
template <typename Scalar>
Tensor<Scalar> to_batch(const std::vector<const Image*>& images);

template <typename Scalar>
Tensor<Scalar> to_batch(const std::vector<const Mask*>& masks);

/// Sample `n` of an N x 1 x H x W tensor as an image.
template <typename Scalar>
Image slice_image(const Tensor<Scalar>& batch, int n);

}  // namespace agpc
