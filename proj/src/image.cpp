#include "agpc/image.hpp"

#include <algorithm>

#include "agpc/errors.hpp"

namespace agpc {

namespace {

template <typename Scalar, typename Raster>
Tensor<Scalar> stack(const std::vector<const Raster*>& rasters) {
    if (rasters.empty()) throw UsageError("cannot batch zero images");
    const auto rows = rasters.front()->rows(), cols = rasters.front()->cols();
    Buffer<Scalar> data;
    data.reserve(static_cast<std::size_t>(rasters.size() * rows * cols));
    for (const Raster* r : rasters) {
        if (r->rows() != rows || r->cols() != cols) throw ShapeError("batched images must share one extent");
        std::transform(r->data(), r->data() + r->size(), std::back_inserter(data), [](auto v) { return static_cast<Scalar>(v); });
    }
    return Tensor<Scalar>::from({static_cast<int>(rasters.size()), 1, static_cast<int>(rows), static_cast<int>(cols)},
                                std::move(data));
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> to_batch(const std::vector<const Image*>& images) {
    return stack<Scalar>(images);
}

template <typename Scalar>
Tensor<Scalar> to_batch(const std::vector<const Mask*>& masks) {
    return stack<Scalar>(masks);
}

template <typename Scalar>
Image slice_image(const Tensor<Scalar>& batch, int n) {
    if (batch.rank() != 4 || batch.dim(1) != 1) throw ShapeError("expected N x 1 x H x W, got " + shape_str(batch.shape()));
    if (n < 0 || n >= batch.dim(0)) throw UsageError("batch index out of range");
    const int h = batch.dim(2), w = batch.dim(3);
    Image out(h, w);
    const Scalar* src = batch.data().data() + static_cast<std::int64_t>(n) * h * w;
    std::transform(src, src + static_cast<std::int64_t>(h) * w, out.data(), [](Scalar v) { return static_cast<float>(v); });
    return out;
}

template Tensor<float> to_batch(const std::vector<const Image*>&);
template Tensor<double> to_batch(const std::vector<const Image*>&);
template Tensor<float> to_batch(const std::vector<const Mask*>&);
template Tensor<double> to_batch(const std::vector<const Mask*>&);
template Image slice_image(const Tensor<float>&, int);
template Image slice_image(const Tensor<double>&, int);

}  // namespace agpc
