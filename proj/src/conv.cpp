#include <algorithm>

#include <Eigen/Dense>

#include "agpc/ops.hpp"
#include "op_support.hpp"

namespace agpc {

namespace {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using ConstMap = Eigen::Map<const RowMatrix<Scalar>>;
template <typename Scalar>
using MutMap = Eigen::Map<RowMatrix<Scalar>>;

struct ConvGeometry {
    int channels, height, width, kernel, stride, padding, out_h, out_w;

    bool pointwise() const { return kernel == 1 && stride == 1 && padding == 0; }
    int patch_rows() const { return channels * kernel * kernel; }
    int positions() const { return out_h * out_w; }
};

// Valid output columns [lo, hi) for kernel column kx: those whose input column is inside the row.
inline void valid_range(const ConvGeometry& g, int kx, int& lo, int& hi) {
    const int shift = kx - g.padding;
    lo = shift >= 0 ? 0 : (-shift + g.stride - 1) / g.stride;
    const int last = g.width - 1 - shift;
    hi = last < 0 ? 0 : std::min(g.out_w, last / g.stride + 1);
    lo = std::min(lo, hi);
}

template <typename Scalar>
void im2col(const Scalar* x, const ConvGeometry& g, Scalar* col) {
    const int positions = g.positions();
    for (int c = 0; c < g.channels; ++c)
        for (int ky = 0; ky < g.kernel; ++ky)
            for (int kx = 0; kx < g.kernel; ++kx) {
                Scalar* dst = col + static_cast<std::int64_t>((c * g.kernel + ky) * g.kernel + kx) * positions;
                const Scalar* plane = x + static_cast<std::int64_t>(c) * g.height * g.width;
                int lo, hi;
                valid_range(g, kx, lo, hi);
                const int shift = kx - g.padding;
                for (int oy = 0; oy < g.out_h; ++oy) {
                    const int iy = oy * g.stride - g.padding + ky;
                    Scalar* row = dst + oy * g.out_w;
                    if (iy < 0 || iy >= g.height) {
                        std::fill_n(row, g.out_w, Scalar(0));
                        continue;
                    }
                    std::fill_n(row, lo, Scalar(0));
                    const Scalar* src = plane + iy * g.width + shift;
                    if (g.stride == 1)
                        std::copy(src + lo, src + hi, row + lo);
                    else
                        for (int ox = lo; ox < hi; ++ox) row[ox] = src[ox * g.stride];
                    std::fill(row + hi, row + g.out_w, Scalar(0));
                }
            }
}

template <typename Scalar>
void col2im_add(const Scalar* col, const ConvGeometry& g, Scalar* dx) {
    const int positions = g.positions();
    for (int c = 0; c < g.channels; ++c)
        for (int ky = 0; ky < g.kernel; ++ky)
            for (int kx = 0; kx < g.kernel; ++kx) {
                const Scalar* src = col + static_cast<std::int64_t>((c * g.kernel + ky) * g.kernel + kx) * positions;
                Scalar* plane = dx + static_cast<std::int64_t>(c) * g.height * g.width;
                int lo, hi;
                valid_range(g, kx, lo, hi);
                const int shift = kx - g.padding;
                for (int oy = 0; oy < g.out_h; ++oy) {
                    const int iy = oy * g.stride - g.padding + ky;
                    if (iy < 0 || iy >= g.height) continue;
                    Scalar* dst = plane + iy * g.width + shift;
                    const Scalar* row = src + oy * g.out_w;
                    for (int ox = lo; ox < hi; ++ox) dst[ox * g.stride] += row[ox];
                }
            }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias,
                      int stride, int padding) {
    if (x.rank() != 4 || weight.rank() != 4) throw ShapeError("conv2d expects N x C x H x W input and O x C x k x k weight");
    const int batch = x.dim(0), out_ch = weight.dim(0), k = weight.dim(2);
    if (weight.dim(1) != x.dim(1))
        throw ShapeError("conv2d channel mismatch: input " + shape_str(x.shape()) + ", weight " + shape_str(weight.shape()));
    if (weight.dim(3) != k) throw ShapeError("conv2d expects square kernels");
    if (stride < 1 || padding < 0) throw UsageError("conv2d stride must be positive and padding nonnegative");
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_ch)) throw ShapeError("conv2d bias must have out_ch entries");

    ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), k, stride, padding, 0, 0};
    g.out_h = (g.height + 2 * padding - k) / stride + 1;
    g.out_w = (g.width + 2 * padding - k) / stride + 1;
    if (g.out_h < 1 || g.out_w < 1) throw ShapeError("conv2d kernel larger than padded input");

    const std::int64_t in_plane = static_cast<std::int64_t>(g.channels) * g.height * g.width;
    const std::int64_t out_plane = static_cast<std::int64_t>(out_ch) * g.positions();
    Buffer<Scalar> out(static_cast<std::size_t>(batch * out_plane));
    Buffer<Scalar> col(g.pointwise() ? 0 : static_cast<std::size_t>(g.patch_rows()) * g.positions());
    ConstMap<Scalar> W(weight.data().data(), out_ch, g.patch_rows());
    for (int n = 0; n < batch; ++n) {
        const Scalar* xn = x.data().data() + n * in_plane;
        if (!g.pointwise()) im2col(xn, g, col.data());
        const Scalar* cols = g.pointwise() ? xn : col.data();
        MutMap<Scalar> Y(out.data() + n * out_plane, out_ch, g.positions());
        Y.noalias() = W * ConstMap<Scalar>(cols, g.patch_rows(), g.positions());
        if (bias.defined())
            for (int o = 0; o < out_ch; ++o) Y.row(o).array() += bias[o];
    }

    auto xi = x.impl_ptr();
    auto wi = weight.impl_ptr();
    auto bi = bias.defined() ? bias.impl_ptr() : nullptr;
    std::vector<Tensor<Scalar>> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    return make_result<Scalar>({batch, out_ch, g.out_h, g.out_w}, std::move(out), "conv2d", inputs,
                               [=](std::span<const Scalar> grad) {
                                   Scalar* gx = detail::grad_ptr(xi);
                                   Scalar* gw = detail::grad_ptr(wi);
                                   Scalar* gb = detail::grad_ptr(bi);
                                   ConstMap<Scalar> Wm(wi->data.data(), out_ch, g.patch_rows());
                                   Buffer<Scalar> buf(g.pointwise() ? 0 : static_cast<std::size_t>(g.patch_rows()) * g.positions());
                                   for (int n = 0; n < batch; ++n) {
                                       ConstMap<Scalar> dY(grad.data() + n * out_plane, out_ch, g.positions());
                                       if (gb)
                                           for (int o = 0; o < out_ch; ++o) gb[o] += dY.row(o).sum();
                                       const Scalar* xn = xi->data.data() + n * in_plane;
                                       if (gw) {
                                           if (!g.pointwise()) im2col(xn, g, buf.data());
                                           const Scalar* cols = g.pointwise() ? xn : buf.data();
                                           MutMap<Scalar>(gw, out_ch, g.patch_rows()).noalias() +=
                                               dY * ConstMap<Scalar>(cols, g.patch_rows(), g.positions()).transpose();
                                       }
                                       if (gx) {
                                           if (g.pointwise()) {
                                               MutMap<Scalar>(gx + n * in_plane, g.channels, g.positions()).noalias() +=
                                                   Wm.transpose() * dY;
                                           } else {
                                               MutMap<Scalar>(buf.data(), g.patch_rows(), g.positions()).noalias() =
                                                   Wm.transpose() * dY;
                                               col2im_add(buf.data(), g, gx + n * in_plane);
                                           }
                                       }
                                   }
                               });
}

template Tensor<float> conv2d(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&, int, int);
template Tensor<double> conv2d(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&, int, int);

}  // namespace agpc
