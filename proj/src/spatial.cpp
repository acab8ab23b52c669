#include <algorithm>
#include <cmath>

#include "agpc/ops.hpp"
#include "op_support.hpp"

namespace agpc {

template <typename Scalar>
Tensor<Scalar> batch_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                          Tensor<Scalar>& running_mean, Tensor<Scalar>& running_var, bool training,
                          Scalar momentum, Scalar eps) {
    if (x.rank() != 4) throw ShapeError("batch_norm expects N x C x H x W");
    const int batch = x.dim(0), channels = x.dim(1);
    const std::int64_t plane = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
    const std::int64_t count = plane * batch;
    for (const Tensor<Scalar>* t : std::initializer_list<const Tensor<Scalar>*>{&gamma, &beta, &running_mean, &running_var})
        if (t->numel() != channels) throw ShapeError("batch_norm parameter does not match channel count");

    auto xhat = std::make_shared<Buffer<Scalar>>(x.values().size());
    auto inv_std = std::make_shared<Buffer<Scalar>>(static_cast<std::size_t>(channels));
    Buffer<Scalar> out(x.values().size());
    const Scalar* px = x.data().data();
    for (int c = 0; c < channels; ++c) {
        Scalar mu, var;
        if (training) {
            double acc = 0;
            for (int n = 0; n < batch; ++n)
                for (std::int64_t i = 0; i < plane; ++i) acc += px[(static_cast<std::int64_t>(n) * channels + c) * plane + i];
            mu = static_cast<Scalar>(acc / static_cast<double>(count));
            double sq = 0;
            for (int n = 0; n < batch; ++n)
                for (std::int64_t i = 0; i < plane; ++i) {
                    const double d = px[(static_cast<std::int64_t>(n) * channels + c) * plane + i] - mu;
                    sq += d * d;
                }
            var = static_cast<Scalar>(sq / static_cast<double>(count));
            const Scalar unbiased = count > 1 ? var * Scalar(count) / Scalar(count - 1) : var;
            running_mean[c] = (Scalar(1) - momentum) * running_mean[c] + momentum * mu;
            running_var[c] = (Scalar(1) - momentum) * running_var[c] + momentum * unbiased;
        } else {
            mu = running_mean[c];
            var = running_var[c];
        }
        const Scalar inv = Scalar(1) / std::sqrt(var + eps);
        (*inv_std)[static_cast<std::size_t>(c)] = inv;
        for (int n = 0; n < batch; ++n) {
            const std::int64_t base = (static_cast<std::int64_t>(n) * channels + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
                const Scalar h = (px[base + i] - mu) * inv;
                (*xhat)[static_cast<std::size_t>(base + i)] = h;
                out[static_cast<std::size_t>(base + i)] = gamma[c] * h + beta[c];
            }
        }
    }

    auto xi = x.impl_ptr(), gi = gamma.impl_ptr(), bi = beta.impl_ptr();
    return make_result<Scalar>(x.shape(), std::move(out), "batch_norm", {x, gamma, beta},
                               [=](std::span<const Scalar> g) {
                                   Scalar* gx = detail::grad_ptr(xi);
                                   Scalar* gg = detail::grad_ptr(gi);
                                   Scalar* gb = detail::grad_ptr(bi);
                                   const auto& h = *xhat;
                                   for (int c = 0; c < channels; ++c) {
                                       Scalar sum_g = 0, sum_gh = 0;
                                       for (int n = 0; n < batch; ++n) {
                                           const std::int64_t base = (static_cast<std::int64_t>(n) * channels + c) * plane;
                                           for (std::int64_t i = 0; i < plane; ++i) {
                                               sum_g += g[base + i];
                                               sum_gh += g[base + i] * h[static_cast<std::size_t>(base + i)];
                                           }
                                       }
                                       if (gb) gb[c] += sum_g;
                                       if (gg) gg[c] += sum_gh;
                                       if (!gx) continue;
                                       const Scalar k = gi->data[static_cast<std::size_t>(c)] * (*inv_std)[static_cast<std::size_t>(c)];
                                       const Scalar mean_g = sum_g / Scalar(count), mean_gh = sum_gh / Scalar(count);
                                       for (int n = 0; n < batch; ++n) {
                                           const std::int64_t base = (static_cast<std::int64_t>(n) * channels + c) * plane;
                                           for (std::int64_t i = 0; i < plane; ++i) {
                                               const std::size_t j = static_cast<std::size_t>(base + i);
                                               gx[j] += training ? k * (g[j] - mean_g - h[j] * mean_gh) : k * g[j];
                                           }
                                       }
                                   }
                               });
}

template <typename Scalar>
Tensor<Scalar> adaptive_avg_pool(const Tensor<Scalar>& x, int out_h, int out_w) {
    if (x.rank() != 4) throw ShapeError("adaptive_avg_pool expects N x C x H x W");
    const int planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    if (out_h < 1 || out_w < 1 || out_h > h || out_w > w)
        throw UsageError("adaptive_avg_pool output " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                         " must lie within 1.." + std::to_string(h) + "x" + std::to_string(w));
    auto bins = [](int in, int out) {
        std::vector<std::pair<int, int>> b(static_cast<std::size_t>(out));
        for (int i = 0; i < out; ++i) b[static_cast<std::size_t>(i)] = {i * in / out, detail::ceil_div((i + 1) * in, out)};
        return b;
    };
    const auto rows = bins(h, out_h), cols = bins(w, out_w);
    Buffer<Scalar> out(static_cast<std::size_t>(planes) * out_h * out_w);
    const Scalar* px = x.data().data();
    for (int p = 0; p < planes; ++p)
        for (int i = 0; i < out_h; ++i)
            for (int j = 0; j < out_w; ++j) {
                const auto [r0, r1] = rows[static_cast<std::size_t>(i)];
                const auto [c0, c1] = cols[static_cast<std::size_t>(j)];
                Scalar acc = 0;
                for (int r = r0; r < r1; ++r)
                    for (int c = c0; c < c1; ++c) acc += px[(static_cast<std::int64_t>(p) * h + r) * w + c];
                out[(static_cast<std::size_t>(p) * out_h + i) * out_w + j] = acc / Scalar((r1 - r0) * (c1 - c0));
            }
    auto xi = x.impl_ptr();
    return make_result<Scalar>({x.dim(0), x.dim(1), out_h, out_w}, std::move(out), "adaptive_avg_pool", {x},
                               [=](std::span<const Scalar> g) {
                                   Scalar* gx = detail::grad_ptr(xi);
                                   if (!gx) return;
                                   for (int p = 0; p < planes; ++p)
                                       for (int i = 0; i < out_h; ++i)
                                           for (int j = 0; j < out_w; ++j) {
                                               const auto [r0, r1] = rows[static_cast<std::size_t>(i)];
                                               const auto [c0, c1] = cols[static_cast<std::size_t>(j)];
                                               const Scalar v = g[(static_cast<std::size_t>(p) * out_h + i) * out_w + j] /
                                                                Scalar((r1 - r0) * (c1 - c0));
                                               for (int r = r0; r < r1; ++r)
                                                   for (int c = c0; c < c1; ++c) gx[(static_cast<std::int64_t>(p) * h + r) * w + c] += v;
                                           }
                               });
}

template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& x) {
    if (x.rank() != 4) throw ShapeError("global_avg_pool expects N x C x H x W");
    const int planes = x.dim(0) * x.dim(1);
    const std::int64_t area = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
    Buffer<Scalar> out(static_cast<std::size_t>(planes));
    const Scalar* px = x.data().data();
    for (int p = 0; p < planes; ++p) {
        Scalar acc = 0;
        for (std::int64_t i = 0; i < area; ++i) acc += px[p * area + i];
        out[static_cast<std::size_t>(p)] = acc / Scalar(area);
    }
    auto xi = x.impl_ptr();
    return make_result<Scalar>({x.dim(0), x.dim(1), 1, 1}, std::move(out), "global_avg_pool", {x},
                               [=](std::span<const Scalar> g) {
                                   if (Scalar* gx = detail::grad_ptr(xi))
                                       for (int p = 0; p < planes; ++p)
                                           for (std::int64_t i = 0; i < area; ++i) gx[p * area + i] += g[p] / Scalar(area);
                               });
}

namespace {

struct Tap {
    int lo, hi;
    double frac;  // weight of hi
};

std::vector<Tap> bilinear_taps(int in, int out) {
    std::vector<Tap> taps(static_cast<std::size_t>(out));
    const double ratio = static_cast<double>(in) / out;
    for (int d = 0; d < out; ++d) {
        double src = (d + 0.5) * ratio - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        const int lo = static_cast<int>(std::floor(src));
        const int hi = std::min(lo + 1, in - 1);
        taps[static_cast<std::size_t>(d)] = {lo, hi, src - lo};
    }
    return taps;
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> bilinear_resize(const Tensor<Scalar>& x, int out_h, int out_w) {
    if (x.rank() != 4) throw ShapeError("bilinear_resize expects N x C x H x W");
    if (out_h < 1 || out_w < 1) throw UsageError("bilinear_resize target must be at least 1x1");
    const int planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    const auto ty = bilinear_taps(h, out_h), tx = bilinear_taps(w, out_w);
    Buffer<Scalar> out(static_cast<std::size_t>(planes) * out_h * out_w);
    const Scalar* px = x.data().data();
    for (int p = 0; p < planes; ++p) {
        const Scalar* src = px + static_cast<std::int64_t>(p) * h * w;
        Scalar* dst = out.data() + static_cast<std::int64_t>(p) * out_h * out_w;
        for (int i = 0; i < out_h; ++i) {
            const Tap& a = ty[static_cast<std::size_t>(i)];
            const Scalar fy = static_cast<Scalar>(a.frac);
            for (int j = 0; j < out_w; ++j) {
                const Tap& b = tx[static_cast<std::size_t>(j)];
                const Scalar fx = static_cast<Scalar>(b.frac);
                const Scalar top = src[a.lo * w + b.lo] * (Scalar(1) - fx) + src[a.lo * w + b.hi] * fx;
                const Scalar bottom = src[a.hi * w + b.lo] * (Scalar(1) - fx) + src[a.hi * w + b.hi] * fx;
                dst[i * out_w + j] = top * (Scalar(1) - fy) + bottom * fy;
            }
        }
    }
    auto xi = x.impl_ptr();
    return make_result<Scalar>({x.dim(0), x.dim(1), out_h, out_w}, std::move(out), "bilinear_resize", {x},
                               [=](std::span<const Scalar> g) {
                                   Scalar* gx = detail::grad_ptr(xi);
                                   if (!gx) return;
                                   for (int p = 0; p < planes; ++p) {
                                       Scalar* dst = gx + static_cast<std::int64_t>(p) * h * w;
                                       const Scalar* gp = g.data() + static_cast<std::int64_t>(p) * out_h * out_w;
                                       for (int i = 0; i < out_h; ++i) {
                                           const Tap& a = ty[static_cast<std::size_t>(i)];
                                           const Scalar fy = static_cast<Scalar>(a.frac);
                                           for (int j = 0; j < out_w; ++j) {
                                               const Tap& b = tx[static_cast<std::size_t>(j)];
                                               const Scalar fx = static_cast<Scalar>(b.frac);
                                               const Scalar v = gp[i * out_w + j];
                                               dst[a.lo * w + b.lo] += v * (Scalar(1) - fy) * (Scalar(1) - fx);
                                               dst[a.lo * w + b.hi] += v * (Scalar(1) - fy) * fx;
                                               dst[a.hi * w + b.lo] += v * fy * (Scalar(1) - fx);
                                               dst[a.hi * w + b.hi] += v * fy * fx;
                                           }
                                       }
                                   }
                               });
}

namespace {

// Copies windows between a canvas (N x C x H x W) and a patch stack ((N*k) x C x h x w).
template <typename Scalar, bool ToPatches, bool Accumulate>
void move_windows(const Scalar* from, Scalar* to, int batch, int channels, int height, int width,
                  const std::vector<Origin>& origins, int h, int w) {
    const std::int64_t k = static_cast<std::int64_t>(origins.size());
    for (int n = 0; n < batch; ++n)
        for (std::int64_t j = 0; j < k; ++j) {
            const auto [oy, ox] = origins[static_cast<std::size_t>(j)];
            for (int c = 0; c < channels; ++c) {
                const std::int64_t canvas = (static_cast<std::int64_t>(n) * channels + c) * height * width;
                const std::int64_t patch = ((n * k + j) * channels + c) * static_cast<std::int64_t>(h) * w;
                for (int r = 0; r < h; ++r)
                    for (int q = 0; q < w; ++q) {
                        const std::int64_t a = canvas + static_cast<std::int64_t>(oy + r) * width + ox + q;
                        const std::int64_t b = patch + static_cast<std::int64_t>(r) * w + q;
                        if constexpr (ToPatches) {
                            if constexpr (Accumulate) to[b] += from[a]; else to[b] = from[a];
                        } else {
                            if constexpr (Accumulate) to[a] += from[b]; else to[a] = from[b];
                        }
                    }
            }
        }
}

void check_windows(const std::vector<Origin>& origins, int h, int w, int height, int width) {
    if (origins.empty() || h < 1 || w < 1) throw UsageError("patch windows must be nonempty");
    for (const auto& [oy, ox] : origins)
        if (oy < 0 || ox < 0 || oy + h > height || ox + w > width)
            throw ShapeError("patch window exceeds feature map bounds");
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> gather_patches(const Tensor<Scalar>& x, const std::vector<Origin>& origins, int h, int w) {
    if (x.rank() != 4) throw ShapeError("gather_patches expects N x C x H x W");
    const int batch = x.dim(0), channels = x.dim(1), height = x.dim(2), width = x.dim(3);
    check_windows(origins, h, w, height, width);
    const int k = static_cast<int>(origins.size());
    Buffer<Scalar> out(static_cast<std::size_t>(batch) * k * channels * h * w);
    move_windows<Scalar, true, false>(x.data().data(), out.data(), batch, channels, height, width, origins, h, w);
    auto xi = x.impl_ptr();
    return make_result<Scalar>({batch * k, channels, h, w}, std::move(out), "gather_patches", {x},
                               [=](std::span<const Scalar> g) {
                                   if (Scalar* gx = detail::grad_ptr(xi))
                                       move_windows<Scalar, false, true>(g.data(), gx, batch, channels, height, width,
                                                                         origins, h, w);
                               });
}

template <typename Scalar>
Tensor<Scalar> scatter_patches(const Tensor<Scalar>& patches, const std::vector<Origin>& origins, int height,
                               int width) {
    if (patches.rank() != 4) throw ShapeError("scatter_patches expects (N*k) x C x h x w");
    const int k = static_cast<int>(origins.size());
    if (k == 0 || patches.dim(0) % k != 0) throw ShapeError("patch count does not match origin count");
    const int batch = patches.dim(0) / k, channels = patches.dim(1), h = patches.dim(2), w = patches.dim(3);
    check_windows(origins, h, w, height, width);
    Buffer<Scalar> out(static_cast<std::size_t>(batch) * channels * height * width, Scalar(0));
    move_windows<Scalar, false, true>(patches.data().data(), out.data(), batch, channels, height, width, origins, h, w);
    auto pi = patches.impl_ptr();
    return make_result<Scalar>({batch, channels, height, width}, std::move(out), "scatter_patches", {patches},
                               [=](std::span<const Scalar> g) {
                                   if (Scalar* gp = detail::grad_ptr(pi))
                                       move_windows<Scalar, true, true>(g.data(), gp, batch, channels, height, width,
                                                                        origins, h, w);
                               });
}

template <typename Scalar>
Tensor<Scalar> expand_cells(const Tensor<Scalar>& grid, const std::vector<int>& row_bounds,
                            const std::vector<int>& col_bounds) {
    if (grid.rank() != 4) throw ShapeError("expand_cells expects N x C x sh x sw");
    const int planes = grid.dim(0) * grid.dim(1), sh = grid.dim(2), sw = grid.dim(3);
    if (static_cast<int>(row_bounds.size()) != sh + 1 || static_cast<int>(col_bounds.size()) != sw + 1)
        throw ShapeError("cell bounds do not match guide grid " + shape_str(grid.shape()));
    const int height = row_bounds.back(), width = col_bounds.back();
    std::vector<int> row_cell(static_cast<std::size_t>(height)), col_cell(static_cast<std::size_t>(width));
    for (int i = 0; i < sh; ++i)
        for (int r = row_bounds[static_cast<std::size_t>(i)]; r < row_bounds[static_cast<std::size_t>(i) + 1]; ++r)
            row_cell[static_cast<std::size_t>(r)] = i;
    for (int j = 0; j < sw; ++j)
        for (int c = col_bounds[static_cast<std::size_t>(j)]; c < col_bounds[static_cast<std::size_t>(j) + 1]; ++c)
            col_cell[static_cast<std::size_t>(c)] = j;
    Buffer<Scalar> out(static_cast<std::size_t>(planes) * height * width);
    const Scalar* pg = grid.data().data();
    for (int p = 0; p < planes; ++p)
        for (int r = 0; r < height; ++r)
            for (int c = 0; c < width; ++c)
                out[(static_cast<std::size_t>(p) * height + r) * width + c] =
                    pg[(static_cast<std::int64_t>(p) * sh + row_cell[static_cast<std::size_t>(r)]) * sw + col_cell[static_cast<std::size_t>(c)]];
    auto gi = grid.impl_ptr();
    return make_result<Scalar>({grid.dim(0), grid.dim(1), height, width}, std::move(out), "expand_cells", {grid},
                               [=](std::span<const Scalar> g) {
                                   Scalar* gg = detail::grad_ptr(gi);
                                   if (!gg) return;
                                   for (int p = 0; p < planes; ++p)
                                       for (int r = 0; r < height; ++r)
                                           for (int c = 0; c < width; ++c)
                                               gg[(static_cast<std::int64_t>(p) * sh + row_cell[static_cast<std::size_t>(r)]) * sw +
                                                  col_cell[static_cast<std::size_t>(c)]] +=
                                                   g[(static_cast<std::size_t>(p) * height + r) * width + c];
                               });
}

#define AGPC_INSTANTIATE(S)                                                                                       \
    template Tensor<S> batch_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, Tensor<S>&, Tensor<S>&,   \
                                  bool, S, S);                                                                    \
    template Tensor<S> adaptive_avg_pool(const Tensor<S>&, int, int);                                             \
    template Tensor<S> global_avg_pool(const Tensor<S>&);                                                         \
    template Tensor<S> bilinear_resize(const Tensor<S>&, int, int);                                               \
    template Tensor<S> gather_patches(const Tensor<S>&, const std::vector<Origin>&, int, int);                    \
    template Tensor<S> scatter_patches(const Tensor<S>&, const std::vector<Origin>&, int, int);                    \
    template Tensor<S> expand_cells(const Tensor<S>&, const std::vector<int>&, const std::vector<int>&);

AGPC_INSTANTIATE(float)
AGPC_INSTANTIATE(double)
#undef AGPC_INSTANTIATE

}  // namespace agpc
