#include "agpc/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "op_support.hpp"

namespace agpc {

namespace {

enum class Broadcast { Equal, ScalarA, ScalarB, ChannelA, ChannelB };

struct BinaryLayout {
    Broadcast mode;
    Shape shape;        // result shape
    std::int64_t size;  // result numel
    std::int64_t plane; // H*W for channel broadcasting
};

bool is_channel_vector_of(const Shape& vec, const Shape& map) {
    return vec.size() == 4 && map.size() == 4 && vec[0] == map[0] && vec[1] == map[1] && vec[2] == 1 &&
           vec[3] == 1;
}

BinaryLayout classify(const Shape& a, const Shape& b, const char* op) {
    if (a == b) return {Broadcast::Equal, a, shape_numel(a), 1};
    if (shape_numel(b) == 1) return {Broadcast::ScalarB, a, shape_numel(a), 1};
    if (shape_numel(a) == 1) return {Broadcast::ScalarA, b, shape_numel(b), 1};
    if (is_channel_vector_of(b, a))
        return {Broadcast::ChannelB, a, shape_numel(a), static_cast<std::int64_t>(a[2]) * a[3]};
    if (is_channel_vector_of(a, b))
        return {Broadcast::ChannelA, b, shape_numel(b), static_cast<std::int64_t>(b[2]) * b[3]};
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

// Calls fn(out_index, a_index, b_index) for every result element.
template <typename Fn>
void for_each_pair(const BinaryLayout& layout, Fn&& fn) {
    const std::int64_t n = layout.size;
    switch (layout.mode) {
        case Broadcast::Equal:
            for (std::int64_t i = 0; i < n; ++i) fn(i, i, i);
            break;
        case Broadcast::ScalarA:
            for (std::int64_t i = 0; i < n; ++i) fn(i, 0, i);
            break;
        case Broadcast::ScalarB:
            for (std::int64_t i = 0; i < n; ++i) fn(i, i, 0);
            break;
        case Broadcast::ChannelA:
            for (std::int64_t i = 0; i < n; ++i) fn(i, i / layout.plane, i);
            break;
        case Broadcast::ChannelB:
            for (std::int64_t i = 0; i < n; ++i) fn(i, i, i / layout.plane);
            break;
    }
}

enum class BinaryKind { Add, Sub, Mul };

template <typename Scalar>
Tensor<Scalar> binary(const Tensor<Scalar>& a, const Tensor<Scalar>& b, BinaryKind kind, const char* name) {
    const BinaryLayout layout = classify(a.shape(), b.shape(), name);
    Buffer<Scalar> out(static_cast<std::size_t>(layout.size));
    const Scalar* pa = a.data().data();
    const Scalar* pb = b.data().data();
    switch (kind) {
        case BinaryKind::Add:
            for_each_pair(layout, [&](auto i, auto ia, auto ib) { out[i] = pa[ia] + pb[ib]; });
            break;
        case BinaryKind::Sub:
            for_each_pair(layout, [&](auto i, auto ia, auto ib) { out[i] = pa[ia] - pb[ib]; });
            break;
        case BinaryKind::Mul:
            for_each_pair(layout, [&](auto i, auto ia, auto ib) { out[i] = pa[ia] * pb[ib]; });
            break;
    }
    auto ai = a.impl_ptr();
    auto bi = b.impl_ptr();
    return make_result<Scalar>(layout.shape, std::move(out), name, {a, b},
                               [ai, bi, layout, kind](std::span<const Scalar> g) {
                                   Scalar* ga = detail::grad_ptr(ai);
                                   Scalar* gb = detail::grad_ptr(bi);
                                   const Scalar* va = ai->data.data();
                                   const Scalar* vb = bi->data.data();
                                   if (ga) {
                                       if (kind == BinaryKind::Mul)
                                           for_each_pair(layout, [&](auto i, auto ia, auto ib) { ga[ia] += g[i] * vb[ib]; });
                                       else
                                           for_each_pair(layout, [&](auto i, auto ia, auto) { ga[ia] += g[i]; });
                                   }
                                   if (gb) {
                                       switch (kind) {
                                           case BinaryKind::Add:
                                               for_each_pair(layout, [&](auto i, auto, auto ib) { gb[ib] += g[i]; });
                                               break;
                                           case BinaryKind::Sub:
                                               for_each_pair(layout, [&](auto i, auto, auto ib) { gb[ib] -= g[i]; });
                                               break;
                                           case BinaryKind::Mul:
                                               for_each_pair(layout, [&](auto i, auto ia, auto ib) { gb[ib] += g[i] * va[ia]; });
                                               break;
                                       }
                                   }
                               });
}

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using ConstMap = Eigen::Map<const RowMatrix<Scalar>>;
template <typename Scalar>
using MutMap = Eigen::Map<RowMatrix<Scalar>>;

}  // namespace

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    return binary(a, b, BinaryKind::Add, "add");
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    return binary(a, b, BinaryKind::Sub, "sub");
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    return binary(a, b, BinaryKind::Mul, "mul");
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& a) {
    Buffer<Scalar> out(a.values());
    for (auto& v : out) v = v > Scalar(0) ? v : Scalar(0);
    auto ai = a.impl_ptr();
    return make_result<Scalar>(a.shape(), std::move(out), "relu", {a}, [ai](std::span<const Scalar> g) {
        if (Scalar* ga = detail::grad_ptr(ai)) {
            const auto& x = ai->data;
            for (std::size_t i = 0; i < x.size(); ++i)
                if (x[i] > Scalar(0)) ga[i] += g[i];
        }
    });
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& a) {
    Buffer<Scalar> out(a.values());
    for (auto& v : out) v = Scalar(1) / (Scalar(1) + std::exp(-v));
    auto ai = a.impl_ptr();
    auto y = std::make_shared<Buffer<Scalar>>(out);
    return make_result<Scalar>(a.shape(), std::move(out), "sigmoid", {a}, [ai, y](std::span<const Scalar> g) {
        if (Scalar* ga = detail::grad_ptr(ai)) {
            const auto& s = *y;
            for (std::size_t i = 0; i < s.size(); ++i) ga[i] += g[i] * s[i] * (Scalar(1) - s[i]);
        }
    });
}

template <typename Scalar>
Tensor<Scalar> exp(const Tensor<Scalar>& a) {
    Buffer<Scalar> out(a.values());
    for (auto& v : out) v = std::exp(v);
    auto ai = a.impl_ptr();
    auto y = std::make_shared<Buffer<Scalar>>(out);
    return make_result<Scalar>(a.shape(), std::move(out), "exp", {a}, [ai, y](std::span<const Scalar> g) {
        if (Scalar* ga = detail::grad_ptr(ai))
            for (std::size_t i = 0; i < y->size(); ++i) ga[i] += g[i] * (*y)[i];
    });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor) {
    Buffer<Scalar> out(a.values());
    for (auto& v : out) v *= factor;
    auto ai = a.impl_ptr();
    return make_result<Scalar>(a.shape(), std::move(out), "scale", {a}, [ai, factor](std::span<const Scalar> g) {
        if (Scalar* ga = detail::grad_ptr(ai))
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
}

template <typename Scalar>
Tensor<Scalar> add_scalar(const Tensor<Scalar>& a, Scalar value) {
    Buffer<Scalar> out(a.values());
    for (auto& v : out) v += value;
    auto ai = a.impl_ptr();
    return make_result<Scalar>(a.shape(), std::move(out), "add_scalar", {a}, [ai](std::span<const Scalar> g) {
        if (Scalar* ga = detail::grad_ptr(ai))
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul expects rank-2 operands");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw ShapeError("matmul inner extents differ: " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
    Buffer<Scalar> out(static_cast<std::size_t>(m) * n);
    MutMap<Scalar>(out.data(), m, n).noalias() =
        ConstMap<Scalar>(a.data().data(), m, k) * ConstMap<Scalar>(b.data().data(), k, n);
    auto ai = a.impl_ptr();
    auto bi = b.impl_ptr();
    return make_result<Scalar>({m, n}, std::move(out), "matmul", {a, b}, [ai, bi, m, k, n](std::span<const Scalar> g) {
        ConstMap<Scalar> G(g.data(), m, n);
        if (Scalar* ga = detail::grad_ptr(ai))
            MutMap<Scalar>(ga, m, k).noalias() += G * ConstMap<Scalar>(bi->data.data(), k, n).transpose();
        if (Scalar* gb = detail::grad_ptr(bi))
            MutMap<Scalar>(gb, k, n).noalias() += ConstMap<Scalar>(ai->data.data(), m, k).transpose() * G;
    });
}

template <typename Scalar>
Tensor<Scalar> bmm(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
    if (a.rank() != 3 || b.rank() != 3) throw ShapeError("bmm expects rank-3 operands");
    const int batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    if (b.dim(0) != batch || b.dim(1) != k)
        throw ShapeError("bmm shape mismatch: " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
    const std::int64_t sa = static_cast<std::int64_t>(m) * k, sb = static_cast<std::int64_t>(k) * n,
                       so = static_cast<std::int64_t>(m) * n;
    Buffer<Scalar> out(static_cast<std::size_t>(batch * so));
    for (int i = 0; i < batch; ++i)
        MutMap<Scalar>(out.data() + i * so, m, n).noalias() =
            ConstMap<Scalar>(a.data().data() + i * sa, m, k) * ConstMap<Scalar>(b.data().data() + i * sb, k, n);
    auto ai = a.impl_ptr();
    auto bi = b.impl_ptr();
    return make_result<Scalar>({batch, m, n}, std::move(out), "bmm", {a, b},
                               [=](std::span<const Scalar> g) {
                                   Scalar* ga = detail::grad_ptr(ai);
                                   Scalar* gb = detail::grad_ptr(bi);
                                   for (int i = 0; i < batch; ++i) {
                                       ConstMap<Scalar> G(g.data() + i * so, m, n);
                                       if (ga)
                                           MutMap<Scalar>(ga + i * sa, m, k).noalias() +=
                                               G * ConstMap<Scalar>(bi->data.data() + i * sb, k, n).transpose();
                                       if (gb)
                                           MutMap<Scalar>(gb + i * sb, k, n).noalias() +=
                                               ConstMap<Scalar>(ai->data.data() + i * sa, m, k).transpose() * G;
                                   }
                               });
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& a) {
    if (a.rank() != 2 && a.rank() != 3) throw ShapeError("transpose expects rank 2 or 3");
    const int batch = a.rank() == 3 ? a.dim(0) : 1;
    const int rows = a.dim(-2), cols = a.dim(-1);
    const std::int64_t plane = static_cast<std::int64_t>(rows) * cols;
    Buffer<Scalar> out(a.values().size());
    for (int i = 0; i < batch; ++i)
        MutMap<Scalar>(out.data() + i * plane, cols, rows) =
            ConstMap<Scalar>(a.data().data() + i * plane, rows, cols).transpose();
    Shape shape = a.shape();
    std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
    auto ai = a.impl_ptr();
    return make_result<Scalar>(shape, std::move(out), "transpose", {a}, [=](std::span<const Scalar> g) {
        if (Scalar* ga = detail::grad_ptr(ai))
            for (int i = 0; i < batch; ++i)
                MutMap<Scalar>(ga + i * plane, rows, cols) += ConstMap<Scalar>(g.data() + i * plane, cols, rows).transpose();
    });
}

template <typename Scalar>
Tensor<Scalar> softmax_rows(const Tensor<Scalar>& a) {
    if (a.rank() < 1) throw ShapeError("softmax_rows expects rank >= 1");
    const std::int64_t cols = a.dim(-1);
    const std::int64_t rows = a.numel() / cols;
    Buffer<Scalar> out(a.values());
    for (std::int64_t r = 0; r < rows; ++r) {
        Scalar* row = out.data() + r * cols;
        const Scalar peak = *std::max_element(row, row + cols);
        Scalar total = 0;
        for (std::int64_t c = 0; c < cols; ++c) {
            row[c] = std::exp(row[c] - peak);
            total += row[c];
        }
        for (std::int64_t c = 0; c < cols; ++c) row[c] /= total;
    }
    auto ai = a.impl_ptr();
    auto y = std::make_shared<Buffer<Scalar>>(out);
    return make_result<Scalar>(a.shape(), std::move(out), "softmax_rows", {a}, [=](std::span<const Scalar> g) {
        Scalar* ga = detail::grad_ptr(ai);
        if (!ga) return;
        for (std::int64_t r = 0; r < rows; ++r) {
            const Scalar* yr = y->data() + r * cols;
            const Scalar* gr = g.data() + r * cols;
            Scalar dot = 0;
            for (std::int64_t c = 0; c < cols; ++c) dot += gr[c] * yr[c];
            for (std::int64_t c = 0; c < cols; ++c) ga[r * cols + c] += yr[c] * (gr[c] - dot);
        }
    });
}

namespace {

// Maps each input element to its reduced output slot.
std::vector<std::int64_t> reduction_map(const Shape& shape, const std::vector<int>& axes, Shape& out_shape) {
    const int rank = static_cast<int>(shape.size());
    std::vector<bool> reduced(static_cast<std::size_t>(rank), axes.empty());
    for (int ax : axes) {
        const int a = ax < 0 ? ax + rank : ax;
        if (a < 0 || a >= rank) throw ShapeError("reduction axis " + std::to_string(ax) + " invalid for " + shape_str(shape));
        reduced[static_cast<std::size_t>(a)] = true;
    }
    out_shape.clear();
    for (int i = 0; i < rank; ++i)
        if (!reduced[static_cast<std::size_t>(i)]) out_shape.push_back(shape[static_cast<std::size_t>(i)]);
    if (out_shape.empty()) out_shape = {1};

    const std::int64_t n = shape_numel(shape);
    std::vector<std::int64_t> map(static_cast<std::size_t>(n));
    std::vector<int> idx(static_cast<std::size_t>(rank), 0);
    for (std::int64_t i = 0; i < n; ++i) {
        std::int64_t o = 0;
        for (int d = 0; d < rank; ++d)
            if (!reduced[static_cast<std::size_t>(d)]) o = o * shape[static_cast<std::size_t>(d)] + idx[static_cast<std::size_t>(d)];
        map[static_cast<std::size_t>(i)] = o;
        for (int d = rank - 1; d >= 0; --d) {
            if (++idx[static_cast<std::size_t>(d)] < shape[static_cast<std::size_t>(d)]) break;
            idx[static_cast<std::size_t>(d)] = 0;
        }
    }
    return map;
}

template <typename Scalar>
Tensor<Scalar> reduce_sum(const Tensor<Scalar>& a, const std::vector<int>& axes, bool average, const char* name) {
    Shape out_shape;
    auto map = std::make_shared<std::vector<std::int64_t>>(reduction_map(a.shape(), axes, out_shape));
    const std::int64_t out_n = shape_numel(out_shape);
    const Scalar factor = average ? Scalar(out_n) / Scalar(a.numel()) : Scalar(1);
    Buffer<Scalar> out(static_cast<std::size_t>(out_n), Scalar(0));
    const auto& x = a.values();
    for (std::size_t i = 0; i < x.size(); ++i) out[static_cast<std::size_t>((*map)[i])] += x[i];
    if (average)
        for (auto& v : out) v *= factor;
    auto ai = a.impl_ptr();
    return make_result<Scalar>(out_shape, std::move(out), name, {a}, [ai, map, factor](std::span<const Scalar> g) {
        if (Scalar* ga = detail::grad_ptr(ai))
            for (std::size_t i = 0; i < map->size(); ++i) ga[i] += g[static_cast<std::size_t>((*map)[i])] * factor;
    });
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a, const std::vector<int>& axes) {
    return reduce_sum(a, axes, false, "sum");
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a, const std::vector<int>& axes) {
    return reduce_sum(a, axes, true, "mean");
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& a, const Shape& shape) {
    if (shape_numel(shape) != a.numel())
        throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape) + " changes element count");
    auto ai = a.impl_ptr();
    return make_result<Scalar>(shape, a.values(), "reshape", {a}, [ai](std::span<const Scalar> g) {
        if (Scalar* ga = detail::grad_ptr(ai))
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

template <typename Scalar>
Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts, int axis) {
    if (parts.empty()) throw UsageError("concat of zero tensors");
    const Shape& first = parts.front().shape();
    const int rank = static_cast<int>(first.size());
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw ShapeError("concat axis out of range");
    std::int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= first[static_cast<std::size_t>(d)];
    for (int d = axis + 1; d < rank; ++d) inner *= first[static_cast<std::size_t>(d)];

    std::vector<std::int64_t> widths;  // contiguous block length per outer index
    int total = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = static_cast<int>(s.size()) == rank;
        for (int d = 0; ok && d < rank; ++d)
            if (d != axis && s[static_cast<std::size_t>(d)] != first[static_cast<std::size_t>(d)]) ok = false;
        if (!ok) throw ShapeError("concat: " + shape_str(s) + " incompatible with " + shape_str(first));
        total += s[static_cast<std::size_t>(axis)];
        widths.push_back(static_cast<std::int64_t>(s[static_cast<std::size_t>(axis)]) * inner);
    }
    Shape shape = first;
    shape[static_cast<std::size_t>(axis)] = total;
    const std::int64_t row = static_cast<std::int64_t>(total) * inner;
    Buffer<Scalar> out(static_cast<std::size_t>(outer * row));
    std::int64_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const Scalar* src = parts[p].data().data();
        for (std::int64_t o = 0; o < outer; ++o)
            std::copy_n(src + o * widths[p], widths[p], out.data() + o * row + offset);
        offset += widths[p];
    }
    std::vector<std::shared_ptr<TensorImpl<Scalar>>> impls;
    for (const auto& p : parts) impls.push_back(p.impl_ptr());
    return make_result<Scalar>(shape, std::move(out), "concat", parts, [=](std::span<const Scalar> g) {
        std::int64_t off = 0;
        for (std::size_t p = 0; p < impls.size(); ++p) {
            if (Scalar* gp = detail::grad_ptr(impls[p]))
                for (std::int64_t o = 0; o < outer; ++o)
                    for (std::int64_t i = 0; i < widths[p]; ++i) gp[o * widths[p] + i] += g[o * row + off + i];
            off += widths[p];
        }
    });
}

#define AGPC_INSTANTIATE(S)                                                                   \
    template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                               \
    template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                               \
    template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                               \
    template Tensor<S> relu(const Tensor<S>&);                                                \
    template Tensor<S> sigmoid(const Tensor<S>&);                                             \
    template Tensor<S> exp(const Tensor<S>&);                                                 \
    template Tensor<S> scale(const Tensor<S>&, S);                                            \
    template Tensor<S> add_scalar(const Tensor<S>&, S);                                       \
    template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                            \
    template Tensor<S> bmm(const Tensor<S>&, const Tensor<S>&);                               \
    template Tensor<S> transpose(const Tensor<S>&);                                           \
    template Tensor<S> softmax_rows(const Tensor<S>&);                                        \
    template Tensor<S> sum(const Tensor<S>&, const std::vector<int>&);                        \
    template Tensor<S> mean(const Tensor<S>&, const std::vector<int>&);                       \
    template Tensor<S> reshape(const Tensor<S>&, const Shape&);                               \
    template Tensor<S> concat(const std::vector<Tensor<S>>&, int);

AGPC_INSTANTIATE(float)
AGPC_INSTANTIATE(double)
#undef AGPC_INSTANTIATE

}  // namespace agpc
