#include "agpc/attention.hpp"

#include <algorithm>
#include <map>

#include "op_support.hpp"

namespace agpc {

namespace {
int reduced(int channels, int ratio) { return std::max(1, channels / std::max(1, ratio)); }
}  // namespace

// ---------------------------------------------------------------------------------------------
// Nonlocal block

template <typename Scalar>
NonlocalBlock<Scalar>::NonlocalBlock(int channels, int reduction, std::mt19937_64& rng)
    : key(channels, reduced(channels, reduction), 1, 1, 0, false),
      query(channels, reduced(channels, reduction), 1),
      value(channels, reduced(channels, reduction), 1),
      output(reduced(channels, reduction), channels, 1),
      alpha(Tensor<Scalar>::zeros({1}, true)) {
    for (auto* conv : {&key, &query, &value, &output}) kaiming_init(*conv, rng);
}

template <typename Scalar>
Tensor<Scalar> NonlocalBlock<Scalar>::attention(const Tensor<Scalar>& a) const {
    const int n = a.dim(0), positions = a.dim(2) * a.dim(3), inner = inner_channels();
    auto k = reshape(key.forward(a), {n, inner, positions});
    auto q = reshape(query.forward(a), {n, inner, positions});
    return softmax_rows(bmm(transpose(q), k));
}

template <typename Scalar>
Tensor<Scalar> NonlocalBlock<Scalar>::forward(const Tensor<Scalar>& a) const {
    if (a.rank() != 4 || a.dim(1) != channels())
        throw ShapeError("nonlocal block over " + std::to_string(channels()) + " channels got " + shape_str(a.shape()));
    const int n = a.dim(0), h = a.dim(2), w = a.dim(3), inner = inner_channels();
    auto weights = attention(a);  // [j][i]
    auto v = reshape(value.forward(a), {n, inner, h * w});
    auto aggregated = bmm(v, transpose(weights));  // [c][j] = sum_i v[c][i] * weights[j][i]
    auto mapped = output.forward(reshape(aggregated, {n, inner, h, w}));
    return add(a, mul(mapped, alpha));
}

template <typename Scalar>
void NonlocalBlock<Scalar>::register_into(const std::string& prefix, ParameterSet<Scalar>& set) const {
    key.register_into(prefix + ".key", set);
    query.register_into(prefix + ".query", set);
    value.register_into(prefix + ".value", set);
    output.register_into(prefix + ".output", set);
    set.add_param(prefix + ".alpha", alpha);
}

// ---------------------------------------------------------------------------------------------
// Patch grid

PatchGrid make_patch_grid(int height, int width, int patch) {
    if (patch < 1) throw UsageError("patch size must be at least 1");
    if (height < 1 || width < 1) throw UsageError("patch grid over an empty map");
    PatchGrid grid{height, width, patch, {}, {}};
    for (int r = 0; r < height; r += patch) grid.row_bounds.push_back(r);
    grid.row_bounds.push_back(height);
    for (int c = 0; c < width; c += patch) grid.col_bounds.push_back(c);
    grid.col_bounds.push_back(width);
    return grid;
}

std::vector<std::pair<int, int>> duplicate_scales(const std::vector<int>& patch_sizes, int height, int width) {
    std::vector<std::pair<int, int>> out;
    for (std::size_t i = 0; i < patch_sizes.size(); ++i)
        for (std::size_t j = i + 1; j < patch_sizes.size(); ++j) {
            const PatchGrid a = make_patch_grid(height, width, patch_sizes[i]);
            const PatchGrid b = make_patch_grid(height, width, patch_sizes[j]);
            if (a.rows() == b.rows() && a.cols() == b.cols()) out.emplace_back(patch_sizes[i], patch_sizes[j]);
        }
    return out;
}

std::vector<PatchGrid::Group> PatchGrid::groups() const {
    std::map<std::pair<int, int>, std::vector<Origin>> by_extent;
    for (int i = 0; i < rows(); ++i)
        for (int j = 0; j < cols(); ++j)
            by_extent[{cell_height(i), cell_width(j)}].emplace_back(row_bounds[static_cast<std::size_t>(i)],
                                                                     col_bounds[static_cast<std::size_t>(j)]);
    std::vector<Group> out;
    for (auto& [extent, origins] : by_extent) out.push_back({extent.first, extent.second, std::move(origins)});
    return out;
}

template <typename Scalar>
std::pair<PatchGrid, std::vector<Tensor<Scalar>>> partition(const Tensor<Scalar>& x, int patch) {
    if (x.rank() != 4) throw ShapeError("partition expects N x C x H x W");
    PatchGrid grid = make_patch_grid(x.dim(2), x.dim(3), patch);
    std::vector<Tensor<Scalar>> cells;
    for (int i = 0; i < grid.rows(); ++i)
        for (int j = 0; j < grid.cols(); ++j)
            cells.push_back(gather_patches(x, {{grid.row_bounds[static_cast<std::size_t>(i)], grid.col_bounds[static_cast<std::size_t>(j)]}},
                                           grid.cell_height(i), grid.cell_width(j)));
    return {std::move(grid), std::move(cells)};
}

template <typename Scalar>
Tensor<Scalar> reassemble(const PatchGrid& grid, const std::vector<Tensor<Scalar>>& cells) {
    if (static_cast<int>(cells.size()) != grid.rows() * grid.cols()) throw UsageError("cell count does not match grid");
    Tensor<Scalar> canvas;
    std::size_t idx = 0;
    for (int i = 0; i < grid.rows(); ++i)
        for (int j = 0; j < grid.cols(); ++j) {
            const auto& cell = cells[idx++];
            if (cell.dim(2) != grid.cell_height(i) || cell.dim(3) != grid.cell_width(j))
                throw ShapeError("cell extent does not match grid");
            auto placed = scatter_patches(cell, {{grid.row_bounds[static_cast<std::size_t>(i)], grid.col_bounds[static_cast<std::size_t>(j)]}},
                                          grid.height, grid.width);
            canvas = canvas.defined() ? add(canvas, placed) : placed;
        }
    return canvas;
}

// ---------------------------------------------------------------------------------------------
// Gates

template <typename Scalar>
PixelAttention<Scalar>::PixelAttention(int channels, std::mt19937_64& rng)
    : squeeze(channels, reduced(channels, 4), 1), expand(reduced(channels, 4), channels, 1) {
    kaiming_init(squeeze, rng);
    kaiming_init(expand, rng);
}

template <typename Scalar>
Tensor<Scalar> PixelAttention<Scalar>::forward(const Tensor<Scalar>& x) const {
    return sigmoid(expand.forward(relu(squeeze.forward(x))));
}

template <typename Scalar>
void PixelAttention<Scalar>::register_into(const std::string& prefix, ParameterSet<Scalar>& set) const {
    squeeze.register_into(prefix + ".squeeze", set);
    expand.register_into(prefix + ".expand", set);
}

template <typename Scalar>
ChannelAttention<Scalar>::ChannelAttention(int in_channels, int out_channels, std::mt19937_64& rng)
    : squeeze(in_channels, reduced(in_channels, 4), 1), expand(reduced(in_channels, 4), out_channels, 1) {
    kaiming_init(squeeze, rng);
    kaiming_init(expand, rng);
}

template <typename Scalar>
Tensor<Scalar> ChannelAttention<Scalar>::forward(const Tensor<Scalar>& x) const {
    return sigmoid(expand.forward(relu(squeeze.forward(global_avg_pool(x)))));
}

template <typename Scalar>
void ChannelAttention<Scalar>::register_into(const std::string& prefix, ParameterSet<Scalar>& set) const {
    squeeze.register_into(prefix + ".squeeze", set);
    expand.register_into(prefix + ".expand", set);
}

// ---------------------------------------------------------------------------------------------
// AGCB

std::string to_string(GuideMode mode) { return mode == GuideMode::PatchWise ? "patch-wise" : "pixel-wise"; }

GuideMode parse_guide_mode(const std::string& text) {
    if (text == "patch-wise" || text == "patchwise") return GuideMode::PatchWise;
    if (text == "pixel-wise" || text == "pixelwise") return GuideMode::PixelWise;
    throw UsageError("unknown gca_type '" + text + "' (expected patch-wise or pixel-wise)");
}

template <typename Scalar>
Tensor<Scalar> local_association(const NonlocalBlock<Scalar>& block, const Tensor<Scalar>& x, const PatchGrid& grid) {
    if (x.dim(2) != grid.height || x.dim(3) != grid.width) throw UsageError("grid does not match feature map");
    Tensor<Scalar> canvas;
    for (const auto& group : grid.groups()) {
        auto cells = block.forward(gather_patches(x, group.origins, group.h, group.w));
        auto placed = scatter_patches(cells, group.origins, grid.height, grid.width);
        canvas = canvas.defined() ? add(canvas, placed) : placed;
    }
    return canvas;
}

template <typename Scalar>
Tensor<Scalar> gca_guide(const NonlocalBlock<Scalar>& global, const PixelAttention<Scalar>& gate,
                         const Tensor<Scalar>& x, const PatchGrid& grid) {
    return gate.forward(global.forward(adaptive_avg_pool(x, grid.rows(), grid.cols())));
}

template <typename Scalar>
Tensor<Scalar> apply_guide_patchwise(const Tensor<Scalar>& local, const Tensor<Scalar>& guide, const PatchGrid& grid,
                                     ConvBn<Scalar>& fuse, const Tensor<Scalar>& beta, const Tensor<Scalar>& x, Mode mode) {
    if (guide.dim(2) != grid.rows() || guide.dim(3) != grid.cols())
        throw UsageError("guide map " + shape_str(guide.shape()) + " does not match a " + std::to_string(grid.rows()) +
                         "x" + std::to_string(grid.cols()) + " grid");
    auto gated = mul(local, expand_cells(guide, grid.row_bounds, grid.col_bounds));
    return add(x, mul(fuse.forward(gated, mode, true), beta));
}

template <typename Scalar>
Tensor<Scalar> apply_guide_pixelwise(const Tensor<Scalar>& local, const Tensor<Scalar>& guide, ConvBn<Scalar>& fuse,
                                     const Tensor<Scalar>& beta, const Tensor<Scalar>& x, Mode mode) {
    auto gated = mul(local, bilinear_resize(guide, local.dim(2), local.dim(3)));
    return add(x, mul(fuse.forward(gated, mode, true), beta));
}

template <typename Scalar>
AGCB<Scalar>::AGCB(int channels, int patch, int nonlocal_reduction, GuideMode mode, std::mt19937_64& rng)
    : local(channels, nonlocal_reduction, rng),
      global(channels, nonlocal_reduction, rng),
      guide_gate(channels, rng),
      fuse(channels, channels, 1, 1, 0, rng),
      beta(Tensor<Scalar>::zeros({1}, true)),
      patch_(patch),
      guide_mode_(mode) {
    if (patch < 1) throw UsageError("AGCB patch size must be at least 1");
}

template <typename Scalar>
Tensor<Scalar> AGCB<Scalar>::forward(const Tensor<Scalar>& x, Mode mode) {
    const PatchGrid grid = make_patch_grid(x.dim(2), x.dim(3), patch_);
    auto p = local_association(local, x, grid);
    auto g = gca_guide(global, guide_gate, x, grid);
    return guide_mode_ == GuideMode::PatchWise ? apply_guide_patchwise(p, g, grid, fuse, beta, x, mode)
                                               : apply_guide_pixelwise(p, g, fuse, beta, x, mode);
}

template <typename Scalar>
void AGCB<Scalar>::register_into(const std::string& prefix, ParameterSet<Scalar>& set) const {
    local.register_into(prefix + ".local", set);
    global.register_into(prefix + ".global", set);
    guide_gate.register_into(prefix + ".guide_gate", set);
    fuse.register_into(prefix + ".fuse", set);
    set.add_param(prefix + ".beta", beta);
}

// ---------------------------------------------------------------------------------------------
// CPM

template <typename Scalar>
CPM<Scalar>::CPM(int channels, int context_reduction, int nonlocal_reduction, const std::vector<int>& patch_sizes,
                 GuideMode mode, std::mt19937_64& rng) {
    if (patch_sizes.empty()) throw UsageError("CPM needs at least one patch size");
    const int inner = reduced(channels, context_reduction);
    entry = ConvBn<Scalar>(channels, inner, 1, 1, 0, rng);
    for (int patch : patch_sizes) blocks.emplace_back(inner, patch, nonlocal_reduction, mode, rng);
    exit = ConvBn<Scalar>(channels + inner * static_cast<int>(patch_sizes.size()), channels, 1, 1, 0, rng);
}

template <typename Scalar>
Tensor<Scalar> CPM<Scalar>::forward(const Tensor<Scalar>& x, Mode mode) {
    auto reduced_x = entry.forward(x, mode, true);
    std::vector<Tensor<Scalar>> parts{x};
    for (auto& block : blocks) parts.push_back(block.forward(reduced_x, mode));
    return exit.forward(concat(parts, 1), mode, true);
}

template <typename Scalar>
void CPM<Scalar>::register_into(const std::string& prefix, ParameterSet<Scalar>& set) const {
    entry.register_into(prefix + ".entry", set);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].register_into(prefix + ".agcb" + std::to_string(i), set);
    exit.register_into(prefix + ".exit", set);
}

// ---------------------------------------------------------------------------------------------
// AFM

template <typename Scalar>
AFM<Scalar>::AFM(int low_channels, int deep_channels, bool attentive, std::mt19937_64& rng)
    : reduce(deep_channels, low_channels, 1, 1, 0, rng), attentive_(attentive) {
    if (attentive) {
        pixel = PixelAttention<Scalar>(low_channels, rng);
        channel = ChannelAttention<Scalar>(low_channels, low_channels, rng);
    }
}

template <typename Scalar>
Tensor<Scalar> AFM<Scalar>::forward(const Tensor<Scalar>& low, const Tensor<Scalar>& deep, Mode mode) {
    if (deep.dim(2) > low.dim(2) || deep.dim(3) > low.dim(3))
        throw UsageError("deep map " + shape_str(deep.shape()) + " is larger than low-level map " + shape_str(low.shape()));
    auto resized = (deep.dim(2) == low.dim(2) && deep.dim(3) == low.dim(3)) ? deep
                                                                           : bilinear_resize(deep, low.dim(2), low.dim(3));
    auto deep_reduced = reduce.forward(resized, mode, true);
    auto fused = add(low, deep_reduced);
    if (!attentive_) return fused;
    return mul(mul(fused, pixel.forward(low)), channel.forward(deep_reduced));
}

template <typename Scalar>
void AFM<Scalar>::register_into(const std::string& prefix, ParameterSet<Scalar>& set) const {
    reduce.register_into(prefix + ".reduce", set);
    if (attentive_) {
        pixel.register_into(prefix + ".pixel", set);
        channel.register_into(prefix + ".channel", set);
    }
}

#define AGPC_INSTANTIATE(S)                                                                                          \
    template class NonlocalBlock<S>;                                                                                 \
    template class PixelAttention<S>;                                                                                \
    template class ChannelAttention<S>;                                                                              \
    template class AGCB<S>;                                                                                          \
    template class CPM<S>;                                                                                           \
    template class AFM<S>;                                                                                           \
    template std::pair<PatchGrid, std::vector<Tensor<S>>> partition(const Tensor<S>&, int);                          \
    template Tensor<S> reassemble(const PatchGrid&, const std::vector<Tensor<S>>&);                                  \
    template Tensor<S> local_association(const NonlocalBlock<S>&, const Tensor<S>&, const PatchGrid&);               \
    template Tensor<S> gca_guide(const NonlocalBlock<S>&, const PixelAttention<S>&, const Tensor<S>&, const PatchGrid&); \
    template Tensor<S> apply_guide_patchwise(const Tensor<S>&, const Tensor<S>&, const PatchGrid&, ConvBn<S>&,      \
                                             const Tensor<S>&, const Tensor<S>&, Mode);                              \
    template Tensor<S> apply_guide_pixelwise(const Tensor<S>&, const Tensor<S>&, ConvBn<S>&, const Tensor<S>&,      \
                                             const Tensor<S>&, Mode);

AGPC_INSTANTIATE(float)
AGPC_INSTANTIATE(double)
#undef AGPC_INSTANTIATE

}  // namespace agpc
