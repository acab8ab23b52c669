#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "agpc/nn.hpp"

namespace agpc {

/// Embedded-Gaussian self-attention over all H*W positions with an alpha-scaled residual:
/// out_j = a_j + alpha * Wo( sum_i softmax_i(q_j . k_i) v_i ). Key, query and value are 1x1
/// projections to C / r channels; Wo restores C channels. The key projection has no bias: it
/// would add a per-query constant that the softmax cancels.
template <typename Scalar>
class NonlocalBlock {
public:
    NonlocalBlock() = default;
    NonlocalBlock(int channels, int reduction, std::mt19937_64& rng);

    Tensor<Scalar> forward(const Tensor<Scalar>& a) const;
    /// Row j holds the attention weights of query position j over all key positions: N x n x n.
    Tensor<Scalar> attention(const Tensor<Scalar>& a) const;
    void register_into(const std::string& prefix, ParameterSet<Scalar>& set) const;

    int channels() const { return output.out_channels(); }
    int inner_channels() const { return key.out_channels(); }

    Conv2d<Scalar> key, query, value, output;
    Tensor<Scalar> alpha;  // shape {1}, zero at construction
};

/// Tiling of an H x W map into cells of a nominal patch extent; the last row/column of cells
/// takes the remainder. Scale s = ceil(extent / patch).
struct PatchGrid {
    int height = 0, width = 0, patch = 0;
    std::vector<int> row_bounds, col_bounds;  // s + 1 entries each, from 0 to the extent

    int rows() const { return static_cast<int>(row_bounds.size()) - 1; }
    int cols() const { return static_cast<int>(col_bounds.size()) - 1; }
    int cell_height(int i) const { return row_bounds[static_cast<std::size_t>(i) + 1] - row_bounds[static_cast<std::size_t>(i)]; }
    int cell_width(int j) const { return col_bounds[static_cast<std::size_t>(j) + 1] - col_bounds[static_cast<std::size_t>(j)]; }

    /// Cells partitioned by extent, each group in row-major cell order.
    struct Group {
        int h, w;
        std::vector<Origin> origins;
    };
    std::vector<Group> groups() const;
};

PatchGrid make_patch_grid(int height, int width, int patch);

/// Pairs of patch sizes (in list order) giving the same scale s on an H x W map.
std::vector<std::pair<int, int>> duplicate_scales(const std::vector<int>& patch_sizes, int height, int width);

/// Splits x (N x C x H x W) into its grid cells, row-major.
template <typename Scalar>
std::pair<PatchGrid, std::vector<Tensor<Scalar>>> partition(const Tensor<Scalar>& x, int patch);

template <typename Scalar>
Tensor<Scalar> reassemble(const PatchGrid& grid, const std::vector<Tensor<Scalar>>& cells);

/// sigma(W2 relu(W1 x)) with 1x1 convolutions and a factor-4 bottleneck; spatial shape preserved.
template <typename Scalar>
class PixelAttention {
public:
    PixelAttention() = default;
    PixelAttention(int channels, std::mt19937_64& rng);

    Tensor<Scalar> forward(const Tensor<Scalar>& x) const;
    void register_into(const std::string& prefix, ParameterSet<Scalar>& set) const;

    Conv2d<Scalar> squeeze, expand;
};

/// sigma(W2 relu(W1 P(x))) over the globally pooled vector; returns N x C_out x 1 x 1.
template <typename Scalar>
class ChannelAttention {
public:
    ChannelAttention() = default;
    ChannelAttention(int in_channels, int out_channels, std::mt19937_64& rng);

    Tensor<Scalar> forward(const Tensor<Scalar>& x) const;
    void register_into(const std::string& prefix, ParameterSet<Scalar>& set) const;

    Conv2d<Scalar> squeeze, expand;
};

enum class GuideMode { PatchWise, PixelWise };

std::string to_string(GuideMode mode);
GuideMode parse_guide_mode(const std::string& text);

/// Attention-guided context block: patch-local nonlocal association (shared weights across
/// cells) modulated by a global guide map computed over pooled cells.
template <typename Scalar>
class AGCB {
public:
    AGCB() = default;
    AGCB(int channels, int patch, int nonlocal_reduction, GuideMode mode, std::mt19937_64& rng);

    Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode);
    void register_into(const std::string& prefix, ParameterSet<Scalar>& set) const;

    int patch() const { return patch_; }
    GuideMode guide_mode() const { return guide_mode_; }
    void set_guide_mode(GuideMode mode) { guide_mode_ = mode; }

    NonlocalBlock<Scalar> local;         // shared by every cell
    NonlocalBlock<Scalar> global;        // over the s x s pooled cells
    PixelAttention<Scalar> guide_gate;
    ConvBn<Scalar> fuse;                 // channel-preserving 1x1 conv + BN
    Tensor<Scalar> beta;                 // shape {1}, zero at construction

private:
    int patch_ = 1;
    GuideMode guide_mode_ = GuideMode::PatchWise;
};

/// Runs the shared cell-level nonlocal block on every cell of the grid: P.
template <typename Scalar>
Tensor<Scalar> local_association(const NonlocalBlock<Scalar>& block, const Tensor<Scalar>& x, const PatchGrid& grid);

/// Adaptive pool to the grid scale, nonlocal over cells, pixel attention: G in (0,1), N x C x s x s.
template <typename Scalar>
Tensor<Scalar> gca_guide(const NonlocalBlock<Scalar>& global, const PixelAttention<Scalar>& gate,
                         const Tensor<Scalar>& x, const PatchGrid& grid);

/// beta * relu(fuse([P_1 G_1, ..., P_s^2 G_s^2])) + x
template <typename Scalar>
Tensor<Scalar> apply_guide_patchwise(const Tensor<Scalar>& local, const Tensor<Scalar>& guide, const PatchGrid& grid,
                                     ConvBn<Scalar>& fuse, const Tensor<Scalar>& beta, const Tensor<Scalar>& x, Mode mode);

/// beta * relu(fuse(P * bilinear(G))) + x
template <typename Scalar>
Tensor<Scalar> apply_guide_pixelwise(const Tensor<Scalar>& local, const Tensor<Scalar>& guide, ConvBn<Scalar>& fuse,
                                     const Tensor<Scalar>& beta, const Tensor<Scalar>& x, Mode mode);

/// Context pyramid: entry reduction to C / r_c, one independent AGCB per patch size, concatenation
/// with the input along channels, exit 1x1 back to C.
template <typename Scalar>
class CPM {
public:
    CPM() = default;
    CPM(int channels, int context_reduction, int nonlocal_reduction, const std::vector<int>& patch_sizes,
        GuideMode mode, std::mt19937_64& rng);

    Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode);
    void register_into(const std::string& prefix, ParameterSet<Scalar>& set) const;

    ConvBn<Scalar> entry;
    std::vector<AGCB<Scalar>> blocks;
    ConvBn<Scalar> exit;
};

/// Fuses a low-level map with a deeper, coarser one: the deep map is resized to the low-level
/// extent, reduced by a 1x1 conv+BN+ReLU, summed with the low-level map and, when attentive,
/// gated by pixel attention of the low-level map and channel attention of the reduced deep map.
/// Without attention this is a plain upsample-add.
template <typename Scalar>
class AFM {
public:
    AFM() = default;
    AFM(int low_channels, int deep_channels, bool attentive, std::mt19937_64& rng);

    Tensor<Scalar> forward(const Tensor<Scalar>& low, const Tensor<Scalar>& deep, Mode mode);
    void register_into(const std::string& prefix, ParameterSet<Scalar>& set) const;

    bool attentive() const { return attentive_; }

    ConvBn<Scalar> reduce;
    PixelAttention<Scalar> pixel;
    ChannelAttention<Scalar> channel;

private:
    bool attentive_ = true;
};

}  // namespace agpc
