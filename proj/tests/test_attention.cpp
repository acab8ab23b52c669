#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "agpc/attention.hpp"
#include "agpc/errors.hpp"
#include "test_support.hpp"

using namespace agpc;
using agpc::testing::open_residuals;
using agpc::testing::expect_mostly_checked;
using agpc::testing::perturb;
using agpc::testing::precise_check;
using agpc::testing::probe;

namespace {

using agpc::oracle::dense_nonlocal;
using agpc::oracle::random_nonlocal;

// Eval-mode BN at its initial statistics divides by sqrt(1 + eps); this gamma cancels that.
void make_identity(ConvBn<double>& fuse) {
    const int c = fuse.conv.out_channels();
    for (int o = 0; o < c; ++o)
        for (int i = 0; i < c; ++i) fuse.conv.weight[o * c + i] = o == i ? 1.0 : 0.0;
    for (auto& g : fuse.bn.gamma.values()) g = std::sqrt(1.0 + BatchNorm2d<double>::kEps);
}

void zero_weights(Conv2d<double>& conv) {
    for (auto& v : conv.weight.values()) v = 0;
    if (conv.bias.defined())
        for (auto& v : conv.bias.values()) v = 0;
}

void expect_values_eq(const Tensor<double>& a, const Tensor<double>& b) {
    ASSERT_EQ(a.shape(), b.shape());
    for (std::int64_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a[i], b[i]) << "at " << i;
}

void expect_values_near(const Tensor<double>& a, const Tensor<double>& b, double tol) {
    ASSERT_EQ(a.shape(), b.shape());
    for (std::int64_t i = 0; i < a.numel(); ++i) ASSERT_NEAR(a[i], b[i], tol) << "at " << i;
}

// Copies rows [r0, r0 + h) and columns [c0, c0 + w) of x.
Tensor<double> window(const Tensor<double>& x, int r0, int c0, int h, int w) {
    const int n = x.dim(0), c = x.dim(1), H = x.dim(2), W = x.dim(3);
    auto out = Tensor<double>::zeros({n, c, h, w});
    for (int b = 0; b < n * c; ++b)
        for (int y = 0; y < h; ++y)
            for (int z = 0; z < w; ++z) out[(b * h + y) * w + z] = x[(b * H + r0 + y) * W + c0 + z];
    return out;
}

}  // namespace

// ---- Nonlocal block -----------------------------------------------------------------------------

TEST(Nonlocal, ZeroAlphaIsExactIdentity) {
    std::mt19937_64 rng(1);
    NonlocalBlock<double> block(4, 2, rng);
    auto a = Tensor<double>::randn({2, 4, 3, 5}, rng);
    expect_values_eq(block.forward(a), a);
}

TEST(Nonlocal, IdenticalPositionsGiveUniformWeights) {
    auto block = random_nonlocal(4, 2, 2);
    std::vector<double> column{0.3, -1.2, 0.8, 2.0};
    auto a = Tensor<double>::zeros({1, 4, 2, 4});
    for (int c = 0; c < 4; ++c)
        for (int p = 0; p < 8; ++p) a[c * 8 + p] = column[c];
    auto w = block.attention(a);
    ASSERT_EQ(w.shape(), (Shape{1, 8, 8}));
    for (auto v : w.values()) EXPECT_NEAR(v, 1.0 / 8, 1e-15);
}

TEST(Nonlocal, MatchesDenseOracleOnEightPositions) {
    auto block = random_nonlocal(4, 2, 3);
    block.alpha[0] = 0.7;
    std::mt19937_64 rng(4);
    auto a = Tensor<double>::randn({1, 4, 2, 4}, rng);
    auto got = block.forward(a);
    auto want = dense_nonlocal(block, a);
    for (std::int64_t i = 0; i < got.numel(); ++i) EXPECT_NEAR(got[i], want[static_cast<std::size_t>(i)], 1e-6);
}

TEST(Nonlocal, MatchesDenseOracleOnRandomCases) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 40; ++trial) {
        const int c = std::uniform_int_distribution<int>(1, 8)(rng);
        const int h = std::uniform_int_distribution<int>(1, 8)(rng);
        const int w = std::uniform_int_distribution<int>(1, 64 / h)(rng);
        const int r = std::uniform_int_distribution<int>(1, 4)(rng);
        auto block = random_nonlocal(c, r, 100 + static_cast<std::uint64_t>(trial));
        block.alpha[0] = std::uniform_real_distribution<double>(-1, 1)(rng);
        auto a = Tensor<double>::randn({2, c, h, w}, rng);
        auto got = block.forward(a);
        auto want = dense_nonlocal(block, a);
        for (std::int64_t i = 0; i < got.numel(); ++i)
            ASSERT_NEAR(got[i], want[static_cast<std::size_t>(i)], 1e-6)
                << "trial " << trial << " C=" << c << " " << h << "x" << w;
    }
}

TEST(Nonlocal, RejectsWrongChannelCount) {
    std::mt19937_64 rng(6);
    NonlocalBlock<double> block(4, 2, rng);
    EXPECT_THROW(block.forward(Tensor<double>::zeros({1, 3, 2, 2})), ShapeError);
}

TEST(Nonlocal, GradCheck) {
    auto r = oracle::grad_nonlocal();
    EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
    expect_mostly_checked(r);
}

// ---- Patch grid ---------------------------------------------------------------------------------

TEST(PatchGrid, RemainderGoesToLastCell) {
    auto grid = make_patch_grid(32, 32, 5);
    EXPECT_EQ(grid.cols(), 7);
    std::vector<int> widths;
    for (int j = 0; j < grid.cols(); ++j) widths.push_back(grid.cell_width(j));
    EXPECT_EQ(widths, (std::vector<int>{5, 5, 5, 5, 5, 5, 2}));
}

TEST(PatchGrid, UniformWhenPatchDivides) {
    auto grid = make_patch_grid(32, 32, 8);
    EXPECT_EQ(grid.rows(), 4);
    EXPECT_EQ(grid.cols(), 4);
    for (int j = 0; j < 4; ++j) EXPECT_EQ(grid.cell_width(j), 8);
}

TEST(PatchGrid, DuplicateScalesOnDeepMap) {
    // 32 / 10 and 32 / 8 both give s = 4.
    const auto dups = duplicate_scales({3, 5, 6, 8, 10}, 32, 32);
    ASSERT_EQ(dups.size(), 1u);
    EXPECT_EQ(dups[0], (std::pair<int, int>{8, 10}));
    EXPECT_TRUE(duplicate_scales({3, 5, 6, 8}, 32, 32).empty());
    EXPECT_EQ(duplicate_scales({5, 6}, 20, 20).size(), 1u);
    EXPECT_TRUE(duplicate_scales({5, 6}, 20, 24).empty());
}

TEST(PatchGrid, RejectsPatchBelowOne) {
    EXPECT_THROW(make_patch_grid(8, 8, 0), UsageError);
    std::mt19937_64 rng(9);
    EXPECT_THROW(partition(Tensor<double>::zeros({1, 1, 4, 4}), 0), UsageError);
}

TEST(PatchGrid, GroupsCoverEveryCellOnce) {
    auto grid = make_patch_grid(13, 10, 4);
    int cells = 0;
    for (const auto& g : grid.groups()) cells += static_cast<int>(g.origins.size());
    EXPECT_EQ(cells, grid.rows() * grid.cols());
}

TEST(PatchGrid, PartitionReassembleIsBitExact) {
    std::mt19937_64 rng(10);
    for (int extent = 1; extent <= 64; ++extent) {
        const int other = std::uniform_int_distribution<int>(1, 64)(rng);
        auto x = Tensor<double>::randn({1, 2, other, extent}, rng);
        for (int w = 1; w <= extent; ++w) {
            auto [grid, cells] = partition(x, w);
            ASSERT_EQ(grid.cols(), (extent + w - 1) / w);
            int tiled = 0;
            for (int j = 0; j < grid.cols(); ++j) tiled += grid.cell_width(j);
            ASSERT_EQ(tiled, extent);
            expect_values_eq(reassemble(grid, cells), x);
        }
    }
}

// ---- Local association --------------------------------------------------------------------------

TEST(LocalAssociation, ZeroAlphaIsIdentity) {
    std::mt19937_64 rng(11);
    NonlocalBlock<double> block(4, 2, rng);
    auto x = Tensor<double>::randn({1, 4, 7, 7}, rng);
    expect_values_eq(local_association(block, x, make_patch_grid(7, 7, 3)), x);
}

TEST(LocalAssociation, SinglePatchEqualsWholeMapNonlocal) {
    auto block = random_nonlocal(4, 2, 12);
    block.alpha[0] = 0.5;
    std::mt19937_64 rng(13);
    auto x = Tensor<double>::randn({1, 4, 6, 6}, rng);
    expect_values_near(local_association(block, x, make_patch_grid(6, 6, 6)), block.forward(x), 1e-12);
}

TEST(LocalAssociation, HalvesAreIndependentAndShareWeights) {
    auto block = random_nonlocal(4, 2, 14);
    block.alpha[0] = 0.9;
    std::mt19937_64 rng(15);
    auto left = Tensor<double>::randn({1, 4, 4, 4}, rng);
    auto right = Tensor<double>::randn({1, 4, 4, 4}, rng);
    auto lr = concat(std::vector<Tensor<double>>{left, right}, 3);
    auto rl = concat(std::vector<Tensor<double>>{right, left}, 3);
    const auto grid = make_patch_grid(4, 8, 4);
    auto p = local_association(block, lr, grid);
    auto q = local_association(block, rl, grid);
    expect_values_near(window(p, 0, 0, 4, 4), block.forward(left), 1e-12);
    expect_values_near(window(p, 0, 4, 4, 4), block.forward(right), 1e-12);
    expect_values_near(window(q, 0, 0, 4, 4), window(p, 0, 4, 4, 4), 1e-12);
    expect_values_near(window(q, 0, 4, 4, 4), window(p, 0, 0, 4, 4), 1e-12);
}

// ---- Gates --------------------------------------------------------------------------------------

TEST(PixelAttention, ZeroWeightsGiveOneHalf) {
    std::mt19937_64 rng(16);
    PixelAttention<double> pa(8, rng);
    zero_weights(pa.squeeze);
    zero_weights(pa.expand);
    auto g = pa.forward(Tensor<double>::randn({1, 8, 3, 3}, rng));
    for (auto v : g.values()) EXPECT_EQ(v, 0.5);
}

TEST(PixelAttention, StrictlyInsideUnitIntervalAndShapePreserving) {
    std::mt19937_64 rng(17);
    for (int c : {4, 8, 12, 16}) {
        PixelAttention<double> pa(c, rng);
        EXPECT_EQ(pa.squeeze.out_channels(), c / 4);
        auto x = Tensor<double>::randn({2, c, 5, 3}, rng, 3.0);
        auto g = pa.forward(x);
        EXPECT_EQ(g.shape(), x.shape());
        for (auto v : g.values()) {
            EXPECT_GT(v, 0.0);
            EXPECT_LT(v, 1.0);
        }
    }
}

TEST(PixelAttention, GradCheck) {
    auto r = oracle::grad_pixel_attention();
    EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
    expect_mostly_checked(r);
}

TEST(ChannelAttention, GradCheck) {
    auto r = oracle::grad_channel_attention();
    EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
    expect_mostly_checked(r);
}

TEST(ChannelAttention, ZeroWeightsGiveOneHalf) {
    std::mt19937_64 rng(18);
    ChannelAttention<double> ca(8, 8, rng);
    zero_weights(ca.squeeze);
    zero_weights(ca.expand);
    auto g = ca.forward(Tensor<double>::randn({1, 8, 3, 3}, rng));
    EXPECT_EQ(g.shape(), (Shape{1, 8, 1, 1}));
    for (auto v : g.values()) EXPECT_EQ(v, 0.5);
}

TEST(ChannelAttention, DependsOnlyOnPooledVector) {
    std::mt19937_64 rng(19);
    ChannelAttention<double> ca(8, 8, rng);
    auto x = Tensor<double>::randn({1, 8, 4, 4}, rng);
    auto shifted = Tensor<double>::from(x.shape(), x.values());
    for (int c = 0; c < 8; ++c) {
        shifted[c * 16 + 0] += 0.7;  // zero-mean perturbation per channel
        shifted[c * 16 + 5] -= 0.7;
    }
    auto a = ca.forward(x), b = ca.forward(shifted);
    expect_values_near(a, b, 1e-14);
    for (auto v : a.values()) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
    }
}

// ---- Global guide -------------------------------------------------------------------------------

TEST(GcaGuide, ShapeFollowsScale) {
    std::mt19937_64 rng(20);
    NonlocalBlock<double> global(16, 4, rng);
    PixelAttention<double> gate(16, rng);
    auto x = Tensor<double>::randn({1, 16, 32, 32}, rng);
    auto g = gca_guide(global, gate, x, make_patch_grid(32, 32, 8));
    EXPECT_EQ(g.shape(), (Shape{1, 16, 4, 4}));
    for (auto v : g.values()) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
    }
}

TEST(GcaGuide, ConstantInputGivesSpatiallyConstantGuide) {
    auto global = random_nonlocal(8, 2, 21);
    global.alpha[0] = 0.6;
    std::mt19937_64 rng(22);
    PixelAttention<double> gate(8, rng);
    auto x = Tensor<double>::zeros({1, 8, 12, 12});
    for (int c = 0; c < 8; ++c)
        for (int p = 0; p < 144; ++p) x[c * 144 + p] = 0.1 * c - 0.3;
    auto g = gca_guide(global, gate, x, make_patch_grid(12, 12, 4));
    for (int c = 0; c < 8; ++c)
        for (int p = 1; p < 9; ++p) EXPECT_NEAR(g[c * 9 + p], g[c * 9], 1e-14);
}

TEST(GcaGuide, ZeroGateWeightsGiveOneHalf) {
    auto global = random_nonlocal(8, 2, 23);
    std::mt19937_64 rng(24);
    PixelAttention<double> gate(8, rng);
    zero_weights(gate.squeeze);
    zero_weights(gate.expand);
    auto g = gca_guide(global, gate, Tensor<double>::randn({1, 8, 9, 9}, rng), make_patch_grid(9, 9, 3));
    for (auto v : g.values()) EXPECT_EQ(v, 0.5);
}

// ---- Guide application --------------------------------------------------------------------------

TEST(GuideApplication, ZeroBetaIsIdentity) {
    std::mt19937_64 rng(25);
    ConvBn<double> fuse(4, 4, 1, 1, 0, rng);
    auto beta = Tensor<double>::zeros({1});
    auto x = Tensor<double>::randn({1, 4, 6, 6}, rng);
    auto p = Tensor<double>::randn({1, 4, 6, 6}, rng);
    auto g = Tensor<double>::uniform({1, 4, 2, 2}, rng, 0.1, 0.9);
    const auto grid = make_patch_grid(6, 6, 3);
    expect_values_eq(apply_guide_patchwise(p, g, grid, fuse, beta, x, Mode::Eval), x);
    expect_values_eq(apply_guide_pixelwise(p, g, fuse, beta, x, Mode::Eval), x);
}

TEST(GuideApplication, UnitGuideAndIdentityFuse) {
    std::mt19937_64 rng(26);
    ConvBn<double> fuse(4, 4, 1, 1, 0, rng);
    make_identity(fuse);
    auto beta = Tensor<double>::full({1}, 0.4);
    auto x = Tensor<double>::randn({1, 4, 6, 6}, rng);
    auto p = Tensor<double>::randn({1, 4, 6, 6}, rng);
    auto ones = Tensor<double>::full({1, 4, 2, 2}, 1.0);
    auto got = apply_guide_patchwise(p, ones, make_patch_grid(6, 6, 3), fuse, beta, x, Mode::Eval);
    for (std::int64_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(got[i], 0.4 * std::max(0.0, p[i]) + x[i], 1e-12);
}

TEST(GuideApplication, PatchwiseMatchesPerCellEvaluation) {
    std::mt19937_64 rng(27);
    const int c = 3;
    ConvBn<double> fuse(c, c, 1, 1, 0, rng);
    for (auto* t : {&fuse.bn.gamma, &fuse.bn.beta, &fuse.bn.running_mean})
        for (auto& v : t->values()) v = std::uniform_real_distribution<double>(-0.5, 1.5)(rng);
    for (auto& v : fuse.bn.running_var.values()) v = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
    auto beta = Tensor<double>::full({1}, 0.8);
    auto x = Tensor<double>::randn({1, c, 4, 4}, rng);
    auto p = Tensor<double>::randn({1, c, 4, 4}, rng);
    auto g = Tensor<double>::uniform({1, c, 2, 2}, rng, 0.05, 0.95);
    auto got = apply_guide_patchwise(p, g, make_patch_grid(4, 4, 2), fuse, beta, x, Mode::Eval);

    for (int o = 0; o < c; ++o)
        for (int y = 0; y < 4; ++y)
            for (int z = 0; z < 4; ++z) {
                const int cell = (y / 2) * 2 + z / 2;
                double conv = 0;
                for (int i = 0; i < c; ++i) conv += fuse.conv.weight[o * c + i] * p[(i * 4 + y) * 4 + z] * g[i * 4 + cell];
                const double bn = fuse.bn.gamma[o] * (conv - fuse.bn.running_mean[o]) /
                                      std::sqrt(fuse.bn.running_var[o] + BatchNorm2d<double>::kEps) +
                                  fuse.bn.beta[o];
                const int at = (o * 4 + y) * 4 + z;
                EXPECT_NEAR(got[at], 0.8 * std::max(0.0, bn) + x[at], 1e-12);
            }
}

TEST(GuideApplication, PatchwiseRejectsGridMismatch) {
    std::mt19937_64 rng(28);
    ConvBn<double> fuse(2, 2, 1, 1, 0, rng);
    auto beta = Tensor<double>::zeros({1});
    auto x = Tensor<double>::randn({1, 2, 6, 6}, rng);
    auto g = Tensor<double>::full({1, 2, 3, 3}, 0.5);
    EXPECT_THROW(apply_guide_patchwise(x, g, make_patch_grid(6, 6, 3), fuse, beta, x, Mode::Eval), UsageError);
}

TEST(GuideApplication, ModesAgreeOnConstantGuide) {
    std::mt19937_64 rng(29);
    ConvBn<double> fuse(4, 4, 1, 1, 0, rng);
    auto beta = Tensor<double>::full({1}, 0.7);
    auto x = Tensor<double>::randn({1, 4, 9, 9}, rng);
    auto p = Tensor<double>::randn({1, 4, 9, 9}, rng);
    for (int patch : {3, 9}) {
        const auto grid = make_patch_grid(9, 9, patch);
        auto g = Tensor<double>::zeros({1, 4, grid.rows(), grid.cols()});
        const int cells = grid.rows() * grid.cols();
        for (int ch = 0; ch < 4; ++ch)
            for (int k = 0; k < cells; ++k) g[ch * cells + k] = 0.2 + 0.15 * ch;
        expect_values_near(apply_guide_patchwise(p, g, grid, fuse, beta, x, Mode::Eval),
                           apply_guide_pixelwise(p, g, fuse, beta, x, Mode::Eval), 1e-12);
    }
}

TEST(GuideApplication, ModesDifferOnVaryingGuide) {
    std::mt19937_64 rng(30);
    ConvBn<double> fuse(4, 4, 1, 1, 0, rng);
    make_identity(fuse);
    auto beta = Tensor<double>::full({1}, 1.0);
    auto x = Tensor<double>::zeros({1, 4, 8, 8});
    auto p = Tensor<double>::uniform({1, 4, 8, 8}, rng, 0.5, 1.5);
    auto g = Tensor<double>::uniform({1, 4, 2, 2}, rng, 0.05, 0.95);
    auto a = apply_guide_patchwise(p, g, make_patch_grid(8, 8, 4), fuse, beta, x, Mode::Eval);
    auto b = apply_guide_pixelwise(p, g, fuse, beta, x, Mode::Eval);
    double diff = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
    EXPECT_GT(diff, 1e-3);
}

// ---- AGCB ---------------------------------------------------------------------------------------

TEST(Agcb, IdentityAtInitialization) {
    std::mt19937_64 rng(31);
    for (auto mode : {GuideMode::PatchWise, GuideMode::PixelWise}) {
        AGCB<double> block(4, 3, 2, mode, rng);
        auto x = Tensor<double>::randn({2, 4, 8, 8}, rng);
        expect_values_eq(block.forward(x, Mode::Train), x);
    }
}

TEST(Agcb, ShapePreservedForRaggedGrids) {
    std::mt19937_64 rng(32);
    AGCB<double> block(4, 5, 2, GuideMode::PatchWise, rng);
    block.beta[0] = 0.5;
    for (auto [h, w] : {std::pair{7, 11}, std::pair{5, 5}, std::pair{12, 6}}) {
        auto x = Tensor<double>::randn({1, 4, h, w}, rng);
        EXPECT_EQ(block.forward(x, Mode::Train).shape(), x.shape());
    }
}

TEST(Agcb, GuideModesDiffer) {
    std::mt19937_64 rng(33);
    AGCB<double> block(4, 4, 2, GuideMode::PatchWise, rng);
    ParameterSet<double> set;
    block.register_into("agcb", set);
    perturb(set, 34);
    auto x = Tensor<double>::randn({1, 4, 8, 8}, rng);
    auto a = block.forward(x, Mode::Train);
    block.set_guide_mode(GuideMode::PixelWise);
    auto b = block.forward(x, Mode::Train);
    double diff = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i) diff = std::max(diff, std::abs(a[i] - b[i]));
    EXPECT_GT(diff, 1e-6);
}

TEST(Agcb, ParseGuideMode) {
    EXPECT_EQ(parse_guide_mode("patch-wise"), GuideMode::PatchWise);
    EXPECT_EQ(parse_guide_mode("pixel-wise"), GuideMode::PixelWise);
    EXPECT_EQ(to_string(GuideMode::PixelWise), "pixel-wise");
    EXPECT_THROW(parse_guide_mode("cell"), UsageError);
}

class AgcbGradCheck : public ::testing::TestWithParam<GuideMode> {};

TEST_P(AgcbGradCheck, AllParameters) {
    auto r = oracle::grad_agcb(GetParam());
    EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
    expect_mostly_checked(r);
}

INSTANTIATE_TEST_SUITE_P(Modes, AgcbGradCheck, ::testing::Values(GuideMode::PatchWise, GuideMode::PixelWise));

// ---- AFM ----------------------------------------------------------------------------------------

TEST(Afm, SaturatedGatesReduceToSum) {
    std::mt19937_64 rng(37);
    AFM<double> afm(8, 16, true, rng);
    for (auto& v : afm.pixel.expand.bias.values()) v = 60;
    for (auto& v : afm.channel.expand.bias.values()) v = 60;
    auto low = Tensor<double>::randn({1, 8, 8, 8}, rng);
    auto deep = Tensor<double>::randn({1, 16, 4, 4}, rng);
    auto got = afm.forward(low, deep, Mode::Eval);
    auto want = add(low, afm.reduce.forward(bilinear_resize(deep, 8, 8), Mode::Eval, true));
    expect_values_near(got, want, 1e-12);
}

TEST(Afm, ZeroDeepInput) {
    std::mt19937_64 rng(38);
    AFM<double> afm(8, 16, true, rng);
    auto low = Tensor<double>::randn({1, 8, 8, 8}, rng);
    auto got = afm.forward(low, Tensor<double>::zeros({1, 16, 4, 4}), Mode::Eval);
    auto want = mul(mul(low, afm.pixel.forward(low)), afm.channel.forward(Tensor<double>::zeros({1, 8, 8, 8})));
    expect_values_near(got, want, 1e-14);
}

TEST(Afm, PlainVariantIsUpsampleAdd) {
    std::mt19937_64 rng(39);
    AFM<double> afm(8, 16, false, rng);
    ParameterSet<double> set;
    afm.register_into("afm", set);
    for (const auto& [name, t] : set.params) EXPECT_EQ(name.rfind("afm.reduce", 0), 0u) << name;
    auto low = Tensor<double>::randn({1, 8, 8, 8}, rng);
    auto deep = Tensor<double>::randn({1, 16, 4, 4}, rng);
    expect_values_near(afm.forward(low, deep, Mode::Eval),
                       add(low, afm.reduce.forward(bilinear_resize(deep, 8, 8), Mode::Eval, true)), 1e-14);
}

TEST(Afm, RejectsDeepMapLargerThanLow) {
    std::mt19937_64 rng(40);
    AFM<double> afm(4, 8, true, rng);
    EXPECT_THROW(afm.forward(Tensor<double>::zeros({1, 4, 4, 4}), Tensor<double>::zeros({1, 8, 8, 8}), Mode::Eval),
                 UsageError);
}

TEST(Afm, GradCheck) {
    auto r = oracle::grad_afm();
    EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
    expect_mostly_checked(r);
}

// ---- CPM ----------------------------------------------------------------------------------------

TEST(Cpm, ChannelArithmetic) {
    std::mt19937_64 rng(43);
    CPM<float> cpm(64, 4, 4, {3, 5, 6, 8}, GuideMode::PatchWise, rng);
    EXPECT_EQ(cpm.entry.conv.out_channels(), 16);
    EXPECT_EQ(cpm.blocks.size(), 4u);
    EXPECT_EQ(cpm.exit.conv.in_channels(), 128);
    EXPECT_EQ(cpm.exit.conv.out_channels(), 64);
    auto y = cpm.forward(Tensor<float>::zeros({1, 64, 16, 16}), Mode::Eval);
    EXPECT_EQ(y.shape(), (Shape{1, 64, 16, 16}));
}

TEST(Cpm, ShapePreservedOnRandomExtents) {
    std::mt19937_64 rng(44);
    CPM<double> cpm(8, 2, 2, {2, 3}, GuideMode::PatchWise, rng);
    for (auto& b : cpm.blocks) b.beta[0] = 0.3;
    for (int trial = 0; trial < 5; ++trial) {
        const int h = std::uniform_int_distribution<int>(3, 12)(rng), w = std::uniform_int_distribution<int>(3, 12)(rng);
        auto x = Tensor<double>::randn({1, 8, h, w}, rng);
        EXPECT_EQ(cpm.forward(x, Mode::Train).shape(), x.shape());
    }
}

TEST(Cpm, IndependentParametersPerScale) {
    std::mt19937_64 rng(45);
    CPM<double> cpm(8, 2, 2, {2, 3}, GuideMode::PatchWise, rng);
    EXPECT_NE(cpm.blocks[0].local.key.weight.impl(), cpm.blocks[1].local.key.weight.impl());
    EXPECT_NE(cpm.blocks[0].local.key.weight.values(), cpm.blocks[1].local.key.weight.values());
}

TEST(Cpm, ZeroBetasReduceToExitOfRepeatedEntry) {
    std::mt19937_64 rng(46);
    CPM<double> cpm(16, 4, 2, {3, 5, 6, 8}, GuideMode::PatchWise, rng);
    auto x = Tensor<double>::randn({1, 16, 8, 8}, rng);
    auto entry = cpm.entry.forward(x, Mode::Eval, true);
    auto want = cpm.exit.forward(concat(std::vector<Tensor<double>>{x, entry, entry, entry, entry}, 1), Mode::Eval, true);
    expect_values_eq(cpm.forward(x, Mode::Eval), want);
}

TEST(Cpm, RejectsEmptyScaleSet) {
    std::mt19937_64 rng(47);
    EXPECT_THROW(CPM<double>(8, 2, 2, {}, GuideMode::PatchWise, rng), UsageError);
}

TEST(Cpm, GradCheck) {
    auto r = oracle::grad_cpm();
    EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
    expect_mostly_checked(r);
}
