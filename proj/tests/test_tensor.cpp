#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "agpc/errors.hpp"
#include "agpc/gradcheck.hpp"
#include "agpc/ops.hpp"
#include "test_support.hpp"

using namespace agpc;
using agpc::testing::probe;

namespace {

constexpr double kModuleTol = 1e-6;

Tensor<double> rand_param(const Shape& shape, std::uint64_t seed, double lo = -1, double hi = 1) {
    std::mt19937_64 rng(seed);
    return Tensor<double>::uniform(shape, rng, lo, hi, true);
}

/// Values bounded away from zero so relu kinks stay out of finite-difference reach.
Tensor<double> away_from_zero(const Shape& shape, std::uint64_t seed) {
    auto t = rand_param(shape, seed);
    for (auto& v : t.values()) v = v < 0 ? v - 0.1 : v + 0.1;
    return t;
}

}  // namespace

TEST(Tensor, FactoriesAndIndexing) {
    auto t = Tensor<float>::from({2, 3}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(t.rank(), 2);
    EXPECT_EQ(t.numel(), 6);
    EXPECT_EQ(t.dim(-1), 3);
    EXPECT_FLOAT_EQ(t.at({1, 2}), 6.f);
    EXPECT_THROW(Tensor<float>::from({2, 2}, {1, 2, 3}), ShapeError);
    auto c = t.clone();
    c[0] = 42;
    EXPECT_FLOAT_EQ(t[0], 1.f);
}

TEST(Tensor, BroadcastRules) {
    auto a = Tensor<double>::from({1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    auto ch = Tensor<double>::from({1, 2, 1, 1}, {10, 100});
    auto y = mul(a, ch);
    EXPECT_DOUBLE_EQ(y.at({0, 0, 1, 1}), 40);
    EXPECT_DOUBLE_EQ(y.at({0, 1, 0, 0}), 500);
    auto s = add(a, Tensor<double>::from({1}, {0.5}));
    EXPECT_DOUBLE_EQ(s[7], 8.5);
    EXPECT_THROW(add(a, Tensor<double>::zeros({2, 2})), ShapeError);
}

TEST(Autodiff, SharedSubexpressionAccumulates) {
    auto x = Tensor<double>::from({3}, {0.5, -1.0, 2.0}, true);
    auto e = exp(x);
    backward(sum(add(mul(e, e), x)));
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(x.grad()[i], 2 * std::exp(2 * x[i]) + 1, 1e-12);
}

TEST(Autodiff, GradientsAccumulateAcrossCallsUntilCleared) {
    auto x = Tensor<double>::from({2}, {1.0, 2.0}, true);
    backward(sum(scale(x, 3.0)));
    backward(sum(scale(x, 3.0)));
    EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
    x.zero_grad();
    EXPECT_FALSE(x.has_grad());
}

TEST(Autodiff, NonScalarRootIsRejected) {
    auto x = Tensor<double>::from({2}, {1.0, 2.0}, true);
    EXPECT_THROW(backward(scale(x, 2.0)), UsageError);
}

TEST(Autodiff, NoGradGuardSkipsRecording) {
    auto x = Tensor<double>::from({2}, {1.0, 2.0}, true);
    {
        NoGradGuard guard;
        EXPECT_TRUE(scale(x, 2.0).is_leaf());
    }
    EXPECT_FALSE(scale(x, 2.0).is_leaf());
}

TEST(Ops, MatmulMatchesNaiveProduct) {
    std::mt19937_64 rng(3);
    auto a = Tensor<double>::uniform({4, 5}, rng, -1, 1);
    auto b = Tensor<double>::uniform({5, 3}, rng, -1, 1);
    auto c = matmul(a, b);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 3; ++j) {
            double acc = 0;
            for (int k = 0; k < 5; ++k) acc += a.at({i, k}) * b.at({k, j});
            EXPECT_NEAR(c.at({i, j}), acc, 1e-12);
        }
}

TEST(Ops, SoftmaxRowsAreDistributions) {
    std::mt19937_64 rng(4);
    auto a = Tensor<double>::uniform({2, 3, 7}, rng, -30, 30);
    auto s = softmax_rows(a);
    auto shifted = softmax_rows(add_scalar(a, 1000.0));
    for (int r = 0; r < 6; ++r) {
        double total = 0;
        for (int j = 0; j < 7; ++j) {
            total += s[r * 7 + j];
            EXPECT_NEAR(s[r * 7 + j], shifted[r * 7 + j], 1e-12);
        }
        EXPECT_NEAR(total, 1.0, 1e-12);
    }
}

TEST(Ops, ConvMatchesDirectLoops) {
    std::mt19937_64 rng(5);
    for (int k : {1, 3, 7})
        for (int stride : {1, 2})
            for (int pad : {0, k / 2}) {
                auto x = Tensor<double>::uniform({2, 3, 9, 8}, rng, -1, 1);
                auto w = Tensor<double>::uniform({4, 3, k, k}, rng, -1, 1);
                auto b = Tensor<double>::uniform({4}, rng, -1, 1);
                auto y = conv2d(x, w, b, stride, pad);
                const int oh = (9 + 2 * pad - k) / stride + 1, ow = (8 + 2 * pad - k) / stride + 1;
                ASSERT_EQ(y.shape(), (Shape{2, 4, oh, ow}));
                for (int n = 0; n < 2; ++n)
                    for (int o = 0; o < 4; ++o)
                        for (int i = 0; i < oh; ++i)
                            for (int j = 0; j < ow; ++j) {
                                double acc = b[o];
                                for (int c = 0; c < 3; ++c)
                                    for (int u = 0; u < k; ++u)
                                        for (int v = 0; v < k; ++v) {
                                            const int yy = i * stride - pad + u, xx = j * stride - pad + v;
                                            if (yy >= 0 && yy < 9 && xx >= 0 && xx < 8)
                                                acc += w.at({o, c, u, v}) * x.at({n, c, yy, xx});
                                        }
                                EXPECT_NEAR(y.at({n, o, i, j}), acc, 1e-12) << "k=" << k << " s=" << stride << " p=" << pad;
                            }
            }
}

TEST(Ops, PoolingAndResizeEdgeCases) {
    std::mt19937_64 rng(6);
    auto x = Tensor<double>::uniform({1, 2, 6, 5}, rng, 0, 1);
    auto g = adaptive_avg_pool(x, 1, 1);
    auto gp = global_avg_pool(x);
    for (int c = 0; c < 2; ++c) EXPECT_NEAR(g[c], gp[c], 1e-15);
    auto same = bilinear_resize(x, 6, 5);
    for (std::int64_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(same[i], x[i]);
    EXPECT_THROW(adaptive_avg_pool(x, 7, 5), UsageError);
    EXPECT_THROW(adaptive_avg_pool(x, 0, 1), UsageError);
    auto pooled = adaptive_avg_pool(x, 3, 5);
    EXPECT_NEAR(pooled.at({0, 1, 2, 4}), (x.at({0, 1, 4, 4}) + x.at({0, 1, 5, 4})) / 2, 1e-15);
}

TEST(Ops, GatherScatterRoundTrip) {
    std::mt19937_64 rng(7);
    auto x = Tensor<double>::uniform({2, 3, 6, 6}, rng, -1, 1);
    std::vector<Origin> origins{{0, 0}, {0, 3}, {3, 0}, {3, 3}};
    auto p = gather_patches(x, origins, 3, 3);
    EXPECT_EQ(p.shape(), (Shape{8, 3, 3, 3}));
    auto back = scatter_patches(p, origins, 6, 6);
    for (std::int64_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(back[i], x[i]);
}

// ---- finite-difference checks ----------------------------------------------------------------

TEST(GradCheck, ElementwiseAndBroadcast) {
    auto a = rand_param({2, 3, 2, 2}, 1);
    auto b = rand_param({2, 3, 2, 2}, 2);
    auto c = rand_param({2, 3, 1, 1}, 3);
    auto s = rand_param({1}, 4);
    auto r = grad_check([&] { return probe(add(mul(sub(a, b), c), mul(sigmoid(b), s))); }, {a, b, c, s});
    EXPECT_LT(r.max_rel_error, kModuleTol) << r.worst;
    auto d = away_from_zero({3, 4}, 5);
    r = grad_check([&] { return probe(add(relu(d), exp(scale(add_scalar(d, 0.2), 0.5)))); }, {d});
    EXPECT_LT(r.max_rel_error, kModuleTol) << r.worst;
}

TEST(GradCheck, LinearAlgebra) {
    auto a = rand_param({3, 4}, 6);
    auto b = rand_param({4, 2}, 7);
    auto r = grad_check([&] { return probe(matmul(a, b)); }, {a, b});
    EXPECT_LT(r.max_rel_error, kModuleTol) << r.worst;
    auto p = rand_param({2, 3, 4}, 8);
    auto q = rand_param({2, 3, 5}, 9);
    r = grad_check([&] { return probe(softmax_rows(bmm(transpose(p), q))); }, {p, q});
    EXPECT_LT(r.max_rel_error, kModuleTol) << r.worst;
}

TEST(GradCheck, ReductionsAndShapes) {
    auto a = rand_param({2, 3, 4}, 10);
    auto b = rand_param({2, 2, 4}, 11);
    auto r = grad_check([&] { return probe(concat<double>({mean(a, {1}), sum(b, {1})}, 1)); }, {a, b});
    EXPECT_LT(r.max_rel_error, kModuleTol) << r.worst;
    r = grad_check([&] { return probe(reshape(a, {4, 6})); }, {a});
    EXPECT_LT(r.max_rel_error, kModuleTol) << r.worst;
    r = grad_check([&] { return scale(mean(mul(a, a)), 3.0); }, {a});
    EXPECT_LT(r.max_rel_error, kModuleTol) << r.worst;
}

TEST(GradCheck, Convolution) {
    for (int k : {1, 3, 7}) {
        auto x = rand_param({2, 2, 8, 7}, 12);
        auto w = rand_param({3, 2, k, k}, 13);
        auto b = rand_param({3}, 14);
        auto r = grad_check([&] { return probe(conv2d(x, w, b, 2, k / 2)); }, {x, w, b});
        EXPECT_LT(r.max_rel_error, kModuleTol) << "k=" << k << " " << r.worst;
    }
}

TEST(GradCheck, BatchNormBothModes) {
    auto x = rand_param({3, 2, 3, 3}, 15);
    auto gamma = rand_param({2}, 16, 0.5, 1.5);
    auto beta = rand_param({2}, 17);
    auto rm = Tensor<double>::from({2}, {0.1, -0.2});
    auto rv = Tensor<double>::from({2}, {0.8, 1.3});
    for (bool training : {true, false}) {
        auto r = grad_check([&] { return probe(batch_norm(x, gamma, beta, rm, rv, training, 0.1, 1e-5)); }, {x, gamma, beta});
        EXPECT_LT(r.max_rel_error, kModuleTol) << (training ? "train " : "eval ") << r.worst;
    }
}

TEST(GradCheck, SpatialResampling) {
    auto x = rand_param({2, 2, 7, 6}, 18);
    auto r = grad_check([&] { return probe(add(adaptive_avg_pool(x, 3, 4), bilinear_resize(global_avg_pool(x), 3, 4))); }, {x});
    EXPECT_LT(r.max_rel_error, kModuleTol) << r.worst;
    r = grad_check([&] { return probe(bilinear_resize(x, 13, 5)); }, {x});
    EXPECT_LT(r.max_rel_error, kModuleTol) << r.worst;
    auto g = rand_param({2, 2, 2, 3}, 19);
    r = grad_check([&] { return probe(expand_cells(g, {0, 4, 7}, {0, 2, 4, 6})); }, {g});
    EXPECT_LT(r.max_rel_error, kModuleTol) << r.worst;
    std::vector<Origin> origins{{0, 0}, {4, 3}, {1, 2}};
    r = grad_check([&] { return probe(scatter_patches(gather_patches(x, origins, 3, 3), origins, 7, 6)); }, {x});
    EXPECT_LT(r.max_rel_error, kModuleTol) << r.worst;
}

TEST(GradCheck, DetectsAWrongGradient) {
    auto x = rand_param({4}, 20);
    std::vector<std::vector<double>> doubled(1);
    for (double v : x.values()) doubled[0].push_back(2 * 2 * v);  // true gradient of sum(x^2) is 2x
    auto r = grad_check_against([&] { return sum(mul(x, x)); }, {x}, doubled);
    // |2g - g| / max(|2g|, |g|) = 0.5 for every coordinate.
    EXPECT_NEAR(r.max_rel_error, 0.5, 1e-6);
}
