#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "grad_cases.hpp"
#include "test_util.hpp"
#include "wormgnn/grad_check.hpp"
#include "wormgnn/ops.hpp"

using namespace wormgnn;
using namespace wormgnn::ad;
using testutil::random_tensor;


class OpGradient : public ::testing::TestWithParam<gradcases::OpCase> {};

TEST_P(OpGradient, MatchesCentralDifferences) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        EXPECT_LT(gradcases::op_grad_error(GetParam(), seed), 1e-4) << GetParam().name << " seed " << seed;
    }
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::ValuesIn(gradcases::op_cases()),
                         [](const auto& info) { return std::string(info.param.name); });

TEST(Tensor, ConstantRejectsWrongValueCount) {
    EXPECT_THROW(Tensor::constant({2, 3}, {1, 2, 3}), ShapeError);
}

TEST(Tensor, ShapeMismatchNamesBothShapes) {
    try {
        add(Tensor::zeros({2, 3}), Tensor::zeros({4}));
        FAIL();
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2, 3]"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[4]"), std::string::npos) << msg;
    }
}

TEST(Tensor, MatmulInnerDimensionChecked) {
    EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
    EXPECT_THROW(bmm(Tensor::zeros({2, 3, 4}), Tensor::zeros({3, 4, 2})), ShapeError);
}

TEST(Tensor, BackwardRequiresScalarRoot) {
    auto x = Tensor::leaf({2}, {1.0, 2.0});
    EXPECT_THROW(scale(x, 2.0).backward(), ShapeError);
}

TEST(Tensor, SecondBackwardOnLeafWithGradientThrows) {
    auto x = Tensor::leaf({2}, {1.0, 2.0});
    sum_all(mul(x, x)).backward();
    EXPECT_THROW(sum_all(mul(x, x)).backward(), std::logic_error);
    x.zero_grad();
    EXPECT_NO_THROW(sum_all(mul(x, x)).backward());
}

TEST(Tensor, SameRootTwiceThrows) {
    auto x = Tensor::leaf({1}, {3.0});
    auto y = sum_all(x);
    y.backward();
    x.zero_grad();
    EXPECT_THROW(y.backward(), std::logic_error);
}

TEST(Tensor, GradientsAccumulateThroughSharedSubexpressions) {
    // y = x * x + x -> dy/dx = 2x + 1
    auto x = Tensor::leaf({3}, {1.0, -2.0, 0.5});
    sum_all(add(mul(x, x), x)).backward();
    const auto g = x.grad();
    EXPECT_DOUBLE_EQ(g[0], 3.0);
    EXPECT_DOUBLE_EQ(g[1], -3.0);
    EXPECT_DOUBLE_EQ(g[2], 2.0);
}

TEST(Tensor, ConstantsDoNotReceiveGradients) {
    auto x = Tensor::leaf({2}, {1.0, 2.0});
    auto c = Tensor::constant({2}, {3.0, 4.0});
    sum_all(mul(x, c)).backward();
    EXPECT_FALSE(c.has_grad());
    EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
}

TEST(Tensor, DetachCutsHistory) {
    auto x = Tensor::leaf({1}, {2.0});
    auto y = mul(x, x).detach();
    EXPECT_FALSE(y.requires_grad());
    EXPECT_DOUBLE_EQ(y.values()[0], 4.0);
}

TEST(Tensor, InteriorValuesAreReadOnly) {
    auto x = Tensor::leaf({1}, {2.0});
    auto y = mul(x, x);
    EXPECT_THROW(y.mutable_values(), std::logic_error);
}

TEST(Ops, SoftmaxRowsSumToOne) {
    auto y = softmax(random_tensor({5, 7}, 3, -30, 30), 1, 0.1);
    for (std::size_t r = 0; r < 5; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < 7; ++c) s += y.values()[r * 7 + c];
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
    EXPECT_THROW(softmax(y, 1, 0.0), std::invalid_argument);
}

TEST(Ops, SoftmaxOfLargeLogitsIsFinite) {
    auto y = softmax(Tensor::constant({1, 2}, {1000.0, -1000.0}), 1);
    EXPECT_DOUBLE_EQ(y.values()[0], 1.0);
    EXPECT_DOUBLE_EQ(y.values()[1], 0.0);
}

TEST(Ops, TwoWaySoftmaxMatchesLogistic) {
    // softmax over (0, 40) puts 1 / (1 + e^-40) on the second component
    auto y = softmax(Tensor::constant({2}, {0.0, 40.0}), 0);
    EXPECT_NEAR(y.values()[1], 1.0 / (1.0 + std::exp(-40.0)), 1e-15);
}

TEST(Ops, LogClampsAtTiny) {
    auto y = log(Tensor::constant({1}, {0.0}));
    EXPECT_TRUE(std::isfinite(y.values()[0]));
    EXPECT_NEAR(y.values()[0], std::log(1e-300), 1e-9);
}

TEST(Ops, RepeatInterleaveLayout) {
    auto a = Tensor::constant({2, 2}, {1, 2, 3, 4});
    auto r = repeat_interleave(a, 3);
    ASSERT_EQ(r.shape(), (Shape{6, 2}));
    const std::vector<double> want{1, 2, 1, 2, 1, 2, 3, 4, 3, 4, 3, 4};
    EXPECT_EQ(std::vector<double>(r.values().begin(), r.values().end()), want);
    EXPECT_THROW(repeat_interleave(a, 0), ShapeError);
}

TEST(Ops, RepeatInterleaveGradientSumsCopies) {
    auto a = Tensor::leaf({2, 1}, {1.0, 2.0});
    sum_all(repeat_interleave(a, 4)).backward();
    EXPECT_DOUBLE_EQ(a.grad()[0], 4.0);
    EXPECT_DOUBLE_EQ(a.grad()[1], 4.0);
}

TEST(Ops, PairwiseAddLayout) {
    auto u = Tensor::constant({1, 2, 1}, {10, 20});
    auto v = Tensor::constant({1, 2, 1}, {1, 2});
    auto p = pairwise_add(u, v);
    ASSERT_EQ(p.shape(), (Shape{1, 2, 2, 1}));
    EXPECT_EQ(std::vector<double>(p.values().begin(), p.values().end()), (std::vector<double>{11, 12, 21, 22}));
}

TEST(Ops, BatchNormUpdatesRunningStatisticsOnlyInTraining) {
    auto stats = BatchNormStats::identity(1);
    auto gamma = Tensor::constant({1}, {1.0});
    auto beta = Tensor::constant({1}, {0.0});
    auto x = Tensor::constant({4, 1}, {1, 2, 3, 4});
    batch_norm(x, gamma, beta, stats, false);
    EXPECT_DOUBLE_EQ(stats.mean[0], 0.0);
    auto y = batch_norm(x, gamma, beta, stats, true);
    EXPECT_NEAR(stats.mean[0], 0.1 * 2.5, 1e-12);
    double m = 0.0;
    for (double v : y.values()) m += v;
    EXPECT_NEAR(m, 0.0, 1e-12);
}

TEST(GradCheck, DetectsAWrongGradient) {
    // An op whose backward is deliberately off by a factor of two.
    auto bad = [](const Tensor& x) {
        std::vector<double> v(x.values().begin(), x.values().end());
        for (auto& e : v) e = e * e;
        auto y = Tensor::from_op("bad_square", x.shape(), v, {x}, [](detail::Node& n) {
            auto& p = *n.parents[0];
            for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += 4.0 * p.value[i] * n.grad[i];
        });
        return sum_all(y);
    };
    EXPECT_GT(grad_check(bad, random_tensor({4}, 1)), 0.1);
}
