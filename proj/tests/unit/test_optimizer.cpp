#include <gtest/gtest.h>

#include <cmath>

#include "cpret/optimizer.hpp"

namespace cpret {
namespace {

TEST(RowGradient, SlotsAccumulateInCallOrder) {
    RowGradient g(5, 2);
    EXPECT_EQ(g.find(3), nullptr);
    g.row(3)[0] += 1.5;
    g.row(1)[1] -= 2.0;
    g.row(3)[0] += 0.5;
    ASSERT_NE(g.find(3), nullptr);
    EXPECT_EQ(g.find(3)[0], 2.0);
    EXPECT_EQ(g.find(1)[1], -2.0);
    EXPECT_EQ(g.touched(), (std::vector<std::uint32_t>{3, 1}));
    g.clear();
    EXPECT_EQ(g.find(3), nullptr);
    EXPECT_TRUE(g.touched().empty());
}

TEST(Optimizer, SgdStepIsMinusLearningRateTimesGradient) {
    std::vector<float> p{1.0f, 2.0f, 3.0f, 4.0f};
    RowGradient g(2, 2);
    g.row(1)[0] = 0.5;
    g.row(1)[1] = -1.0;
    Optimizer opt({OptimizerKind::sgd, 0.1, 0.5}, p.size());
    opt.step(p, g);
    EXPECT_EQ(p[0], 1.0f);
    EXPECT_EQ(p[1], 2.0f);
    EXPECT_EQ(p[2], static_cast<float>(3.0 - 0.1 * 0.5));
    EXPECT_EQ(p[3], static_cast<float>(4.0 + 0.1 * 1.0));
    EXPECT_EQ(opt.steps(), 1u);
}

TEST(Optimizer, AdamWFirstStepByHand) {
    // Two parameters, one with gradient 0.5 and one without.
    std::vector<float> p{1.0f, 2.0f};
    RowGradient g(2, 1);
    g.row(0)[0] = 0.5;
    OptimizerConfig cfg{OptimizerKind::adamw, 0.1, 0.01, 0.9, 0.999, 1e-8};
    Optimizer opt(cfg, p.size());
    opt.step(p, g);
    // Bias-corrected moments on step 1 are g and g^2.
    const double expected0 = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8) - 0.1 * 0.01 * 1.0;
    const double expected1 = 2.0 - 0.1 * 0.01 * 2.0;
    EXPECT_NEAR(p[0], expected0, 1e-7);
    EXPECT_NEAR(p[1], expected1, 1e-7);
}

TEST(Optimizer, AdamWSecondStepByHand) {
    std::vector<float> p{0.0f};
    RowGradient g(1, 1);
    OptimizerConfig cfg{OptimizerKind::adamw, 0.01, 0.0, 0.9, 0.999, 1e-8};
    Optimizer opt(cfg, 1);
    g.row(0)[0] = 1.0;
    opt.step(p, g);
    g.clear();
    g.row(0)[0] = -2.0;
    opt.step(p, g);
    const double m = 0.9 * 0.1 + 0.1 * -2.0;
    const double v = 0.999 * 0.001 + 0.001 * 4.0;
    const double mhat = m / (1 - 0.81);
    const double vhat = v / (1 - 0.999 * 0.999);
    const double expected = -0.01 - 0.01 * mhat / (std::sqrt(vhat) + 1e-8);
    EXPECT_NEAR(p[0], expected, 1e-7);
}

TEST(Optimizer, ZeroLearningRateLeavesParametersBitIdentical) {
    std::vector<float> p{0.3f, -1.25f, 7.0f};
    const auto before = p;
    RowGradient g(3, 1);
    g.row(0)[0] = 10.0;
    g.row(2)[0] = -3.0;
    for (auto kind : {OptimizerKind::sgd, OptimizerKind::adamw}) {
        Optimizer opt({kind, 0.0, 0.01}, p.size());
        opt.step(p, g);
        EXPECT_EQ(p, before);
    }
}

TEST(Optimizer, DenseUpdateIsThreadCountInvariant) {
    const std::size_t rows = 9000, width = 4;
    std::vector<float> a(rows * width), b;
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = static_cast<float>(std::sin(double(i)));
    b = a;
    RowGradient g(rows, width);
    for (std::uint32_t r = 0; r < rows; r += 7)
        for (std::size_t c = 0; c < width; ++c) g.row(r)[c] = std::cos(double(r + c));
    Optimizer o1({OptimizerKind::adamw, 1e-3, 0.01}, a.size());
    Optimizer o4({OptimizerKind::adamw, 1e-3, 0.01}, b.size());
    for (int s = 0; s < 3; ++s) {
        o1.step(a, g, 1);
        o4.step(b, g, 4);
    }
    EXPECT_EQ(a, b);
}

}  // namespace
}  // namespace cpret
