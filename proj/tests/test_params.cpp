#include <gtest/gtest.h>

#include "support.hpp"

using namespace chai;

namespace {

ParamSet<double> scalar_params(double p) {
    ParamSet<double> ps;
    ps.add("w.x", Tensor<double>({1}, p));
    return ps;
}

GradMap<double> scalar_grad(double g) {
    GradMap<double> gm;
    gm.emplace("w.x", Tensor<double>({1}, g));
    return gm;
}

}

TEST(Sgd, PlainStep) {
    auto ps = scalar_params(0.0);
    sgd_momentum_step(ps, scalar_grad(2.0), LearningRates<double>{1.0, {}}, 0.0);
    EXPECT_DOUBLE_EQ(ps.at("w.x")[0], -2.0);
}

TEST(Sgd, ZeroGradientIsFixedPoint) {
    auto ps = scalar_params(1.25);
    sgd_momentum_step(ps, scalar_grad(0.0), LearningRates<double>{0.3, {}}, 0.9);
    EXPECT_DOUBLE_EQ(ps.at("w.x")[0], 1.25);
    EXPECT_DOUBLE_EQ(ps.velocity("w.x")[0], 0.0);
}

TEST(Sgd, TwoStepMomentumRecurrence) {
    // v1 = -lr g1, p1 = p0 + v1; v2 = mu v1 - lr g2, p2 = p1 + v2.
    const double p0 = 1.0, lr = 0.1, mu = 0.9, g1 = 2.0, g2 = -0.5;
    const double v1 = -lr * g1, p1 = p0 + v1;
    const double v2 = mu * v1 - lr * g2, p2 = p1 + v2;
    auto ps = scalar_params(p0);
    sgd_momentum_step(ps, scalar_grad(g1), LearningRates<double>{lr, {}}, mu);
    EXPECT_DOUBLE_EQ(ps.at("w.x")[0], p1);
    sgd_momentum_step(ps, scalar_grad(g2), LearningRates<double>{lr, {}}, mu);
    EXPECT_DOUBLE_EQ(ps.at("w.x")[0], p2);
    EXPECT_DOUBLE_EQ(ps.velocity("w.x")[0], v2);
}

TEST(Sgd, PerGroupRates) {
    ParamSet<double> ps;
    ps.add("conv0.weight", Tensor<double>({2}, 0.0));
    ps.add("conv1.weight", Tensor<double>({2}, 0.0));
    GradMap<double> g;
    g.emplace("conv0.weight", Tensor<double>({2}, 1.0));
    g.emplace("conv1.weight", Tensor<double>({2}, 1.0));
    LearningRates<double> lr{0.5, {{"conv1", 0.01}}};
    sgd_momentum_step(ps, g, lr, 0.0);
    EXPECT_DOUBLE_EQ(ps.at("conv0.weight")[0], -0.5);
    EXPECT_DOUBLE_EQ(ps.at("conv1.weight")[1], -0.01);
    EXPECT_EQ(param_group("conv1.weight"), "conv1");
    EXPECT_DOUBLE_EQ(lr.scaled(0.1).for_param("conv1.bias"), 0.001);
}

TEST(Sgd, RejectsBadArguments) {
    auto ps = scalar_params(0.0);
    EXPECT_THROW(sgd_momentum_step(ps, scalar_grad(1.0), LearningRates<double>{-1.0, {}}, 0.0), InvalidInput);
    EXPECT_THROW(sgd_momentum_step(ps, scalar_grad(1.0), LearningRates<double>{1.0, {}}, 1.0), InvalidInput);
    EXPECT_THROW(sgd_momentum_step(ps, scalar_grad(1.0), LearningRates<double>{1.0, {}}, -0.1), InvalidInput);
    GradMap<double> wrong;
    wrong.emplace("w.x", Tensor<double>({2}, 1.0));
    EXPECT_THROW(sgd_momentum_step(ps, wrong, LearningRates<double>{1.0, {}}, 0.0), InvalidInput);
    GradMap<double> unknown;
    unknown.emplace("w.y", Tensor<double>({1}, 1.0));
    EXPECT_THROW(sgd_momentum_step(ps, unknown, LearningRates<double>{1.0, {}}, 0.0), InvalidInput);
}

TEST(Sgd, ClipGradNorm) {
    // Joint norm of (3, 4) is 5.
    GradMap<double> g;
    g.emplace("a.w", Tensor<double>({1}, 3.0));
    g.emplace("b.w", Tensor<double>({1}, 4.0));
    auto untouched = g;
    EXPECT_DOUBLE_EQ(clip_grad_norm(untouched, 0.0), 5.0);
    EXPECT_EQ(untouched, g);
    EXPECT_DOUBLE_EQ(clip_grad_norm(untouched, 5.0), 5.0);
    EXPECT_EQ(untouched, g);
    EXPECT_DOUBLE_EQ(clip_grad_norm(g, 1.0), 5.0);
    EXPECT_DOUBLE_EQ(g.at("a.w")[0], 0.6);
    EXPECT_DOUBLE_EQ(g.at("b.w")[0], 0.8);
}

TEST(ParamSet, NamesUniqueAndVelocityShapes) {
    ParamSet<double> ps;
    ps.add("a.w", Tensor<double>({2, 3}, 1.0));
    EXPECT_THROW(ps.add("a.w", Tensor<double>({1})), InvalidInput);
    EXPECT_EQ(ps.velocity("a.w").shape(), ps.at("a.w").shape());
    EXPECT_EQ(ps.scalar_count(), 6u);
    EXPECT_THROW(ps.at("missing"), InvalidInput);
}
