#include <gtest/gtest.h>

#include <cmath>

#include "dmqn/head.hpp"
#include "test_util.hpp"

namespace dmqn {
namespace {

using testing::random_tensor;

AttentionParams identity_attention(std::size_t d) {
    AttentionParams p(d, 1);
    Tensor eye({d, d});
    for (std::size_t i = 0; i < d; ++i) eye.at(i, i) = 1;
    p.query_proj.value = p.key_proj.value = p.value_proj.value = eye;
    return p;
}

TEST(TargetAttention, SoftmaxOverUnmaskedClusters) {
    auto p = identity_attention(2);
    Graph g(false);
    auto clusters = g.constant(Tensor({1, 3, 2}, {1, 0, 0, 1, 5, 5}));
    auto cand = g.constant(Tensor({1, 2}, {2, 0}));
    auto r = target_attention(clusters, {true, true, false}, cand, p);
    const double s = 1 / std::sqrt(2.0);
    const double w0 = std::exp(2 * s) / (std::exp(2 * s) + 1);
    EXPECT_NEAR(r.weights[0], w0, 1e-6);
    EXPECT_NEAR(r.weights[1], 1 - w0, 1e-6);
    EXPECT_EQ(r.weights[2], 0.0f);
    EXPECT_NEAR(r.output.value()[0], w0, 1e-6);
    EXPECT_NEAR(r.output.value()[1], 1 - w0, 1e-6);
    EXPECT_FALSE(r.degenerate);
}

TEST(TargetAttention, NoActiveClusterGivesZeroVector) {
    auto p = identity_attention(2);
    Graph g(false);
    auto r = target_attention(g.constant(Tensor({2, 2, 2})), std::vector<bool>(4, false),
                              g.constant(Tensor({1, 2}, {1, 1})), p);
    EXPECT_TRUE(r.degenerate);
    EXPECT_EQ(r.output.value(), Tensor({1, 2}));
}

TEST(TargetAttention, MaskSizeMismatchIsDimensionError) {
    auto p = identity_attention(2);
    Graph g(false);
    EXPECT_THROW(target_attention(g.constant(Tensor({1, 3, 2})), {true}, g.constant(Tensor({1, 2})), p),
                 DimensionError);
}

TEST(Mlp, RejectsWidthsNotEndingInOne) { EXPECT_THROW(MlpParams({4, 2}, 1), ContractError); }

TEST(Mlp, InputWidthMismatchIsDimensionError) {
    MlpParams p({4, 3, 1}, 1);
    Graph g(false);
    EXPECT_THROW(mlp_logit(g.constant(Tensor({1, 5})), p), DimensionError);
}

TEST(Mlp, MatchesHandForward) {
    MlpParams p({2, 2, 1}, 3);
    Graph g(false);
    const Tensor x({1, 2}, {0.5f, -1.0f});
    const double y = mlp_logit(g.constant(x), p).item();
    double out = p.biases[1].value[0];
    for (std::size_t h = 0; h < 2; ++h) {
        double s = p.biases[0].value[h];
        for (std::size_t i = 0; i < 2; ++i) s += x[i] * p.weights[0].value.at(i, h);
        out += s / (1 + std::exp(-s)) * p.weights[1].value.at(h, 0);
    }
    EXPECT_NEAR(y, out, 1e-6);
}

TEST(Predict, OutputIsProbability) {
    MlpParams p({6, 4, 1}, 2);
    Graph g(false);
    for (std::uint64_t s = 0; s < 10; ++s) {
        auto x = g.constant(random_tensor<float>({1, 2}, s, -50, 50));
        const double y = predict(x, x, x, p).item();
        EXPECT_GE(y, 0.0);
        EXPECT_LE(y, 1.0);
    }
}

TEST(Logloss, KnownValues) {
    EXPECT_NEAR(logloss_value(0.5, 1), std::log(2.0), 1e-12);
    EXPECT_NEAR(logloss_value(0.25, 0), -std::log(0.75), 1e-12);
    EXPECT_NEAR(mean_logloss({0.9, 0.2}, {1, 0}), -(std::log(0.9) + std::log(0.8)) / 2, 1e-12);
}

TEST(Logloss, ClipsExtremeProbabilities) {
    EXPECT_NEAR(logloss_value(0.0, 1), -std::log(1e-7), 1e-9);
    EXPECT_NEAR(logloss_value(1.0, 0), -std::log(1e-7), 1e-6);
    EXPECT_TRUE(std::isfinite(logloss_value(1.0, 0)));
}

TEST(Logloss, GraphGradientIsDerivativeOfCrossEntropy) {
    BasicGraph<double> g;
    auto p = g.leaf(BasicTensor<double>({1, 1}, {0.2}));
    g.backward(logloss(p, 1));
    EXPECT_NEAR(p.grad()[0], -1 / 0.2, 1e-12);
    BasicGraph<double> g2;
    auto q = g2.leaf(BasicTensor<double>({1, 1}, {0.2}));
    g2.backward(logloss(q, 0));
    EXPECT_NEAR(q.grad()[0], 1 / 0.8, 1e-12);
}

TEST(Logloss, SizeMismatchIsDimensionError) { EXPECT_THROW(mean_logloss({0.5}, {1, 0}), DimensionError); }

}  // namespace
}  // namespace dmqn
