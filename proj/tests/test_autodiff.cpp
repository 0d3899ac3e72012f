#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "dmqn/autodiff.hpp"
#include "test_util.hpp"

namespace dmqn {
namespace {

using testing::random_tensor;

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
    Graph g;
    auto eye = g.constant(Tensor({2, 2}, {1, 0, 0, 1}));
    auto m = g.constant(Tensor({2, 2}, {1, 2, 3, 4}));
    EXPECT_EQ(matmul(eye, m).value(), Tensor({2, 2}, {1, 2, 3, 4}));
}

TEST(Matmul, SelectorRow) {
    Graph g;
    auto out = matmul(g.constant(Tensor({1, 2}, {1, 0})), g.constant(Tensor({2, 1}, {5, 7})));
    EXPECT_EQ(out.value(), Tensor({1, 1}, {5}));
}

TEST(Matmul, MatchesTripleLoop) {
    Graph g;
    auto a = random_tensor<float>({3, 4}, 11);
    auto b = random_tensor<float>({4, 2}, 12);
    auto out = matmul(g.constant(a), g.constant(b));
    auto ref = testing::matmul_oracle(a, b);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(out.value()[i], ref[i], 1e-6);
}

TEST(Matmul, TransposedVariantMatchesExplicitTranspose) {
    Graph g;
    auto a = random_tensor<float>({5, 3}, 1);
    auto b = random_tensor<float>({4, 3}, 2);
    Tensor bt({3, 4});
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 3; ++j) bt.at(j, i) = b.at(i, j);
    auto ref = testing::matmul_oracle(a, bt);
    auto out = matmul_nt(g.constant(a), g.constant(b));
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(out.value()[i], ref[i], 1e-6);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
    Graph g;
    auto a = g.constant(Tensor({2, 3}));
    auto b = g.constant(Tensor({2, 3}));
    try {
        matmul(a, b);
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
    }
}

TEST(Silu, KnownValues) {
    Graph g;
    auto y = silu(g.constant(Tensor({3}, {0.0f, 20.0f, 1.0f})));
    EXPECT_EQ(y.value()[0], 0.0f);
    EXPECT_NEAR(y.value()[1], 20.0, 1e-6);
    // 1 * sigmoid(1) at double precision
    EXPECT_NEAR(y.value()[2], 0.731059, 1e-6);
}

TEST(LayerNorm, ConstantRowCollapsesToOffset) {
    Graph g;
    auto y = layer_norm(g.constant(Tensor::filled({1, 4}, 3.5f)), g.constant(Tensor::filled({4}, 1.0f)),
                        g.constant(Tensor({4})), 1e-5);
    for (auto v : y.value().values()) EXPECT_EQ(v, 0.0f);
}

TEST(LayerNorm, StandardizedRowIsFixedPoint) {
    BasicGraph<double> g;
    auto y = layer_norm(g.constant(BasicTensor<double>({1, 2}, {1, -1})),
                        g.constant(BasicTensor<double>::filled({2}, 1.0)), g.constant(BasicTensor<double>({2})), 1e-12);
    EXPECT_NEAR(y.value()[0], 1.0, 1e-9);
    EXPECT_NEAR(y.value()[1], -1.0, 1e-9);
}

TEST(LayerNorm, MatchesTwoPassOracle) {
    Graph g;
    auto x = random_tensor<float>({3, 16}, 5);
    auto gain = random_tensor<float>({16}, 6);
    auto offset = random_tensor<float>({16}, 7);
    auto y = layer_norm(g.constant(x), g.constant(gain), g.constant(offset), 1e-5);
    for (std::size_t r = 0; r < 3; ++r) {
        double mean = 0, var = 0;
        for (std::size_t j = 0; j < 16; ++j) mean += x.at(r, j);
        mean /= 16;
        for (std::size_t j = 0; j < 16; ++j) var += (x.at(r, j) - mean) * (x.at(r, j) - mean);
        var /= 16;
        for (std::size_t j = 0; j < 16; ++j) {
            const double ref = gain[j] * (x.at(r, j) - mean) / std::sqrt(var + 1e-5) + offset[j];
            EXPECT_NEAR(y.value().at(r, j), ref, 1e-5);
        }
    }
}

TEST(Softmax, SymmetricAndStable) {
    Graph g;
    auto a = softmax(g.constant(Tensor({1, 2}, {0, 0})));
    EXPECT_EQ(a.value(), Tensor({1, 2}, {0.5f, 0.5f}));
    auto b = softmax(g.constant(Tensor({1, 2}, {1000, 0})));
    EXPECT_EQ(b.value()[0], 1.0f);
    EXPECT_EQ(b.value()[1], 0.0f);
}

TEST(Softmax, ExpNormalizeOracle) {
    Graph g;
    auto y = softmax(g.constant(Tensor({1, 3}, {2, 1, 0})));
    EXPECT_NEAR(y.value()[0], 0.665241, 1e-6);
    EXPECT_NEAR(y.value()[1], 0.244728, 1e-6);
    EXPECT_NEAR(y.value()[2], 0.090031, 1e-6);
}

TEST(Softmax, RowsSumToOneForRandomInputs) {
    Graph g;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto y = softmax(g.constant(random_tensor<float>({4, 9}, seed, -50, 50)));
        for (std::size_t r = 0; r < 4; ++r) {
            double s = 0;
            for (auto v : y.value().row(r)) s += v;
            EXPECT_NEAR(s, 1.0, 1e-6);
        }
    }
}

TEST(Softmax, MaskedPositionsGetZeroWeight) {
    Graph g;
    auto y = masked_softmax(g.constant(Tensor({1, 4}, {5, 1, 9, 2})), {true, true, false, true});
    EXPECT_EQ(y.value()[2], 0.0f);
    EXPECT_NEAR(y.value()[0] + y.value()[1] + y.value()[3], 1.0, 1e-6);
}

TEST(Backward, SumGivesOnes) {
    Graph g;
    auto x = g.leaf(Tensor({3}, {1, 2, 3}));
    g.backward(sum(x));
    for (auto v : x.grad()) EXPECT_EQ(v, 1.0f);
}

TEST(Backward, SquareGivesTwiceX) {
    Graph g;
    auto x = g.leaf(Tensor({1}, {3}));
    g.backward(mul(x, x));
    EXPECT_EQ(x.grad()[0], 6.0f);
}

TEST(Backward, RepeatedCallsAccumulate) {
    Graph g;
    auto x = g.leaf(Tensor({1}, {3}));
    auto loss = mul(x, x);
    g.backward(loss);
    g.backward(loss);
    EXPECT_EQ(x.grad()[0], 12.0f);
}

TEST(Backward, ParameterGradientSumsOverPaths) {
    Parameter p("p", Tensor({1}, {2}));
    Graph g;
    auto a = g.param(p);
    auto b = g.param(p);
    g.backward(sum(add(mul(a, a), b)));  // d/dp (p^2 + p) = 2p + 1
    EXPECT_EQ(p.grad[0], 5.0f);
}

TEST(Backward, NonScalarLossIsContractError) {
    Graph g;
    auto x = g.leaf(Tensor({2}, {1, 2}));
    EXPECT_THROW(g.backward(x), ContractError);
}

TEST(Forward, BitwiseDeterministic) {
    auto run = [] {
        Graph g;
        auto a = g.constant(random_tensor<float>({64, 32}, 3));
        auto b = g.constant(random_tensor<float>({32, 48}, 4));
        return layer_norm(silu(matmul(a, b)), g.constant(Tensor::filled({48}, 1.0f)), g.constant(Tensor({48})))
            .value();
    };
    EXPECT_EQ(run(), run());
}

// Composite graph exercising every differentiable op; the reverse-mode gradient
// of each input must match central differences (h = 1e-3, double precision).
class CompositeGradient : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(CompositeGradient, MatchesFiniteDifferences) {
    const std::uint64_t seed = GetParam();
    std::vector<BasicTensor<double>> inputs{
        random_tensor({4, 6}, seed + 1), random_tensor({6, 8}, seed + 2), random_tensor({8}, seed + 3),
        random_tensor({8}, seed + 4),    random_tensor({8}, seed + 5),    random_tensor({3, 8}, seed + 6)};
    auto build = [&](BasicGraph<double>& g, std::vector<BasicVar<double>>& vars) {
        vars.clear();
        for (auto& t : inputs) vars.push_back(g.leaf(t));
        auto h = silu(add_row(matmul(vars[0], vars[1]), vars[2]));           // [4×8]
        auto n = layer_norm(h, vars[3], vars[4], 1e-5);                       // [4×8]
        auto att = masked_softmax(matmul_nt(n, vars[5]), {true, false, true});  // [4×3]
        auto mixed = matmul(att, vars[5]);                                    // [4×8]
        auto parts = concat_cols<double>({columns(mixed, 0, 4), columns(n, 4, 4)});
        auto s = stack<double>({parts, scale(parts, 0.5)});
        auto pooled = mean_rows(reshape(select(s, 1), {4, 8}));
        auto p = sigmoid(sum(mul(pooled, pooled)));
        return logloss(p, 1);
    };
    BasicGraph<double> g;
    std::vector<BasicVar<double>> vars;
    auto loss = build(g, vars);
    g.backward(loss);
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        std::vector<double> analytic(vars[t].grad().begin(), vars[t].grad().end());
        auto& x = inputs[t].storage();
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double numeric = testing::central_difference(x, i, 1e-3, [&] {
                BasicGraph<double> g2;
                std::vector<BasicVar<double>> v2;
                return build(g2, v2).item();
            });
            EXPECT_LT(testing::relative_error(analytic[i], numeric), 1e-3)
                << "input " << t << " coord " << i << " analytic " << analytic[i] << " numeric " << numeric;
        }
    }
}

INSTANTIATE_TEST_SUITE_P(RandomInputs, CompositeGradient, ::testing::Values(1u, 2u, 3u));

}  // namespace
}  // namespace dmqn
