#include <gtest/gtest.h>

#include <numeric>

#include "checks.hpp"
#include "dmqn/mcqm.hpp"
#include "test_util.hpp"

namespace dmqn {
namespace {

using testing::random_tensor;

TEST(ArgmaxRows, TiesGoToLowestIndex) {
    const Tensor x({3, 3}, {1, 1, 0, 0, 2, 2, 5, 5, 5});
    EXPECT_EQ(argmax_rows(x), (std::vector<std::uint32_t>{0, 1, 0}));
}

TEST(Score, IsDotProductPerCodebook) {
    Graph g;
    auto h = g.constant(Tensor({1, 1, 2}, {1, 2}));
    auto cw = g.constant(Tensor({1, 2, 2}, {3, 4, -1, 0}));
    EXPECT_EQ(score(h, cw).value(), Tensor({1, 1, 2}, {11, -1}));
}

TEST(Score, MismatchedDimsAreDimensionError) {
    Graph g;
    EXPECT_THROW(score(g.constant(Tensor({2, 3, 4})), g.constant(Tensor({2, 5, 3}))), DimensionError);
}

TEST(GumbelSoftmax, NoiseOffIsPlainSoftmax) {
    Graph g;
    auto s = g.constant(Tensor({1, 3}, {2, 1, 0}));
    auto r = gumbel_softmax(s, 1.0, 0, false);
    EXPECT_NEAR(r.probs.value()[0], 0.665241, 1e-6);
    EXPECT_EQ(r.indices, (std::vector<std::uint32_t>{0}));
}

TEST(GumbelSoftmax, LowTemperatureApproachesOneHot) {
    Graph g;
    auto r = gumbel_softmax(g.constant(Tensor({1, 3}, {1.0f, 0.5f, 0.0f})), 0.01, 0, false);
    EXPECT_NEAR(r.probs.value()[0], 1.0, 1e-6);
}

TEST(GumbelSoftmax, NoiseIsDeterministicPerSeed) {
    Graph g;
    auto s = g.constant(random_tensor<float>({50, 8}, 1));
    auto a = gumbel_softmax(s, 1.0, 42, true), b = gumbel_softmax(s, 1.0, 42, true);
    auto c = gumbel_softmax(s, 1.0, 43, true);
    EXPECT_EQ(a.probs.value(), b.probs.value());
    EXPECT_NE(a.probs.value(), c.probs.value());
}

TEST(GumbelSoftmax, NonPositiveTemperatureIsContractError) {
    Graph g;
    EXPECT_THROW(gumbel_softmax(g.constant(Tensor({1, 2})), 0.0, 0, false), ContractError);
}

TEST(FillGumbel, HasGumbelMeanAndVariance) {
    std::vector<float> v(200'000);
    Rng rng(3);
    fill_gumbel<float>(rng, v);
    double mean = 0, sq = 0;
    for (float x : v) mean += x;
    mean /= static_cast<double>(v.size());
    for (float x : v) sq += (x - mean) * (x - mean);
    const double var = sq / static_cast<double>(v.size());
    EXPECT_NEAR(mean, 0.5772, 0.01);          // Euler-Mascheroni
    EXPECT_NEAR(var, 1.6449, 0.03);           // pi^2 / 6
}

TEST(ClusterPool, GroupByAverageWithEmptyClusterZero) {
    Graph g;
    auto e = g.constant(Tensor({3, 2}, {1, 2, 3, 4, 10, 20}));
    auto p = g.constant(Tensor({3, 3}));
    auto r = cluster_pool(e, p, {2, 0, 2});
    EXPECT_EQ(r.reps.value(), Tensor({3, 2}, {3, 4, 0, 0, 5.5f, 11}));
    EXPECT_EQ(r.counts, (std::vector<std::uint32_t>{1, 0, 2}));
    EXPECT_EQ(r.mask, (std::vector<bool>{true, false, true}));
}

TEST(ClusterPool, StraightThroughGradients) {
    // r_k = Σ_i s_ik e_i / Σ_i s_ik at the one-hot s; ds_ik = <dr_k, e_i - r_k> / n_k
    BasicGraph<double> g;
    auto e = g.leaf(BasicTensor<double>({2, 1}, {1, 3}));
    auto p = g.leaf(BasicTensor<double>({2, 2}, {0.9, 0.1, 0.8, 0.2}));
    auto r = cluster_pool(e, p, {0, 0});
    g.backward(sum(r.reps));
    EXPECT_DOUBLE_EQ(e.grad()[0], 0.5);
    EXPECT_DOUBLE_EQ(e.grad()[1], 0.5);
    EXPECT_DOUBLE_EQ(p.grad()[0], (1 - 2) / 2.0);
    EXPECT_DOUBLE_EQ(p.grad()[2], (3 - 2) / 2.0);
    EXPECT_EQ(p.grad()[1], 0.0);  // empty cluster passes nothing
    EXPECT_EQ(p.grad()[3], 0.0);
}

TEST(ClusterPool, RelaxedModeMatchesFiniteDifferences) {
    auto e = random_tensor<double>({5, 3}, 1);
    auto p = random_tensor<double>({5, 4}, 2, 0.05, 1.0);
    const std::vector<std::uint32_t> idx{0, 1, 1, 3, 0};
    auto build = [&](BasicGraph<double>& g, BasicVar<double>& ev, BasicVar<double>& pv) {
        ev = g.leaf(e);
        pv = g.leaf(p);
        auto r = cluster_pool(ev, pv, idx, AssignmentMode::relaxed);
        return sum(mul(r.reps, r.reps));
    };
    BasicGraph<double> g;
    BasicVar<double> ev, pv;
    g.backward(build(g, ev, pv));
    for (auto* target : {&e, &p}) {
        auto grad = target == &e ? ev.grad() : pv.grad();
        std::vector<double> analytic(grad.begin(), grad.end());
        for (std::size_t i = 0; i < target->size(); ++i) {
            const double numeric = testing::central_difference(target->storage(), i, 1e-6, [&] {
                BasicGraph<double> g2;
                BasicVar<double> a, b;
                return build(g2, a, b).item();
            });
            EXPECT_LT(testing::relative_error(analytic[i], numeric), 1e-5) << i;
        }
    }
}

TEST(ClusterPool, IndexOutOfRangeIsContractError) {
    Graph g;
    EXPECT_THROW(cluster_pool(g.constant(Tensor({1, 2})), g.constant(Tensor({1, 2})), {2}), ContractError);
}

TEST(Quantize, EmptySequenceIsContractError) {
    CodebookSet cb({2, 4, 8}, 1);
    Graph g;
    BasicEncodedSequence<float> seq;
    EXPECT_THROW(quantize(g, seq, cb, {}), ContractError);
}

TEST(Quantize, MatchesExhaustiveOracle) {
    const auto r = checks::quantization_oracle(300, 5);
    EXPECT_TRUE(r.pass) << r.detail;
}

TEST(Quantize, CountsSumToLengthEveryCodebook) {
    const auto r = checks::count_conservation(300, 64, 6);
    EXPECT_TRUE(r.pass) << r.detail;
}

TEST(Quantize, NoiseChangesSomeAssignmentsDeterministically) {
    ModelConfig mc;
    mc.max_len = 200;
    Model m(mc);
    Rng rng(1);
    const auto ev = checks::random_behaviors(200, rng);
    auto run = [&](bool noise, std::uint64_t seed) {
        Graph g(false);
        auto seq = m.encoder.encode_sequence(g, 1, ev);
        return quantize(g, seq, m.codebooks, {1.0, noise, seed}).state.indices;
    };
    EXPECT_EQ(run(true, 8), run(true, 8));
    EXPECT_NE(run(true, 8), run(false, 0));
}

}  // namespace
}  // namespace dmqn
