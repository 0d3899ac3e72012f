#include <gtest/gtest.h>

#include "checks.hpp"
#include "dmqn/model.hpp"

namespace dmqn {
namespace {

TrainingInstance sample_instance(std::size_t len) {
    SyntheticSpec s;
    s.users = 4;
    s.sequence_length = std::max<std::size_t>(len, 2);
    s.train_fraction = 1;
    s.valid_fraction = 0;
    auto inst = SyntheticDataset(s).instance(0);
    inst.behaviors.resize(len);
    return inst;
}

ModelConfig small_model(ModelKind kind = ModelKind::dmqn) {
    ModelConfig c;
    c.kind = kind;
    c.max_len = 64;
    return c;
}

TEST(Model, MlpInputWidthIsInterestSideCandidate) {
    EXPECT_EQ(ModelConfig{}.mlp_widths(), (std::vector<std::size_t>{32 + 16 + 32, 128, 64, 1}));
}

TEST(Model, ForwardGivesProbability) {
    Model m(small_model());
    Graph g(false);
    auto f = m.forward(g, sample_instance(40));
    EXPECT_EQ(f.y_hat.shape(), (Shape{1, 1}));
    EXPECT_GT(f.y_hat.item(), 0.0f);
    EXPECT_LT(f.y_hat.item(), 1.0f);
    EXPECT_FALSE(f.degenerate);
}

TEST(Model, EmptyHistoryIsDegenerateButScored) {
    for (auto kind : {ModelKind::dmqn, ModelKind::mean_pool}) {
        Model m(small_model(kind));
        Graph g(false);
        auto f = m.forward(g, sample_instance(0));
        EXPECT_TRUE(f.degenerate);
        EXPECT_TRUE(std::isfinite(f.y_hat.item()));
    }
}

TEST(Model, BaselineSkipsUnusedParameters) {
    Model d(small_model()), b(small_model(ModelKind::mean_pool));
    EXPECT_LT(b.parameter_count(), d.parameter_count());
}

TEST(Model, ParameterNamesAreUnique) {
    Model m(small_model());
    std::set<std::string> names;
    std::size_t n = 0;
    m.visit([&](Parameter& p) {
        names.insert(p.name);
        ++n;
    });
    EXPECT_EQ(names.size(), n);
}

TEST(Model, CastToDoubleAgreesWithFloat) {
    Model m(small_model());
    auto md = m.cast<double>();
    const auto inst = sample_instance(30);
    Graph g(false);
    BasicGraph<double> gd(false);
    EXPECT_NEAR(m.forward(g, inst).y_hat.item(), md.forward(gd, inst).y_hat.item(), 1e-5);
}

TEST(Model, UnknownKindIsContractError) { EXPECT_THROW(parse_model_kind("din"), ContractError); }

TEST(Model, ConfigJsonRoundTrip) {
    ModelConfig c = small_model(ModelKind::mean_pool);
    c.mlp_hidden = {7};
    EXPECT_EQ(nlohmann::json(c).get<ModelConfig>(), c);
}

TEST(Model, EndToEndGradientMatchesFiniteDifferences) {
    checks::GradCheckSpec s;
    s.coords_per_tensor = 8;
    const auto r = checks::gradient_check(s);
    EXPECT_TRUE(r.pass) << r.detail;
}

}  // namespace
}  // namespace dmqn
