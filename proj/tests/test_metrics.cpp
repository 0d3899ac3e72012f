#include <gtest/gtest.h>

#include "checks.hpp"
#include "dmqn/metrics.hpp"

namespace dmqn {
namespace {

TEST(Auc, PerfectAndInvertedRankings) {
    EXPECT_EQ(auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}), 1.0);
    EXPECT_EQ(auc({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}), 0.0);
}

TEST(Auc, TiesCountHalf) {
    EXPECT_EQ(auc({0.5, 0.5}, {0, 1}), 0.5);
    EXPECT_EQ(auc({0.3, 0.5, 0.5, 0.7}, {0, 0, 1, 1}), 0.875);
}

TEST(Auc, SingleClassIsMetricError) {
    EXPECT_THROW(auc({0.1, 0.2}, {1, 1}), MetricError);
    EXPECT_THROW(auc({0.1, 0.2}, {0, 0}), MetricError);
}

TEST(Auc, LengthMismatchIsDimensionError) { EXPECT_THROW(auc({0.1}, {0, 1}), DimensionError); }

TEST(Auc, MatchesPairwiseOracleExactly) {
    const auto r = checks::metric_correctness(300, 17);
    EXPECT_TRUE(r.pass) << r.detail;
}

TEST(Report, OmitsAucWithoutBothClasses) {
    const auto r = make_report({0.2, 0.4}, {1, 1});
    EXPECT_FALSE(r.auc.has_value());
    EXPECT_TRUE(to_json(r)["auc"].is_null());
    EXPECT_EQ(r.positive_rate, 1.0);
    EXPECT_EQ(r.instance_count, 2u);
}

TEST(Report, JsonCarriesAucAndLogloss) {
    const auto j = to_json(make_report({0.2, 0.8}, {0, 1}));
    EXPECT_EQ(j["auc"].get<double>(), 1.0);
    EXPECT_NEAR(j["logloss"].get<double>(), -std::log(0.8), 1e-12);
}

}  // namespace
}  // namespace dmqn
