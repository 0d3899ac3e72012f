#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmqn/errors.hpp"
#include "dmqn/head.hpp"

namespace dmqn {

/// Area under the ROC curve: P(score+ > score-) + ½·P(tie), via the
/// Mann-Whitney rank sum with average ranks for ties. Rank sums are kept
/// doubled so the statistic is an exact integer before the final division.
inline double auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw DimensionError("auc: scores and labels differ in length");
    const std::size_t m = scores.size();
    std::uint64_t pos = 0;
    for (int l : labels) pos += (l != 0);
    const std::uint64_t neg = m - pos;
    if (pos == 0 || neg == 0) throw MetricError("auc is undefined without both classes");

    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // twice the rank sum of the positives; a tie group spanning ranks [lo+1, hi]
    // shares the average rank (lo+1+hi)/2
    std::uint64_t twice_rank_sum = 0;
    for (std::size_t lo = 0; lo < m;) {
        std::size_t hi = lo + 1;
        while (hi < m && scores[order[hi]] == scores[order[lo]]) ++hi;
        std::uint64_t group_pos = 0;
        for (std::size_t i = lo; i < hi; ++i) group_pos += (labels[order[i]] != 0);
        twice_rank_sum += group_pos * (lo + 1 + hi);
        lo = hi;
    }
    const std::uint64_t twice_u = twice_rank_sum - pos * (pos + 1);
    return static_cast<double>(twice_u) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    return auc(std::span<const double>(scores), std::span<const int>(labels));
}

struct MetricsReport {
    std::optional<double> auc;  // absent when one class is missing
    double mean_logloss = 0;
    std::size_t instance_count = 0;
    double positive_rate = 0;
};

inline MetricsReport make_report(const std::vector<double>& y_hat, const std::vector<int>& labels) {
    MetricsReport r;
    r.instance_count = y_hat.size();
    r.mean_logloss = mean_logloss(y_hat, labels);
    std::size_t pos = 0;
    for (int l : labels) pos += (l != 0);
    r.positive_rate = y_hat.empty() ? 0.0 : static_cast<double>(pos) / static_cast<double>(y_hat.size());
    if (pos > 0 && pos < labels.size()) r.auc = auc(y_hat, labels);
    return r;
}

inline nlohmann::json to_json(const MetricsReport& r) {
    nlohmann::json j;
    j["auc"] = r.auc ? nlohmann::json(*r.auc) : nlohmann::json(nullptr);
    j["logloss"] = r.mean_logloss;
    j["count"] = r.instance_count;
    j["positive_rate"] = r.positive_rate;
    return j;
}

}  // namespace dmqn
