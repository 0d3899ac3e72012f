#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dmqn/autodiff.hpp"
#include "dmqn/hstu.hpp"
#include "dmqn/init.hpp"

namespace dmqn {

template <class T>
struct BasicAttentionParams {
    BasicParameter<T> query_proj;  // [D×D]
    BasicParameter<T> key_proj;
    BasicParameter<T> value_proj;
    double scale = 1.0;  // 1/sqrt(D)

    BasicAttentionParams() = default;

    BasicAttentionParams(std::size_t dim, std::uint64_t seed) : scale(1.0 / std::sqrt(static_cast<double>(dim))) {
        query_proj = linear_param<T>("attention.query_proj", dim, dim, seed);
        key_proj = linear_param<T>("attention.key_proj", dim, dim, seed);
        value_proj = linear_param<T>("attention.value_proj", dim, dim, seed);
    }

    template <class F>
    void visit(F&& fn) {
        fn(query_proj);
        fn(key_proj);
        fn(value_proj);
    }
};

template <class T>
struct BasicAttentionResult {
    BasicVar<T> output;  // [1×D]
    bool degenerate = false;
    std::vector<T> weights;  // one per cluster, zero at masked positions
};

/// Candidate-query attention over every cluster of every codebook:
/// softmax over unmasked positions of scale·<q, k_j>, then the weighted mean
/// of the projected values. No unmasked cluster gives a zero vector.
template <class T>
BasicAttentionResult<T> target_attention(BasicVar<T> clusters, const std::vector<bool>& mask, BasicVar<T> candidate,
                                         BasicAttentionParams<T>& p) {
    auto& g = candidate.graph();
    const std::size_t d = candidate.value().cols();
    const std::size_t total = clusters.value().size() / d;
    if (mask.size() != total) {
        throw DimensionError("target_attention: " + std::to_string(mask.size()) + " mask entries for " +
                             shape_str(clusters.shape()));
    }
    BasicAttentionResult<T> r;
    bool any = false;
    for (bool m : mask) any = any || m;
    if (!any) {
        r.degenerate = true;
        r.weights.assign(total, T{0});
        r.output = g.constant(BasicTensor<T>({1, d}));
        return r;
    }
    auto flat = reshape(clusters, {total, d});
    auto keys = matmul(flat, g.param(p.key_proj));
    auto values = matmul(flat, g.param(p.value_proj));
    auto query = matmul(candidate, g.param(p.query_proj));
    auto weights = masked_softmax(scale(matmul_nt(query, keys), static_cast<T>(p.scale)), mask);
    r.weights.assign(weights.value().values().begin(), weights.value().values().end());
    r.output = matmul(weights, values);
    return r;
}

template <class T>
struct BasicMlpParams {
    std::vector<std::size_t> widths;  // input, hidden..., 1
    std::vector<BasicParameter<T>> weights;
    std::vector<BasicParameter<T>> biases;

    BasicMlpParams() = default;

    BasicMlpParams(std::vector<std::size_t> w, std::uint64_t seed) : widths(std::move(w)) {
        if (widths.size() < 2 || widths.back() != 1) throw ContractError("mlp widths must end in 1");
        for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
            if (!widths[l]) throw ContractError("mlp widths must be positive");
            const std::string pre = "mlp." + std::to_string(l) + ".";
            weights.push_back(linear_param<T>(pre + "weight", widths[l], widths[l + 1], seed));
            biases.push_back(constant_param<T>(pre + "bias", {widths[l + 1]}, 0.0));
        }
    }

    template <class F>
    void visit(F&& fn) {
        for (std::size_t l = 0; l < weights.size(); ++l) {
            fn(weights[l]);
            fn(biases[l]);
        }
    }
};

/// Pre-sigmoid score of the MLP over an input row [1×widths[0]].
template <class T>
BasicVar<T> mlp_logit(BasicVar<T> input, BasicMlpParams<T>& p) {
    auto& g = input.graph();
    if (input.value().cols() != p.widths.front()) {
        throw DimensionError("mlp: input " + shape_str(input.shape()) + " but first layer expects " +
                             std::to_string(p.widths.front()));
    }
    auto x = input;
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
        x = add_row(matmul(x, g.param(p.weights[l])), g.param(p.biases[l]));
        if (l + 1 < p.weights.size()) x = silu(x);
    }
    return x;
}

/// ŷ = sigmoid(MLP(concat(interest, side, candidate))) as a [1×1] tensor.
template <class T>
BasicVar<T> predict(BasicVar<T> interest, BasicVar<T> side, BasicVar<T> candidate, BasicMlpParams<T>& p) {
    return sigmoid(mlp_logit(concat_cols<T>({interest, side, candidate}), p));
}

/// Per-instance binary cross-entropy with ŷ clipped to [1e-7, 1-1e-7].
inline double logloss_value(double y_hat, int label) {
    const double p = std::clamp(y_hat, 1e-7, 1.0 - 1e-7);
    return label ? -std::log(p) : -std::log(1.0 - p);
}

/// Mean logloss over a batch.
inline double mean_logloss(const std::vector<double>& y_hat, const std::vector<int>& labels) {
    if (y_hat.size() != labels.size()) throw DimensionError("mean_logloss: size mismatch");
    if (y_hat.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < y_hat.size(); ++i) s += logloss_value(y_hat[i], labels[i]);
    return s / static_cast<double>(y_hat.size());
}

using AttentionParams = BasicAttentionParams<float>;
using MlpParams = BasicMlpParams<float>;

}  // namespace dmqn
