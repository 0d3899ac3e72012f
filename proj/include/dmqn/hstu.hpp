#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dmqn/autodiff.hpp"
#include "dmqn/init.hpp"
#include "dmqn/mcqm.hpp"

// Interaction among the W interest clusters of each codebook with stacked
// HSTU blocks:
//   U, V, Q, K = Split(SiLU(R·W1 + b1))
//   A          = SiLU(Q·Kᵀ + relative bias), masked columns zeroed, divided by
//                the number of nonempty clusters
//   Y          = (LayerNorm(A·V) ⊙ U)·W2 + b2, masked rows zeroed
// Layers after the first add a residual: X ← X + Y(X).

namespace dmqn {

struct HstuConfig {
    std::size_t codewords = 32;  // W
    std::size_t dim = 32;        // D (= D')
    std::size_t num_layers = 2;
};

template <class T>
struct BasicHstuLayer {
    BasicParameter<T> f1_weight;  // [D×4D]
    BasicParameter<T> f1_bias;    // [4D]
    BasicParameter<T> f2_weight;  // [D×D]
    BasicParameter<T> f2_bias;    // [D]
    BasicParameter<T> rel_bias;   // [2W-1], entry k-q+W-1 biases query q, key k
    BasicParameter<T> norm_gain;  // [D]
    BasicParameter<T> norm_offset;

    template <class F>
    void visit(F&& fn) {
        for (auto* p : {&f1_weight, &f1_bias, &f2_weight, &f2_bias, &rel_bias, &norm_gain, &norm_offset}) fn(*p);
    }
};

template <class T>
struct BasicHstuParams {
    HstuConfig config;
    std::vector<BasicHstuLayer<T>> layers;

    BasicHstuParams() = default;

    BasicHstuParams(const HstuConfig& cfg, std::uint64_t seed) : config(cfg) {
        if (!cfg.codewords || !cfg.dim || !cfg.num_layers) throw ContractError("hstu dims must be positive");
        const std::size_t d = cfg.dim, w = cfg.codewords;
        for (std::size_t l = 0; l < cfg.num_layers; ++l) {
            const std::string pre = "hstu." + std::to_string(l) + ".";
            BasicHstuLayer<T> layer;
            layer.f1_weight = linear_param<T>(pre + "f1_weight", d, 4 * d, seed);
            layer.f1_bias = constant_param<T>(pre + "f1_bias", {4 * d}, 0.0);
            layer.f2_weight = linear_param<T>(pre + "f2_weight", d, d, seed);
            layer.f2_bias = constant_param<T>(pre + "f2_bias", {d}, 0.0);
            layer.rel_bias = constant_param<T>(pre + "rel_bias", {2 * w - 1}, 0.0);
            layer.norm_gain = constant_param<T>(pre + "norm_gain", {d}, 1.0);
            layer.norm_offset = constant_param<T>(pre + "norm_offset", {d}, 0.0);
            layers.push_back(std::move(layer));
        }
    }

    template <class F>
    void visit(F&& fn) {
        for (auto& l : layers) l.visit(fn);
    }
};

/// [W×W] matrix B[q][k] = table[k - q + W - 1] from a [2W-1] table.
template <class T>
BasicVar<T> relative_bias(BasicVar<T> table, std::size_t w) {
    if (table.value().size() != 2 * w - 1) {
        throw DimensionError("relative_bias: table " + shape_str(table.shape()) + " for W=" + std::to_string(w));
    }
    BasicTensor<T> out({w, w});
    const auto& tv = table.value();
    for (std::size_t q = 0; q < w; ++q)
        for (std::size_t k = 0; k < w; ++k) out[q * w + k] = tv[k + w - 1 - q];
    const std::size_t it = table.id();
    return table.graph().emit(std::move(out), {table}, [it, w](BasicGraph<T>& g, std::size_t self) {
        auto dt = g.grad_sink(it);
        if (dt.empty()) return;
        auto dy = g.own_grad(self);
        for (std::size_t q = 0; q < w; ++q)
            for (std::size_t k = 0; k < w; ++k) dt[k + w - 1 - q] += dy[q * w + k];
    });
}

/// One HSTU block over R[W×D]. Masked (empty) clusters neither attend nor are
/// attended to and produce zero rows.
template <class T>
BasicVar<T> hstu_block(BasicVar<T> reps, const std::vector<bool>& mask, BasicHstuLayer<T>& p) {
    auto& g = reps.graph();
    const auto& rv = reps.value();
    if (rv.rank() != 2 || rv.dim(0) != mask.size()) {
        throw DimensionError("hstu_block: " + shape_str(rv.shape()) + " with " + std::to_string(mask.size()) +
                             " mask entries");
    }
    const std::size_t w = rv.dim(0), d = rv.dim(1);
    std::size_t active = 0;
    for (bool m : mask) active += m;
    if (active == 0) throw ContractError("hstu_block: every cluster is masked");

    auto x = mask_rows(reps, mask);
    auto proj = silu(add_row(matmul(x, g.param(p.f1_weight)), g.param(p.f1_bias)));
    auto u = columns(proj, 0, d);
    auto v = columns(proj, d, d);
    auto q = columns(proj, 2 * d, d);
    auto k = columns(proj, 3 * d, d);
    auto attn = silu(add(matmul_nt(q, k), relative_bias(g.param(p.rel_bias), w)));
    attn = scale(mask_cols(attn, mask), static_cast<T>(1.0 / static_cast<double>(active)));
    auto normed = layer_norm(matmul(attn, v), g.param(p.norm_gain), g.param(p.norm_offset));
    auto y = add_row(matmul(mul(normed, u), g.param(p.f2_weight)), g.param(p.f2_bias));
    return mask_rows(y, mask);
}

template <class T>
struct BasicInteractedClusters {
    BasicVar<T> values;      // [N×W×D]
    std::vector<bool> mask;  // N×W
    std::size_t num_codebooks = 0;
    std::size_t codewords = 0;
};

/// Stacked blocks over one codebook's clusters.
template <class T>
BasicVar<T> interact_slice(BasicVar<T> reps, const std::vector<bool>& mask, BasicHstuParams<T>& p) {
    BasicVar<T> x = hstu_block(reps, mask, p.layers.front());
    for (std::size_t l = 1; l < p.layers.size(); ++l) x = add(x, hstu_block(x, mask, p.layers[l]));
    return x;
}

/// Applies the stacked blocks to each codebook slice independently. A slice
/// with no nonempty cluster yields zeros.
template <class T>
BasicInteractedClusters<T> interact(const BasicClusterSummary<T>& cs, BasicHstuParams<T>& p) {
    auto& g = cs.reps.graph();
    const std::size_t n = cs.num_codebooks, w = cs.codewords;
    if (w != p.config.codewords) {
        throw DimensionError("interact: summary has W=" + std::to_string(w) + ", params expect " +
                             std::to_string(p.config.codewords));
    }
    std::vector<BasicVar<T>> slices;
    for (std::size_t c = 0; c < n; ++c) {
        auto m = cs.slice_mask(c);
        bool any = false;
        for (bool b : m) any = any || b;
        auto r = select(cs.reps, c);
        slices.push_back(any ? interact_slice(r, m, p) : g.constant(BasicTensor<T>(r.shape())));
    }
    BasicInteractedClusters<T> out;
    out.values = stack(slices);
    out.mask = cs.mask;
    out.num_codebooks = n;
    out.codewords = w;
    return out;
}

using HstuParams = BasicHstuParams<float>;
using InteractedClusters = BasicInteractedClusters<float>;

}  // namespace dmqn
