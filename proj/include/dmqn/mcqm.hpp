#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "dmqn/autodiff.hpp"
#include "dmqn/encoder.hpp"
#include "dmqn/init.hpp"
#include "dmqn/rng.hpp"

// Multi-codebook quantization of a behavior sequence: per-codebook projection,
// dot-product scoring against codewords, Gumbel-Softmax assignment and
// per-cluster average pooling.

namespace dmqn {

struct QuantizerConfig {
    std::size_t num_codebooks = 2;  // N
    std::size_t codewords = 32;     // W
    std::size_t dim = 32;           // D
};

template <class T>
struct BasicCodebookSet {
    QuantizerConfig config;
    BasicParameter<T> codewords;    // [N×W×D]
    BasicParameter<T> projections;  // [N×D×D]

    BasicCodebookSet() = default;

    BasicCodebookSet(const QuantizerConfig& cfg, std::uint64_t seed) : config(cfg) {
        if (!cfg.num_codebooks || !cfg.codewords || !cfg.dim) throw ContractError("codebook dims must be positive");
        const std::size_t n = cfg.num_codebooks, w = cfg.codewords, d = cfg.dim;
        codewords = normal_param<T>("mcqm.codewords", {n, w, d}, 1.0, seed);
        projections = normal_param<T>("mcqm.projections", {n, d, d}, 1.0 / std::sqrt(static_cast<double>(d)), seed);
    }

    template <class F>
    void visit(F&& fn) {
        fn(codewords);
        fn(projections);
    }
};

/// How cluster reps depend on the assignment weights.
enum class AssignmentMode {
    /// Forward pools by the hard argmax; backward treats the one-hot as if it
    /// were the soft probabilities.
    straight_through,
    /// Forward and backward both pool with the soft probabilities. Smooth in
    /// every parameter, so it is the variant checked against finite differences.
    relaxed,
};

struct QuantizeOptions {
    double temperature = 1.0;
    bool noise = false;  // Gumbel noise; training only
    std::uint64_t seed = 0;
    AssignmentMode mode = AssignmentMode::straight_through;
};

template <class T>
struct BasicQuantizationState {
    BasicTensor<T> scores;               // [N×L×W]
    BasicTensor<T> probs;                // [N×L×W]
    std::vector<std::uint32_t> indices;  // N×L
    double temperature = 1.0;
    std::uint64_t noise_seed = 0;
};

template <class T>
struct BasicClusterSummary {
    BasicVar<T> reps;                   // [N×W×D]
    std::vector<bool> mask;             // N×W, cluster nonempty
    std::vector<std::uint32_t> counts;  // N×W
    std::size_t num_codebooks = 0;
    std::size_t codewords = 0;

    std::vector<bool> slice_mask(std::size_t n) const {
        return {mask.begin() + static_cast<std::ptrdiff_t>(n * codewords),
                mask.begin() + static_cast<std::ptrdiff_t>((n + 1) * codewords)};
    }
};

template <class T>
struct BasicPoolResult {
    BasicVar<T> reps;  // [W×D]
    std::vector<bool> mask;
    std::vector<std::uint32_t> counts;
};

template <class T>
struct BasicGumbelResult {
    BasicVar<T> probs;  // [L×W]
    std::vector<std::uint32_t> indices;
};

/// h^s under every codebook: E[L×D] · projections[n] -> [N×L×D].
template <class T>
BasicVar<T> project(BasicVar<T> embeddings, BasicVar<T> projections) {
    const std::size_t n = projections.value().dim(0);
    std::vector<BasicVar<T>> parts;
    parts.reserve(n);
    for (std::size_t c = 0; c < n; ++c) parts.push_back(matmul(embeddings, select(projections, c)));
    return stack(parts);
}

/// scores[n][i][k] = <h[n][i], codewords[n][k]>  -> [N×L×W].
template <class T>
BasicVar<T> score(BasicVar<T> projected, BasicVar<T> codewords) {
    const auto& hs = projected.value().shape();
    const auto& cs = codewords.value().shape();
    if (hs.size() != 3 || cs.size() != 3 || hs[0] != cs[0] || hs[2] != cs[2]) {
        throw DimensionError("score: incompatible shapes " + shape_str(hs) + " and " + shape_str(cs));
    }
    std::vector<BasicVar<T>> parts;
    parts.reserve(hs[0]);
    for (std::size_t c = 0; c < hs[0]; ++c) parts.push_back(matmul_nt(select(projected, c), select(codewords, c)));
    return stack(parts);
}

/// Row-wise argmax; ties go to the lowest index.
template <class T>
std::vector<std::uint32_t> argmax_rows(const BasicTensor<T>& x) {
    const std::size_t n = x.cols(), m = x.rows();
    std::vector<std::uint32_t> out(m);
    for (std::size_t i = 0; i < m; ++i) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < n; ++k)
            if (x[i * n + k] > x[i * n + best]) best = k;
        out[i] = static_cast<std::uint32_t>(best);
    }
    return out;
}

/// probs = softmax((scores + g) / tau) with g ~ Gumbel(0,1) drawn from `seed`
/// in row-major order (g = 0 when `noise` is off); indices = argmax of scores + g.
template <class T>
BasicGumbelResult<T> gumbel_softmax(BasicVar<T> scores, double temperature, std::uint64_t seed, bool noise) {
    if (!(temperature > 0)) throw ContractError("gumbel_softmax: temperature must be positive");
    BasicVar<T> logits = scores;
    if (noise) {
        BasicTensor<T> g(scores.value().shape());
        Rng rng(seed);
        fill_gumbel<T>(rng, g.values());
        logits = add_constant(logits, g);
    }
    BasicGumbelResult<T> r;
    r.indices = argmax_rows(logits.value());
    if (temperature != 1.0) logits = scale(logits, static_cast<T>(1.0 / temperature));
    r.probs = softmax(logits);
    return r;
}

/// Average-pools embeddings[L×D] into W clusters by assignment.
///
/// Forward (straight_through): r_k = mean{e_i : indices[i] == k}, zero when empty.
/// Backward: r_k = Σ_i s_ik e_i / Σ_i s_ik with s the one-hot, and ds is routed to
/// `probs` unchanged. Empty clusters pass no gradient. In relaxed mode s = probs.
template <class T>
BasicPoolResult<T> cluster_pool(BasicVar<T> embeddings, BasicVar<T> probs, const std::vector<std::uint32_t>& indices,
                                AssignmentMode mode = AssignmentMode::straight_through) {
    const auto& ev = embeddings.value();
    const auto& pv = probs.value();
    const std::size_t len = ev.dim(0), d = ev.cols(), w = pv.cols();
    if (pv.rows() != len || indices.size() != len) {
        throw DimensionError("cluster_pool: " + shape_str(ev.shape()) + " embeddings, " + shape_str(pv.shape()) +
                             " probs, " + std::to_string(indices.size()) + " indices");
    }
    constexpr double eps = 1e-9;
    BasicPoolResult<T> out;
    out.counts.assign(w, 0);
    for (auto k : indices) {
        if (k >= w) throw ContractError("cluster_pool: index " + std::to_string(k) + " out of range");
        ++out.counts[k];
    }
    out.mask.resize(w);
    for (std::size_t k = 0; k < w; ++k) out.mask[k] = out.counts[k] > 0;

    BasicTensor<T> reps({w, d});
    std::vector<double> denom(w, 0.0);
    if (mode == AssignmentMode::straight_through) {
        std::vector<double> acc(w * d, 0.0);
        for (std::size_t i = 0; i < len; ++i) {
            double* a = acc.data() + indices[i] * d;
            const T* e = ev.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) a[j] += e[j];
        }
        for (std::size_t k = 0; k < w; ++k) {
            denom[k] = std::max(static_cast<double>(out.counts[k]), eps);
            for (std::size_t j = 0; j < d; ++j) reps[k * d + j] = static_cast<T>(acc[k * d + j] / denom[k]);
        }
    } else {
        std::vector<double> acc(w * d, 0.0);
        for (std::size_t i = 0; i < len; ++i) {
            const T* e = ev.data() + i * d;
            for (std::size_t k = 0; k < w; ++k) {
                const double s = pv[i * w + k];
                denom[k] += s;
                double* a = acc.data() + k * d;
                for (std::size_t j = 0; j < d; ++j) a[j] += s * e[j];
            }
        }
        for (std::size_t k = 0; k < w; ++k) {
            denom[k] = std::max(denom[k], eps);
            for (std::size_t j = 0; j < d; ++j) reps[k * d + j] = static_cast<T>(acc[k * d + j] / denom[k]);
        }
    }

    const std::size_t ie = embeddings.id(), ip = probs.id();
    std::vector<std::uint32_t> idx = indices;
    std::vector<std::uint32_t> counts = out.counts;
    out.reps = embeddings.graph().emit(
        std::move(reps), {embeddings, probs},
        [ie, ip, len, d, w, mode, idx = std::move(idx), counts = std::move(counts), denom = std::move(denom)](
            BasicGraph<T>& g, std::size_t self) {
            auto dr = g.own_grad(self);
            const auto& ev = g.value_of(ie);
            const auto& pv = g.value_of(ip);
            const auto& r = g.value_of(self);
            const bool st = mode == AssignmentMode::straight_through;
            if (auto de = g.grad_sink(ie); !de.empty()) {
                for (std::size_t i = 0; i < len; ++i) {
                    T* dst = de.data() + i * d;
                    if (st) {
                        const std::size_t k = idx[i];
                        const double inv = 1.0 / denom[k];
                        for (std::size_t j = 0; j < d; ++j) dst[j] += static_cast<T>(dr[k * d + j] * inv);
                    } else {
                        for (std::size_t j = 0; j < d; ++j) {
                            double s = 0.0;
                            for (std::size_t k = 0; k < w; ++k) s += pv[i * w + k] / denom[k] * dr[k * d + j];
                            dst[j] += static_cast<T>(s);
                        }
                    }
                }
            }
            if (auto dp = g.grad_sink(ip); !dp.empty()) {
                // d s_ik = <dr_k, e_i - r_k> / denom_k
                std::vector<T> er(len * w);
                kernels::gemm_nt(ev.data(), dr.data(), er.data(), len, d, w, false);
                std::vector<double> rr(w, 0.0);
                for (std::size_t k = 0; k < w; ++k)
                    for (std::size_t j = 0; j < d; ++j) rr[k] += static_cast<double>(dr[k * d + j]) * r[k * d + j];
                for (std::size_t i = 0; i < len; ++i) {
                    for (std::size_t k = 0; k < w; ++k) {
                        if (st && counts[k] == 0) continue;
                        dp[i * w + k] += static_cast<T>((er[i * w + k] - rr[k]) / denom[k]);
                    }
                }
            }
        });
    return out;
}

template <class T>
struct BasicQuantizeResult {
    BasicClusterSummary<T> summary;
    BasicQuantizationState<T> state;
};

/// project -> score -> gumbel_softmax (independent noise per codebook) -> pool.
template <class T>
BasicQuantizeResult<T> quantize(BasicGraph<T>& g, const BasicEncodedSequence<T>& seq, BasicCodebookSet<T>& cb,
                                const QuantizeOptions& opt) {
    if (seq.degenerate()) throw ContractError("quantize: empty behavior sequence");
    const std::size_t n = cb.config.num_codebooks, w = cb.config.codewords, len = seq.length;
    auto codewords = g.param(cb.codewords);
    auto projected = project(seq.embeddings, g.param(cb.projections));
    auto scores = score(projected, codewords);

    BasicQuantizeResult<T> out;
    auto& st = out.state;
    st.scores = scores.value();
    st.probs = BasicTensor<T>({n, len, w});
    st.indices.reserve(n * len);
    st.temperature = opt.temperature;
    st.noise_seed = opt.seed;

    auto& sm = out.summary;
    sm.num_codebooks = n;
    sm.codewords = w;
    std::vector<BasicVar<T>> reps;
    for (std::size_t c = 0; c < n; ++c) {
        auto gs = gumbel_softmax(select(scores, c), opt.temperature, derive_seed({opt.seed, c}), opt.noise);
        std::copy(gs.probs.value().values().begin(), gs.probs.value().values().end(), st.probs.data() + c * len * w);
        st.indices.insert(st.indices.end(), gs.indices.begin(), gs.indices.end());
        auto pooled = cluster_pool(seq.embeddings, gs.probs, gs.indices, opt.mode);
        reps.push_back(pooled.reps);
        sm.mask.insert(sm.mask.end(), pooled.mask.begin(), pooled.mask.end());
        sm.counts.insert(sm.counts.end(), pooled.counts.begin(), pooled.counts.end());
    }
    sm.reps = stack(reps);
    return out;
}

using CodebookSet = BasicCodebookSet<float>;
using ClusterSummary = BasicClusterSummary<float>;
using QuantizationState = BasicQuantizationState<float>;

}  // namespace dmqn
