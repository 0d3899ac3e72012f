#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmqn/alloc.hpp"
#include "dmqn/dataset.hpp"
#include "dmqn/errors.hpp"
#include "dmqn/model.hpp"

namespace dmqn {

struct LinearFit {
    double intercept = 0;
    double slope = 0;
    double r2 = 0;
};

/// Ordinary least squares y ≈ intercept + slope·x.
inline LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw ContractError("fit_line: need at least two paired points");
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0) throw ContractError("fit_line: all x values are equal");
    if (syy == 0) throw MetricError("all timing medians are equal; the timer is too coarse, rerun with more trials");
    LinearFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double ss_res = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = y[i] - (f.intercept + f.slope * x[i]);
        ss_res += r * r;
    }
    f.r2 = 1.0 - ss_res / syy;
    return f;
}

inline double median(std::vector<double> v) {
    if (v.empty()) throw ContractError("median of nothing");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct StageTimes {
    double encode_ms = 0, quantize_ms = 0, interact_ms = 0;
    double total() const { return encode_ms + quantize_ms + interact_ms; }
};

struct CurveReport {
    std::vector<double> median_ms;
    LinearFit linear;     // t vs L
    LinearFit quadratic;  // t vs L²
};

struct BenchReport {
    std::vector<std::size_t> lengths;
    std::size_t trials = 0;
    CurveReport dmqn;
    std::vector<StageTimes> dmqn_stages;  // medians per length
    CurveReport full_attention;
    std::size_t doubling_length = 0;
    std::vector<std::size_t> doubling_codewords;
    std::vector<StageTimes> doubling_stages;
};

struct BenchConfig {
    std::vector<std::size_t> lengths{512, 1024, 2048, 4096};
    std::size_t trials = 7;
    std::size_t warmup = 1;
    std::size_t doubling_length = 1024;
    ModelConfig model;  // N, W, D; max_len is raised to cover the longest length
    std::uint64_t seed = 11;
};

namespace detail {

inline double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

inline std::vector<BehaviorEvent> bench_sequence(std::size_t len, std::uint64_t seed) {
    SyntheticSpec s;
    s.users = 1;
    s.sequence_length = len;
    s.seed = seed;
    return SyntheticDataset(s).instance(0).behaviors;
}

/// One noise-free encode -> quantize -> interact pass, timed per stage.
inline StageTimes time_dmqn(Model& m, const std::vector<BehaviorEvent>& seq) {
    Graph g(false);
    StageTimes t;
    auto t0 = std::chrono::steady_clock::now();
    auto enc = m.encoder.encode_sequence(g, 1, seq);
    t.encode_ms = ms_since(t0);
    t0 = std::chrono::steady_clock::now();
    auto q = quantize(g, enc, m.codebooks, QuantizeOptions{});
    t.quantize_ms = ms_since(t0);
    t0 = std::chrono::steady_clock::now();
    auto ic = interact(q.summary, m.hstu);
    t.interact_ms = ms_since(t0);
    return t;
}

/// Encode, then single-head softmax self-attention over all L behaviors.
inline double time_full_attention(Model& m, const std::vector<BehaviorEvent>& seq) {
    Graph g(false);
    const auto t0 = std::chrono::steady_clock::now();
    auto e = m.encoder.encode_sequence(g, 1, seq).embeddings;
    auto q = matmul(e, g.param(m.attention.query_proj));
    auto k = matmul(e, g.param(m.attention.key_proj));
    auto v = matmul(e, g.param(m.attention.value_proj));
    auto w = softmax(scale(matmul_nt(q, k), static_cast<float>(m.attention.scale)));
    auto out = matmul(w, v);
    (void)out;
    return ms_since(t0);
}

inline StageTimes median_stages(const std::vector<StageTimes>& runs) {
    std::vector<double> e, q, i;
    for (const auto& r : runs) {
        e.push_back(r.encode_ms);
        q.push_back(r.quantize_ms);
        i.push_back(r.interact_ms);
    }
    return {median(e), median(q), median(i)};
}

inline CurveReport make_curve(const std::vector<std::size_t>& lengths, std::vector<double> medians) {
    std::vector<double> x, x2;
    for (auto l : lengths) {
        x.push_back(static_cast<double>(l));
        x2.push_back(static_cast<double>(l) * static_cast<double>(l));
    }
    CurveReport c;
    c.linear = fit_line(x, medians);
    c.quadratic = fit_line(x2, medians);
    c.median_ms = std::move(medians);
    return c;
}

}  // namespace detail

/// Forward-time scaling in L for DMQN's candidate-independent stages and for
/// full self-attention, plus a stage breakdown at W and 2W.
inline BenchReport bench_scaling(const BenchConfig& cfg) {
    if (cfg.lengths.size() < 2) throw ContractError("bench needs at least two lengths");
    if (cfg.trials == 0) throw ContractError("bench needs at least one trial");
    tune_allocator();
    ModelConfig mc = cfg.model;
    mc.kind = ModelKind::dmqn;
    mc.max_len = std::max(mc.max_len, std::max(*std::max_element(cfg.lengths.begin(), cfg.lengths.end()),
                                               cfg.doubling_length));
    Model model(mc);

    BenchReport rep;
    rep.lengths = cfg.lengths;
    rep.trials = cfg.trials;
    std::vector<double> dmqn_medians, attn_medians;
    for (auto len : cfg.lengths) {
        const auto seq = detail::bench_sequence(len, cfg.seed);
        for (std::size_t w = 0; w < cfg.warmup; ++w) {
            detail::time_dmqn(model, seq);
            detail::time_full_attention(model, seq);
        }
        std::vector<StageTimes> runs;
        std::vector<double> totals, attn;
        for (std::size_t t = 0; t < cfg.trials; ++t) {
            runs.push_back(detail::time_dmqn(model, seq));
            totals.push_back(runs.back().total());
            attn.push_back(detail::time_full_attention(model, seq));
        }
        rep.dmqn_stages.push_back(detail::median_stages(runs));
        dmqn_medians.push_back(median(totals));
        attn_medians.push_back(median(attn));
    }
    rep.dmqn = detail::make_curve(cfg.lengths, std::move(dmqn_medians));
    rep.full_attention = detail::make_curve(cfg.lengths, std::move(attn_medians));

    rep.doubling_length = cfg.doubling_length;
    const auto seq = detail::bench_sequence(cfg.doubling_length, cfg.seed);
    for (std::size_t w : {mc.codewords, 2 * mc.codewords}) {
        ModelConfig c = mc;
        c.codewords = w;
        Model m(c);
        for (std::size_t i = 0; i < cfg.warmup; ++i) detail::time_dmqn(m, seq);
        std::vector<StageTimes> runs;
        for (std::size_t t = 0; t < cfg.trials; ++t) runs.push_back(detail::time_dmqn(m, seq));
        rep.doubling_codewords.push_back(w);
        rep.doubling_stages.push_back(detail::median_stages(runs));
    }
    return rep;
}

inline nlohmann::json to_json(const StageTimes& s) {
    const double total = s.total();
    return {{"encode_ms", s.encode_ms},
            {"quantize_ms", s.quantize_ms},
            {"interact_ms", s.interact_ms},
            {"interact_share", total > 0 ? s.interact_ms / total : 0.0}};
}

inline nlohmann::json to_json(const CurveReport& c) {
    auto fit = [](const LinearFit& f) {
        return nlohmann::json{{"intercept", f.intercept}, {"slope", f.slope}, {"r2", f.r2}};
    };
    return {{"median_ms", c.median_ms}, {"linear_fit", fit(c.linear)}, {"quadratic_fit", fit(c.quadratic)}};
}

inline nlohmann::json to_json(const BenchReport& r) {
    nlohmann::json stages = nlohmann::json::array(), doubling = nlohmann::json::array();
    for (const auto& s : r.dmqn_stages) stages.push_back(to_json(s));
    for (std::size_t i = 0; i < r.doubling_stages.size(); ++i) {
        auto j = to_json(r.doubling_stages[i]);
        j["codewords"] = r.doubling_codewords[i];
        doubling.push_back(j);
    }
    auto dmqn = to_json(r.dmqn);
    dmqn["stages"] = stages;
    return {{"lengths", r.lengths},
            {"trials", r.trials},
            {"dmqn", dmqn},
            {"full_attention", to_json(r.full_attention)},
            {"codeword_doubling", {{"length", r.doubling_length}, {"runs", doubling}}}};
}

}  // namespace dmqn
