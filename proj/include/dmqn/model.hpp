#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmqn/dataset.hpp"
#include "dmqn/encoder.hpp"
#include "dmqn/head.hpp"
#include "dmqn/hstu.hpp"
#include "dmqn/mcqm.hpp"

namespace dmqn {

enum class ModelKind {
    dmqn,       // quantize -> interact -> cluster-aware target attention
    mean_pool,  // baseline: mean of the behavior embeddings
};

inline std::string to_string(ModelKind k) { return k == ModelKind::dmqn ? "dmqn" : "mean_pool"; }

inline ModelKind parse_model_kind(const std::string& s) {
    if (s == "dmqn") return ModelKind::dmqn;
    if (s == "mean_pool") return ModelKind::mean_pool;
    throw ContractError("unknown model kind \"" + s + "\"; expected dmqn or mean_pool");
}

struct ModelConfig {
    ModelKind kind = ModelKind::dmqn;
    std::size_t dim = 32;            // D
    std::size_t num_codebooks = 2;   // N
    std::size_t codewords = 32;      // W
    std::size_t num_layers = 2;
    std::size_t max_len = 1024;      // L_max
    std::size_t item_vocab = 4096;
    std::size_t category_vocab = 256;
    std::size_t user_vocab = 256;
    std::size_t context_vocab = 64;
    std::vector<std::size_t> mlp_hidden{128, 64};
    std::uint64_t seed = 1;

    EncoderConfig encoder() const {
        return {dim, item_vocab, category_vocab, user_vocab, context_vocab, max_len};
    }
    QuantizerConfig quantizer() const { return {num_codebooks, codewords, dim}; }
    HstuConfig hstu() const { return {codewords, dim, num_layers}; }
    std::vector<std::size_t> mlp_widths() const {
        std::vector<std::size_t> w{dim + encoder().side_dim() + dim};
        w.insert(w.end(), mlp_hidden.begin(), mlp_hidden.end());
        w.push_back(1);
        return w;
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"kind", to_string(c.kind)},
                       {"dim", c.dim},
                       {"num_codebooks", c.num_codebooks},
                       {"codewords", c.codewords},
                       {"num_layers", c.num_layers},
                       {"max_len", c.max_len},
                       {"item_vocab", c.item_vocab},
                       {"category_vocab", c.category_vocab},
                       {"user_vocab", c.user_vocab},
                       {"context_vocab", c.context_vocab},
                       {"mlp_hidden", c.mlp_hidden},
                       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    c.kind = parse_model_kind(j.at("kind").get<std::string>());
    j.at("dim").get_to(c.dim);
    j.at("num_codebooks").get_to(c.num_codebooks);
    j.at("codewords").get_to(c.codewords);
    j.at("num_layers").get_to(c.num_layers);
    j.at("max_len").get_to(c.max_len);
    j.at("item_vocab").get_to(c.item_vocab);
    j.at("category_vocab").get_to(c.category_vocab);
    j.at("user_vocab").get_to(c.user_vocab);
    j.at("context_vocab").get_to(c.context_vocab);
    j.at("mlp_hidden").get_to(c.mlp_hidden);
    j.at("seed").get_to(c.seed);
}

struct ForwardOptions {
    bool training = false;  // enables Gumbel noise
    double temperature = 1.0;
    std::uint64_t noise_seed = 0;
    AssignmentMode mode = AssignmentMode::straight_through;

    QuantizeOptions quantize() const { return {temperature, training, noise_seed, mode}; }
};

template <class T>
struct BasicForward {
    BasicVar<T> y_hat;  // [1×1]
    bool degenerate = false;
};

/// Full CTR model. Every parameter lives here; graphs only borrow them.
template <class T>
struct BasicModel {
    ModelConfig config;
    BasicFeatureEncoder<T> encoder;
    BasicCodebookSet<T> codebooks;
    BasicHstuParams<T> hstu;
    BasicAttentionParams<T> attention;
    BasicMlpParams<T> mlp;

    BasicModel() = default;

    explicit BasicModel(const ModelConfig& cfg)
        : config(cfg),
          encoder(cfg.encoder(), cfg.seed),
          codebooks(cfg.quantizer(), cfg.seed),
          hstu(cfg.hstu(), cfg.seed),
          attention(cfg.dim, cfg.seed),
          mlp(cfg.mlp_widths(), cfg.seed) {}

    /// Visits every parameter in a fixed order. The baseline skips the
    /// quantizer, interaction and attention parameters it never reads.
    template <class F>
    void visit(F&& fn) {
        encoder.visit(fn);
        if (config.kind == ModelKind::dmqn) {
            codebooks.visit(fn);
            hstu.visit(fn);
            attention.visit(fn);
        }
        mlp.visit(fn);
    }

    void zero_grad() {
        visit([](BasicParameter<T>& p) { p.zero_grad(); });
    }

    std::size_t parameter_count() {
        std::size_t n = 0;
        visit([&](BasicParameter<T>& p) { n += p.value.size(); });
        return n;
    }

    /// Candidate-independent part: encode -> quantize -> interact. A user with no
    /// behaviors gets zero clusters with an all-false mask.
    BasicInteractedClusters<T> user_clusters(BasicGraph<T>& g, const BasicEncodedSequence<T>& seq,
                                             const ForwardOptions& opt,
                                             BasicQuantizationState<T>* state = nullptr) {
        const std::size_t n = config.num_codebooks, w = config.codewords, d = config.dim;
        if (seq.degenerate()) {
            BasicInteractedClusters<T> ic;
            ic.values = g.constant(BasicTensor<T>({n, w, d}));
            ic.mask.assign(n * w, false);
            ic.num_codebooks = n;
            ic.codewords = w;
            return ic;
        }
        auto q = quantize(g, seq, codebooks, opt.quantize());
        if (state) *state = std::move(q.state);
        return interact(q.summary, hstu);
    }

    /// Candidate-dependent head over interacted cluster values [N×W×D].
    BasicVar<T> score_clusters(BasicVar<T> cluster_values, const std::vector<bool>& mask, BasicVar<T> candidate,
                               BasicVar<T> side) {
        auto att = target_attention(cluster_values, mask, candidate, attention);
        return predict(att.output, side, candidate, mlp);
    }

    BasicForward<T> forward(BasicGraph<T>& g, const TrainingInstance& inst, const ForwardOptions& opt = {}) {
        auto enc = encoder.encode_instance(g, inst);
        BasicForward<T> out;
        out.degenerate = enc.sequence.degenerate();
        if (config.kind == ModelKind::mean_pool) {
            auto interest = out.degenerate ? g.constant(BasicTensor<T>({1, config.dim}))
                                           : mean_rows(enc.sequence.embeddings);
            out.y_hat = predict(interest, enc.side, enc.candidate, mlp);
            return out;
        }
        auto ic = user_clusters(g, enc.sequence, opt);
        out.y_hat = score_clusters(ic.values, ic.mask, enc.candidate, enc.side);
        return out;
    }

    /// Copy with every parameter converted to scalar type U.
    template <class U>
    BasicModel<U> cast() const {
        BasicModel<U> m;
        m.config = config;
        auto cp = [](const BasicParameter<T>& p) { return cast_param<T, U>(p); };
        m.encoder.config = encoder.config;
        m.encoder.item = cp(encoder.item);
        m.encoder.category = cp(encoder.category);
        m.encoder.event_type = cp(encoder.event_type);
        m.encoder.position = cp(encoder.position);
        m.encoder.user = cp(encoder.user);
        m.encoder.context = cp(encoder.context);
        m.encoder.fusion = cp(encoder.fusion);
        m.encoder.candidate_fusion = cp(encoder.candidate_fusion);
        m.codebooks.config = codebooks.config;
        m.codebooks.codewords = cp(codebooks.codewords);
        m.codebooks.projections = cp(codebooks.projections);
        m.hstu.config = hstu.config;
        for (const auto& l : hstu.layers) {
            BasicHstuLayer<U> nl;
            nl.f1_weight = cp(l.f1_weight);
            nl.f1_bias = cp(l.f1_bias);
            nl.f2_weight = cp(l.f2_weight);
            nl.f2_bias = cp(l.f2_bias);
            nl.rel_bias = cp(l.rel_bias);
            nl.norm_gain = cp(l.norm_gain);
            nl.norm_offset = cp(l.norm_offset);
            m.hstu.layers.push_back(std::move(nl));
        }
        m.attention.scale = attention.scale;
        m.attention.query_proj = cp(attention.query_proj);
        m.attention.key_proj = cp(attention.key_proj);
        m.attention.value_proj = cp(attention.value_proj);
        m.mlp.widths = mlp.widths;
        for (const auto& w : mlp.weights) m.mlp.weights.push_back(cp(w));
        for (const auto& b : mlp.biases) m.mlp.biases.push_back(cp(b));
        return m;
    }
};

using Model = BasicModel<float>;

/// Predicted click probability with noise off (evaluation / serving).
inline double predict_instance(Model& model, const TrainingInstance& inst) {
    Graph g(false);
    return model.forward(g, inst).y_hat.item();
}

}  // namespace dmqn
