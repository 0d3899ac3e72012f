#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dmqn/autodiff.hpp"
#include "dmqn/dataset.hpp"
#include "dmqn/init.hpp"

namespace dmqn {

struct EncoderConfig {
    std::size_t dim = 32;  // D; each of the four behavior features gets D/4
    std::size_t item_vocab = 4096;
    std::size_t category_vocab = 256;
    std::size_t user_vocab = 256;
    std::size_t context_vocab = 64;
    std::size_t max_len = 1024;  // L_max

    std::size_t feature_dim() const { return dim / 4; }
    std::size_t side_dim() const { return 2 * feature_dim(); }

    void validate() const {
        if (dim == 0 || dim % 4 != 0) throw ContractError("encoder dim must be a positive multiple of 4");
        if (item_vocab < 2 || category_vocab < 2 || user_vocab < 2 || context_vocab < 2)
            throw ContractError("vocabularies need at least 2 rows (row 0 is the unknown row)");
        if (max_len == 0) throw ContractError("max_len must be positive");
    }
};

/// Row of an id in a table of `vocab` rows. Id 0 (missing) maps to the
/// unknown row 0; every other id is hashed into rows 1..vocab-1.
inline std::size_t bucket_row(std::uint64_t id, std::size_t vocab) {
    if (id == 0) return 0;
    return 1 + static_cast<std::size_t>((id - 1) % (vocab - 1));
}

template <class T>
struct BasicEncodedSequence {
    std::uint64_t user_id = 0;
    BasicVar<T> embeddings;  // [L×D]; invalid when length == 0
    std::size_t length = 0;
    std::vector<std::size_t> positions;

    bool degenerate() const { return length == 0; }
};

template <class T>
struct BasicEncodedInstance {
    BasicEncodedSequence<T> sequence;
    BasicVar<T> candidate;  // [1×D]
    BasicVar<T> side;       // [1×D_side]
};

/// Embedding tables plus the fusion maps that build e^s_i, the candidate
/// vector and the side-feature vector.
template <class T>
struct BasicFeatureEncoder {
    EncoderConfig config;
    BasicParameter<T> item, category, event_type, position, user, context;
    BasicParameter<T> fusion;            // [4·d_f × D]
    BasicParameter<T> candidate_fusion;  // [2·d_f × D]

    BasicFeatureEncoder() = default;

    BasicFeatureEncoder(const EncoderConfig& cfg, std::uint64_t seed) : config(cfg) {
        cfg.validate();
        const std::size_t f = cfg.feature_dim(), d = cfg.dim;
        constexpr double emb_std = 1.0;
        item = normal_param<T>("encoder.item", {cfg.item_vocab, f}, emb_std, seed);
        category = normal_param<T>("encoder.category", {cfg.category_vocab, f}, emb_std, seed);
        event_type = normal_param<T>("encoder.event_type", {kEventTypeNames.size() + 1, f}, emb_std, seed);
        position = normal_param<T>("encoder.position", {cfg.max_len, f}, emb_std, seed);
        user = normal_param<T>("encoder.user", {cfg.user_vocab, f}, emb_std, seed);
        context = normal_param<T>("encoder.context", {cfg.context_vocab, f}, emb_std, seed);
        fusion = linear_param<T>("encoder.fusion", 4 * f, d, seed);
        candidate_fusion = linear_param<T>("encoder.candidate_fusion", 2 * f, d, seed);
    }

    template <class F>
    void visit(F&& fn) {
        for (auto* p : {&item, &category, &event_type, &position, &user, &context, &fusion, &candidate_fusion}) fn(*p);
    }

    /// e^s for a run of events: concat(item, category, type, position) · fusion -> [len×D].
    /// `first_position` is the truncated index of events[0].
    BasicVar<T> encode_behaviors(BasicGraph<T>& g, std::span<const BehaviorEvent> events,
                                 std::size_t first_position = 0) {
        if (events.empty()) throw ContractError("encode_behaviors: no events");
        std::vector<std::size_t> items, cats, types, positions;
        items.reserve(events.size());
        cats.reserve(events.size());
        types.reserve(events.size());
        positions.reserve(events.size());
        for (std::size_t i = 0; i < events.size(); ++i) {
            items.push_back(bucket_row(events[i].item_id, config.item_vocab));
            cats.push_back(bucket_row(events[i].category_id, config.category_vocab));
            types.push_back(1 + static_cast<std::size_t>(events[i].type));
            const std::size_t pos = first_position + i;
            if (pos >= config.max_len) throw ContractError("behavior position beyond max_len");
            positions.push_back(pos);
        }
        auto x = concat_cols<T>({gather_rows(g, item, std::move(items)), gather_rows(g, category, std::move(cats)),
                                 gather_rows(g, event_type, std::move(types)),
                                 gather_rows(g, position, std::move(positions))});
        return matmul(x, g.param(fusion));
    }

    BasicVar<T> encode_behavior(BasicGraph<T>& g, const BehaviorEvent& event, std::size_t position_index) {
        return encode_behaviors(g, std::span<const BehaviorEvent>(&event, 1), position_index);
    }

    /// Candidate: concat(item, category) · candidate_fusion -> [1×D].
    BasicVar<T> encode_candidate(BasicGraph<T>& g, const CandidateItem& c) {
        auto x = concat_cols<T>({gather_rows(g, item, {bucket_row(c.item_id, config.item_vocab)}),
                                 gather_rows(g, category, {bucket_row(c.category_id, config.category_vocab)})});
        return matmul(x, g.param(candidate_fusion));
    }

    /// Side features: concat(mean user-feature rows, mean context rows) -> [1×2·d_f].
    BasicVar<T> encode_side(BasicGraph<T>& g, const std::vector<std::uint64_t>& user_feats,
                            const std::vector<std::uint64_t>& context_feats) {
        std::vector<std::size_t> u, c;
        for (auto id : user_feats) u.push_back(bucket_row(id, config.user_vocab));
        for (auto id : context_feats) c.push_back(bucket_row(id, config.context_vocab));
        return concat_cols<T>({gather_mean(g, user, std::move(u)), gather_mean(g, context, std::move(c))});
    }

    /// Keeps the most recent max_len behaviors, renumbering positions from 0.
    BasicEncodedSequence<T> encode_sequence(BasicGraph<T>& g, std::uint64_t user_id,
                                            std::span<const BehaviorEvent> behaviors) {
        BasicEncodedSequence<T> seq;
        seq.user_id = user_id;
        if (behaviors.size() > config.max_len) behaviors = behaviors.subspan(behaviors.size() - config.max_len);
        seq.length = behaviors.size();
        if (seq.length == 0) return seq;
        seq.positions.resize(seq.length);
        for (std::size_t i = 0; i < seq.length; ++i) seq.positions[i] = i;
        seq.embeddings = encode_behaviors(g, behaviors, 0);
        return seq;
    }

    BasicEncodedInstance<T> encode_instance(BasicGraph<T>& g, const TrainingInstance& inst) {
        BasicEncodedInstance<T> out;
        out.sequence = encode_sequence(g, inst.user_id, inst.behaviors);
        out.candidate = encode_candidate(g, inst.candidate);
        out.side = encode_side(g, inst.user_feats, inst.context_feats);
        return out;
    }
};

using FeatureEncoder = BasicFeatureEncoder<float>;

}  // namespace dmqn
