#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "dmqn/cache.hpp"
#include "dmqn/dataset.hpp"
#include "dmqn/model.hpp"

namespace dmqn {

struct ScoreResponse {
    double p = 0;
    bool cached = false;
    bool degenerate = false;  // no active cluster: interest vector was zero
};

inline nlohmann::json to_json(const ScoreResponse& r) { return {{"p", r.p}, {"cached", r.cached}}; }

/// Scores one request. A cache hit runs only attention and the MLP over the
/// stored clusters; otherwise the clusters are computed from the request's
/// behaviors. Both paths are noise-free and agree bitwise.
inline ScoreResponse score_request(Model& model, const CacheFile* cache, const TrainingInstance& req,
                                   bool use_cache = true) {
    Graph g(false);
    ScoreResponse out;
    if (model.config.kind == ModelKind::mean_pool) {
        auto fwd = model.forward(g, req);
        out.p = fwd.y_hat.item();
        out.degenerate = fwd.degenerate;
        return out;
    }
    auto candidate = model.encoder.encode_candidate(g, req.candidate);
    auto side = model.encoder.encode_side(g, req.user_feats, req.context_feats);
    BasicVar<float> values;
    std::vector<bool> mask;
    std::optional<CachedInterest> hit;
    if (use_cache && cache) hit = cache->lookup(req.user_id);
    if (hit) {
        if (cache->dims() != cache_dims(model.config)) throw StoreError("cache dimensions do not match the model");
        const auto& c = model.config;
        values = g.constant(Tensor({c.num_codebooks, c.codewords, c.dim}, std::move(hit->values)));
        mask = std::move(hit->mask);
        out.cached = true;
    } else {
        auto seq = model.encoder.encode_sequence(g, req.user_id, req.behaviors);
        auto ic = model.user_clusters(g, seq, ForwardOptions{});
        values = ic.values;
        mask = std::move(ic.mask);
    }
    out.degenerate = std::none_of(mask.begin(), mask.end(), [](bool b) { return b; });
    out.p = model.score_clusters(values, mask, candidate, side).item();
    return out;
}

/// Request body: one instance object, or an array of them (answered in order).
inline nlohmann::json score_body(Model& model, const CacheFile* cache, const std::string& body) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
        throw ProtocolError(std::string("request is not valid JSON: ") + e.what());
    }
    auto one = [&](const nlohmann::json& r) {
        TrainingInstance req;
        try {
            req = parse_instance(r, false);
        } catch (const IngestionError& e) {
            throw ProtocolError(e.what());
        }
        return to_json(score_request(model, cache, req));
    };
    if (!j.is_array()) return one(j);
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : j) out.push_back(one(r));
    return out;
}

/// Batch mode: one JSON request per input line, one JSON response per output
/// line. Blank lines are skipped; a malformed line gets an {"error": ...} line.
/// Returns the number of malformed lines.
inline std::size_t score_jsonl(Model& model, const CacheFile* cache, std::istream& in, std::ostream& out) {
    std::string line;
    std::size_t bad = 0;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out << score_body(model, cache, line).dump() << '\n';
        } catch (const ProtocolError& e) {
            ++bad;
            out << nlohmann::json{{"error", e.what()}}.dump() << '\n';
        }
    }
    return bad;
}

/// HTTP front end: POST /score. Malformed requests get 400 with an error body
/// and the connection stays open.
inline void install_routes(httplib::Server& server, Model& model, const CacheFile* cache) {
    server.Post("/score", [&model, cache](const httplib::Request& req, httplib::Response& res) {
        try {
            res.set_content(score_body(model, cache, req.body).dump(), "application/json");
        } catch (const ProtocolError& e) {
            res.status = 400;
            res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
        } catch (const std::exception& e) {
            res.status = 500;
            res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
        }
    });
}

}  // namespace dmqn
