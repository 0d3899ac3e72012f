#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmqn/bench.hpp"
#include "dmqn/dataset.hpp"
#include "dmqn/errors.hpp"
#include "dmqn/model.hpp"
#include "dmqn/train.hpp"

namespace dmqn {

struct DataConfig {
    SyntheticSpec synthetic;
    std::string dir;  // holds train/valid/test .jsonl; empty: generate in memory
    double malformed_tolerance = 0.01;
};

struct ServeConfig {
    std::string host = "127.0.0.1";
    std::uint16_t port = 8080;
    std::string cache_path;
    std::vector<std::size_t> bench_lengths{512, 1024, 2048, 4096};
    std::size_t bench_trials = 7;
};

struct RunConfig {
    ModelConfig model;
    DataConfig data;
    TrainConfig train;
    ServeConfig serve;
};

inline void to_json(nlohmann::json& j, const SyntheticSpec& s) {
    j = {{"num_topics", s.num_topics},
         {"items_per_topic", s.items_per_topic},
         {"users", s.users},
         {"topics_per_user", s.topics_per_user},
         {"sequence_length", s.sequence_length},
         {"zipf_exponent", s.zipf_exponent},
         {"own_topic_rate", s.own_topic_rate},
         {"beta", s.beta},
         {"noise_rate", s.noise_rate},
         {"train_fraction", s.train_fraction},
         {"valid_fraction", s.valid_fraction},
         {"user_feature_buckets", s.user_feature_buckets},
         {"context_buckets", s.context_buckets},
         {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, SyntheticSpec& s) {
    j.at("num_topics").get_to(s.num_topics);
    j.at("items_per_topic").get_to(s.items_per_topic);
    j.at("users").get_to(s.users);
    j.at("topics_per_user").get_to(s.topics_per_user);
    j.at("sequence_length").get_to(s.sequence_length);
    j.at("zipf_exponent").get_to(s.zipf_exponent);
    j.at("own_topic_rate").get_to(s.own_topic_rate);
    j.at("beta").get_to(s.beta);
    j.at("noise_rate").get_to(s.noise_rate);
    j.at("train_fraction").get_to(s.train_fraction);
    j.at("valid_fraction").get_to(s.valid_fraction);
    j.at("user_feature_buckets").get_to(s.user_feature_buckets);
    j.at("context_buckets").get_to(s.context_buckets);
    j.at("seed").get_to(s.seed);
}

inline void to_json(nlohmann::json& j, const DataConfig& d) {
    j = d.synthetic;
    j["dir"] = d.dir;
    j["malformed_tolerance"] = d.malformed_tolerance;
}

inline void from_json(const nlohmann::json& j, DataConfig& d) {
    j.get_to(d.synthetic);
    j.at("dir").get_to(d.dir);
    j.at("malformed_tolerance").get_to(d.malformed_tolerance);
}

inline void to_json(nlohmann::json& j, const TrainConfig& t) {
    j = {{"batch_size", t.batch_size},
         {"learning_rate", t.adam.lr},
         {"beta1", t.adam.beta1},
         {"beta2", t.adam.beta2},
         {"eps", t.adam.eps},
         {"epochs", t.epochs},
         {"tau_start", t.tau_start},
         {"tau_end", t.tau_end},
         {"clip_norm", t.clip_norm},
         {"seed", t.seed},
         {"checkpoint", t.checkpoint_path}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& t) {
    j.at("batch_size").get_to(t.batch_size);
    j.at("learning_rate").get_to(t.adam.lr);
    j.at("beta1").get_to(t.adam.beta1);
    j.at("beta2").get_to(t.adam.beta2);
    j.at("eps").get_to(t.adam.eps);
    j.at("epochs").get_to(t.epochs);
    j.at("tau_start").get_to(t.tau_start);
    j.at("tau_end").get_to(t.tau_end);
    j.at("clip_norm").get_to(t.clip_norm);
    j.at("seed").get_to(t.seed);
    j.at("checkpoint").get_to(t.checkpoint_path);
}

inline void to_json(nlohmann::json& j, const ServeConfig& s) {
    j = {{"host", s.host},
         {"port", s.port},
         {"cache", s.cache_path},
         {"bench_lengths", s.bench_lengths},
         {"bench_trials", s.bench_trials}};
}

inline void from_json(const nlohmann::json& j, ServeConfig& s) {
    j.at("host").get_to(s.host);
    j.at("port").get_to(s.port);
    j.at("cache").get_to(s.cache_path);
    j.at("bench_lengths").get_to(s.bench_lengths);
    j.at("bench_trials").get_to(s.bench_trials);
}

inline nlohmann::json to_json(const RunConfig& c) {
    return {{"model", c.model}, {"data", c.data}, {"train", c.train}, {"serve", c.serve}};
}

/// Overlays `user` onto `defaults`, rejecting any key `defaults` lacks.
inline void overlay(nlohmann::json& defaults, const nlohmann::json& user, const std::string& where) {
    if (!user.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, value] : user.items()) {
        const std::string name = where.empty() ? key : where + "." + key;
        if (!defaults.contains(key)) throw ConfigError("unknown config key " + name);
        if (defaults[key].is_object()) {
            overlay(defaults[key], value, name);
        } else {
            defaults[key] = value;
        }
    }
}

inline void validate(const RunConfig& c) {
    try {
        c.model.encoder().validate();
        c.data.synthetic.validate();
        c.train.validate();
    } catch (const Error& e) {
        throw ConfigError(std::string("invalid config: ") + e.what());
    }
    if (c.model.num_codebooks == 0 || c.model.codewords == 0 || c.model.num_layers == 0)
        throw ConfigError("invalid config: model.num_codebooks, model.codewords and model.num_layers must be positive");
    if (!(c.data.malformed_tolerance >= 0 && c.data.malformed_tolerance <= 1))
        throw ConfigError("invalid config: data.malformed_tolerance must be in [0, 1]");
    if (c.serve.bench_lengths.size() < 2) throw ConfigError("invalid config: serve.bench_lengths needs two or more entries");
    if (c.serve.bench_trials == 0) throw ConfigError("invalid config: serve.bench_trials must be positive");
}

inline RunConfig parse_config(const nlohmann::json& user) {
    nlohmann::json merged = to_json(RunConfig{});
    overlay(merged, user, "");
    RunConfig c;
    try {
        merged.at("model").get_to(c.model);
        merged.at("data").get_to(c.data);
        merged.at("train").get_to(c.train);
        merged.at("serve").get_to(c.serve);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    } catch (const ContractError& e) {
        throw ConfigError(std::string("bad config value: ") + e.what());
    }
    validate(c);
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
    return parse_config(j);
}

}  // namespace dmqn
