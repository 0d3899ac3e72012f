#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmqn/errors.hpp"
#include "dmqn/rng.hpp"

namespace dmqn {

enum class EventType : std::uint8_t { view = 0, click = 1, add_to_cart = 2, browse = 3 };

inline constexpr std::array<std::string_view, 4> kEventTypeNames{"view", "click", "add_to_cart", "browse"};

inline std::string_view to_string(EventType t) { return kEventTypeNames[static_cast<std::size_t>(t)]; }

inline EventType parse_event_type(std::string_view s) {
    for (std::size_t i = 0; i < kEventTypeNames.size(); ++i) {
        if (kEventTypeNames[i] == s) return static_cast<EventType>(i);
    }
    throw IngestionError("unknown event type \"" + std::string(s) +
                         "\"; allowed: view, click, add_to_cart, browse");
}

struct BehaviorEvent {
    std::uint64_t item_id = 0;
    std::uint64_t category_id = 0;
    EventType type = EventType::view;
    std::int64_t ts = 0;

    friend bool operator==(const BehaviorEvent&, const BehaviorEvent&) = default;
};

struct CandidateItem {
    std::uint64_t item_id = 0;
    std::uint64_t category_id = 0;

    friend bool operator==(const CandidateItem&, const CandidateItem&) = default;
};

/// One impression: user features, behavior sequence, candidate, context, click label.
struct TrainingInstance {
    std::uint64_t user_id = 0;
    std::vector<BehaviorEvent> behaviors;  // ascending ts
    CandidateItem candidate;
    std::vector<std::uint64_t> user_feats;
    std::vector<std::uint64_t> context_feats;
    int label = 0;

    friend bool operator==(const TrainingInstance&, const TrainingInstance&) = default;
};

/// Random-access view over a set of instances.
class InstanceSource {
public:
    virtual ~InstanceSource() = default;
    virtual std::size_t size() const = 0;
    virtual TrainingInstance at(std::size_t i) const = 0;
};

class VectorSource : public InstanceSource {
public:
    VectorSource() = default;
    explicit VectorSource(std::vector<TrainingInstance> items) : items_(std::move(items)) {}

    std::size_t size() const override { return items_.size(); }
    TrainingInstance at(std::size_t i) const override { return items_.at(i); }
    const std::vector<TrainingInstance>& items() const { return items_; }

private:
    std::vector<TrainingInstance> items_;
};

// ---------------------------------------------------------------------------
// JSONL schema

namespace detail {

inline std::vector<std::uint64_t> id_list(const nlohmann::json& j, const char* key) {
    std::vector<std::uint64_t> out;
    if (!j.contains(key)) return out;
    for (const auto& v : j.at(key)) out.push_back(v.get<std::uint64_t>());
    return out;
}

inline void write_ids(std::ostream& os, const std::vector<std::uint64_t>& ids) {
    os << '[';
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) os << ',';
        os << ids[i];
    }
    os << ']';
}

}  // namespace detail

/// Parses one instance object. `with_label` false accepts scoring requests
/// (label absent, reported as 0; behaviors may be omitted).
inline TrainingInstance parse_instance(const nlohmann::json& j, bool with_label = true) {
    if (!j.is_object()) throw IngestionError("instance must be a JSON object");
    TrainingInstance inst;
    try {
        inst.user_id = j.at("user_id").get<std::uint64_t>();
        static const nlohmann::json no_behaviors = nlohmann::json::array();
        const auto& behaviors = with_label || j.contains("behaviors") ? j.at("behaviors") : no_behaviors;
        for (const auto& b : behaviors) {
            BehaviorEvent e;
            e.item_id = b.at("item").get<std::uint64_t>();
            e.category_id = b.at("cat").get<std::uint64_t>();
            e.type = parse_event_type(b.at("type").get<std::string>());
            e.ts = b.at("ts").get<std::int64_t>();
            inst.behaviors.push_back(e);
        }
        const auto& c = j.at("candidate");
        inst.candidate.item_id = c.at("item").get<std::uint64_t>();
        inst.candidate.category_id = c.at("cat").get<std::uint64_t>();
        inst.user_feats = detail::id_list(j, "user_feats");
        inst.context_feats = detail::id_list(j, "context_feats");
        if (with_label) {
            const int label = j.at("label").get<int>();
            if (label != 0 && label != 1) throw IngestionError("label must be 0 or 1");
            inst.label = label;
        }
    } catch (const nlohmann::json::exception& e) {
        throw IngestionError(std::string("bad instance: ") + e.what());
    }
    std::stable_sort(inst.behaviors.begin(), inst.behaviors.end(),
                     [](const BehaviorEvent& a, const BehaviorEvent& b) { return a.ts < b.ts; });
    return inst;
}

/// Writes one instance as a single JSONL line (keys in schema order, LF terminated).
inline void write_jsonl(std::ostream& os, const TrainingInstance& inst, bool with_label = true) {
    os << "{\"user_id\":" << inst.user_id << ",\"behaviors\":[";
    for (std::size_t i = 0; i < inst.behaviors.size(); ++i) {
        const auto& b = inst.behaviors[i];
        if (i) os << ',';
        os << "{\"item\":" << b.item_id << ",\"cat\":" << b.category_id << ",\"type\":\"" << to_string(b.type)
           << "\",\"ts\":" << b.ts << '}';
    }
    os << "],\"candidate\":{\"item\":" << inst.candidate.item_id << ",\"cat\":" << inst.candidate.category_id
       << "},\"user_feats\":";
    detail::write_ids(os, inst.user_feats);
    os << ",\"context_feats\":";
    detail::write_ids(os, inst.context_feats);
    if (with_label) os << ",\"label\":" << inst.label;
    os << "}\n";
}

struct LoadReport {
    std::size_t lines = 0;    // non-blank lines seen
    std::size_t skipped = 0;  // malformed lines
    std::size_t first_bad_line = 0;  // 1-based; 0 when none
    std::string first_error;
};

/// Streams instances from a JSONL file in file order, skipping malformed lines.
class JsonlReader {
public:
    explicit JsonlReader(std::istream& in) : in_(in) {}

    /// Next well-formed instance, or nullopt at end of input.
    std::optional<TrainingInstance> next() {
        std::string line;
        while (std::getline(in_, line)) {
            ++line_no_;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.find_first_not_of(" \t") == std::string::npos) continue;
            ++report_.lines;
            try {
                return parse_instance(nlohmann::json::parse(line));
            } catch (const std::exception& e) {
                ++report_.skipped;
                if (report_.first_bad_line == 0) {
                    report_.first_bad_line = line_no_;
                    report_.first_error = e.what();
                }
            }
        }
        return std::nullopt;
    }

    const LoadReport& report() const { return report_; }

private:
    std::istream& in_;
    std::size_t line_no_ = 0;
    LoadReport report_;
};

/// Reads every instance of a JSONL file. More than `tolerance` (a fraction of
/// non-blank lines) malformed lines is an IngestionError naming the first one.
inline std::vector<TrainingInstance> load_jsonl(const std::string& path, double tolerance = 0.01,
                                                LoadReport* report = nullptr) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot open dataset file " + path);
    JsonlReader reader(in);
    std::vector<TrainingInstance> out;
    while (auto inst = reader.next()) out.push_back(std::move(*inst));
    const auto& r = reader.report();
    if (static_cast<double>(r.skipped) > tolerance * static_cast<double>(r.lines)) {
        throw IngestionError(path + ": " + std::to_string(r.skipped) + " malformed of " + std::to_string(r.lines) +
                             " lines exceeds tolerance; first at line " + std::to_string(r.first_bad_line) + ": " +
                             r.first_error);
    }
    if (report) *report = r;
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic generator

/// Parameters of the planted-topic generator. Items are partitioned into
/// topics; each user draws `topics_per_user` topics with Zipf-skewed usage.
/// The click probability is sigmoid(beta * (affinity - median affinity)),
/// where affinity is the share of the user's behaviors in the candidate's topic.
struct SyntheticSpec {
    std::uint64_t num_topics = 32;
    std::uint64_t items_per_topic = 64;
    std::uint64_t users = 1000;
    std::uint64_t topics_per_user = 2;
    std::uint64_t sequence_length = 256;
    double zipf_exponent = 2.0;
    /// Probability that the candidate's topic is drawn from the user's own topics,
    /// weighted by usage (otherwise uniformly over all topics).
    double own_topic_rate = 0.5;
    double beta = 8.0;
    double noise_rate = 0.0;  // probability of flipping a label
    double train_fraction = 0.8;
    double valid_fraction = 0.1;
    std::uint64_t user_feature_buckets = 50;
    std::uint64_t context_buckets = 24;
    std::uint64_t seed = 7;

    void validate() const {
        auto fail = [](const std::string& m) { throw IngestionError("invalid synthetic spec: " + m); };
        if (num_topics < 2) fail("num_topics must be >= 2");
        if (items_per_topic == 0) fail("items_per_topic must be >= 1");
        if (users == 0) fail("users must be >= 1");
        if (topics_per_user == 0 || topics_per_user > num_topics) fail("topics_per_user must be in [1, num_topics]");
        if (sequence_length < topics_per_user) fail("sequence_length must be >= topics_per_user");
        if (!(beta >= 0)) fail("beta must be >= 0");
        if (!(noise_rate >= 0 && noise_rate <= 1)) fail("noise_rate must be in [0, 1]");
        if (!(own_topic_rate >= 0 && own_topic_rate <= 1)) fail("own_topic_rate must be in [0, 1]");
        if (!(zipf_exponent >= 0)) fail("zipf_exponent must be >= 0");
        if (!(train_fraction >= 0 && valid_fraction >= 0 && train_fraction + valid_fraction <= 1))
            fail("split fractions must be nonnegative and sum to <= 1");
        if (user_feature_buckets == 0 || context_buckets == 0) fail("feature buckets must be >= 1");
    }

    std::uint64_t num_items() const { return num_topics * items_per_topic; }
};

enum class Split { train, valid, test };

/// Deterministic generator: user u's instance is a pure function of (spec, u).
/// Items are numbered from 1 and categories equal topic + 1, so id 0 is never used.
class SyntheticDataset {
public:
    explicit SyntheticDataset(SyntheticSpec spec) : spec_(spec) {
        spec_.validate();
        std::vector<double> aff(spec_.users);
        for (std::uint64_t u = 0; u < spec_.users; ++u) aff[u] = draw(u).affinity;
        std::sort(aff.begin(), aff.end());
        const std::size_t n = aff.size();
        threshold_ = n % 2 ? aff[n / 2] : 0.5 * (aff[n / 2 - 1] + aff[n / 2]);
    }

    const SyntheticSpec& spec() const { return spec_; }
    std::uint64_t size() const { return spec_.users; }
    /// Population median affinity (theta of the label rule).
    double threshold() const { return threshold_; }

    static std::uint64_t topic_of_item(const SyntheticSpec& s, std::uint64_t item_id) {
        return (item_id - 1) / s.items_per_topic;
    }

    Split split_of(std::uint64_t u) const {
        const auto n_train = static_cast<std::uint64_t>(std::llround(spec_.train_fraction * spec_.users));
        const auto n_valid = static_cast<std::uint64_t>(std::llround(spec_.valid_fraction * spec_.users));
        if (u < n_train) return Split::train;
        if (u < n_train + n_valid) return Split::valid;
        return Split::test;
    }

    TrainingInstance instance(std::uint64_t u) const {
        Draw d = draw(u);
        Rng rng(derive_seed({spec_.seed, 2, u}));
        const double p = 1.0 / (1.0 + std::exp(-spec_.beta * (d.affinity - threshold_)));
        int label = uniform01(rng) < p ? 1 : 0;
        if (uniform01(rng) < spec_.noise_rate) label = 1 - label;
        d.inst.label = label;
        return std::move(d.inst);
    }

    /// Share of user u's behaviors in the candidate's topic.
    double affinity(std::uint64_t u) const { return draw(u).affinity; }

    /// Writes all users (or one split) as JSONL.
    void write(std::ostream& os, std::optional<Split> only = std::nullopt) const {
        for (std::uint64_t u = 0; u < spec_.users; ++u) {
            if (only && split_of(u) != *only) continue;
            write_jsonl(os, instance(u));
        }
    }

private:
    struct Draw {
        TrainingInstance inst;
        double affinity = 0;
    };

    Draw draw(std::uint64_t u) const {
        const auto& s = spec_;
        Rng rng(derive_seed({s.seed, 1, u}));
        Draw d;
        auto& inst = d.inst;
        inst.user_id = u + 1;

        // user's topics, ranked; usage weight of rank r is (r+1)^-zipf
        std::vector<std::uint64_t> topics(s.num_topics);
        for (std::uint64_t t = 0; t < s.num_topics; ++t) topics[t] = t;
        for (std::uint64_t i = 0; i < s.topics_per_user; ++i) {
            std::swap(topics[i], topics[i + uniform_index(rng, s.num_topics - i)]);
        }
        topics.resize(s.topics_per_user);
        std::vector<double> cdf(topics.size());
        double total = 0;
        for (std::size_t r = 0; r < topics.size(); ++r) {
            total += std::pow(static_cast<double>(r + 1), -s.zipf_exponent);
            cdf[r] = total;
        }
        for (auto& c : cdf) c /= total;

        static constexpr std::array<double, 4> type_cdf{0.6, 0.85, 0.95, 1.0};
        std::vector<std::uint64_t> behavior_topic(s.sequence_length);
        std::int64_t ts = 1'600'000'000 + static_cast<std::int64_t>(uniform_index(rng, 86'400));
        inst.behaviors.resize(s.sequence_length);
        for (std::uint64_t i = 0; i < s.sequence_length; ++i) {
            const double x = uniform01(rng);
            std::size_t r = 0;
            while (r + 1 < cdf.size() && x > cdf[r]) ++r;
            const std::uint64_t topic = topics[r];
            behavior_topic[i] = topic;
            auto& e = inst.behaviors[i];
            e.item_id = topic * s.items_per_topic + uniform_index(rng, s.items_per_topic) + 1;
            e.category_id = topic + 1;
            const double y = uniform01(rng);
            std::size_t t = 0;
            while (y > type_cdf[t]) ++t;
            e.type = static_cast<EventType>(t);
            ts += static_cast<std::int64_t>(uniform_index(rng, 3600));
            e.ts = ts;
        }

        std::uint64_t cand_topic;
        if (uniform01(rng) < s.own_topic_rate) {
            const double x = uniform01(rng);
            std::size_t r = 0;
            while (r + 1 < cdf.size() && x > cdf[r]) ++r;
            cand_topic = topics[r];
        } else {
            cand_topic = uniform_index(rng, s.num_topics);
        }
        inst.candidate.item_id = cand_topic * s.items_per_topic + uniform_index(rng, s.items_per_topic) + 1;
        inst.candidate.category_id = cand_topic + 1;
        inst.user_feats = {1 + u % s.user_feature_buckets};
        inst.context_feats = {1 + uniform_index(rng, s.context_buckets)};

        std::uint64_t hits = 0;
        for (auto t : behavior_topic) hits += (t == cand_topic);
        d.affinity = static_cast<double>(hits) / static_cast<double>(s.sequence_length);
        return d;
    }

    SyntheticSpec spec_;
    double threshold_ = 0;
};

/// One split of a synthetic dataset, generated on demand.
class SyntheticSplitSource : public InstanceSource {
public:
    SyntheticSplitSource(std::shared_ptr<const SyntheticDataset> data, Split split, std::size_t limit = SIZE_MAX)
        : data_(std::move(data)) {
        for (std::uint64_t u = 0; u < data_->size() && users_.size() < limit; ++u) {
            if (data_->split_of(u) == split) users_.push_back(u);
        }
    }

    std::size_t size() const override { return users_.size(); }
    TrainingInstance at(std::size_t i) const override { return data_->instance(users_.at(i)); }

private:
    std::shared_ptr<const SyntheticDataset> data_;
    std::vector<std::uint64_t> users_;
};

}  // namespace dmqn
