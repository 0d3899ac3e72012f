#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "dmqn/config.hpp"
#include "dmqn/dataset.hpp"

namespace dmqn {

struct DataSplits {
    std::unique_ptr<InstanceSource> train, valid, test;
};

inline std::string split_path(const std::string& dir, Split s) {
    const char* name = s == Split::train ? "train.jsonl" : s == Split::valid ? "valid.jsonl" : "test.jsonl";
    return (std::filesystem::path(dir) / name).string();
}

/// Several sources read back to back.
class ConcatSource : public InstanceSource {
public:
    explicit ConcatSource(std::vector<const InstanceSource*> parts) : parts_(std::move(parts)) {}

    std::size_t size() const override {
        std::size_t n = 0;
        for (const auto* p : parts_) n += p->size();
        return n;
    }
    TrainingInstance at(std::size_t i) const override {
        for (const auto* p : parts_) {
            if (i < p->size()) return p->at(i);
            i -= p->size();
        }
        throw ContractError("ConcatSource: index out of range");
    }

private:
    std::vector<const InstanceSource*> parts_;
};

/// Writes train/valid/test JSONL files for the configured synthetic spec.
inline void generate_files(const SyntheticSpec& spec, const std::string& dir) {
    std::filesystem::create_directories(dir);
    const SyntheticDataset data(spec);
    for (Split s : {Split::train, Split::valid, Split::test}) {
        const auto path = split_path(dir, s);
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IngestionError("cannot write " + path);
        data.write(out, s);
        if (!out) throw IngestionError("failed writing " + path);
    }
}

/// JSONL splits from data.dir when set, otherwise the synthetic spec generated on demand.
inline DataSplits load_splits(const DataConfig& cfg) {
    DataSplits d;
    if (cfg.dir.empty()) {
        auto data = std::make_shared<const SyntheticDataset>(cfg.synthetic);
        d.train = std::make_unique<SyntheticSplitSource>(data, Split::train);
        d.valid = std::make_unique<SyntheticSplitSource>(data, Split::valid);
        d.test = std::make_unique<SyntheticSplitSource>(data, Split::test);
        return d;
    }
    auto load = [&](Split s) {
        return std::make_unique<VectorSource>(load_jsonl(split_path(cfg.dir, s), cfg.malformed_tolerance));
    };
    d.train = load(Split::train);
    d.valid = load(Split::valid);
    d.test = load(Split::test);
    return d;
}

}  // namespace dmqn
