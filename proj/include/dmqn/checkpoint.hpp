#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmqn/errors.hpp"
#include "dmqn/model.hpp"

// Checkpoint layout (all integers little-endian):
//   "DMQN" | u32 version | u32 config_len | config JSON (UTF-8)
//   u32 tensor_count
//   per tensor: u32 name_len | name | u32 rank | u32 dims[rank] | fp32 payload

namespace dmqn {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace io {

inline void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline void put_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

inline void append_u32(std::vector<char>& buf, std::uint32_t v) {
    const char* p = reinterpret_cast<const char*>(&v);
    buf.insert(buf.end(), p, p + 4);
}
inline void append_u64(std::vector<char>& buf, std::uint64_t v) {
    const char* p = reinterpret_cast<const char*>(&v);
    buf.insert(buf.end(), p, p + 8);
}

/// Bounds-checked reader over an in-memory byte buffer.
class ByteReader {
public:
    ByteReader(const std::vector<char>& buf, std::string what) : buf_(buf), what_(std::move(what)) {}

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return buf_.size() - pos_; }

    void read(void* dst, std::size_t n) {
        if (n > remaining()) {
            throw StoreError(what_ + ": truncated at offset " + std::to_string(pos_) + " (need " + std::to_string(n) +
                             " bytes, have " + std::to_string(remaining()) + ")");
        }
        std::memcpy(dst, buf_.data() + pos_, n);
        pos_ += n;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        read(&v, 4);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        read(&v, 8);
        return v;
    }
    std::string str(std::size_t n) {
        std::string s(n, '\0');
        read(s.data(), n);
        return s;
    }

private:
    const std::vector<char>& buf_;
    std::string what_;
    std::size_t pos_ = 0;
};

inline std::vector<char> read_file(const std::string& path, const char* what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StoreError(std::string("cannot open ") + what + " " + path);
    return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

/// Writes `bytes` to `path` via a temporary file; on failure nothing is left behind.
inline void write_file_atomic(const std::string& path, const std::vector<char>& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (out) out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            std::error_code ec;
            std::filesystem::remove(tmp, ec);
            throw StoreError("cannot write " + path);
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw StoreError("cannot move file into place at " + path);
    }
}

}  // namespace io

inline constexpr char kCheckpointMagic[4] = {'D', 'M', 'Q', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::vector<char> serialize_checkpoint(Model& model) {
    std::vector<char> buf(kCheckpointMagic, kCheckpointMagic + 4);
    io::append_u32(buf, kCheckpointVersion);
    const std::string cfg = nlohmann::json(model.config).dump();
    io::append_u32(buf, static_cast<std::uint32_t>(cfg.size()));
    buf.insert(buf.end(), cfg.begin(), cfg.end());
    std::vector<Parameter*> params;
    model.visit([&](Parameter& p) { params.push_back(&p); });
    io::append_u32(buf, static_cast<std::uint32_t>(params.size()));
    for (const auto* p : params) {
        io::append_u32(buf, static_cast<std::uint32_t>(p->name.size()));
        buf.insert(buf.end(), p->name.begin(), p->name.end());
        io::append_u32(buf, static_cast<std::uint32_t>(p->value.rank()));
        for (auto d : p->value.shape()) io::append_u32(buf, static_cast<std::uint32_t>(d));
        const char* data = reinterpret_cast<const char*>(p->value.data());
        buf.insert(buf.end(), data, data + p->value.size() * sizeof(float));
    }
    return buf;
}

inline void save_checkpoint(const std::string& path, Model& model) {
    io::write_file_atomic(path, serialize_checkpoint(model));
}

inline Model load_checkpoint(const std::string& path) {
    const auto bytes = io::read_file(path, "checkpoint");
    io::ByteReader r(bytes, "checkpoint " + path);
    if (r.str(4) != std::string(kCheckpointMagic, 4)) throw StoreError(path + " is not a checkpoint (bad magic)");
    const auto version = r.u32();
    if (version != kCheckpointVersion) throw StoreError(path + ": unsupported checkpoint version " + std::to_string(version));
    ModelConfig cfg;
    try {
        cfg = nlohmann::json::parse(r.str(r.u32())).get<ModelConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw StoreError(path + ": bad model config: " + e.what());
    }
    Model model(cfg);
    std::map<std::string, Parameter*> by_name;
    model.visit([&](Parameter& p) { by_name[p.name] = &p; });
    const auto count = r.u32();
    if (count != by_name.size()) {
        throw StoreError(path + ": " + std::to_string(count) + " tensors, model expects " + std::to_string(by_name.size()));
    }
    for (std::uint32_t t = 0; t < count; ++t) {
        const std::string name = r.str(r.u32());
        const auto rank = r.u32();
        if (rank == 0 || rank > 8) throw StoreError(path + ": tensor " + name + " has invalid rank " + std::to_string(rank));
        Shape shape(rank);
        for (auto& d : shape) d = r.u32();
        auto it = by_name.find(name);
        if (it == by_name.end()) throw StoreError(path + ": unexpected tensor " + name);
        if (it->second->value.shape() != shape) {
            throw StoreError(path + ": tensor " + name + " has shape " + shape_str(shape) + ", expected " +
                             shape_str(it->second->value.shape()));
        }
        r.read(it->second->value.data(), it->second->value.size() * sizeof(float));
    }
    if (r.remaining() != 0) throw StoreError(path + ": trailing bytes at offset " + std::to_string(r.offset()));
    return model;
}

}  // namespace dmqn
