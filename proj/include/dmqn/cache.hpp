#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include <zlib.h>

#include "dmqn/checkpoint.hpp"
#include "dmqn/dataset.hpp"
#include "dmqn/errors.hpp"
#include "dmqn/model.hpp"

// Cache layout (all integers little-endian):
//   "DMQC" | u32 version | u32 N | u32 W | u32 D | u64 count
//   count records, ascending by user_id:
//     u64 user_id | mask bytes (ceil(N·W/8), bit j of byte b is cluster 8b+j) | N·W·D fp32 values
//   u32 CRC32 of the record region

namespace dmqn {

inline constexpr char kCacheMagic[4] = {'D', 'M', 'Q', 'C'};
inline constexpr std::uint32_t kCacheVersion = 1;
inline constexpr std::size_t kCacheHeaderSize = 4 + 4 + 3 * 4 + 8;

struct CachedInterest {
    std::uint64_t user_id = 0;
    std::vector<bool> mask;    // N·W
    std::vector<float> values;  // N·W·D, zero where the mask is false

    friend bool operator==(const CachedInterest& a, const CachedInterest& b) {
        if (a.user_id != b.user_id || a.mask != b.mask || a.values.size() != b.values.size()) return false;
        return std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(float)) == 0;
    }
};

struct CacheDims {
    std::uint32_t num_codebooks = 0, codewords = 0, dim = 0;

    std::size_t clusters() const { return std::size_t{num_codebooks} * codewords; }
    std::size_t mask_bytes() const { return (clusters() + 7) / 8; }
    std::size_t record_size() const { return 8 + mask_bytes() + clusters() * dim * sizeof(float); }
    friend bool operator==(const CacheDims&, const CacheDims&) = default;
};

inline std::uint32_t crc32_of(const char* data, std::size_t n) {
    uLong crc = crc32(0L, Z_NULL, 0);
    while (n > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
        data += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

inline void append_record(std::vector<char>& buf, const CacheDims& dims, const CachedInterest& rec) {
    if (rec.mask.size() != dims.clusters() || rec.values.size() != dims.clusters() * dims.dim) {
        throw DimensionError("cache record for user " + std::to_string(rec.user_id) + " does not match dims");
    }
    io::append_u64(buf, rec.user_id);
    std::vector<char> bits(dims.mask_bytes(), 0);
    for (std::size_t j = 0; j < rec.mask.size(); ++j)
        if (rec.mask[j]) bits[j / 8] = static_cast<char>(bits[j / 8] | (1 << (j % 8)));
    buf.insert(buf.end(), bits.begin(), bits.end());
    const char* v = reinterpret_cast<const char*>(rec.values.data());
    buf.insert(buf.end(), v, v + rec.values.size() * sizeof(float));
}

/// Encodes records (sorted here by user_id; duplicates rejected) into file bytes.
inline std::vector<char> encode_cache(const CacheDims& dims, std::vector<CachedInterest> records) {
    std::sort(records.begin(), records.end(),
              [](const CachedInterest& a, const CachedInterest& b) { return a.user_id < b.user_id; });
    for (std::size_t i = 1; i < records.size(); ++i) {
        if (records[i].user_id == records[i - 1].user_id)
            throw StoreError("duplicate user_id " + std::to_string(records[i].user_id) + " in cache");
    }
    std::vector<char> buf(kCacheMagic, kCacheMagic + 4);
    io::append_u32(buf, kCacheVersion);
    io::append_u32(buf, dims.num_codebooks);
    io::append_u32(buf, dims.codewords);
    io::append_u32(buf, dims.dim);
    io::append_u64(buf, records.size());
    buf.reserve(buf.size() + records.size() * dims.record_size() + 4);
    for (const auto& r : records) append_record(buf, dims, r);
    io::append_u32(buf, crc32_of(buf.data() + kCacheHeaderSize, buf.size() - kCacheHeaderSize));
    return buf;
}

/// Read-only view of a cache file, verified on open. Lookups are const and
/// safe to call from several threads.
class CacheFile {
public:
    static CacheFile open(const std::string& path) {
        CacheFile c;
        c.path_ = path;
        c.bytes_ = io::read_file(path, "cache");
        c.parse();
        return c;
    }

    static CacheFile from_bytes(std::vector<char> bytes, std::string label = "cache") {
        CacheFile c;
        c.path_ = std::move(label);
        c.bytes_ = std::move(bytes);
        c.parse();
        return c;
    }

    const CacheDims& dims() const { return dims_; }
    std::size_t size() const { return count_; }

    std::uint64_t user_at(std::size_t i) const {
        std::uint64_t id;
        std::memcpy(&id, record_ptr(i), 8);
        return id;
    }

    CachedInterest record(std::size_t i) const {
        const char* p = record_ptr(i);
        CachedInterest r;
        std::memcpy(&r.user_id, p, 8);
        p += 8;
        r.mask.resize(dims_.clusters());
        for (std::size_t j = 0; j < r.mask.size(); ++j) r.mask[j] = (static_cast<unsigned char>(p[j / 8]) >> (j % 8)) & 1;
        p += dims_.mask_bytes();
        r.values.resize(dims_.clusters() * dims_.dim);
        std::memcpy(r.values.data(), p, r.values.size() * sizeof(float));
        return r;
    }

    /// Binary search by user_id.
    std::optional<CachedInterest> lookup(std::uint64_t user_id) const {
        std::size_t lo = 0, hi = count_;
        while (lo < hi) {
            const std::size_t mid = lo + (hi - lo) / 2;
            const auto id = user_at(mid);
            if (id == user_id) return record(mid);
            if (id < user_id) lo = mid + 1;
            else hi = mid;
        }
        return std::nullopt;
    }

private:
    const char* record_ptr(std::size_t i) const { return bytes_.data() + kCacheHeaderSize + i * dims_.record_size(); }

    void parse() {
        io::ByteReader r(bytes_, "cache " + path_);
        if (r.str(4) != std::string(kCacheMagic, 4)) throw StoreError(path_ + " is not a cache file (bad magic)");
        const auto version = r.u32();
        if (version != kCacheVersion) throw StoreError(path_ + ": unsupported cache version " + std::to_string(version));
        dims_.num_codebooks = r.u32();
        dims_.codewords = r.u32();
        dims_.dim = r.u32();
        if (dims_.clusters() == 0 || dims_.dim == 0) throw StoreError(path_ + ": zero dimension in cache header");
        count_ = r.u64();
        const std::size_t payload = bytes_.size() - kCacheHeaderSize;
        if (payload < 4 || (payload - 4) % dims_.record_size() != 0 ||
            (payload - 4) / dims_.record_size() != count_) {
            // name the first offset that does not sit on a record boundary
            const std::size_t whole = payload < 4 ? 0 : (payload - 4) / dims_.record_size();
            const std::size_t offset = kCacheHeaderSize + std::min<std::uint64_t>(whole, count_) * dims_.record_size();
            throw StoreError(path_ + ": corrupt record boundary at offset " + std::to_string(offset) + " (header says " +
                             std::to_string(count_) + " records of " + std::to_string(dims_.record_size()) +
                             " bytes, file has " + std::to_string(bytes_.size()) + " bytes)");
        }
        std::uint32_t stored;
        std::memcpy(&stored, bytes_.data() + bytes_.size() - 4, 4);
        const auto actual = crc32_of(bytes_.data() + kCacheHeaderSize, payload - 4);
        if (stored != actual) {
            throw StoreError(path_ + ": CRC mismatch at offset " + std::to_string(bytes_.size() - 4) + " (stored " +
                             std::to_string(stored) + ", computed " + std::to_string(actual) + ")");
        }
        for (std::size_t i = 1; i < count_; ++i) {
            if (user_at(i) <= user_at(i - 1)) {
                throw StoreError(path_ + ": records out of order at offset " +
                                 std::to_string(kCacheHeaderSize + i * dims_.record_size()));
            }
        }
    }

    std::string path_;
    std::vector<char> bytes_;
    CacheDims dims_;
    std::uint64_t count_ = 0;
};

inline CacheDims cache_dims(const ModelConfig& c) {
    return {static_cast<std::uint32_t>(c.num_codebooks), static_cast<std::uint32_t>(c.codewords),
            static_cast<std::uint32_t>(c.dim)};
}

/// Noise-free interacted clusters for one user.
inline CachedInterest compute_interest(Model& model, std::uint64_t user_id, std::span<const BehaviorEvent> behaviors) {
    Graph g(false);
    auto seq = model.encoder.encode_sequence(g, user_id, behaviors);
    auto ic = model.user_clusters(g, seq, ForwardOptions{});
    CachedInterest r;
    r.user_id = user_id;
    r.mask = ic.mask;
    const auto& v = ic.values.value();
    r.values.assign(v.data(), v.data() + v.size());
    return r;
}

/// Cache bytes for every distinct user of `users` (first occurrence wins).
inline std::vector<char> build_cache(Model& model, const InstanceSource& users) {
    if (model.config.kind != ModelKind::dmqn) throw ContractError("precompute needs a dmqn model");
    std::vector<CachedInterest> records;
    std::unordered_set<std::uint64_t> seen;
    for (std::size_t i = 0; i < users.size(); ++i) {
        const auto inst = users.at(i);
        if (!seen.insert(inst.user_id).second) continue;
        records.push_back(compute_interest(model, inst.user_id, inst.behaviors));
    }
    return encode_cache(cache_dims(model.config), std::move(records));
}

/// Writes the cache atomically: either the complete file appears at `path` or
/// nothing does.
inline void precompute(Model& model, const InstanceSource& users, const std::string& path) {
    io::write_file_atomic(path, build_cache(model, users));
}

}  // namespace dmqn
