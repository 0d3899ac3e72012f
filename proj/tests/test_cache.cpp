#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "checks.hpp"
#include "dmqn/cache.hpp"
#include "dmqn/serving.hpp"

namespace dmqn {
namespace {

const CacheDims kDims{2, 3, 2};

CachedInterest record(std::uint64_t user, float base) {
    CachedInterest r;
    r.user_id = user;
    r.mask = {true, false, true, true, false, false};
    r.values.assign(12, 0.0f);
    for (std::size_t i = 0; i < 12; ++i)
        if (r.mask[i / 2]) r.values[i] = base + static_cast<float>(i);
    return r;
}

std::vector<char> sample_bytes() { return encode_cache(kDims, {record(30, 3), record(10, 1), record(20, 2)}); }

TEST(Cache, LayoutSizes) {
    EXPECT_EQ(kDims.mask_bytes(), 1u);
    EXPECT_EQ(kDims.record_size(), 8u + 1 + 12 * 4);
    EXPECT_EQ(sample_bytes().size(), kCacheHeaderSize + 3 * kDims.record_size() + 4);
}

TEST(Cache, RoundTripSortsRecords) {
    const auto c = CacheFile::from_bytes(sample_bytes());
    ASSERT_EQ(c.size(), 3u);
    EXPECT_EQ(c.dims(), kDims);
    EXPECT_EQ(c.user_at(0), 10u);
    EXPECT_EQ(c.user_at(2), 30u);
    EXPECT_EQ(c.record(1), record(20, 2));
}

TEST(Cache, LookupBoundaries) {
    const auto c = CacheFile::from_bytes(sample_bytes());
    EXPECT_EQ(c.lookup(10), record(10, 1));
    EXPECT_EQ(c.lookup(30), record(30, 3));
    EXPECT_EQ(c.lookup(20), record(20, 2));
    EXPECT_FALSE(c.lookup(0));
    EXPECT_FALSE(c.lookup(15));
    EXPECT_FALSE(c.lookup(31));
    EXPECT_FALSE(CacheFile::from_bytes(encode_cache(kDims, {})).lookup(1));
}

TEST(Cache, MaskBitsPackLowBitFirst) {
    const auto bytes = sample_bytes();
    EXPECT_EQ(static_cast<unsigned char>(bytes[kCacheHeaderSize + 8]), 0b1101u);
}

TEST(Cache, DuplicateUserIsStoreError) {
    EXPECT_THROW(encode_cache(kDims, {record(1, 0), record(1, 5)}), StoreError);
}

TEST(Cache, RecordWithWrongDimsIsDimensionError) {
    auto r = record(1, 0);
    r.values.pop_back();
    EXPECT_THROW(encode_cache(kDims, {r}), DimensionError);
}

void expect_store_error(std::vector<char> bytes, const std::string& fragment) {
    try {
        CacheFile::from_bytes(std::move(bytes), "c.bin");
        FAIL() << "expected StoreError containing " << fragment;
    } catch (const StoreError& e) {
        EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
    }
}

TEST(Cache, FlippedPayloadByteFailsCrcWithOffset) {
    auto b = sample_bytes();
    b[kCacheHeaderSize + 20] ^= 0x40;
    expect_store_error(b, "CRC mismatch at offset " + std::to_string(b.size() - 4));
}

TEST(Cache, TruncationNamesRecordBoundary) {
    auto b = sample_bytes();
    b.resize(b.size() - 10);
    expect_store_error(b, "corrupt record boundary at offset " +
                              std::to_string(kCacheHeaderSize + 2 * kDims.record_size()));
    expect_store_error(std::vector<char>(b.begin(), b.begin() + 10), "truncated");
}

TEST(Cache, BadMagicAndVersion) {
    auto b = sample_bytes();
    b[0] = 'X';
    expect_store_error(b, "bad magic");
    b = sample_bytes();
    b[4] = 9;
    expect_store_error(b, "unsupported cache version 9");
}

TEST(Cache, OutOfOrderRecordsAreRejected) {
    auto b = sample_bytes();
    const std::size_t rs = kDims.record_size();
    // swap the first two records and refresh the checksum
    std::vector<char> tmp(b.begin() + kCacheHeaderSize, b.begin() + kCacheHeaderSize + rs);
    std::copy(b.begin() + kCacheHeaderSize + rs, b.begin() + kCacheHeaderSize + 2 * rs, b.begin() + kCacheHeaderSize);
    std::copy(tmp.begin(), tmp.end(), b.begin() + kCacheHeaderSize + rs);
    const auto crc = crc32_of(b.data() + kCacheHeaderSize, b.size() - kCacheHeaderSize - 4);
    std::memcpy(b.data() + b.size() - 4, &crc, 4);
    expect_store_error(b, "out of order at offset " + std::to_string(kCacheHeaderSize + rs));
}

TEST(Cache, MissingFileIsStoreError) { EXPECT_THROW(CacheFile::open("/nonexistent/c.bin"), StoreError); }

TEST(Crc32, StandardCheckValue) { EXPECT_EQ(crc32_of("123456789", 9), 0xCBF43926u); }

struct Fixture {
    Model model;
    std::shared_ptr<const SyntheticDataset> data;
    std::unique_ptr<SyntheticSplitSource> users;
    std::optional<CacheFile> cache;

    explicit Fixture(ModelKind kind = ModelKind::dmqn) {
        ModelConfig mc;
        mc.kind = kind;
        mc.max_len = 32;
        model = Model(mc);
        SyntheticSpec s;
        s.users = 40;
        s.sequence_length = 32;
        s.train_fraction = 1;
        s.valid_fraction = 0;
        data = std::make_shared<const SyntheticDataset>(s);
        users = std::make_unique<SyntheticSplitSource>(data, Split::train);
        if (kind == ModelKind::dmqn) cache = CacheFile::from_bytes(build_cache(model, *users));
    }
};

TEST(Serving, CachedAndOnlinePathsAgreeBitwise) {
    const auto r = checks::cache_consistency(60, 48, 3);
    EXPECT_TRUE(r.pass) << r.detail;
}

TEST(Serving, UnknownUserIsScoredOnline) {
    Fixture f;
    auto inst = f.users->at(0);
    inst.user_id = 999;
    const auto r = score_request(f.model, &*f.cache, inst);
    EXPECT_FALSE(r.cached);
    EXPECT_EQ(r.p, predict_instance(f.model, inst));
}

TEST(Serving, UnknownUserWithoutHistoryIsDegenerate) {
    Fixture f;
    auto inst = f.users->at(0);
    inst.user_id = 999;
    inst.behaviors.clear();
    const auto r = score_request(f.model, &*f.cache, inst);
    EXPECT_TRUE(r.degenerate);
    EXPECT_TRUE(std::isfinite(r.p));
}

TEST(Serving, CacheFromAnotherShapeIsStoreError) {
    Fixture f;
    const auto other = CacheFile::from_bytes(encode_cache({2, 3, 2}, {record(1, 0)}));
    auto inst = f.users->at(0);
    inst.user_id = 1;
    EXPECT_THROW(score_request(f.model, &other, inst), StoreError);
}

TEST(Serving, BaselineIgnoresCache) {
    Fixture f(ModelKind::mean_pool);
    const auto inst = f.users->at(3);
    const auto r = score_request(f.model, nullptr, inst);
    EXPECT_FALSE(r.cached);
    EXPECT_EQ(r.p, predict_instance(f.model, inst));
    EXPECT_THROW(build_cache(f.model, *f.users), ContractError);
}

std::string request_json(const TrainingInstance& inst) {
    std::ostringstream os;
    write_jsonl(os, inst, false);
    return os.str();
}

TEST(Serving, BatchAnswersInRequestOrder) {
    Fixture f;
    std::string body = "[";
    nlohmann::json expected = nlohmann::json::array();
    for (std::size_t i : {5u, 1u, 7u}) {
        if (body.size() > 1) body += ",";
        body += request_json(f.users->at(i));
        expected.push_back(score_body(f.model, &*f.cache, request_json(f.users->at(i))));
    }
    body += "]";
    EXPECT_EQ(score_body(f.model, &*f.cache, body), expected);
    EXPECT_TRUE(expected[0]["cached"].get<bool>());
}

TEST(Serving, MalformedRequestsAreProtocolErrors) {
    Fixture f;
    EXPECT_THROW(score_body(f.model, nullptr, "{oops"), ProtocolError);
    EXPECT_THROW(score_body(f.model, nullptr, R"({"user_id":1})"), ProtocolError);
}

TEST(Serving, JsonlBatchWritesErrorLinesAndContinues) {
    Fixture f;
    std::istringstream in(request_json(f.users->at(0)) + "\nnot json\n\n" + request_json(f.users->at(1)));
    std::ostringstream out;
    EXPECT_EQ(score_jsonl(f.model, &*f.cache, in, out), 1u);
    std::istringstream lines(out.str());
    std::string line;
    std::vector<nlohmann::json> got;
    while (std::getline(lines, line)) got.push_back(nlohmann::json::parse(line));
    ASSERT_EQ(got.size(), 3u);
    EXPECT_TRUE(got[0].contains("p"));
    EXPECT_TRUE(got[1].contains("error"));
    EXPECT_TRUE(got[2].contains("p"));
}

TEST(Serving, HttpEndpointScoresAndRejects) {
    Fixture f;
    httplib::Server server;
    install_routes(server, f.model, &*f.cache);
    const int port = server.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port, 0);
    std::thread t([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    httplib::Client client("127.0.0.1", port);
    const auto ok = client.Post("/score", request_json(f.users->at(2)), "application/json");
    ASSERT_TRUE(ok);
    EXPECT_EQ(ok->status, 200);
    EXPECT_EQ(nlohmann::json::parse(ok->body), score_body(f.model, &*f.cache, request_json(f.users->at(2))));
    const auto bad = client.Post("/score", "{broken", "application/json");
    ASSERT_TRUE(bad);
    EXPECT_EQ(bad->status, 400);
    EXPECT_TRUE(nlohmann::json::parse(bad->body).contains("error"));
    const auto again = client.Post("/score", request_json(f.users->at(3)), "application/json");
    ASSERT_TRUE(again);
    EXPECT_EQ(again->status, 200);
    server.stop();
    t.join();
}

TEST(Precompute, FirstOccurrenceOfUserWins) {
    Fixture f;
    auto a = f.users->at(0), b = f.users->at(1);
    b.user_id = a.user_id;
    VectorSource src({a, b});
    const auto c = CacheFile::from_bytes(build_cache(f.model, src));
    ASSERT_EQ(c.size(), 1u);
    EXPECT_EQ(*c.lookup(a.user_id), compute_interest(f.model, a.user_id, a.behaviors));
}

TEST(Precompute, UnwritableTargetLeavesNothing) {
    Fixture f;
    EXPECT_THROW(precompute(f.model, *f.users, "/nonexistent-dir/c.bin"), StoreError);
    EXPECT_FALSE(std::filesystem::exists("/nonexistent-dir/c.bin.tmp"));
}

}  // namespace
}  // namespace dmqn
