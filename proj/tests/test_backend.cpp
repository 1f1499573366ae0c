#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <atomic>
#include <thread>

#include "wetrace/backend.hpp"
#include "wetrace/rng.hpp"

using namespace wetrace;

namespace {

Bytes blob(std::initializer_list<uint8_t> bytes) { return Bytes(bytes); }

PublishRequest solved_request(std::vector<Bytes> messages, int difficulty) {
    PublishRequest req;
    req.messages = std::move(messages);
    req.pow_nonce = solve_pow(batch_digest(req.messages), difficulty);
    return req;
}

}  // namespace

TEST_CASE("leading zero bits", "[backend]") {
    std::array<uint8_t, 32> digest{};
    CHECK(leading_zero_bits(digest) == 256);
    digest[0] = 0x80;
    CHECK(leading_zero_bits(digest) == 0);
    digest[0] = 0x01;
    CHECK(leading_zero_bits(digest) == 7);
    digest[0] = 0x00;
    digest[1] = 0x10;
    CHECK(leading_zero_bits(digest) == 11);
}

TEST_CASE("proof of work solve/verify", "[backend]") {
    const auto digest = sha256(blob({1, 2, 3}));

    SECTION("difficulty zero accepts the first nonce") {
        CHECK(solve_pow(digest, 0) == 0);
        CHECK(pow_valid(digest, 0, 0));
    }

    SECTION("difficulty eight round-trips through the verifier") {
        const uint64_t nonce = solve_pow(digest, 8);
        CHECK(pow_valid(digest, nonce, 8));
    }

    SECTION("difficulty twelve costs about 2^12 attempts") {
        SeededRandom rng(1);
        std::vector<uint64_t> attempts;
        for (int trial = 0; trial < 100; ++trial) {
            std::array<uint8_t, 32> d;
            rng.fill(d.data(), d.size());
            attempts.push_back(solve_pow(d, 12) + 1);  // nonces scanned
        }
        std::sort(attempts.begin(), attempts.end());
        const uint64_t median = attempts[attempts.size() / 2];
        INFO("median attempts = " << median);
        CHECK(median >= 4096 / 4);
        CHECK(median <= 4096 * 4);
    }

    SECTION("out-of-range difficulty is rejected") {
        CHECK_THROWS_AS(solve_pow(digest, 33), std::invalid_argument);
    }
}

TEST_CASE("batch digest is order independent", "[backend]") {
    const std::vector<Bytes> forward = {blob({1}), blob({2, 2}), blob({3})};
    const std::vector<Bytes> backward = {blob({3}), blob({2, 2}), blob({1})};
    CHECK(batch_digest(forward) == batch_digest(backward));
    const std::vector<Bytes> different = {blob({1}), blob({2, 2})};
    CHECK(batch_digest(forward) != batch_digest(different));
}

TEST_CASE("publish happy path and poll replay", "[backend]") {
    BackendStore store({.retention = 14 * 86400, .difficulty = 8});
    const auto req =
        solved_request({blob({1}), blob({2}), blob({3})}, 8);
    CHECK(store.publish(req, 1000) == 3);

    const auto page = store.poll(0);
    REQUIRE(page.messages.size() == 3);
    CHECK(page.messages[0] == blob({1}));
    CHECK(page.messages[2] == blob({3}));
    CHECK(page.cursor == 3);

    // Caught-up poll: empty, cursor unchanged.
    const auto empty = store.poll(page.cursor);
    CHECK(empty.messages.empty());
    CHECK(empty.cursor == page.cursor);

    // Polls are read-only: identical polls return identical results.
    const auto again = store.poll(0);
    CHECK(again.messages == page.messages);
}

TEST_CASE("publish rejections", "[backend]") {
    BackendStore store({.retention = 14 * 86400, .difficulty = 8});

    SECTION("recipient cap") {
        PublishRequest req;
        for (int i = 0; i < 1001; ++i) {
            req.messages.push_back(blob({uint8_t(i), uint8_t(i >> 8)}));
        }
        // Cap precedes proof-of-work: a bogus nonce still reports the cap.
        req.pow_nonce = 0xdeadbeef;
        CHECK_THROWS_WITH(store.publish(req, 0), "recipient cap exceeded");
    }

    SECTION("invalid proof of work") {
        PublishRequest req;
        req.messages = {blob({7})};
        req.pow_nonce = solve_pow(batch_digest(req.messages), 8) + 1;
        if (pow_valid(batch_digest(req.messages), req.pow_nonce, 8)) {
            req.pow_nonce += 1;  // vanishingly unlikely double hit
        }
        CHECK_THROWS_WITH(store.publish(req, 0), "invalid proof of work");
    }

    SECTION("duplicate batch") {
        const auto req = solved_request({blob({9, 9})}, 8);
        CHECK(store.publish(req, 0) == 1);
        CHECK_THROWS_WITH(store.publish(req, 1), "duplicate batch");
        // Same content reordered is still the same batch.
        auto reordered = solved_request({blob({8}), blob({6})}, 8);
        CHECK(store.publish(reordered, 2) == 2);
        std::swap(reordered.messages[0], reordered.messages[1]);
        CHECK_THROWS_WITH(store.publish(reordered, 3), "duplicate batch");
    }

    SECTION("empty batch") {
        PublishRequest req;
        CHECK_THROWS_WITH(store.publish(req, 0), "empty batch");
    }
}

TEST_CASE("token mode bypasses proof of work", "[backend]") {
    BackendStore store(
        {.retention = 14 * 86400, .difficulty = 24, .token = "hospital-7"});

    PublishRequest req;
    req.messages = {blob({1, 2, 3})};
    req.token = "hospital-7";
    CHECK(store.publish(req, 0) == 1);

    PublishRequest wrong;
    wrong.messages = {blob({4, 5, 6})};
    wrong.token = "wrong";
    CHECK_THROWS_WITH(store.publish(wrong, 0), "invalid proof of work");
}

TEST_CASE("purge respects retention and keeps cursors stable", "[backend]") {
    BackendStore store({.retention = 14 * 86400, .difficulty = 0});
    const int64_t day = 86400;
    store.publish(solved_request({blob({1})}, 0), 0);
    store.publish(solved_request({blob({2})}, 0), 0);
    store.publish(solved_request({blob({3})}, 0), 5 * day);

    SECTION("fresh messages survive") {
        CHECK(store.purge(day) == 0);
        CHECK(store.size() == 3);
    }

    SECTION("old messages are removed exactly once") {
        // First two messages are now 15 days old, third is 10 days old.
        CHECK(store.purge(15 * day) == 2);
        CHECK(store.purge(15 * day) == 0);
        const auto page = store.poll(0);
        REQUIRE(page.messages.size() == 1);
        CHECK(page.messages[0] == blob({3}));
        CHECK(page.cursor == 3);  // survivor keeps its original cursor
    }
}

TEST_CASE("store is safe and linearizable under concurrent use", "[backend]") {
    BackendStore store({.retention = 14 * 86400, .difficulty = 0});
    constexpr int kThreads = 8;
    constexpr int kPerThread = 50;

    std::atomic<bool> go{false};
    std::atomic<uint64_t> rejected{0};
    std::vector<std::thread> workers;
    for (int t = 0; t < kThreads; ++t) {
        workers.emplace_back([&, t] {
            while (!go.load()) {
            }
            for (int i = 0; i < kPerThread; ++i) {
                PublishRequest req;
                req.messages = {
                    blob({uint8_t(t), uint8_t(i), uint8_t(i >> 8)})};
                req.pow_nonce = solve_pow(batch_digest(req.messages), 0);
                try {
                    store.publish(req, 100);
                } catch (const std::runtime_error&) {
                    rejected.fetch_add(1);
                }
            }
        });
    }
    std::thread poller([&] {
        while (!go.load()) {
        }
        for (int i = 0; i < 200; ++i) {
            const auto page = store.poll(0);
            CHECK(page.messages.size() <= kThreads * kPerThread);
        }
    });
    go.store(true);
    for (auto& w : workers) {
        w.join();
    }
    poller.join();

    CHECK(rejected.load() == 0);
    CHECK(store.size() == kThreads * kPerThread);
    const auto page = store.poll(0);
    CHECK(page.messages.size() == kThreads * kPerThread);
    CHECK(page.cursor == kThreads * kPerThread);
    std::set<Bytes> distinct(page.messages.begin(), page.messages.end());
    CHECK(distinct.size() == kThreads * kPerThread);
}

TEST_CASE("persisted bytes are exactly the published blobs", "[backend]") {
    BackendStore store({.retention = 14 * 86400, .difficulty = 0});
    store.publish(solved_request({blob({0xaa, 0xbb}), blob({0xcc})}, 0), 0);
    const Bytes bytes = store.persisted_bytes();
    CHECK(bytes == Bytes{0xaa, 0xbb, 0xcc});
}
