#pragma once

// Untrusted relay: an append-only ciphertext log with cursor polling,
// 14-day retention, a 1,000-message recipient cap per publish, and
// anonymous publish authorization via proof-of-work (or an optional
// pre-shared token for attested publishers). Message blobs are opaque;
// nothing about a submitter is ever recorded.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "wetrace/bytes.hpp"
#include "wetrace/crypto.hpp"

namespace wetrace {

inline constexpr size_t kRecipientCap = 1000;

inline int leading_zero_bits(std::span<const uint8_t> digest) {
    int bits = 0;
    for (const uint8_t byte : digest) {
        if (byte == 0) {
            bits += 8;
            continue;
        }
        for (int b = 7; b >= 0 && !(byte >> b & 1); --b) {
            ++bits;
        }
        break;
    }
    return bits;
}

// Order-independent digest of a batch: SHA-256 over the sorted,
// length-prefixed message blobs.
inline std::array<uint8_t, 32> batch_digest(std::span<const Bytes> messages) {
    std::vector<const Bytes*> sorted;
    sorted.reserve(messages.size());
    for (const auto& m : messages) {
        sorted.push_back(&m);
    }
    std::sort(sorted.begin(), sorted.end(),
              [](const Bytes* a, const Bytes* b) { return *a < *b; });
    Bytes input;
    for (const Bytes* m : sorted) {
        put_u32_le(input, static_cast<uint32_t>(m->size()));
        input.insert(input.end(), m->begin(), m->end());
    }
    return sha256(input);
}

inline std::array<uint8_t, 32> pow_hash(const std::array<uint8_t, 32>& digest,
                                        uint64_t nonce) {
    Bytes input(digest.begin(), digest.end());
    put_u64_le(input, nonce);
    return sha256(input);
}

inline bool pow_valid(const std::array<uint8_t, 32>& digest, uint64_t nonce,
                      int difficulty) {
    return leading_zero_bits(pow_hash(digest, nonce)) >= difficulty;
}

// Scan nonces from zero; expected work 2^difficulty hash evaluations.
inline uint64_t solve_pow(const std::array<uint8_t, 32>& digest,
                          int difficulty, uint64_t start_nonce = 0) {
    if (difficulty < 0 || difficulty > 32) {
        throw std::invalid_argument("difficulty must be within 0..32 bits");
    }
    for (uint64_t nonce = start_nonce;; ++nonce) {
        if (pow_valid(digest, nonce, difficulty)) {
            return nonce;
        }
    }
}

struct PublishRequest {
    std::vector<Bytes> messages;
    uint64_t pow_nonce = 0;
    std::optional<std::string> token;  // attested-publisher bypass
};

struct StoredMessage {
    uint64_t cursor = 0;  // strictly increasing in arrival order
    int64_t received_at = 0;
    Bytes blob;  // opaque; never parsed beyond length checks
};

struct PollPage {
    uint64_t cursor = 0;
    std::vector<Bytes> messages;
};

class BackendStore {
public:
    struct Options {
        int64_t retention = 14 * 86400;
        int difficulty = 20;  // leading zero bits
        std::optional<std::string> token;
    };

    BackendStore() : BackendStore(Options{}) {}
    explicit BackendStore(Options options) : options_(options) {}

    const Options& options() const { return options_; }

    // Appends the whole batch under a fresh cursor range, or throws with
    // one of the protocol error strings. Nothing about the submitter is
    // retained.
    size_t publish(const PublishRequest& request, int64_t now) {
        if (request.messages.empty()) {
            throw std::runtime_error("empty batch");
        }
        if (request.messages.size() > kRecipientCap) {
            throw std::runtime_error("recipient cap exceeded");
        }
        const auto digest = batch_digest(request.messages);
        const bool token_ok =
            options_.token && request.token && *request.token == *options_.token;
        if (!token_ok &&
            !pow_valid(digest, request.pow_nonce, options_.difficulty)) {
            throw std::runtime_error("invalid proof of work");
        }

        std::unique_lock lock(mutex_);
        const std::string digest_hex = to_hex(digest);
        if (seen_digests_.contains(digest_hex)) {
            throw std::runtime_error("duplicate batch");
        }
        seen_digests_.emplace(digest_hex, now);
        for (const auto& blob : request.messages) {
            log_.push_back(StoredMessage{next_cursor_++, now, blob});
        }
        return request.messages.size();
    }

    // All retained messages with sequence > cursor, in order, plus the
    // highest sequence returned (or the input cursor when caught up).
    PollPage poll(uint64_t cursor) const {
        std::shared_lock lock(mutex_);
        PollPage page;
        page.cursor = cursor;
        auto it = std::upper_bound(
            log_.begin(), log_.end(), cursor,
            [](uint64_t c, const StoredMessage& m) { return c < m.cursor; });
        for (; it != log_.end(); ++it) {
            page.messages.push_back(it->blob);
            page.cursor = it->cursor;
        }
        return page;
    }

    // Removes exactly the messages received before now - retention;
    // surviving cursors are untouched.
    size_t purge(int64_t now) {
        std::unique_lock lock(mutex_);
        const int64_t floor_ts = now - options_.retention;
        size_t removed = 0;
        while (!log_.empty() && log_.front().received_at < floor_ts) {
            log_.pop_front();
            ++removed;
        }
        std::erase_if(seen_digests_, [&](const auto& entry) {
            return entry.second < floor_ts;
        });
        return removed;
    }

    size_t size() const {
        std::shared_lock lock(mutex_);
        return log_.size();
    }

    // Every persisted byte, for privacy taint scans.
    Bytes persisted_bytes() const {
        std::shared_lock lock(mutex_);
        Bytes out;
        for (const auto& m : log_) {
            out.insert(out.end(), m.blob.begin(), m.blob.end());
        }
        return out;
    }

private:
    Options options_;
    mutable std::shared_mutex mutex_;
    std::deque<StoredMessage> log_;
    std::map<std::string, int64_t> seen_digests_;
    uint64_t next_cursor_ = 1;
};

}  // namespace wetrace
