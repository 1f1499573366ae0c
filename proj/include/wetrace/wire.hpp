#pragma once

// Notification payloads and the relay wire format.
//
// Payload: 1 flags byte (status code, has_timestamp, has_geolocation)
// followed by optional little-endian fields, so serialized length is one
// of 1 / 5 / 9 / 13 bytes depending on the disclosure level.
//
// Message on the wire: prefix_bits (1 byte) || tag bytes || ciphertext.

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "wetrace/bytes.hpp"
#include "wetrace/crypto.hpp"

namespace wetrace {

enum class InfectionState : uint8_t {
    not_infected = 0,
    close_contact = 1,
    infected = 2,
};

// Reporter's opt-in choice of payload contents.
enum class DisclosureLevel : uint8_t {
    status_only = 1,
    with_timestamp = 2,
    with_geolocation = 3,
    with_timestamp_and_geolocation = 4,
};

inline DisclosureLevel disclosure_level_from_int(int level) {
    if (level < 1 || level > 4) {
        throw std::invalid_argument("disclosure level must be within 1..4");
    }
    return static_cast<DisclosureLevel>(level);
}

struct NotificationPayload {
    InfectionState status = InfectionState::not_infected;
    std::optional<uint32_t> timestamp;
    std::optional<int32_t> latitude_q;
    std::optional<int32_t> longitude_q;

    bool operator==(const NotificationPayload&) const = default;

    Bytes serialize() const {
        uint8_t flags = static_cast<uint8_t>(status) & 0x03;
        if (timestamp) {
            flags |= 0x04;
        }
        if (latitude_q) {
            flags |= 0x08;
        }
        Bytes out{flags};
        if (timestamp) {
            put_u32_le(out, *timestamp);
        }
        if (latitude_q) {
            put_i32_le(out, *latitude_q);
            put_i32_le(out, *longitude_q);
        }
        return out;
    }

    static std::optional<NotificationPayload> parse(
        std::span<const uint8_t> raw) {
        if (raw.empty()) {
            return std::nullopt;
        }
        const uint8_t flags = raw[0];
        if ((flags & 0x03) > 2 || (flags & 0xf0) != 0) {
            return std::nullopt;
        }
        NotificationPayload p;
        p.status = static_cast<InfectionState>(flags & 0x03);
        size_t want = 1;
        if (flags & 0x04) {
            want += 4;
        }
        if (flags & 0x08) {
            want += 8;
        }
        if (raw.size() != want) {
            return std::nullopt;
        }
        size_t at = 1;
        if (flags & 0x04) {
            p.timestamp = get_u32_le(raw.subspan(at, 4));
            at += 4;
        }
        if (flags & 0x08) {
            p.latitude_q = get_i32_le(raw.subspan(at, 4));
            p.longitude_q = get_i32_le(raw.subspan(at + 4, 4));
        }
        return p;
    }
};

// One per-recipient ciphertext plus the recipient-key hash prefix that
// lets the recipient skip messages that cannot be theirs.
struct NotificationMessage {
    PrefixTag tag;
    Ciphertext ciphertext;

    Bytes to_bytes() const {
        Bytes out{tag.n_bits};
        out.insert(out.end(), tag.bits.begin(),
                   tag.bits.begin() + tag.byte_length());
        const Bytes ct = ciphertext.to_bytes();
        out.insert(out.end(), ct.begin(), ct.end());
        return out;
    }

    static std::optional<NotificationMessage> from_bytes(
        std::span<const uint8_t> raw) {
        if (raw.empty() || raw[0] > 32) {
            return std::nullopt;
        }
        NotificationMessage msg;
        msg.tag.n_bits = raw[0];
        const size_t tag_len = msg.tag.byte_length();
        if (raw.size() < 1 + tag_len + kCiphertextOverhead) {
            return std::nullopt;
        }
        for (size_t i = 0; i < tag_len; ++i) {
            msg.tag.bits[i] = raw[1 + i];
        }
        auto ct = Ciphertext::from_bytes(raw.subspan(1 + tag_len));
        if (!ct) {
            return std::nullopt;
        }
        msg.ciphertext = std::move(*ct);
        return msg;
    }
};

inline NotificationMessage seal_notification(const PublicKey& recipient,
                                             const NotificationPayload& payload,
                                             int prefix_bits,
                                             RandomSource& rng,
                                             const Cipher& cipher) {
    NotificationMessage msg;
    msg.tag = key_prefix_tag(recipient, prefix_bits);
    msg.ciphertext = cipher.encrypt(recipient, payload.serialize(), rng);
    return msg;
}

struct DecodeResult {
    // (message index, payload) per successful decryption.
    std::vector<std::pair<size_t, NotificationPayload>> decoded;
    uint64_t attempts = 0;            // try_decrypt invocations
    uint64_t attempts_unfiltered = 0; // what a prefix_bits = 0 poll would cost
    uint64_t skipped_malformed = 0;
};

// The poll-side engine: compute each key's tag at the message's prefix
// width, attempt decryption with every tag-matching key, count attempts.
// Deliberately no short-circuit on success: the attempt count is the exact
// number of tag matches, independent of where the true recipient sits.
inline DecodeResult filter_and_decrypt(std::span<const Bytes> messages,
                                       std::span<const WindowKeyPair> keys,
                                       const Cipher& cipher) {
    DecodeResult result;

    // Tags per key, computed lazily per distinct prefix width seen.
    std::array<std::optional<std::vector<PrefixTag>>, 33> tags_by_width;
    const auto tags_for = [&](int n_bits) -> const std::vector<PrefixTag>& {
        auto& slot = tags_by_width[static_cast<size_t>(n_bits)];
        if (!slot) {
            std::vector<PrefixTag> tags;
            tags.reserve(keys.size());
            for (const auto& kp : keys) {
                tags.push_back(key_prefix_tag(kp.public_key, n_bits));
            }
            slot = std::move(tags);
        }
        return *slot;
    };

    for (size_t mi = 0; mi < messages.size(); ++mi) {
        const auto msg = NotificationMessage::from_bytes(messages[mi]);
        if (!msg) {
            ++result.skipped_malformed;
            continue;
        }
        result.attempts_unfiltered += keys.size();
        const auto& tags = tags_for(msg->tag.n_bits);
        for (size_t ki = 0; ki < keys.size(); ++ki) {
            if (tags[ki] != msg->tag) {
                continue;
            }
            ++result.attempts;
            if (auto plaintext = cipher.decrypt(keys[ki], msg->ciphertext)) {
                if (auto payload = NotificationPayload::parse(*plaintext)) {
                    result.decoded.emplace_back(mi, *payload);
                }
            }
        }
    }
    return result;
}

}  // namespace wetrace
