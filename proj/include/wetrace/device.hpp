#pragma once

// Per-device protocol state machine: advertise the current window key as
// two BLE-sized fragments, reassemble peer fragments into sightings, turn
// sustained close-range sightings into encounter records, build the
// one-shot infection report, and poll/decrypt relayed notifications.
//
// Contact data never leaves this module in the clear: build_report emits
// ciphertexts and hash-prefix tags only, and the state file is the single
// place the master seed is ever serialized.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "wetrace/bytes.hpp"
#include "wetrace/crypto.hpp"
#include "wetrace/rng.hpp"
#include "wetrace/wire.hpp"

namespace wetrace {

struct GeoPoint {
    double latitude_deg = 0.0;
    double longitude_deg = 0.0;
};

// Fixed-point degrees x 10^4, roughly 11 m of resolution.
inline int32_t quantize_coordinate(double degrees) {
    return static_cast<int32_t>(std::llround(degrees * 1e4));
}

struct DeviceConfig {
    int64_t window_duration = 900;          // seconds per key rotation
    int64_t contact_horizon = 14 * 86400;   // 14 days
    double rssi_threshold_dbm = -61.0;      // ~2 m under the default radio
    int64_t min_contact_duration = 900;     // 15 min
    int64_t advert_interval = 20;
    int prefix_bits = 8;
    int max_report_recipients = 1000;

    void validate() const {
        if (window_duration <= 0) {
            throw std::invalid_argument("config.window_duration must be positive");
        }
        if (contact_horizon <= 0) {
            throw std::invalid_argument("config.contact_horizon must be positive");
        }
        if (min_contact_duration <= 0) {
            throw std::invalid_argument("config.min_contact_duration must be positive");
        }
        if (advert_interval <= 0) {
            throw std::invalid_argument("config.advert_interval must be positive");
        }
        if (min_contact_duration < 2 * advert_interval) {
            throw std::invalid_argument(
                "config.min_contact_duration must cover at least two advertisements");
        }
        if (prefix_bits < 0 || prefix_bits > 32) {
            throw std::invalid_argument("config.prefix_bits must be within 0..32");
        }
        if (max_report_recipients < 1) {
            throw std::invalid_argument("config.max_report_recipients must be positive");
        }
    }

    bool operator==(const DeviceConfig&) const = default;
};

// Half of a 32-byte public key, sized for a legacy BLE advertising payload:
// hint (2) + index (1) + bytes (16) = 19 bytes.
struct AdvertFragment {
    uint16_t window_epoch_hint = 0;  // low 16 bits of the window index
    uint8_t fragment_index = 0;      // 0 or 1
    std::array<uint8_t, 16> fragment_bytes{};
    double rssi_dbm = 0.0;  // set by the radio, not the sender

    static constexpr size_t kWireBytes = 19;

    Bytes to_bytes() const {
        Bytes out;
        put_u16_le(out, window_epoch_hint);
        out.push_back(fragment_index);
        out.insert(out.end(), fragment_bytes.begin(), fragment_bytes.end());
        return out;
    }

    static std::optional<AdvertFragment> from_bytes(
        std::span<const uint8_t> raw) {
        if (raw.size() != kWireBytes || raw[2] > 1) {
            return std::nullopt;
        }
        AdvertFragment f;
        f.window_epoch_hint = get_u16_le(raw);
        f.fragment_index = raw[2];
        std::copy(raw.begin() + 3, raw.end(), f.fragment_bytes.begin());
        return f;
    }
};

inline std::array<AdvertFragment, 2> current_advert_fragments(
    const DeviceConfig& config, const MasterSeed& seed, int64_t now) {
    const uint64_t window = window_index_for(now, config.window_duration);
    const WindowKeyPair kp = derive_window_keypair(seed, window);

    std::array<AdvertFragment, 2> fragments;
    for (int i = 0; i < 2; ++i) {
        fragments[i].window_epoch_hint = static_cast<uint16_t>(window);
        fragments[i].fragment_index = static_cast<uint8_t>(i);
        std::copy(kp.public_key.begin() + 16 * i,
                  kp.public_key.begin() + 16 * (i + 1),
                  fragments[i].fragment_bytes.begin());
    }
    return fragments;
}

inline PublicKey reassemble_fragments(const AdvertFragment& frag0,
                                      const AdvertFragment& frag1) {
    if (frag0.fragment_index != 0 || frag1.fragment_index != 1) {
        throw std::invalid_argument("fragments must be ordered by index");
    }
    PublicKey key{};
    std::copy(frag0.fragment_bytes.begin(), frag0.fragment_bytes.end(),
              key.begin());
    std::copy(frag1.fragment_bytes.begin(), frag1.fragment_bytes.end(),
              key.begin() + 16);
    return key;
}

// Intermediate state between a reassembled sighting and an EncounterRecord.
struct SightingAccumulator {
    PublicKey peer_public_key{};
    int64_t first_seen = 0;
    int64_t last_seen = 0;
    int packet_count = 0;
    bool all_rssi_within_threshold = true;
    GeoPoint first_location;
};

struct EncounterRecord {
    PublicKey peer_public_key{};
    int64_t timestamp = 0;  // contact start
    int32_t latitude_q = 0;
    int32_t longitude_q = 0;

    bool operator==(const EncounterRecord&) const = default;

    // Timestamp + latitude + longitude: exactly 12 bytes.
    Bytes serialize_time_location() const {
        Bytes out;
        put_u32_le(out, static_cast<uint32_t>(timestamp));
        put_i32_le(out, latitude_q);
        put_i32_le(out, longitude_q);
        return out;
    }
};

struct InfectionStatus {
    InfectionState state = InfectionState::not_infected;
    bool report_spent = false;
};

struct PollOutcome {
    std::vector<NotificationPayload> decoded;
    uint64_t attempts = 0;
    uint64_t attempts_unfiltered = 0;
    size_t keys_derived = 0;
    uint64_t skipped_malformed = 0;
};

class Device {
public:
    Device(DeviceConfig config, MasterSeed seed,
           RandomSource& rng = system_random(),
           const Cipher& cipher = sodium_cipher())
        : config_(config), seed_(seed), rng_(&rng), cipher_(&cipher) {
        config_.validate();
    }

    const DeviceConfig& config() const { return config_; }
    const MasterSeed& seed() const { return seed_; }
    const InfectionStatus& status() const { return status_; }
    const std::vector<EncounterRecord>& encounters() const {
        return encounters_;
    }
    uint64_t malformed_fragment_count() const { return malformed_fragments_; }
    uint64_t poll_cursor() const { return poll_cursor_; }
    void set_poll_cursor(uint64_t cursor) { poll_cursor_ = cursor; }

    // The open sighting for a peer key, if any (test observability).
    std::optional<SightingAccumulator> sighting(const PublicKey& peer) const {
        const auto it = open_.find(peer);
        if (it == open_.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    // The two fragments of the current window's public key. Key pairs are
    // cached per window; two calls within one window return identical data.
    std::array<AdvertFragment, 2> advert_fragments(int64_t now) {
        return current_advert_fragments(config_, seed_, now);
    }

    WindowKeyPair current_keypair(int64_t now) const {
        const uint64_t window = window_index_for(now, config_.window_duration);
        if (!cached_key_ || cached_key_->window_index != window) {
            cached_key_ = derive_window_keypair(seed_, window);
        }
        return *cached_key_;
    }

    // Wire-level entry: wrong-length payloads are dropped and counted.
    void observe_raw_fragment(std::span<const uint8_t> raw, int64_t now,
                              double rssi_dbm, GeoPoint own_location) {
        auto frag = AdvertFragment::from_bytes(raw);
        if (!frag) {
            ++malformed_fragments_;
            return;
        }
        observe_fragment(*frag, now, rssi_dbm, own_location);
    }

    void observe_fragment(const AdvertFragment& fragment, int64_t now,
                          double rssi_dbm, GeoPoint own_location) {
        expire_pending(now);

        // Pair with the most recent unmatched complementary fragment
        // carrying the same window hint.
        const uint8_t wanted = 1 - fragment.fragment_index;
        for (auto it = pending_.rbegin(); it != pending_.rend(); ++it) {
            if (it->fragment.window_epoch_hint != fragment.window_epoch_hint ||
                it->fragment.fragment_index != wanted) {
                continue;
            }
            const AdvertFragment& f0 =
                fragment.fragment_index == 0 ? fragment : it->fragment;
            const AdvertFragment& f1 =
                fragment.fragment_index == 0 ? it->fragment : fragment;
            const PublicKey peer = reassemble_fragments(f0, f1);
            const double sample_rssi = std::min(rssi_dbm, it->rssi_dbm);
            pending_.erase(std::next(it).base());
            record_sample(peer, now, sample_rssi, own_location);
            return;
        }
        pending_.push_back(Pending{fragment, rssi_dbm, now});
    }

    // Promote qualifying sightings to encounter records: at least
    // min_contact_duration between first and last sample, two packets or
    // more, and every sample inside the RSSI threshold. One record per
    // (peer key, window).
    std::vector<EncounterRecord> finalize_encounters(int64_t now) {
        std::vector<EncounterRecord> fresh;
        for (const auto& accum : closed_) {
            if (auto rec = qualify(accum)) {
                fresh.push_back(*rec);
            }
        }
        closed_.clear();

        const int64_t stale_gap = 6 * config_.advert_interval;
        for (auto it = open_.begin(); it != open_.end();) {
            if (auto rec = qualify(it->second)) {
                fresh.push_back(*rec);
            }
            if (now - it->second.last_seen > stale_gap) {
                it = open_.erase(it);
            } else {
                ++it;
            }
        }
        return fresh;
    }

    // Drop encounter records older than the contact horizon.
    void prune(int64_t now) {
        const int64_t floor_ts = now - config_.contact_horizon;
        std::erase_if(encounters_, [&](const EncounterRecord& rec) {
            return rec.timestamp < floor_ts;
        });
        std::erase_if(recorded_, [&](const auto& entry) {
            const int64_t window_end =
                static_cast<int64_t>(entry.second + 1) * config_.window_duration;
            return window_end < floor_ts;
        });
    }

    // One message per distinct stored peer key within the horizon, shuffled
    // so the relay cannot reconstruct encounter chronology. One-shot.
    std::vector<Bytes> build_report(DisclosureLevel level, int64_t now) {
        if (status_.report_spent) {
            throw std::runtime_error("status already reported");
        }
        prune(now);

        std::map<PublicKey, const EncounterRecord*> recipients;
        for (const auto& rec : encounters_) {
            recipients.try_emplace(rec.peer_public_key, &rec);
        }
        if (recipients.size() >
            static_cast<size_t>(config_.max_report_recipients)) {
            throw std::runtime_error("report exceeds recipient cap");
        }

        std::vector<Bytes> messages;
        messages.reserve(recipients.size());
        for (const auto& [peer, rec] : recipients) {
            NotificationPayload payload;
            payload.status = InfectionState::infected;
            if (level == DisclosureLevel::with_timestamp ||
                level == DisclosureLevel::with_timestamp_and_geolocation) {
                payload.timestamp = static_cast<uint32_t>(rec->timestamp);
            }
            if (level == DisclosureLevel::with_geolocation ||
                level == DisclosureLevel::with_timestamp_and_geolocation) {
                payload.latitude_q = rec->latitude_q;
                payload.longitude_q = rec->longitude_q;
            }
            messages.push_back(
                seal_notification(peer, payload, config_.prefix_bits, *rng_,
                                  *cipher_)
                    .to_bytes());
        }
        rng_->shuffle(messages);

        status_.state = InfectionState::infected;
        status_.report_spent = true;
        return messages;
    }

    // Derive every window key in the horizon, skip messages whose prefix
    // tag cannot match, attempt the rest. Undecryptable messages are
    // silently not-for-me.
    PollOutcome poll_and_decrypt(std::span<const Bytes> messages,
                                 int64_t now) {
        const auto keys = derive_horizon_keypairs(
            seed_, now, config_.window_duration, config_.contact_horizon);
        const DecodeResult raw = filter_and_decrypt(messages, keys, *cipher_);

        PollOutcome outcome;
        outcome.attempts = raw.attempts;
        outcome.attempts_unfiltered = raw.attempts_unfiltered;
        outcome.keys_derived = keys.size();
        outcome.skipped_malformed = raw.skipped_malformed;
        for (const auto& [index, payload] : raw.decoded) {
            outcome.decoded.push_back(payload);
            if (payload.status == InfectionState::infected &&
                status_.state == InfectionState::not_infected) {
                status_.state = InfectionState::close_contact;
            }
        }
        return outcome;
    }

    // --- persistence ------------------------------------------------------

    std::string save_state() const {
        nlohmann::json j;
        j["version"] = 1;
        j["master_seed"] = to_hex(seed_.bytes);
        j["status"]["state"] = static_cast<int>(status_.state);
        j["status"]["report_spent"] = status_.report_spent;
        j["config"]["window_duration"] = config_.window_duration;
        j["config"]["contact_horizon"] = config_.contact_horizon;
        j["config"]["rssi_threshold_dbm"] = config_.rssi_threshold_dbm;
        j["config"]["min_contact_duration"] = config_.min_contact_duration;
        j["config"]["advert_interval"] = config_.advert_interval;
        j["config"]["prefix_bits"] = config_.prefix_bits;
        j["config"]["max_report_recipients"] = config_.max_report_recipients;
        j["poll_cursor"] = poll_cursor_;
        auto& encounters = j["encounters"] = nlohmann::json::array();
        for (const auto& rec : encounters_) {
            encounters.push_back({{"peer", to_hex(rec.peer_public_key)},
                                  {"timestamp", rec.timestamp},
                                  {"latitude_q", rec.latitude_q},
                                  {"longitude_q", rec.longitude_q}});
        }
        auto& recorded = j["recorded"] = nlohmann::json::array();
        for (const auto& [key, window] : recorded_) {
            recorded.push_back({{"peer", to_hex(key)}, {"window", window}});
        }
        return j.dump(2) + "\n";
    }

    static Device load_state(const std::string& text,
                             RandomSource& rng = system_random(),
                             const Cipher& cipher = sodium_cipher()) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(text);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error(std::string("invalid device state: ") +
                                     e.what());
        }
        if (j.value("version", 0) != 1) {
            throw std::runtime_error("invalid device state: unknown version");
        }
        DeviceConfig cfg;
        const auto& jc = j.at("config");
        cfg.window_duration = jc.at("window_duration").get<int64_t>();
        cfg.contact_horizon = jc.at("contact_horizon").get<int64_t>();
        cfg.rssi_threshold_dbm = jc.at("rssi_threshold_dbm").get<double>();
        cfg.min_contact_duration = jc.at("min_contact_duration").get<int64_t>();
        cfg.advert_interval = jc.at("advert_interval").get<int64_t>();
        cfg.prefix_bits = jc.at("prefix_bits").get<int>();
        cfg.max_report_recipients = jc.at("max_report_recipients").get<int>();

        Device device(cfg,
                      MasterSeed::from_hex(j.at("master_seed").get<std::string>()),
                      rng, cipher);
        device.status_.state =
            static_cast<InfectionState>(j.at("status").at("state").get<int>());
        device.status_.report_spent =
            j.at("status").at("report_spent").get<bool>();
        device.poll_cursor_ = j.value("poll_cursor", uint64_t{0});
        for (const auto& je : j.at("encounters")) {
            EncounterRecord rec;
            rec.peer_public_key =
                array_from_hex<32>(je.at("peer").get<std::string>());
            rec.timestamp = je.at("timestamp").get<int64_t>();
            rec.latitude_q = je.at("latitude_q").get<int32_t>();
            rec.longitude_q = je.at("longitude_q").get<int32_t>();
            device.encounters_.push_back(rec);
        }
        for (const auto& jr : j.at("recorded")) {
            device.recorded_.emplace(
                array_from_hex<32>(jr.at("peer").get<std::string>()),
                jr.at("window").get<uint64_t>());
        }
        return device;
    }

private:
    struct Pending {
        AdvertFragment fragment;
        double rssi_dbm;
        int64_t received_at;
    };

    void expire_pending(int64_t now) {
        const int64_t horizon = now - 3 * config_.advert_interval;
        std::erase_if(pending_, [&](const Pending& p) {
            return p.received_at < horizon;
        });
    }

    // A sample inside the threshold opens or extends the peer's sighting.
    // A sample outside it ends the open sighting span: the span is parked
    // for finalize_encounters to judge on its own, so a contact that ends
    // by walking away is not retroactively poisoned.
    void record_sample(const PublicKey& peer, int64_t now, double rssi_dbm,
                       GeoPoint own_location) {
        const bool in_range = rssi_dbm >= config_.rssi_threshold_dbm;
        auto it = open_.find(peer);
        if (in_range) {
            if (it == open_.end()) {
                SightingAccumulator accum;
                accum.peer_public_key = peer;
                accum.first_seen = now;
                accum.last_seen = now;
                accum.packet_count = 1;
                accum.first_location = own_location;
                open_.emplace(peer, accum);
            } else {
                it->second.last_seen = std::max(it->second.last_seen, now);
                ++it->second.packet_count;
            }
        } else if (it != open_.end()) {
            closed_.push_back(it->second);
            open_.erase(it);
        }
    }

    std::optional<EncounterRecord> qualify(const SightingAccumulator& accum) {
        if (accum.last_seen - accum.first_seen < config_.min_contact_duration ||
            accum.packet_count < 2 || !accum.all_rssi_within_threshold) {
            return std::nullopt;
        }
        const uint64_t window =
            window_index_for(accum.first_seen, config_.window_duration);
        if (!recorded_.emplace(accum.peer_public_key, window).second) {
            return std::nullopt;  // already stored for this (key, window)
        }
        EncounterRecord rec;
        rec.peer_public_key = accum.peer_public_key;
        rec.timestamp = accum.first_seen;
        rec.latitude_q = quantize_coordinate(accum.first_location.latitude_deg);
        rec.longitude_q =
            quantize_coordinate(accum.first_location.longitude_deg);
        encounters_.push_back(rec);
        return rec;
    }

    DeviceConfig config_;
    MasterSeed seed_;
    RandomSource* rng_;
    const Cipher* cipher_;

    InfectionStatus status_;
    std::vector<Pending> pending_;
    std::map<PublicKey, SightingAccumulator> open_;
    std::vector<SightingAccumulator> closed_;
    std::set<std::pair<PublicKey, uint64_t>> recorded_;
    std::vector<EncounterRecord> encounters_;
    uint64_t malformed_fragments_ = 0;
    uint64_t poll_cursor_ = 0;
    mutable std::optional<WindowKeyPair> cached_key_;
};

}  // namespace wetrace
