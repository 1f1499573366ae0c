#pragma once

// Deterministic discrete-event radio world. Devices advertise fragmented
// window keys on their intervals, the medium applies log-distance path
// loss (plus optional noise and packet loss) to every receiver, scripted
// events drive reports and polls through an in-process relay store, and a
// brute-force oracle over the raw trajectories supplies ground truth.
// Given the same scenario, run() reproduces the event log byte for byte.

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wetrace/backend.hpp"
#include "wetrace/device.hpp"
#include "wetrace/rng.hpp"
#include "wetrace/scenario.hpp"

namespace wetrace::sim {

// Log-distance path loss: rssi = tx_power - 10 * n * log10(d / 1 m), with
// optional gaussian shadowing when an RNG is supplied.
inline double rssi_at(const RadioParams& radio, double distance_m,
                      RandomSource* rng = nullptr) {
    if (distance_m <= 0.0) {
        throw std::invalid_argument("distance must be positive");
    }
    double rssi = radio.tx_power_dbm -
                  10.0 * radio.path_loss_exponent * std::log10(distance_m);
    if (rng != nullptr && radio.noise_sigma_db > 0.0) {
        rssi += rng->gaussian(0.0, radio.noise_sigma_db);
    }
    return rssi;
}

struct GroundTruthContact {
    std::string device_a;
    std::string device_b;
    int64_t start_t = 0;
    int64_t end_t = 0;  // inclusive last second below 2 m

    int64_t length() const { return end_t - start_t; }
};

inline constexpr double kContactDistanceMeters = 2.0;

// Brute-force oracle: sample pairwise distance at 1 s resolution and merge
// consecutive sub-2 m seconds into intervals. Uses only trajectories; no
// protocol code.
inline std::vector<GroundTruthContact> ground_truth_contacts(
    const Scenario& scenario) {
    std::vector<GroundTruthContact> contacts;
    const int64_t end_tick = static_cast<int64_t>(scenario.duration);
    for (size_t a = 0; a < scenario.devices.size(); ++a) {
        for (size_t b = a + 1; b < scenario.devices.size(); ++b) {
            std::optional<GroundTruthContact> open;
            for (int64_t t = 0; t <= end_tick; ++t) {
                const double d = distance(
                    scenario.devices[a].trajectory.position_at(double(t)),
                    scenario.devices[b].trajectory.position_at(double(t)));
                if (d < kContactDistanceMeters) {
                    if (!open) {
                        open = GroundTruthContact{scenario.devices[a].id,
                                                  scenario.devices[b].id, t, t};
                    } else {
                        open->end_t = t;
                    }
                } else if (open) {
                    contacts.push_back(*open);
                    open.reset();
                }
            }
            if (open) {
                contacts.push_back(*open);
            }
        }
    }
    return contacts;
}

struct DeviceMetrics {
    int64_t encounters_detected = 0;
    int64_t ground_truth_contacts = 0;
    int64_t true_positives = 0;
    int64_t false_positives = 0;
    int64_t notifications_decoded = 0;
    uint64_t decrypt_attempts_with_prefix = 0;
    uint64_t decrypt_attempts_without_prefix = 0;
};

struct MetricsReport {
    std::map<std::string, DeviceMetrics> devices;
    uint64_t backend_messages_stored = 0;
    uint64_t backend_publishes_rejected = 0;
    uint64_t snooper_keys_observed = 0;
    uint64_t snooper_plaintext_bytes_recovered = 0;

    nlohmann::json to_json() const {
        nlohmann::json j;
        for (const auto& [id, m] : devices) {
            j["devices"][id] = {
                {"encounters_detected", m.encounters_detected},
                {"ground_truth_contacts", m.ground_truth_contacts},
                {"true_positives", m.true_positives},
                {"false_positives", m.false_positives},
                {"notifications_decoded", m.notifications_decoded},
                {"decrypt_attempts_with_prefix", m.decrypt_attempts_with_prefix},
                {"decrypt_attempts_without_prefix",
                 m.decrypt_attempts_without_prefix}};
        }
        j["backend"] = {{"messages_stored", backend_messages_stored},
                        {"publishes_rejected", backend_publishes_rejected}};
        j["snooper"] = {
            {"keys_observed", snooper_keys_observed},
            {"plaintext_bytes_recovered", snooper_plaintext_bytes_recovered}};
        return j;
    }

    std::string to_table() const {
        std::ostringstream out;
        out << "device  encounters  gt_contacts  tp  fp  decoded  attempts  "
               "attempts_nofilter\n";
        for (const auto& [id, m] : devices) {
            out << id << "  " << m.encounters_detected << "  "
                << m.ground_truth_contacts << "  " << m.true_positives << "  "
                << m.false_positives << "  " << m.notifications_decoded << "  "
                << m.decrypt_attempts_with_prefix << "  "
                << m.decrypt_attempts_without_prefix << "\n";
        }
        out << "backend: stored=" << backend_messages_stored
            << " rejected=" << backend_publishes_rejected << "\n";
        out << "snooper: keys_observed=" << snooper_keys_observed
            << " plaintext_bytes_recovered="
            << snooper_plaintext_bytes_recovered << "\n";
        return out.str();
    }
};

struct SimResult {
    MetricsReport metrics;
    std::string event_log;  // JSONL: {t, actor, event, details}
    std::vector<GroundTruthContact> ground_truth;
    std::map<std::string, std::vector<EncounterRecord>> encounters;
    std::map<std::string, std::vector<NotificationPayload>> decoded;
    Bytes backend_bytes;                  // persisted relay state, verbatim
    std::vector<Bytes> snooper_frames;    // every radio frame a snooper saw
    std::set<PublicKey> snooper_keys;     // keys a snooper could reassemble
    std::vector<Bytes> taint_needles;     // secrets that must never appear
    std::map<std::string, std::string> device_states;  // agent-loadable
};

namespace detail {

struct SimActor {
    std::string id;
    std::unique_ptr<SeededRandom> rng;
    std::unique_ptr<Device> device;
    uint64_t poll_cursor = 0;
};

struct SnooperState {
    Vec2 position;
    std::vector<Bytes> frames;
    std::set<PublicKey> keys;
    std::optional<std::pair<AdvertFragment, double>> pending;

    void observe(const AdvertFragment& frag, double t) {
        frames.push_back(frag.to_bytes());
        if (pending && pending->first.window_epoch_hint == frag.window_epoch_hint &&
            pending->first.fragment_index == 1 - frag.fragment_index &&
            t - pending->second <= 60.0) {
            const AdvertFragment& f0 =
                frag.fragment_index == 0 ? frag : pending->first;
            const AdvertFragment& f1 =
                frag.fragment_index == 0 ? pending->first : frag;
            keys.insert(reassemble_fragments(f0, f1));
            pending.reset();
        } else {
            pending = {frag, t};
        }
    }
};

class EventLog {
public:
    void add(double t, const std::string& actor, const std::string& event,
             nlohmann::json details) {
        nlohmann::json line;
        line["t"] = t;
        line["actor"] = actor;
        line["event"] = event;
        line["details"] = std::move(details);
        out_ << line.dump() << "\n";
    }

    std::string str() const { return out_.str(); }

private:
    std::ostringstream out_;
};

inline GeoPoint to_geo(const Vec2& position) {
    constexpr double kMetersPerDegree = 111320.0;
    return GeoPoint{position.y / kMetersPerDegree,
                    position.x / kMetersPerDegree};
}

// Little-endian IEEE-754 bytes of every raw coordinate value; these must
// never show up in relayed or snooped bytes.
inline void append_coordinate_needles(const Scenario& scenario,
                                      std::vector<Bytes>& needles) {
    const auto push_double = [&](double v) {
        if (v == 0.0) {
            return;  // all-zero patterns occur legitimately in padding
        }
        Bytes raw(sizeof v);
        std::memcpy(raw.data(), &v, sizeof v);
        needles.push_back(std::move(raw));
    };
    for (const auto& dev : scenario.devices) {
        for (const auto& wp : dev.trajectory.points) {
            push_double(wp.x);
            push_double(wp.y);
            const GeoPoint geo = to_geo(Vec2{wp.x, wp.y});
            push_double(geo.latitude_deg);
            push_double(geo.longitude_deg);
        }
    }
}

}  // namespace detail

inline SimResult run(const Scenario& scenario) {
    scenario.validate();

    SimResult result;
    result.ground_truth = ground_truth_contacts(scenario);

    SeededRandom radio_rng(scenario.random_seed * 0x9e3779b97f4a7c15ULL + 1);
    detail::EventLog log;

    // Actors.
    std::vector<detail::SimActor> actors;
    for (size_t i = 0; i < scenario.devices.size(); ++i) {
        const auto& spec = scenario.devices[i];
        detail::SimActor actor;
        actor.id = spec.id;
        actor.rng = std::make_unique<SeededRandom>(
            scenario.random_seed ^ (0x5851f42d4c957f2dULL * (i + 1)));
        actor.device = std::make_unique<Device>(
            spec.config, scenario.seed_for(spec), *actor.rng);
        actors.push_back(std::move(actor));
    }
    std::vector<detail::SnooperState> snoopers;
    for (const auto& spec : scenario.snoopers) {
        snoopers.push_back(detail::SnooperState{.position = spec.position});
    }

    // Injector keys resolve once, up front.
    struct ResolvedBurst {
        InjectorBurst burst;
        PublicKey key{};
        size_t injector = 0;
    };
    std::vector<ResolvedBurst> bursts;
    for (size_t i = 0; i < scenario.injectors.size(); ++i) {
        for (const auto& burst : scenario.injectors[i].script) {
            ResolvedBurst rb{burst, {}, i};
            if (burst.fixed_key) {
                rb.key = *burst.fixed_key;
            } else if (burst.replay_of) {
                const auto it = std::find_if(
                    scenario.devices.begin(), scenario.devices.end(),
                    [&](const DeviceSpec& d) {
                        return d.id == burst.replay_of->first;
                    });
                rb.key = derive_window_keypair(scenario.seed_for(*it),
                                               burst.replay_of->second)
                             .public_key;
            } else {
                radio_rng.fill(rb.key.data(), rb.key.size());
            }
            bursts.push_back(std::move(rb));
        }
    }

    // In-process relay with the scenario's publish difficulty.
    BackendStore store(BackendStore::Options{
        .retention = 14 * 86400, .difficulty = scenario.backend_difficulty});

    // Event schedule: (t, kind, actor, aux), sorted; kind breaks ties so
    // radio traffic lands before finalize/scripted actions at the same t.
    enum Kind : int { kAdvert = 0, kInject = 1, kFinalize = 2, kScripted = 3 };
    struct Event {
        double t;
        int kind;
        size_t actor;
        size_t aux;
        bool operator<(const Event& other) const {
            return std::tie(t, kind, actor, aux) <
                   std::tie(other.t, other.kind, other.actor, other.aux);
        }
    };
    std::vector<Event> schedule;
    for (size_t i = 0; i < actors.size(); ++i) {
        const int64_t interval = scenario.devices[i].config.advert_interval;
        const int64_t phase = static_cast<int64_t>(i) % interval;
        for (double t = double(phase); t <= scenario.duration;
             t += double(interval)) {
            schedule.push_back(Event{t, kAdvert, i, 0});
        }
    }
    for (size_t bi = 0; bi < bursts.size(); ++bi) {
        const auto& burst = bursts[bi].burst;
        for (double t = burst.t_start;
             t <= std::min(burst.t_end, scenario.duration);
             t += burst.interval) {
            schedule.push_back(Event{t, kInject, bi, 0});
        }
    }
    constexpr double kFinalizeInterval = 60.0;
    for (double t = kFinalizeInterval; t <= scenario.duration;
         t += kFinalizeInterval) {
        schedule.push_back(Event{t, kFinalize, 0, 0});
    }
    for (size_t ei = 0; ei < scenario.events.size(); ++ei) {
        schedule.push_back(Event{scenario.events[ei].t, kScripted, ei, 0});
    }
    std::sort(schedule.begin(), schedule.end());

    // Delivers one sender's pair of fragments to every other receiver.
    const auto broadcast = [&](const std::array<AdvertFragment, 2>& fragments,
                               const Vec2& origin, double t,
                               std::optional<size_t> sender) {
        const int64_t tick = static_cast<int64_t>(t);
        for (size_t ri = 0; ri < actors.size(); ++ri) {
            if (sender && *sender == ri) {
                continue;
            }
            auto& receiver = actors[ri];
            const Vec2 rx_pos =
                scenario.devices[ri].trajectory.position_at(t);
            const double d = std::max(distance(origin, rx_pos), 0.1);
            for (const auto& frag : fragments) {
                const double rssi = rssi_at(scenario.radio, d, &radio_rng);
                const bool lost =
                    scenario.radio.packet_loss_prob > 0.0 &&
                    radio_rng.bernoulli(scenario.radio.packet_loss_prob);
                if (rssi < scenario.radio.sensitivity_dbm || lost) {
                    continue;
                }
                receiver.device->observe_fragment(frag, tick, rssi,
                                                  detail::to_geo(rx_pos));
            }
        }
        for (auto& snooper : snoopers) {
            const double d = std::max(distance(origin, snooper.position), 0.1);
            for (const auto& frag : fragments) {
                const double rssi = rssi_at(scenario.radio, d, &radio_rng);
                const bool lost =
                    scenario.radio.packet_loss_prob > 0.0 &&
                    radio_rng.bernoulli(scenario.radio.packet_loss_prob);
                if (rssi < scenario.radio.sensitivity_dbm || lost) {
                    continue;
                }
                AdvertFragment seen = frag;
                seen.rssi_dbm = rssi;
                snooper.observe(seen, t);
            }
        }
    };

    // Reconstructed report plaintexts; the privacy scan hunts for these.
    std::vector<Bytes> payload_needles;

    for (const auto& ev : schedule) {
        const int64_t tick = static_cast<int64_t>(ev.t);
        switch (ev.kind) {
            case kAdvert: {
                auto& actor = actors[ev.actor];
                const Vec2 pos =
                    scenario.devices[ev.actor].trajectory.position_at(ev.t);
                auto fragments = actor.device->advert_fragments(tick);
                broadcast(fragments, pos, ev.t, ev.actor);
                break;
            }
            case kInject: {
                const auto& rb = bursts[ev.actor];
                std::array<AdvertFragment, 2> fragments;
                const uint64_t window = window_index_for(
                    tick, scenario.default_config.window_duration);
                for (int i = 0; i < 2; ++i) {
                    fragments[i].window_epoch_hint =
                        static_cast<uint16_t>(window);
                    fragments[i].fragment_index = static_cast<uint8_t>(i);
                    std::copy(rb.key.begin() + 16 * i,
                              rb.key.begin() + 16 * (i + 1),
                              fragments[i].fragment_bytes.begin());
                }
                broadcast(fragments, rb.burst.position, ev.t, std::nullopt);
                log.add(ev.t, "injector" + std::to_string(rb.injector),
                        "inject", {{"window_hint", fragments[0].window_epoch_hint}});
                break;
            }
            case kFinalize: {
                for (auto& actor : actors) {
                    const auto fresh = actor.device->finalize_encounters(tick);
                    if (!fresh.empty()) {
                        log.add(ev.t, actor.id, "encounter",
                                {{"count", fresh.size()}});
                    }
                }
                break;
            }
            case kScripted: {
                const auto& scripted = scenario.events[ev.actor];
                auto it = std::find_if(actors.begin(), actors.end(),
                                       [&](const detail::SimActor& a) {
                                           return a.id == scripted.device;
                                       });
                auto& actor = *it;
                if (scripted.action == ScriptedAction::report) {
                    actor.device->finalize_encounters(tick);
                    try {
                        // Collect the payload plaintexts the report is about
                        // to seal; they must never reappear downstream.
                        auto messages = actor.device->build_report(
                            disclosure_level_from_int(scripted.level), tick);
                        for (const auto& rec : actor.device->encounters()) {
                            NotificationPayload p;
                            p.status = InfectionState::infected;
                            if (scripted.level == 2 || scripted.level == 4) {
                                p.timestamp =
                                    static_cast<uint32_t>(rec.timestamp);
                            }
                            if (scripted.level == 3 || scripted.level == 4) {
                                p.latitude_q = rec.latitude_q;
                                p.longitude_q = rec.longitude_q;
                            }
                            payload_needles.push_back(p.serialize());
                        }
                        if (messages.empty()) {
                            log.add(ev.t, actor.id, "report",
                                    {{"published", 0},
                                     {"note", "no contacts to notify"}});
                            break;
                        }
                        PublishRequest request;
                        request.messages = std::move(messages);
                        request.pow_nonce =
                            solve_pow(batch_digest(request.messages),
                                      scenario.backend_difficulty);
                        const size_t accepted = store.publish(request, tick);
                        log.add(ev.t, actor.id, "report",
                                {{"published", accepted},
                                 {"level", scripted.level}});
                    } catch (const std::runtime_error& e) {
                        result.metrics.backend_publishes_rejected += 1;
                        log.add(ev.t, actor.id, "report_rejected",
                                {{"error", e.what()}});
                    }
                } else {
                    const PollPage page = store.poll(actor.poll_cursor);
                    const PollOutcome outcome = actor.device->poll_and_decrypt(
                        page.messages, tick);
                    actor.poll_cursor = page.cursor;
                    auto& metrics = result.metrics.devices[actor.id];
                    metrics.notifications_decoded +=
                        static_cast<int64_t>(outcome.decoded.size());
                    metrics.decrypt_attempts_with_prefix += outcome.attempts;
                    metrics.decrypt_attempts_without_prefix +=
                        outcome.attempts_unfiltered;
                    auto& decoded = result.decoded[actor.id];
                    decoded.insert(decoded.end(), outcome.decoded.begin(),
                                   outcome.decoded.end());
                    log.add(ev.t, actor.id, "poll",
                            {{"messages", page.messages.size()},
                             {"decoded", outcome.decoded.size()},
                             {"attempts", outcome.attempts}});
                }
                break;
            }
        }
    }

    // Close out any still-open sightings.
    const int64_t end_tick = static_cast<int64_t>(scenario.duration);
    for (auto& actor : actors) {
        const auto fresh = actor.device->finalize_encounters(
            end_tick + 6 * actor.device->config().advert_interval + 1);
        if (!fresh.empty()) {
            log.add(scenario.duration, actor.id, "encounter",
                    {{"count", fresh.size()}});
        }
    }

    // --- metrics & ground truth comparison --------------------------------

    // Window keys of every device over the run, for attributing encounters.
    std::map<PublicKey, std::string> key_owner;
    for (const auto& spec : scenario.devices) {
        const MasterSeed seed = scenario.seed_for(spec);
        const uint64_t last_window = window_index_for(
            std::max<int64_t>(end_tick, 0), spec.config.window_duration);
        for (uint64_t w = 0; w <= last_window; ++w) {
            key_owner[derive_window_keypair(seed, w).public_key] = spec.id;
        }
    }
    std::set<PublicKey> injected_keys;
    for (const auto& rb : bursts) {
        injected_keys.insert(rb.key);
    }

    const auto qualifying_gt = [&](const std::string& a, const std::string& b,
                                   int64_t min_duration) {
        return std::any_of(result.ground_truth.begin(),
                           result.ground_truth.end(),
                           [&](const GroundTruthContact& c) {
                               return ((c.device_a == a && c.device_b == b) ||
                                       (c.device_a == b && c.device_b == a)) &&
                                      c.length() >= min_duration;
                           });
    };

    for (size_t i = 0; i < actors.size(); ++i) {
        auto& metrics = result.metrics.devices[actors[i].id];
        const auto& records = actors[i].device->encounters();
        result.encounters[actors[i].id] =
            std::vector<EncounterRecord>(records.begin(), records.end());
        metrics.encounters_detected = static_cast<int64_t>(records.size());
        const int64_t min_duration =
            scenario.devices[i].config.min_contact_duration;
        for (const auto& gt : result.ground_truth) {
            if ((gt.device_a == actors[i].id || gt.device_b == actors[i].id) &&
                gt.length() >= min_duration) {
                ++metrics.ground_truth_contacts;
            }
        }
        for (const auto& rec : records) {
            if (injected_keys.contains(rec.peer_public_key)) {
                continue;  // attacker proximity is judged by its own tests
            }
            const auto owner = key_owner.find(rec.peer_public_key);
            if (owner != key_owner.end() &&
                qualifying_gt(actors[i].id, owner->second, min_duration)) {
                ++metrics.true_positives;
            } else {
                ++metrics.false_positives;
            }
        }
    }
    result.metrics.backend_messages_stored = store.size();

    // --- privacy taint ------------------------------------------------------

    result.backend_bytes = store.persisted_bytes();
    for (auto& snooper : snoopers) {
        result.snooper_frames.insert(result.snooper_frames.end(),
                                     snooper.frames.begin(),
                                     snooper.frames.end());
        result.snooper_keys.insert(snooper.keys.begin(), snooper.keys.end());
    }
    result.metrics.snooper_keys_observed = result.snooper_keys.size();

    result.taint_needles = payload_needles;
    detail::append_coordinate_needles(scenario, result.taint_needles);
    for (const auto& spec : scenario.devices) {
        const MasterSeed seed = scenario.seed_for(spec);
        result.taint_needles.emplace_back(seed.bytes.begin(),
                                          seed.bytes.end());
    }

    for (auto& actor : actors) {
        actor.device->set_poll_cursor(actor.poll_cursor);
        result.device_states[actor.id] = actor.device->save_state();
    }

    Bytes snooped;
    for (const auto& frame : result.snooper_frames) {
        snooped.insert(snooped.end(), frame.begin(), frame.end());
    }
    uint64_t tainted = 0;
    for (const auto& needle : result.taint_needles) {
        if (needle.size() < 4) {
            continue;  // single-byte payloads match ciphertext vacuously
        }
        if (contains_bytes(result.backend_bytes, needle) ||
            contains_bytes(snooped, needle)) {
            tainted += needle.size();
        }
    }
    result.metrics.snooper_plaintext_bytes_recovered = tainted;

    result.event_log = log.str();
    return result;
}

}  // namespace wetrace::sim
