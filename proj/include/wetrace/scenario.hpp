#pragma once

// Scenario description for the deterministic radio world: device
// trajectories in meters, a log-distance path-loss radio, attack actors,
// and a script of report/poll events. Scenarios load from JSON; validation
// errors name the offending field.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "wetrace/crypto.hpp"
#include "wetrace/device.hpp"

namespace wetrace::sim {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

inline double distance(const Vec2& a, const Vec2& b) {
    return std::hypot(a.x - b.x, a.y - b.y);
}

struct Waypoint {
    double t = 0.0;
    double x = 0.0;
    double y = 0.0;
};

struct Trajectory {
    std::vector<Waypoint> points;

    // Piecewise-linear interpolation, clamped to the end waypoints.
    Vec2 position_at(double t) const {
        if (points.empty()) {
            return {};
        }
        if (t <= points.front().t) {
            return {points.front().x, points.front().y};
        }
        if (t >= points.back().t) {
            return {points.back().x, points.back().y};
        }
        for (size_t i = 1; i < points.size(); ++i) {
            if (t <= points[i].t) {
                const auto& a = points[i - 1];
                const auto& b = points[i];
                const double f = (t - a.t) / (b.t - a.t);
                return {a.x + f * (b.x - a.x), a.y + f * (b.y - a.y)};
            }
        }
        return {points.back().x, points.back().y};
    }
};

struct RadioParams {
    double tx_power_dbm = -55.0;  // received power at 1 m
    double path_loss_exponent = 2.0;
    double noise_sigma_db = 0.0;
    double packet_loss_prob = 0.0;
    double sensitivity_dbm = -100.0;  // below this nothing is delivered
};

struct DeviceSpec {
    std::string id;
    std::optional<MasterSeed> master_seed;  // derived from the run seed if absent
    DeviceConfig config;
    Trajectory trajectory;
};

struct SnooperSpec {
    Vec2 position;
};

// One burst of forged advertisements: the chosen key is advertised from a
// fixed position every `interval` seconds over [t_start, t_end].
struct InjectorBurst {
    double t_start = 0.0;
    double t_end = 0.0;
    double interval = 20.0;
    Vec2 position;
    std::optional<PublicKey> fixed_key;
    // Replay a real device's window key instead of a fixed/random one.
    std::optional<std::pair<std::string, uint64_t>> replay_of;
};

struct InjectorSpec {
    std::vector<InjectorBurst> script;
};

enum class ScriptedAction { report, poll };

struct ScriptedEvent {
    double t = 0.0;
    std::string device;
    ScriptedAction action = ScriptedAction::poll;
    int level = 1;  // disclosure level for report
};

struct Scenario {
    uint64_t random_seed = 0;
    double duration = 0.0;
    DeviceConfig default_config;
    std::vector<DeviceSpec> devices;
    RadioParams radio;
    std::vector<SnooperSpec> snoopers;
    std::vector<InjectorSpec> injectors;
    std::vector<ScriptedEvent> events;
    int backend_difficulty = 8;

    void validate() const;
    static Scenario from_json(const nlohmann::json& j);
    static Scenario from_file(const std::string& path);

    // Stable per-device seed when the scenario does not pin one.
    MasterSeed seed_for(const DeviceSpec& spec) const {
        if (spec.master_seed) {
            return *spec.master_seed;
        }
        Bytes input;
        const std::string_view label = "wetrace.sim.device-seed.v1";
        input.insert(input.end(), label.begin(), label.end());
        put_u64_le(input, random_seed);
        input.insert(input.end(), spec.id.begin(), spec.id.end());
        return MasterSeed{sha256(input)};
    }
};

inline void Scenario::validate() const {
    const auto fail = [](const std::string& field, const std::string& why) {
        throw std::invalid_argument(field + ": " + why);
    };
    if (duration <= 0) {
        fail("duration", "must be positive");
    }
    if (radio.packet_loss_prob < 0 || radio.packet_loss_prob > 1) {
        fail("radio.packet_loss_prob", "must be within [0, 1]");
    }
    if (radio.noise_sigma_db < 0) {
        fail("radio.noise_sigma_db", "must be non-negative");
    }
    if (radio.path_loss_exponent <= 0) {
        fail("radio.path_loss_exponent", "must be positive");
    }
    if (backend_difficulty < 0 || backend_difficulty > 32) {
        fail("backend_difficulty", "must be within 0..32");
    }

    std::set<std::string> ids;
    for (size_t i = 0; i < devices.size(); ++i) {
        const auto& dev = devices[i];
        const std::string where = "devices[" + std::to_string(i) + "]";
        if (dev.id.empty()) {
            fail(where + ".id", "must not be empty");
        }
        if (!ids.insert(dev.id).second) {
            fail(where + ".id", "duplicate device id '" + dev.id + "'");
        }
        try {
            dev.config.validate();
        } catch (const std::invalid_argument& e) {
            fail(where + "." + e.what(), "invalid");
        }
        if (dev.trajectory.points.empty()) {
            fail(where + ".trajectory", "must have at least one waypoint");
        }
        for (size_t k = 1; k < dev.trajectory.points.size(); ++k) {
            if (dev.trajectory.points[k].t <= dev.trajectory.points[k - 1].t) {
                fail(where + ".trajectory",
                     "waypoint times must strictly increase");
            }
        }
    }
    for (size_t i = 0; i < events.size(); ++i) {
        const std::string where = "events[" + std::to_string(i) + "]";
        if (!ids.contains(events[i].device)) {
            fail(where + ".device",
                 "unknown device '" + events[i].device + "'");
        }
        if (events[i].t < 0 || events[i].t > duration) {
            fail(where + ".t", "must be within [0, duration]");
        }
        if (events[i].action == ScriptedAction::report &&
            (events[i].level < 1 || events[i].level > 4)) {
            fail(where + ".level", "must be within 1..4");
        }
    }
    for (size_t i = 0; i < injectors.size(); ++i) {
        const auto& inj = injectors[i];
        for (size_t k = 0; k < inj.script.size(); ++k) {
            const std::string where = "attackers[injector].script[" +
                                      std::to_string(k) + "]";
            const auto& burst = inj.script[k];
            if (burst.t_end < burst.t_start) {
                fail(where + ".t_end", "must be >= t_start");
            }
            if (burst.interval <= 0) {
                fail(where + ".interval", "must be positive");
            }
            if (burst.replay_of && !ids.contains(burst.replay_of->first)) {
                fail(where + ".replay.device",
                     "unknown device '" + burst.replay_of->first + "'");
            }
        }
    }
}

namespace detail {

inline void apply_config(DeviceConfig& cfg, const nlohmann::json& j) {
    cfg.window_duration = j.value("window_duration", cfg.window_duration);
    cfg.contact_horizon = j.value("contact_horizon", cfg.contact_horizon);
    cfg.rssi_threshold_dbm =
        j.value("rssi_threshold_dbm", cfg.rssi_threshold_dbm);
    cfg.min_contact_duration =
        j.value("min_contact_duration", cfg.min_contact_duration);
    cfg.advert_interval = j.value("advert_interval", cfg.advert_interval);
    cfg.prefix_bits = j.value("prefix_bits", cfg.prefix_bits);
    cfg.max_report_recipients =
        j.value("max_report_recipients", cfg.max_report_recipients);
}

}  // namespace detail

inline Scenario Scenario::from_json(const nlohmann::json& j) {
    Scenario sc;
    try {
        sc.random_seed = j.value("random_seed", uint64_t{0});
        sc.duration = j.at("duration").get<double>();
        if (j.contains("config")) {
            detail::apply_config(sc.default_config, j["config"]);
        }
        if (j.contains("radio")) {
            const auto& jr = j["radio"];
            sc.radio.tx_power_dbm =
                jr.value("tx_power_dbm", sc.radio.tx_power_dbm);
            sc.radio.path_loss_exponent =
                jr.value("path_loss_exponent", sc.radio.path_loss_exponent);
            sc.radio.noise_sigma_db =
                jr.value("noise_sigma_db", sc.radio.noise_sigma_db);
            sc.radio.packet_loss_prob =
                jr.value("packet_loss_prob", sc.radio.packet_loss_prob);
            sc.radio.sensitivity_dbm =
                jr.value("sensitivity_dbm", sc.radio.sensitivity_dbm);
        }
        sc.backend_difficulty = j.value("backend_difficulty", 8);

        for (const auto& jd : j.at("devices")) {
            DeviceSpec dev;
            dev.id = jd.at("id").get<std::string>();
            if (jd.contains("master_seed")) {
                dev.master_seed =
                    MasterSeed::from_hex(jd["master_seed"].get<std::string>());
            }
            dev.config = sc.default_config;
            if (jd.contains("config")) {
                detail::apply_config(dev.config, jd["config"]);
            }
            for (const auto& jw : jd.at("trajectory")) {
                dev.trajectory.points.push_back(
                    Waypoint{jw.at("t").get<double>(), jw.at("x").get<double>(),
                             jw.at("y").get<double>()});
            }
            sc.devices.push_back(std::move(dev));
        }

        for (const auto& ja : j.value("attackers", nlohmann::json::array())) {
            const std::string type = ja.at("type").get<std::string>();
            if (type == "snooper") {
                sc.snoopers.push_back(SnooperSpec{
                    Vec2{ja.at("x").get<double>(), ja.at("y").get<double>()}});
            } else if (type == "injector") {
                InjectorSpec inj;
                for (const auto& jb : ja.at("script")) {
                    InjectorBurst burst;
                    burst.t_start = jb.at("t_start").get<double>();
                    burst.t_end = jb.at("t_end").get<double>();
                    burst.interval = jb.value("interval", 20.0);
                    burst.position = Vec2{jb.at("x").get<double>(),
                                          jb.at("y").get<double>()};
                    if (jb.contains("key") && jb["key"].is_string() &&
                        jb["key"].get<std::string>() != "random") {
                        burst.fixed_key = array_from_hex<32>(
                            jb["key"].get<std::string>());
                    } else if (jb.contains("replay")) {
                        burst.replay_of = {
                            jb["replay"].at("device").get<std::string>(),
                            jb["replay"].at("window").get<uint64_t>()};
                    }
                    inj.script.push_back(burst);
                }
                sc.injectors.push_back(std::move(inj));
            } else {
                throw std::invalid_argument(
                    "attackers[].type: must be 'snooper' or 'injector'");
            }
        }

        for (const auto& je : j.value("events", nlohmann::json::array())) {
            ScriptedEvent ev;
            ev.t = je.at("t").get<double>();
            ev.device = je.at("device").get<std::string>();
            const std::string action = je.at("action").get<std::string>();
            if (action == "report") {
                ev.action = ScriptedAction::report;
                ev.level = je.value("level", 1);
            } else if (action == "poll") {
                ev.action = ScriptedAction::poll;
            } else {
                throw std::invalid_argument(
                    "events[].action: must be 'report' or 'poll'");
            }
            sc.events.push_back(std::move(ev));
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("scenario: ") + e.what());
    }
    sc.validate();
    return sc;
}

inline Scenario Scenario::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::invalid_argument("scenario not found: " + path);
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    const auto j = nlohmann::json::parse(buffer.str(), nullptr, false);
    if (j.is_discarded()) {
        throw std::invalid_argument("scenario: malformed JSON in " + path);
    }
    return from_json(j);
}

}  // namespace wetrace::sim
