#pragma once

// Test-only helpers.
//
// ref_sha256 is an independent SHA-256 used as the oracle for prefix-tag
// checks; it shares no code with the library's hashing path. The meeting
// generator builds randomized detection scenarios whose expected outcome
// is known by construction, for comparison against the ground-truth oracle.

#include <array>
#include <cstdint>
#include <cstring>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wetrace/rng.hpp"
#include "wetrace/simnet.hpp"

namespace testsupport {

// --- reference SHA-256 (FIPS 180-4), test oracle only ---------------------

inline std::array<uint8_t, 32> ref_sha256(std::span<const uint8_t> data) {
    static constexpr uint32_t k[64] = {
        0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b,
        0x59f111f1, 0x923f82a4, 0xab1c5ed5, 0xd807aa98, 0x12835b01,
        0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7,
        0xc19bf174, 0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc,
        0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da, 0x983e5152,
        0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147,
        0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc,
        0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85,
        0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819,
        0xd6990624, 0xf40e3585, 0x106aa070, 0x19a4c116, 0x1e376c08,
        0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f,
        0x682e6ff3, 0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208,
        0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2};
    uint32_t h[8] = {0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
                     0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19};

    std::vector<uint8_t> msg(data.begin(), data.end());
    const uint64_t bit_len = static_cast<uint64_t>(msg.size()) * 8;
    msg.push_back(0x80);
    while (msg.size() % 64 != 56) {
        msg.push_back(0x00);
    }
    for (int i = 7; i >= 0; --i) {
        msg.push_back(static_cast<uint8_t>(bit_len >> (8 * i)));
    }

    const auto rotr = [](uint32_t x, int n) {
        return (x >> n) | (x << (32 - n));
    };
    for (size_t chunk = 0; chunk < msg.size(); chunk += 64) {
        uint32_t w[64];
        for (int i = 0; i < 16; ++i) {
            w[i] = uint32_t(msg[chunk + 4 * i]) << 24 |
                   uint32_t(msg[chunk + 4 * i + 1]) << 16 |
                   uint32_t(msg[chunk + 4 * i + 2]) << 8 |
                   uint32_t(msg[chunk + 4 * i + 3]);
        }
        for (int i = 16; i < 64; ++i) {
            const uint32_t s0 =
                rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
            const uint32_t s1 =
                rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
            w[i] = w[i - 16] + s0 + w[i - 7] + s1;
        }
        uint32_t a = h[0], b = h[1], c = h[2], d = h[3];
        uint32_t e = h[4], f = h[5], g = h[6], hh = h[7];
        for (int i = 0; i < 64; ++i) {
            const uint32_t s1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
            const uint32_t ch = (e & f) ^ (~e & g);
            const uint32_t temp1 = hh + s1 + ch + k[i] + w[i];
            const uint32_t s0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
            const uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
            const uint32_t temp2 = s0 + maj;
            hh = g;
            g = f;
            f = e;
            e = d + temp1;
            d = c;
            c = b;
            b = a;
            a = temp1 + temp2;
        }
        h[0] += a; h[1] += b; h[2] += c; h[3] += d;
        h[4] += e; h[5] += f; h[6] += g; h[7] += hh;
    }

    std::array<uint8_t, 32> out{};
    for (int i = 0; i < 8; ++i) {
        out[4 * i] = static_cast<uint8_t>(h[i] >> 24);
        out[4 * i + 1] = static_cast<uint8_t>(h[i] >> 16);
        out[4 * i + 2] = static_cast<uint8_t>(h[i] >> 8);
        out[4 * i + 3] = static_cast<uint8_t>(h[i]);
    }
    return out;
}

// --- randomized meeting scenarios ------------------------------------------

// Directed (observer, peer) detections; a mutual contact contributes both
// directions.
using PairSet = std::set<std::pair<std::string, std::string>>;

struct MeetingPlan {
    wetrace::sim::Scenario scenario;
    PairSet expected_pairs;
};

// Devices live on a far-apart home row; selected pairs travel to distinct
// meeting points and hold either a clearly-qualifying contact (long and
// close) or a clearly-disqualifying one (too short, or too far). Margins
// keep every contact away from the 2 m RSSI boundary and the 15 min
// duration boundary at 20 s sampling, so the expected detection set is
// exact by construction.
inline MeetingPlan random_meeting_scenario(uint64_t seed) {
    wetrace::SeededRandom rng(seed * 0x9e3779b97f4a7c15ULL + 0x1234);

    MeetingPlan plan;
    auto& sc = plan.scenario;
    sc.random_seed = seed;
    sc.default_config.window_duration = 86400;  // no rotation inside a run
    sc.default_config.min_contact_duration = 900;
    sc.default_config.advert_interval = 20;

    const size_t n_devices = 4 + rng.below(5);  // 4..8
    const size_t n_pairs = n_devices / 2;

    std::vector<std::string> ids;
    for (size_t i = 0; i < n_devices; ++i) {
        ids.push_back(std::string(1, static_cast<char>('A' + i)));
    }

    std::vector<size_t> order(n_devices);
    for (size_t i = 0; i < n_devices; ++i) {
        order[i] = i;
    }
    rng.shuffle(order);

    std::vector<wetrace::sim::DeviceSpec> specs(n_devices);
    double run_end = 0.0;
    for (size_t i = 0; i < n_devices; ++i) {
        specs[i].id = ids[i];
        specs[i].config = sc.default_config;
        const wetrace::sim::Waypoint home{0.0, double(i) * 60.0, 0.0};
        specs[i].trajectory.points.push_back(home);
    }

    for (size_t p = 0; p < n_pairs; ++p) {
        const size_t ia = order[2 * p];
        const size_t ib = order[2 * p + 1];
        const double meet_x = double(p) * 60.0 + 30.0;
        const double meet_y = 100.0;

        const bool qualify = rng.bernoulli(0.5);
        double contact_d, contact_len;
        if (qualify) {
            contact_d = rng.uniform(0.6, 1.6);
            contact_len = rng.uniform(1100.0, 2400.0);
        } else if (rng.bernoulli(0.5)) {
            contact_d = rng.uniform(0.6, 1.6);  // close but too short
            contact_len = rng.uniform(150.0, 700.0);
        } else {
            contact_d = rng.uniform(3.5, 8.0);  // long but too far
            contact_len = rng.uniform(1100.0, 2400.0);
        }
        const double t0 = rng.uniform(120.0, 400.0);
        const double t1 = t0 + contact_len;
        run_end = std::max(run_end, t1 + 200.0);

        const auto meet = [&](size_t idx, double dx) {
            auto& traj = specs[idx].trajectory.points;
            const double home_x = traj.front().x;
            traj.push_back({t0 - 60.0, home_x, 0.0});
            traj.push_back({t0, meet_x + dx, meet_y});
            traj.push_back({t1, meet_x + dx, meet_y});
            traj.push_back({t1 + 60.0, home_x, 0.0});
        };
        meet(ia, -contact_d / 2.0);
        meet(ib, contact_d / 2.0);

        if (qualify) {
            plan.expected_pairs.insert({ids[ia], ids[ib]});
            plan.expected_pairs.insert({ids[ib], ids[ia]});
        }
    }

    sc.duration = std::max(run_end, 1200.0);
    sc.devices = std::move(specs);
    return plan;
}

// Which pairs actually recorded each other, mapped back to device ids via
// each device's derivable window keys.
inline PairSet detected_pairs(const wetrace::sim::Scenario& scenario,
                              const wetrace::sim::SimResult& result) {
    std::map<wetrace::PublicKey, std::string> owner;
    for (const auto& spec : scenario.devices) {
        const auto seed = scenario.seed_for(spec);
        const uint64_t last = wetrace::window_index_for(
            static_cast<int64_t>(scenario.duration),
            spec.config.window_duration);
        for (uint64_t w = 0; w <= last; ++w) {
            owner[wetrace::derive_window_keypair(seed, w).public_key] =
                spec.id;
        }
    }
    PairSet directed;
    for (const auto& [id, records] : result.encounters) {
        for (const auto& rec : records) {
            const auto it = owner.find(rec.peer_public_key);
            // Unmappable keys count as detections of "?" so that a
            // mispaired-fragment ghost contact can never pass unnoticed.
            directed.insert(
                {id, it != owner.end() ? it->second : std::string("?")});
        }
    }
    return directed;
}

}  // namespace testsupport
