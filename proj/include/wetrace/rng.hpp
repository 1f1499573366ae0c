#pragma once

// Randomness sources. SystemRandom draws from the OS CSPRNG and is the
// default for standalone operation; SeededRandom is a deterministic stream
// used by the simulator so that entire runs replay bit-identically.
// Distribution helpers are hand-rolled on top of the raw stream because
// <random> distributions are not bit-stable across standard libraries.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <sodium.h>

#include "wetrace/bytes.hpp"

namespace wetrace {

class RandomSource {
public:
    virtual ~RandomSource() = default;
    virtual void fill(uint8_t* out, size_t len) = 0;

    uint64_t next_u64() {
        uint8_t buf[8];
        fill(buf, sizeof buf);
        return get_u64_le(buf);
    }

    // Uniform in [0, 1).
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, bound) without modulo bias.
    uint64_t below(uint64_t bound) {
        if (bound <= 1) {
            return 0;
        }
        const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return v % bound;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    bool bernoulli(double p) { return uniform01() < p; }

    // Box-Muller; one sample per call keeps the stream layout simple.
    double gaussian(double mean, double sigma) {
        double u1 = uniform01();
        while (u1 <= 0.0) {
            u1 = uniform01();
        }
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + sigma * r * std::cos(2.0 * M_PI * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }
};

class SystemRandom final : public RandomSource {
public:
    SystemRandom() { ensure_sodium_init(); }
    void fill(uint8_t* out, size_t len) override { randombytes_buf(out, len); }
};

class SeededRandom final : public RandomSource {
public:
    explicit SeededRandom(uint64_t seed) : engine_(seed) {}

    void fill(uint8_t* out, size_t len) override {
        size_t i = 0;
        while (i < len) {
            const uint64_t word = engine_();
            for (int b = 0; b < 8 && i < len; ++b, ++i) {
                out[i] = static_cast<uint8_t>(word >> (8 * b));
            }
        }
    }

private:
    std::mt19937_64 engine_;
};

inline RandomSource& system_random() {
    static SystemRandom rng;
    return rng;
}

}  // namespace wetrace
