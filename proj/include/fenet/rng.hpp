#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string_view>

namespace fenet {

// splitmix64 step; also used to mix seeds together.
inline uint64_t splitmix64(uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Deterministic combination of a seed with a stream tag, so that independent
// random streams (per chunk, per episode, per tensor) never depend on thread
// scheduling or call order elsewhere.
inline uint64_t mix_seed(uint64_t seed, uint64_t tag) {
    uint64_t s = seed ^ (0x2545f4914f6cdd1dull * (tag + 1));
    return splitmix64(s);
}

inline uint64_t hash_name(std::string_view name) {
    uint64_t h = 0xcbf29ce484222325ull; // FNV-1a
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

// Small deterministic RNG (splitmix64 core, Box-Muller normals). Identical
// bit streams for identical seeds on a given platform; no global state.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() { return splitmix64(state_); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    uint64_t uniform_int(uint64_t n) {
        // Lemire's multiply-shift with rejection of the biased zone.
        uint64_t x = next_u64();
        __uint128_t m = static_cast<__uint128_t>(x) * n;
        uint64_t lo = static_cast<uint64_t>(m);
        if (lo < n) {
            uint64_t threshold = -n % n;
            while (lo < threshold) {
                x = next_u64();
                m = static_cast<__uint128_t>(x) * n;
                lo = static_cast<uint64_t>(m);
            }
        }
        return static_cast<uint64_t>(m >> 64);
    }

    // Standard normal.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    template <typename T>
    void fill_normal(std::span<T> out, double stddev = 1.0) {
        for (auto& v : out) v = static_cast<T>(stddev * normal());
    }

private:
    uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace fenet
