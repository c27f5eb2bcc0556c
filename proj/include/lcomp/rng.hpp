#pragma once

#include <cmath>
#include <cstdint>

namespace lcomp {

// xoshiro256** seeded via splitmix64. Fixed algorithm so trajectories are
// bit-identical across platforms; std::mt19937/std::normal_distribution are
// not guaranteed to be.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t x = seed;
        for (auto& s : state_) {
            // splitmix64
            x += 0x9e3779b97f4a7c15ULL;
            uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
            s = z ^ (z >> 31);
        }
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1).
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [lo, hi] inclusive.
    uint64_t next_range(uint64_t lo, uint64_t hi) {
        return lo + next_u64() % (hi - lo + 1);
    }

    // Standard normal via Box-Muller; one cached value per pair.
    double next_gaussian() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1, u2;
        do {
            u1 = next_double();
        } while (u1 <= 0.0);
        u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        cached_ = r * std::sin(theta);
        have_cached_ = true;
        return r * std::cos(theta);
    }

    // Derives an independent stream; used for per-run rng isolation.
    Rng fork(uint64_t stream_id) {
        return Rng(next_u64() ^ (0x6a09e667f3bcc909ULL * (stream_id + 1)));
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t state_[4];
    double cached_ = 0.0;
    bool have_cached_ = false;
};

}  // namespace lcomp
