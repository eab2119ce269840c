#pragma once
// ============================================================================
// rng.hpp -- deterministic random streams
//
// xoshiro256++ behind a thin wrapper.  Reproducibility across platforms and
// thread counts is a hard requirement, so every consumer gets its own stream
// derived from (seed, purpose tags) rather than sharing one generator whose
// draw order would depend on event interleaving.
// ============================================================================

#include <cstdint>
#include <cmath>
#include <array>

namespace hfnet {

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Stateless mix of up to three words into one; used for stream derivation
// and the toy payload cipher.
inline uint64_t mix64(uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    uint64_t s = a;
    uint64_t h = splitmix64(s);
    s ^= b + 0x632be59bd9b4e019ull;
    h ^= splitmix64(s);
    s ^= c + 0x9e6c63d0876a9a47ull;
    h ^= splitmix64(s);
    return h;
}

class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
    }

    // Independent stream for (seed, tag, lane): collisions would silently
    // correlate channels, so everything routes through the same mixer.
    static Rng stream(uint64_t seed, uint64_t tag, uint64_t lane = 0) {
        return Rng(mix64(seed, tag, lane));
    }

    uint64_t next() {
        uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0,1) with 53 random bits.
    double uniform() { return double(next() >> 11) * 0x1.0p-53; }

    bool bernoulli(double p) { return uniform() < p; }

    // Lemire's unbiased bounded integer in [0, n).
    uint32_t below(uint32_t n) {
        uint64_t m = uint64_t(uint32_t(next())) * n;
        uint32_t lo = uint32_t(m);
        if (lo < n) {
            uint32_t threshold = (0u - n) % n;
            while (lo < threshold) {
                m = uint64_t(uint32_t(next())) * n;
                lo = uint32_t(m);
            }
        }
        return uint32_t(m >> 32);
    }

    // Binomial(n, p) by CDF inversion; n here is at most a few hundred.
    int binomial(int n, double p) {
        if (p <= 0.0 || n == 0) return 0;
        if (p >= 1.0) return n;
        double u = uniform();
        double q = 1.0 - p;
        double pk = std::pow(q, n);  // P[X = 0]
        double cum = pk;
        int k = 0;
        while (u > cum && k < n) {
            pk *= double(n - k) / double(k + 1) * (p / q);
            ++k;
            cum += pk;
        }
        return k;
    }

    double exponential(double rate) {
        // 1 - uniform() is in (0,1], so the log is finite.
        return -std::log(1.0 - uniform()) / rate;
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::array<uint64_t, 4> s_;
};

}  // namespace hfnet
