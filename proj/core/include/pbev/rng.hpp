#pragma once

#include <cstdint>
#include <cmath>

namespace pbev {

// splitmix64. Small, fast, and the output sequence is fixed by the seed
// alone, which keeps every sampling op reproducible across platforms
// (std::uniform_int_distribution is not portable).
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, n), modulo-bias free.
    uint64_t next_below(uint64_t n) {
        const uint64_t bound = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = next_u64();
        } while (x >= bound);
        return x % n;
    }

    // Uniform in [0, 1), 53-bit resolution.
    double next_real() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller (no cached second sample, so the
    // draw count per call is fixed).
    double next_normal() {
        double u1;
        do {
            u1 = next_real();
        } while (u1 <= 0.0);
        const double u2 = next_real();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

private:
    uint64_t state_;
};

// Stateless mix of up to four 64-bit words into one; used where a value
// must depend only on logical coordinates (seed, camera, pixel, ...) and
// not on evaluation order.
inline uint64_t hash_mix(uint64_t a, uint64_t b = 0, uint64_t c = 0, uint64_t d = 0) {
    Rng r(a);
    uint64_t h = r.next_u64() ^ b;
    Rng r2(h);
    h = r2.next_u64() ^ c;
    Rng r3(h);
    h = r3.next_u64() ^ d;
    Rng r4(h);
    return r4.next_u64();
}

} // namespace pbev
