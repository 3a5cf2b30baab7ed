#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace rflab {

/// Counter-style deterministic RNG built on splitmix64. Streams are derived
/// by hashing tags into the seed, so (master_seed, tag...) fully identifies a
/// stream independent of call order elsewhere in the program.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        // 128->64 style combine; constants from splitmix64/murmur3 finalizers.
        std::uint64_t x = a + 0x9E3779B97F4A7C15ULL + (b << 6) + (b >> 2);
        x ^= x >> 30;
        x *= 0xBF58476D1CE4E5B9ULL;
        x ^= x >> 27;
        x *= 0x94D049BB133111EBULL;
        x ^= x >> 31;
        return x ^ b;
    }

    /// Child stream keyed by a tag list; does not advance this stream.
    Rng derive(std::initializer_list<std::uint64_t> tags) const {
        std::uint64_t s = state_;
        for (std::uint64_t t : tags) s = mix(s, t);
        return Rng(s);
    }

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t index(std::uint64_t n) {
        // Modulo bias is negligible for n << 2^64.
        return next_u64() % n;
    }

    /// Standard normal via Box-Muller (two uniforms per call, no cached spare).
    double gaussian() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

private:
    std::uint64_t state_;
};

} // namespace rflab
