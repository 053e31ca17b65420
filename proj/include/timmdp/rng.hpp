#pragma once

#include <cstdint>
#include <string_view>

namespace timmdp {

// SplitMix64 generator. The standard <random> distributions are not
// specified bit-for-bit across library implementations, so generators use
// this engine plus the explicit mappings below to stay reproducible.
class SplitMix64 {
public:
    static constexpr std::string_view name = "splitmix64";

    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform integer in [lo, hi], rejection sampled so every value is
    // equally likely.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        if (hi <= lo)
            return lo;
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        std::uint64_t x;
        do {
            x = next();
        } while (x >= limit);
        return lo + static_cast<std::int64_t>(x % span);
    }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    bool bernoulli(double p) { return uniform01() < p; }

private:
    std::uint64_t state_;
};

// Independent stream for the `index`-th item generated from `seed`.
inline std::uint64_t derive_stream_seed(std::uint64_t seed, std::uint64_t index) {
    SplitMix64 mixer(seed ^ (0x6a09e667f3bcc909ULL * (index + 1)));
    mixer.next();
    return mixer.next();
}

} // namespace timmdp
