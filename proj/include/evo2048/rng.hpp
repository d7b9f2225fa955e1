#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace evo2048 {

// SplitMix64 finalizer. Used to derive independent substream seeds from a
// parent seed and a small integer tag.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag) noexcept {
    return splitmix64(splitmix64(parent) ^ splitmix64(tag + 0x632BE59BD9B4E019ULL));
}

constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag_a, std::uint64_t tag_b) noexcept {
    return derive_seed(derive_seed(parent, tag_a), tag_b);
}

/// SplitMix64 as a stream: 8 bytes of state, so seeding a substream per
/// playout is free.
class SplitMix64 {
public:
    using result_type = std::uint64_t;

    explicit SplitMix64(std::uint64_t seed = 0) : state_(seed) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return ~std::uint64_t{0}; }

    result_type operator()() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    bool operator==(const SplitMix64&) const = default;

private:
    std::uint64_t state_;
};

/// Seedable, portable random stream.
///
/// All derived draws (bounded integers, unit doubles, Gaussians) are computed
/// here rather than through <random> distributions, whose algorithms are
/// implementation-defined, so a seed replays identically on any platform.
template <class Engine>
class BasicRng {
public:
    using result_type = std::uint64_t;

    explicit BasicRng(std::uint64_t seed = 0) : engine_(seed) {}

    static constexpr result_type min() { return Engine::min(); }
    static constexpr result_type max() { return Engine::max(); }

    result_type operator()() { return engine_(); }

    /// Uniform integer in [0, bound). Rejection sampling, no modulo bias.
    std::uint64_t below(std::uint64_t bound) {
        if (bound <= 1) {
            return 0;
        }
        const std::uint64_t limit = max() - (max() % bound + 1) % bound;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x > limit);
        return x % bound;
    }

    /// Uniform double in [0, 1) with 53 bits of resolution.
    double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Standard normal draw (Box-Muller, one value per call).
    double normal() {
        double u1 = unit();
        while (u1 <= 0.0) {
            u1 = unit();
        }
        const double u2 = unit();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    bool operator==(const BasicRng&) const = default;

private:
    Engine engine_;
};

// Game spawns and everything persisted use the standard Mersenne Twister;
// playout substreams use SplitMix64.
using Rng = BasicRng<std::mt19937_64>;
using PlayoutRng = BasicRng<SplitMix64>;

}  // namespace evo2048
