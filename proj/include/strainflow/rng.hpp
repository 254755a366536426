#pragma once

// Counter-based random numbers. Every draw is a pure function of
// (seed, stream, epoch, index), so batch members can be generated in any
// order without changing the sampled data.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace strainflow::rng {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Named sub-streams hanging off the root seed.
enum class Stream : std::uint64_t {
    data = 1,
    init = 2,
    probes = 3,
    projections = 4,
    eval = 5,
    time = 6,
    check = 7,
};

class CounterRng {
public:
    constexpr CounterRng(std::uint64_t seed, Stream stream, std::uint64_t epoch = 0) noexcept
        : key_(splitmix64(splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(stream)) ^ epoch)) {}

    /// Independent draws are addressed by (index, lane); lanes separate the
    /// quantities drawn for the same sample.
    constexpr std::uint64_t bits(std::uint64_t index, std::uint64_t lane = 0) const noexcept {
        return splitmix64(key_ ^ splitmix64(splitmix64(index) ^ (lane * 0xd1b54a32d192ed03ULL)));
    }

    /// Uniform in [0, 1).
    double uniform(std::uint64_t index, std::uint64_t lane = 0) const noexcept {
        return static_cast<double>(bits(index, lane) >> 11) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller on two private lanes.
    double normal(std::uint64_t index, std::uint64_t lane = 0) const noexcept {
        const double u1 = 1.0 - uniform(index, kNormalLaneBase + 2 * lane);
        const double u2 = uniform(index, kNormalLaneBase + 2 * lane + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t index, std::uint64_t n, std::uint64_t lane = 0) const noexcept {
        return static_cast<std::uint64_t>(uniform(index, lane) * static_cast<double>(n)) % n;
    }

    /// +1 or -1 with equal probability.
    double rademacher(std::uint64_t index, std::uint64_t lane = 0) const noexcept {
        return (bits(index, lane) >> 63) ? 1.0 : -1.0;
    }

private:
    static constexpr std::uint64_t kNormalLaneBase = 1ULL << 32;
    std::uint64_t key_;
};

/// Sequential view over a CounterRng for code that just needs "the next" draw.
class Sequence {
public:
    constexpr Sequence(std::uint64_t seed, Stream stream, std::uint64_t epoch = 0) noexcept : rng_(seed, stream, epoch) {}
    double uniform() noexcept { return rng_.uniform(counter_++); }
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
    double normal() noexcept { return rng_.normal(counter_++); }
    double rademacher() noexcept { return rng_.rademacher(counter_++); }
    std::uint64_t below(std::uint64_t n) noexcept { return rng_.below(counter_++, n); }

private:
    CounterRng rng_;
    std::uint64_t counter_ = 0;
};

}  // namespace strainflow::rng
