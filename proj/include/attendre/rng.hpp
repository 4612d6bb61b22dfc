#pragma once

#include <cstdint>

namespace attendre {

/// splitmix64 stream. Used instead of std:: distributions so that seeded
/// runs produce byte-identical reports on any platform.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return n ? next() % n : 0; }

private:
    std::uint64_t state_;
};

/// Derives an independent stream from (seed, tag) pairs, e.g. one per layer.
inline SplitMix64 substream(std::uint64_t seed, std::uint64_t tag) {
    SplitMix64 mixer(seed ^ (0x632BE59BD9B4E019ULL * (tag + 1)));
    return SplitMix64(mixer.next());
}

} // namespace attendre
