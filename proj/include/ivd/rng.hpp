#pragma once

// Counter-based random streams. A stream is a 64-bit key; draw k is a
// SplitMix64 finalizer applied to key + k * golden-ratio increment, so any
// (seed, scenario, design, trial) tuple maps to an independent stream without
// shared state, and results never depend on how work is scheduled.

#include <cstdint>
#include <limits>

#include "ivd/numerics.hpp"

namespace ivd {

inline constexpr std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

// Folds an index sequence into a stream key.
inline constexpr std::uint64_t derive_key(std::uint64_t seed) { return mix64(seed + kGolden); }

template <class... Rest>
constexpr std::uint64_t derive_key(std::uint64_t seed, std::uint64_t first, Rest... rest) {
    return derive_key(mix64(seed ^ mix64(first + 0x632BE59BD9B4E019ULL)) + kGolden, static_cast<std::uint64_t>(rest)...);
}

class StreamRng {
public:
    using result_type = std::uint64_t;

    explicit StreamRng(std::uint64_t key) : key_(key) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() { return mix64(key_ + kGolden * ++counter_); }

    // Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    // Uniform on (0, 1).
    double uniform_open() {
        double u;
        do u = uniform();
        while (u == 0.0);
        return u;
    }

    // Inverse-CDF normal so the sequence is identical on every platform.
    double normal(double mean = 0.0, double sd = 1.0) {
        return mean + sd * num::normal_quantile(uniform_open());
    }

    int binomial(int n, double p) {
        int k = 0;
        for (int i = 0; i < n; ++i)
            if (uniform() < p) ++k;
        return k;
    }

    // Uniform integer on [lo, hi].
    int uniform_int(int lo, int hi) {
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(static_cast<double>(span) * uniform());
    }

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace ivd
