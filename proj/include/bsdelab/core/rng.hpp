#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace bsdelab {

// Counter-based generation: every variate is a pure function of (key, counter),
// so a path's stream does not depend on how paths are partitioned across threads.
// The output function is the SplitMix64 finalizer applied to key + counter * gamma.

inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Derives a child key; distinct (parent, tag) pairs give unrelated streams.
inline std::uint64_t derive_key(std::uint64_t parent, std::uint64_t tag) {
    return mix64(mix64(parent) ^ mix64(tag + 0x9E3779B97F4A7C15ULL));
}

inline std::uint64_t counter_bits(std::uint64_t key, std::uint64_t counter) {
    return mix64(key + (counter + 1) * 0x9E3779B97F4A7C15ULL);
}

/// Uniform in the open interval (0, 1).
inline double counter_uniform(std::uint64_t key, std::uint64_t counter) {
    return (static_cast<double>(counter_bits(key, counter) >> 11) + 0.5) * 0x1.0p-53;
}

/// Standard normal number `index` of the stream `key` (Box-Muller on counter pairs).
inline double counter_normal(std::uint64_t key, std::uint64_t index) {
    const std::uint64_t pair = index >> 1;
    const double u1 = counter_uniform(key, 2 * pair);
    const double u2 = counter_uniform(key, 2 * pair + 1);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    return (index & 1) ? r * std::sin(angle) : r * std::cos(angle);
}

/// Sequential view of one counter-based stream; satisfies UniformRandomBitGenerator.
class CounterStream {
public:
    using result_type = std::uint64_t;

    explicit CounterStream(std::uint64_t key) : key_(key) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() { return counter_bits(key_, counter_++); }

    double uniform() { return counter_uniform(key_, counter_++); }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(angle);
        has_spare_ = true;
        return r * std::cos(angle);
    }

    std::uint64_t key() const { return key_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace bsdelab
