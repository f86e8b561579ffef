#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace omnifuse {

/// FNV-1a 64-bit hash. Used for seed derivation and config fingerprints.
inline std::uint64_t fnv1a64(const void* bytes, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    return fnv1a64(s.data(), s.size(), h);
}

/// Deterministic random stream. mt19937_64 is bit-exact across platforms;
/// the distribution mappings below are our own so results never depend on
/// libstdc++ internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1) using the top 53 bits.
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; two draws per call, no cached state.
    double normal() {
        double u1 = (static_cast<double>(gen_() >> 11) + 1.0) * 0x1.0p-53; // (0, 1]
        double u2 = static_cast<double>(gen_() >> 11) * 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Uniform integer in [0, n). n must be positive.
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(gen_() % n); }

    /// Child stream whose seed depends on this stream's seed and a label.
    Rng fork(const std::string& label) {
        std::uint64_t s = gen_();
        return Rng(fnv1a64(label, s ^ 0x9e3779b97f4a7c15ULL));
    }

private:
    std::mt19937_64 gen_;
};

} // namespace omnifuse
