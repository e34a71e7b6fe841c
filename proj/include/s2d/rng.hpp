#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace s2d {

/// Deterministic RNG. mt19937_64 supplies the bits; the value transforms are
/// spelled out here instead of using std:: distributions, whose output is
/// implementation-defined and would break bit-reproducibility across stdlibs.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 bits of mantissa.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Integer in [0, n).
    std::size_t index(std::size_t n) {
        // modulo bias is irrelevant here (n << 2^64) but rejection keeps it exact
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do { x = engine_(); } while (x >= limit);
        return static_cast<std::size_t>(x % n);
    }

    /// Standard normal via Box-Muller (the polar form caches its pair).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        has_spare_ = true;
        return u * f;
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Derives an independent stream, e.g. per-epoch or per-sample.
    static std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
        // splitmix64 finalizer
        std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace s2d
