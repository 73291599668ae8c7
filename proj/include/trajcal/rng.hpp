#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "trajcal/numeric.hpp"

namespace trajcal {

// splitmix64 — used to derive independent sub-stream seeds from (seed, index).
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    return splitmix64(seed ^ splitmix64(stream + 1));
}

// Deterministic RNG. Draws are implemented by hand on top of mt19937_64 so
// that sequences are identical across platforms and standard libraries
// (std::uniform_*_distribution output is implementation-defined).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform double in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    /// Uniform integer in [lo, hi], rejection-sampled for exactness.
    std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi) {
        if (lo > hi) throw Error("uniform_int: empty range");
        const std::uint64_t span = hi - lo + 1;
        if (span == 0) return lo + next_u64(); // full 2^64 range
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % span + 1) % span;
        std::uint64_t x = next_u64();
        while (x > limit) x = next_u64();
        return lo + x % span;
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller (one value per call; pair cached).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    /// Gamma(shape, 1) via Marsaglia-Tsang; shape > 0.
    double gamma(double shape) {
        if (shape <= 0.0) throw Error("gamma: shape must be positive");
        if (shape < 1.0) {
            const double u = uniform();
            return gamma(shape + 1.0) * std::pow(u > 0.0 ? u : 1e-300, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = normal();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            const double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    double beta(double a, double b) {
        const double g1 = gamma(a);
        const double g2 = gamma(b);
        const double s = g1 + g2;
        return s > 0.0 ? g1 / s : 0.5;
    }

    /// Fisher-Yates shuffle with explicit bounded draws.
    template <typename T>
    void shuffle(std::vector<T>& xs) {
        for (std::size_t i = xs.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_int(0, i - 1));
            std::swap(xs[i - 1], xs[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace trajcal
