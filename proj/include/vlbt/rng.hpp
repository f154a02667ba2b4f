#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace vlbt {

// Deterministic 64-bit generator (splitmix64 core). The standard library
// engines are portable but the distributions are not, so all sampling
// helpers are implemented here. Identical seed -> identical draw sequence,
// on any platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 bits of resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Rejection sampling keeps it unbiased.
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n <= 1) return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller; one value per call, deterministic draw order.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // Normal(0, sigma) clipped to +-2 sigma by resampling.
    double truncated_normal(double sigma) {
        for (;;) {
            const double x = normal();
            if (x >= -2.0 && x <= 2.0) return x * sigma;
        }
    }

    // First k elements of a random permutation of 0..n-1 (partial
    // Fisher-Yates), returned sorted so plans have a canonical order.
    std::vector<int> sample_without_replacement(int n, int k);

    // Independent child stream; used to parallelize per-index work while
    // staying deterministic.
    Rng fork(std::uint64_t stream) const {
        std::uint64_t z = state_ ^ (0xD1B54A32D192ED03ull * (stream + 1));
        z = (z ^ (z >> 29)) * 0xFF51AFD7ED558CCDull;
        return Rng(z ^ (z >> 32));
    }

private:
    std::uint64_t state_;
};

inline std::vector<int> Rng::sample_without_replacement(int n, int k) {
    std::vector<int> pool(n);
    for (int i = 0; i < n; ++i) pool[i] = i;
    if (k > n) k = n;
    for (int i = 0; i < k; ++i) {
        const int j = i + static_cast<int>(uniform_int(static_cast<std::uint64_t>(n - i)));
        std::swap(pool[i], pool[j]);
    }
    std::vector<int> out(pool.begin(), pool.begin() + k);
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace vlbt
