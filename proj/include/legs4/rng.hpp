#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

namespace legs4 {

/// SplitMix64 generator. Bit-exact across platforms, unlike the
/// distributions in <random>, so seeded outputs can be frozen in tests.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    uint64_t below(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

private:
    uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Random unit vector of the given dimension (isotropic).
inline std::vector<float> random_unit_vector(Rng& rng, size_t dim) {
    std::vector<double> v(dim);
    double norm = 0.0;
    do {
        norm = 0.0;
        for (auto& x : v) {
            x = rng.normal();
            norm += x * x;
        }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    std::vector<float> out(dim);
    for (size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(v[i] / norm);
    return out;
}

/// FNV-1a 64-bit hash, used to key content-addressed embeddings.
inline uint64_t fnv1a64(std::span<const uint8_t> bytes, uint64_t h = 0xCBF29CE484222325ULL) {
    for (uint8_t b : bytes) {
        h ^= b;
        h *= 0x100000001B3ULL;
    }
    return h;
}

} // namespace legs4
