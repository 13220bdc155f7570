#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

#include "common.hpp"

namespace genodiff {

// Seeded random stream. The engine (mt19937_64) is standardized, and all
// distribution transforms below are hand-rolled, so identical seeds give
// bit-identical draws on every platform. Every consumer derives its own
// stream from (root seed, name, index) and owns it exclusively; results are
// then independent of thread count and batching.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // [0, 1) with 53 random bits
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // [0, n), unbiased
    int64_t uniform_int(int64_t n) {
        auto un = static_cast<uint64_t>(n);
        uint64_t bound = UINT64_MAX - UINT64_MAX % un;
        uint64_t r;
        do {
            r = next_u64();
        } while (r >= bound);
        return static_cast<int64_t>(r % un);
    }

    // Marsaglia polar method with cached spare
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform01() - 1.0;
            v = 2.0 * uniform01() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * m;
        has_spare_ = true;
        return u * m;
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Marsaglia–Tsang; shape < 1 boosted via the u^(1/shape) trick
    double gamma(double shape) {
        if (shape < 1.0) {
            double u = uniform01();
            while (u == 0.0) u = uniform01();
            return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
        }
        double d = shape - 1.0 / 3.0;
        double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            double u = uniform01();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    double beta(double a, double b) {
        double x = gamma(a);
        double y = gamma(b);
        double s = x + y;
        if (s <= 0.0 || !std::isfinite(s)) {
            // both gammas underflowed (extreme concentrations); fall back to the mean
            return a / (a + b);
        }
        return x / s;
    }

    template <class It>
    void shuffle(It first, It last) {
        auto n = static_cast<int64_t>(last - first);
        for (int64_t i = n - 1; i > 0; --i) {
            int64_t j = uniform_int(i + 1);
            std::swap(first[i], first[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Named substream derivation: hash the stream name and index into the root
// seed. All pipeline randomness flows from one root seed through these.
inline uint64_t substream_seed(uint64_t root, std::string_view name, uint64_t index = 0) {
    uint64_t h = fnv1a64(name.data(), name.size());
    return splitmix64(splitmix64(root ^ h) + index * 0x9e3779b97f4a7c15ull);
}

inline Rng make_stream(uint64_t root, std::string_view name, uint64_t index = 0) {
    return Rng(substream_seed(root, name, index));
}

}  // namespace genodiff
