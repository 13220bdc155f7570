#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace genodiff {

/*----------------------------------- errors ----------------------------------*/

// Invalid configuration value; message names the offending field.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Incompatible tensor/matrix dimensions; message names the operation and shapes.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed input file; message carries line/offset where known.
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values or undefined arithmetic (e.g. recovery rate with a_r = 0).
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// API misuse (wrong model variant, missing checkpoint, ...).
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Stratified split impossible (a class has fewer samples than splits).
struct StratifyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/*---------------------------------- threading --------------------------------*/

inline int& num_threads_ref() {
    static int n = []() {
        unsigned hw = std::thread::hardware_concurrency();
        return hw == 0 ? 1 : static_cast<int>(hw);
    }();
    return n;
}

inline int num_threads() { return num_threads_ref(); }
inline void set_num_threads(int n) { num_threads_ref() = n < 1 ? 1 : n; }

// Static contiguous partition; each index is processed by exactly one thread,
// so per-index results do not depend on the thread count. `grain` is the
// minimum number of indices worth a thread.
inline void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body,
                         int64_t grain = 1024) {
    int nt = num_threads();
    if (n <= 0) return;
    if (nt <= 1 || n < 2 * grain) {
        body(0, n);
        return;
    }
    int64_t chunks = std::min<int64_t>(nt, (n + grain - 1) / grain);
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(chunks));
    int64_t per = (n + chunks - 1) / chunks;
    for (int64_t c = 0; c < chunks; ++c) {
        int64_t lo = c * per;
        int64_t hi = std::min(n, lo + per);
        if (lo >= hi) break;
        pool.emplace_back([&body, lo, hi] { body(lo, hi); });
    }
    for (auto& t : pool) t.join();
}

/*----------------------------------- hashing ---------------------------------*/

inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::string hex64(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

}  // namespace genodiff
