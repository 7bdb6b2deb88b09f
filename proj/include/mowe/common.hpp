// Shared basics: error types, shapes, deterministic RNG, small helpers.
#pragma once

#include <cstdint>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mowe {

// ---------------------------------------------------------------------------
// Errors. The CLI maps ShapeError/ParamError/UsageError to exit code 2 and
// NumericError to exit code 3.

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
    using Error::Error;
};

struct ParamError : Error {
    using Error::Error;
};

struct UsageError : Error {
    using Error::Error;
};

struct NumericError : Error {
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Shapes (row-major throughout).

using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) {
        if (d < 0) throw ShapeError("negative extent in shape");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

// ---------------------------------------------------------------------------
// Deterministic RNG. mt19937_64 has a fully specified algorithm; the
// distribution helpers below are hand-rolled because the std distributions
// are implementation-defined and would break cross-toolchain reproducibility.

inline uint64_t hash_u64(uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t hash_combine(uint64_t seed, uint64_t v) {
    return hash_u64(seed ^ (0x9e3779b97f4a7c15ULL + v + (seed << 6) + (seed >> 2)));
}

inline uint64_t hash_str(uint64_t seed, const std::string& tag) {
    uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (unsigned char c : tag) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return hash_combine(seed, h);
}

// derive_seed(seed, "tag", i, j, ...) gives independent substreams.
template <typename... Ints>
inline uint64_t derive_seed(uint64_t seed, const std::string& tag, Ints... idx) {
    uint64_t h = hash_str(seed, tag);
    ((h = hash_combine(h, static_cast<uint64_t>(idx))), ...);
    return h;
}

class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t bits() { return eng_(); }

    // uniform in [0,1)
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive bounds
    int uniform_int(int lo, int hi) {
        if (hi < lo) throw ParamError("uniform_int: hi < lo");
        uint64_t span = static_cast<uint64_t>(hi) - static_cast<uint64_t>(lo) + 1;
        return lo + static_cast<int>(eng_() % span);
    }

    double normal(double mean = 0.0, double stddev = 1.0) {
        // Box-Muller; discards the second variate to keep the stream simple
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(2.0 * M_PI * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = eng_() % i;
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 eng_;
};

// ---------------------------------------------------------------------------

inline bool is_finite(double v) { return std::isfinite(v); }

inline double clamp(double v, double lo, double hi) {
    return v < lo ? lo : (v > hi ? hi : v);
}

}  // namespace mowe
