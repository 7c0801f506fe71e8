#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

// Shared plumbing: error taxonomy, deterministic RNG, percentile,
// content hashing, and number formatting used by every module.

namespace tokentraj {

// Bad or inconsistent input data (parse failures, schema violations).
// The CLI maps this to exit code 2.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// A metric or numeric procedure has no defined value on the given input
// (e.g. Somers' Dxy without a comparable pair). CLI exit code 3.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

class UndefinedMetricError : public NumericError {
public:
    explicit UndefinedMetricError(const std::string& msg) : NumericError(msg) {}
};

inline double sigmoid(double x) {
    // Split on sign so exp() never overflows.
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double softplus(double x) {
    // log(1 + e^x), stable for large |x|.
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

// splitmix64 finalizer; used for seed derivation and id hashing.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Independent per-job seed from a master seed and up to two indices.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0) {
    return mix64(master ^ mix64(a ^ mix64(b + 0x51ed270b7a1fca5dull)));
}

// Deterministic RNG. All distribution transforms are spelled out here so
// that seeded runs produce bit-identical streams on any platform; the
// standard <random> distributions do not guarantee that.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform on [0, 1) with 53 random bits.
    double uniform01() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform01();
    }

    // Uniform integer in [0, n). Rejection sampling keeps it exact.
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == 0) throw NumericError("uniform_int: n must be positive");
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t x = gen_();
        while (x >= limit) x = gen_();
        return x % n;
    }

    // Standard normal via Box-Muller; caches the paired deviate.
    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = uniform01();
        if (u1 < 1e-300) u1 = 1e-300;
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        cached_ = r * std::sin(theta);
        have_cached_ = true;
        return r * std::cos(theta);
    }

    // Standard logistic deviate.
    double logistic() {
        double u = uniform01();
        if (u < 1e-300) u = 1e-300;
        if (u > 1.0 - 1e-16) u = 1.0 - 1e-16;
        return std::log(u / (1.0 - u));
    }

    // Fisher-Yates; std::shuffle is implementation-defined, this is not.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
    bool have_cached_ = false;
    double cached_ = 0.0;
};

// Empirical percentile by linear interpolation between order statistics:
// for sorted x_1..x_n the quantile f sits at position p = f*(n-1)+1.
// The same rule defines tokenizer bin edges and transition cutoffs.
double percentile(std::span<const double> values, double f);

// FNV-1a 64-bit over raw bytes; used for input/vocabulary fingerprints.
std::uint64_t fnv1a64(std::span<const unsigned char> bytes);
std::uint64_t fnv1a64_str(const std::string& s);
std::uint64_t fnv1a64_file(const std::string& path);
std::string hash_hex(std::uint64_t h);

// Shortest exact decimal form of a double (17 significant digits).
std::string format_double(double v);

// Flat key=value configuration file; blank lines and lines starting with '#'
// are skipped, whitespace around keys and values is trimmed, duplicate keys
// are an error.
std::map<std::string, std::string> load_config_file(const std::string& path);

std::string base64_encode(std::span<const unsigned char> bytes);
std::vector<unsigned char> base64_decode(const std::string& text);

} // namespace tokentraj
