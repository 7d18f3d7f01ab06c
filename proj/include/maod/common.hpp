#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace maod {

// Data/validation failure (bad shapes, malformed files, out-of-range config).
// The CLI maps this to exit code 2.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Broken internal invariant. The CLI maps this to exit code 3.
class InternalError : public std::runtime_error {
public:
    explicit InternalError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ValidationError(msg);
}

inline void require_internal(bool cond, const std::string& msg) {
    if (!cond) throw InternalError(msg);
}

/// Single seedable generator used by every stochastic operation.
/// Draws are derived from the raw mt19937_64 stream (not std distributions)
/// so sequences are identical across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1) with 53 bits of mantissa
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::uint64_t uniform_int(std::uint64_t n) {
        // rejection sampling keeps the distribution exact
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do { x = engine_(); } while (x >= limit);
        return x % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller; one value per call (the spare is discarded to keep the
    // stream position independent of call parity)
    double normal(double mean = 0.0, double stddev = 1.0);

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

/// Stable per-sample seed derivation: parallel and serial dataset
/// generation agree bitwise because sample i depends only on (seed, i).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// Deterministic stratified split: item i of its class is a test item when
/// the running quota floor((i+1)*ratio) advances past floor(i*ratio).
inline bool split_is_test(std::size_t index, double ratio) {
    const double a = std::floor(static_cast<double>(index) * ratio);
    const double b = std::floor(static_cast<double>(index + 1) * ratio);
    return b > a;
}

// SHA-256 helpers (fingerprints, config hashes, freeze checksums)
std::vector<std::uint8_t> sha256(const void* data, std::size_t len);
std::vector<std::uint8_t> sha256(const std::string& s);
std::string to_hex(const std::vector<std::uint8_t>& bytes);
std::string sha256_hex(const std::string& s);

// printf-style convenience used for diagnostics and CSV rows
std::string strfmt(const char* fmt, ...);

}  // namespace maod
