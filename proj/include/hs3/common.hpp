#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace hs3 {

// Sentinel for pixels excluded from loss and metrics. Maximum representable
// value of the label type so that class 0 stays a real class.
using label_t = std::uint16_t;
inline constexpr label_t kIgnore = 0xFFFF;

enum class ErrorKind {
    validation,  // bad input, config or protocol violation (CLI exit 2)
    runtime,     // IO / numeric failure (CLI exit 3)
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg)
        : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail_validation(const std::string& msg) {
    throw Error(ErrorKind::validation, msg);
}
[[noreturn]] inline void fail_runtime(const std::string& msg) {
    throw Error(ErrorKind::runtime, msg);
}

// All randomness in the harness flows through explicitly seeded mt19937_64
// streams. std::shuffle and the standard distributions are implementation
// defined, so the helpers below are used instead wherever reproducibility
// across toolchains matters.
using Rng = std::mt19937_64;

// Uniform integer in [0, n) by rejection sampling on raw 64-bit draws.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    if (n == 0) fail_runtime("uniform_index: empty range");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % n;
}

// Uniform double in [0, 1) from the top 53 bits.
inline double uniform_unit(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Gaussian via Box-Muller on reproducible uniforms.
inline double gaussian(Rng& rng, double mean = 0.0, double sigma = 1.0) {
    double u1 = 0.0;
    while (u1 == 0.0) u1 = uniform_unit(rng);
    const double u2 = uniform_unit(rng);
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + sigma * r * std::cos(6.283185307179586476925286766559 * u2);
}

template <typename T>
void seeded_shuffle(std::vector<T>& items, Rng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(uniform_index(rng, i));
        std::swap(items[i - 1], items[j]);
    }
}

// FNV-1a, used for provenance hashes of config and artifact files.
inline std::uint64_t fnv1a(const void* data, std::size_t len,
                           std::uint64_t seed = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a(const std::string& s) {
    return fnv1a(s.data(), s.size());
}

std::string hex64(std::uint64_t v);

// Hash of a file's raw bytes; fails with "file not found" if unreadable.
std::uint64_t hash_file(const std::string& path);

}  // namespace hs3
