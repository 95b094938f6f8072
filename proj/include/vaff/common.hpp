// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace vaff {

/// Error type for all failure modes of the toolkit. Messages start with a
/// stable category phrase ("geometry error", "range error", ...) that callers
/// and tests can match on.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}
} // namespace detail

/// Deterministic random generator. Distribution helpers are hand-rolled on
/// top of mt19937_64 so that sequences are identical across standard
/// libraries (std::*_distribution is implementation-defined).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(detail::splitmix64(seed)), seed_(seed) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1).
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }
    /// Uniform in (0, 1].
    double uniform_pos() { return double((next_u64() >> 11) + 1) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return lo + std::int64_t(uniform() * double(hi - lo + 1));
    }
    bool bernoulli(double p) { return uniform() < p; }
    /// Box-Muller, uncached so the stream is position-independent.
    double normal(double mean = 0.0, double sd = 1.0) {
        const double u1 = uniform_pos();
        const double u2 = uniform();
        return mean + sd * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    /// Independent child stream; does not advance this generator.
    Rng derive(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) const {
        std::uint64_t s = detail::splitmix64(seed_ ^ detail::splitmix64(a));
        s = detail::splitmix64(s ^ detail::splitmix64(b ^ 0x632be59bd9b4e019ULL));
        s = detail::splitmix64(s ^ detail::splitmix64(c ^ 0x9e6c63d0876a9a47ULL));
        return Rng(s);
    }

private:
    std::mt19937_64 gen_;
    std::uint64_t seed_;
};

} // namespace vaff
