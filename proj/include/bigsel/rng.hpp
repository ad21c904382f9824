#ifndef BIGSEL_RNG_HPP
#define BIGSEL_RNG_HPP

// Pinned random number machinery. Every random quantity in the pipeline is a
// pure function of explicit 64-bit seeds, so matrices, permutations and whole
// selection runs can be re-materialized bit-exactly from their seed bundle.
//
// Pinned choices:
//   - seed expansion: splitmix64
//   - generator:      xoshiro256++
//   - shuffles:       Fisher-Yates iterating from the last index down,
//                     with multiply-shift bounded draws
//   - normals:        Box-Muller on fixed uniform mappings

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

namespace bigsel::rng {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

// splitmix64: advances `state` and returns the next value.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    state += kGolden;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Stateless mix of a base seed with a stream tag. Used wherever independent
// substreams are derived from one user seed (experiments, trials, noise).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t s = base + stream * kGolden;
    splitmix64_next(s);
    return splitmix64_next(s);
}

class Xoshiro256pp {
public:
    explicit Xoshiro256pp(std::uint64_t seed) {
        for (auto& word : s_) word = splitmix64_next(seed);
    }

    std::uint64_t next() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, bound) via the multiply-shift map (bound > 0).
    std::uint64_t next_below(std::uint64_t bound) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next()) * bound) >> 64);
    }

    // Uniform double in [0, 1), 53-bit resolution.
    double next_unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Uniform double in (0, 1]; keeps log() finite in Box-Muller.
    double next_unit_open() {
        return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::array<std::uint64_t, 4> s_{};
};

// Standard normal draws, Box-Muller pairs with the second value cached.
class NormalSampler {
public:
    explicit NormalSampler(std::uint64_t seed) : gen_(seed) {}

    double next() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = gen_.next_unit_open();
        const double u2 = gen_.next_unit();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        have_spare_ = true;
        return radius * std::cos(angle);
    }

private:
    Xoshiro256pp gen_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// In-place Fisher-Yates shuffle, iterating from the last index down.
template <class T>
void fisher_yates(std::span<T> values, Xoshiro256pp& gen) {
    if (values.size() < 2) return;
    for (std::size_t i = values.size() - 1; i >= 1; --i) {
        const std::uint64_t j = gen.next_below(static_cast<std::uint64_t>(i) + 1);
        std::swap(values[i], values[j]);
    }
}

// ceiling(U(0, n)) on {1, ..., n}: floor(u*n)+1 with u in [0,1), clamped.
inline std::uint64_t ceil_uniform(Xoshiro256pp& gen, std::uint64_t n) {
    const double u = gen.next_unit();
    std::uint64_t v = static_cast<std::uint64_t>(u * static_cast<double>(n)) + 1;
    if (v < 1) v = 1;
    if (v > n) v = n;
    return v;
}

}  // namespace bigsel::rng

#endif
