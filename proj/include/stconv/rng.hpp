#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace stconv {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

/// Stateless counter stream: values are a pure function of
/// (seed, stream, counter, index), so a consumer can replay any slice.
class CounterStream {
public:
    CounterStream(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter)
        : base_(splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ counter)) {}

    std::uint64_t bits(std::int64_t index) const {
        return splitmix64(base_ ^ (0x632be59bd9b4e019ull + static_cast<std::uint64_t>(index)));
    }

    /// Uniform in [0, 1) with 53-bit resolution.
    double uniform(std::int64_t index) const {
        return static_cast<double>(bits(index) >> 11) * 0x1.0p-53;
    }

private:
    std::uint64_t base_;
};

/// Sequential generator for initialization, shuffling and synthetic data.
/// Uniform/normal scaling is done here rather than via std distributions so
/// streams replay identically across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Unbiased integer in [lo, hi] by rejection.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        if (span == 0) return static_cast<std::int64_t>(next_u64()); // full range
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        std::uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return lo + static_cast<std::int64_t>(v % span);
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0;
        do {
            u1 = uniform();
        } while (u1 <= 0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::int64_t i = static_cast<std::int64_t>(v.size()) - 1; i > 0; --i) {
            const std::int64_t j = uniform_int(0, i);
            std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
        }
    }

private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0;
};

} // namespace stconv
