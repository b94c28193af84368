#pragma once

#include <cstdint>
#include <cmath>
#include <random>
#include <string_view>
#include <vector>

namespace topnav {

// All randomness in the library flows through Rng. The engine is
// std::mt19937_64 (output sequence fixed by the standard) and every
// transform below is hand-rolled, so a given seed produces the same
// stream on any platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // uniform in [0,1)
    double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // uniform integer in [lo, hi], inclusive
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t bound = static_cast<std::uint64_t>(hi - lo) + 1;
        if (bound == 0) return static_cast<std::int64_t>(eng_());  // full range
        const std::uint64_t min = (0 - bound) % bound;
        std::uint64_t r = eng_();
        while (r < min) r = eng_();
        return lo + static_cast<std::int64_t>(r % bound);
    }

    bool bernoulli(double p) { return uniform01() < p; }

    // Box-Muller with a cached spare draw
    double normal(double mu = 0.0, double sigma = 1.0) {
        if (has_spare_) {
            has_spare_ = false;
            return mu + sigma * spare_;
        }
        double u1 = uniform01(), u2 = uniform01();
        while (u1 <= 1e-300) u1 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return mu + sigma * r * std::cos(a);
    }

    // Fisher-Yates; std::shuffle is implementation-defined, this is not.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Independent child stream; deterministic in (parent seed, tag).
    Rng fork(std::uint64_t tag) const { return Rng(splitmix64(seed_ ^ (0x9E3779B97F4A7C15ULL * (tag + 1)))); }
    Rng fork(std::string_view label) const { return fork(fnv1a64(label)); }

    std::uint64_t seed() const { return seed_; }

    static std::uint64_t splitmix64(std::uint64_t x) {
        x += 0x9E3779B97F4A7C15ULL;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
        return x ^ (x >> 31);
    }

    static std::uint64_t fnv1a64(std::string_view s) {
        std::uint64_t h = 0xCBF29CE484222325ULL;
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001B3ULL;
        }
        return h;
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace topnav
