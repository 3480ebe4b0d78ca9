#pragma once
// Seedable random streams. Distributions are implemented by hand so that a
// given seed produces the same sequence on every standard library.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace hsacnet {

class RandomStream {
public:
    explicit RandomStream(uint64_t seed) : seed_(seed), engine_(seed) {}

    uint64_t raw() { return engine_(); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    int64_t uniform_int(int64_t n) {
        uint64_t limit = UINT64_MAX - UINT64_MAX % static_cast<uint64_t>(n);
        uint64_t v;
        do { v = engine_(); } while (v >= limit);
        return static_cast<int64_t>(v % static_cast<uint64_t>(n));
    }

    bool bernoulli(double p) { return uniform() < p; }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do { u1 = uniform(); } while (u1 <= 0.0);
        u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * M_PI * u2);
        have_spare_ = true;
        return r * std::cos(2.0 * M_PI * u2);
    }

    // Child stream with a decorrelated seed; gives every epoch/step/sample its
    // own reproducible stream independent of how much the parent was consumed.
    RandomStream derive(const std::string& tag) const {
        uint64_t h = 0xcbf29ce484222325ull;
        auto mix = [&h](uint64_t v) {
            h ^= v;
            h *= 0x100000001b3ull;
        };
        mix(seed_);
        for (char c : tag) mix(static_cast<uint64_t>(static_cast<unsigned char>(c)));
        h += 0x9e3779b97f4a7c15ull;
        h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
        h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
        h = h ^ (h >> 31);
        return RandomStream(h);
    }

private:
    uint64_t seed_ = 0;
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace hsacnet
