#pragma once

// Seeded RNG used everywhere randomness appears. Normal draws go through an
// explicit Box-Muller transform rather than std::normal_distribution, so a
// given seed reproduces the same stream on every standard library.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace cold {

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller (one value per pair, cached)
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    std::uint64_t next_u64() { return engine_(); }

    // integer in [0, n)
    std::size_t index(std::size_t n) {
        return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
    }

    // derived stream, decorrelated from the parent by a fixed mix
    Rng fork(std::uint64_t salt) const {
        std::uint64_t x = seed_mix_ ^ (salt + 0x9e3779b97f4a7c15ull);
        x ^= x >> 30;
        x *= 0xbf58476d1ce4e5b9ull;
        x ^= x >> 27;
        x *= 0x94d049bb133111ebull;
        x ^= x >> 31;
        return Rng(x);
    }

    void note_seed(std::uint64_t s) { seed_mix_ = s; }

    static Rng seeded(std::uint64_t seed) {
        Rng r(seed);
        r.note_seed(seed);
        return r;
    }

private:
    std::mt19937_64 engine_;
    std::uint64_t seed_mix_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// Noise source handed to forward passes: either genuine Gaussian draws or
// pinned zeros (used by gradient checks and eval-style determinism tests).
struct NoiseSource {
    Rng* rng = nullptr;  // nullptr means "always zero"

    double normal() { return rng ? rng->normal() : 0.0; }
    bool pinned() const { return rng == nullptr; }
};

}  // namespace cold
