#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace matdiff {

// FNV-1a, used both for seed derivation and config hashing.
inline uint64_t fnv1a(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

// Stable per-stage seed: same master seed and stage name always give the
// same stream, independent of how many other stages ran before.
inline uint64_t seed_for(uint64_t master, std::string_view stage) {
    uint64_t h = fnv1a(stage);
    h ^= master + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    return h ? h : 0x2545f4914f6cdd1dull;
}

// Deterministic RNG. Gaussians come from an explicit Box-Muller transform so
// the stream is identical across standard library implementations.
class Rng {
  public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t raw() { return engine_(); }

    // uniform in [0, 1)
    double uniform() {
        return (engine_() >> 11) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    uint64_t below(uint64_t n) { return n ? engine_() % n : 0; }

    float normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 1e-300) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = static_cast<float>(r * std::sin(a));
        have_spare_ = true;
        return static_cast<float>(r * std::cos(a));
    }

    Rng fork(std::string_view label) { return Rng(seed_for(engine_(), label)); }

  private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    float spare_ = 0.0f;
};

} // namespace matdiff
