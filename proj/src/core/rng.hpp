#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace ras {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Counter-based generator: draw i of stream (seed, stream) is
// splitmix64(key + i * golden), key = splitmix64(seed ^ splitmix64(stream)).
// Everything is integer arithmetic, so sequences match on every platform.
// Normals use Box-Muller in double precision.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
        : key_(splitmix64(seed ^ splitmix64(stream))) {}

    std::uint64_t next_u64() noexcept {
        return splitmix64(key_ + (counter_++) * 0x9E3779B97F4A7C15ull);
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    float uniform_float() noexcept { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) noexcept { return n == 0 ? 0 : next_u64() % n; }

    float normal() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double th = 2.0 * std::numbers::pi * u2;
        spare_ = static_cast<float>(r * std::sin(th));
        has_spare_ = true;
        return static_cast<float>(r * std::cos(th));
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    float spare_ = 0.0f;
    bool has_spare_ = false;
};

}  // namespace ras
