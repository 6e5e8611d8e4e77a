#ifndef EXTREMAL_RNG_HPP
#define EXTREMAL_RNG_HPP

#include <cstdint>
#include <random>

#include "extremal/tensor.hpp"

namespace extremal {

// Deterministic random source. Distributions are generated from raw mt19937
// draws (std::uniform_real_distribution is implementation-defined, which
// would break bitwise reproducibility of seeded artifacts).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(static_cast<std::mt19937::result_type>(seed)) {}

    std::uint32_t next_u32() { return engine_(); }

    // Uniform in [0, 1) with 24 bits of mantissa.
    float uniform() { return static_cast<float>(engine_() >> 8) * (1.0f / 16777216.0f); }

    float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        const std::uint32_t span = static_cast<std::uint32_t>(hi - lo + 1);
        return lo + static_cast<int>(engine_() % span);
    }

    // Box-Muller from two uniform draws.
    float normal() {
        float u1 = uniform();
        while (u1 <= 1e-12f) u1 = uniform();
        const float u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(static_cast<double>(u1)));
        return static_cast<float>(r * std::cos(2.0 * 3.14159265358979323846 * static_cast<double>(u2)));
    }

    Tensor uniform_tensor(std::vector<int> shape, float lo, float hi) {
        Tensor t(std::move(shape));
        for (auto& v : t.data()) v = uniform(lo, hi);
        return t;
    }

    Tensor normal_tensor(std::vector<int> shape, float mean, float stddev) {
        Tensor t(std::move(shape));
        for (auto& v : t.data()) v = mean + stddev * normal();
        return t;
    }

private:
    std::mt19937 engine_;
};

} // namespace extremal

#endif
