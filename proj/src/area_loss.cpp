#include "extremal/area_loss.hpp"

#include <algorithm>
#include <cmath>

namespace extremal {

AreaTarget AreaTarget::from_fraction(double a, std::int64_t n) {
    if (a < 0.0 || a > 1.0) throw InvalidInput("area target fraction must lie in [0,1]");
    if (n < 1) throw InvalidInput("area target needs a positive element count");
    AreaTarget t;
    t.fraction = a;
    t.count = n;
    return t;
}

AreaTarget AreaTarget::from_units(std::int64_t units, std::int64_t n) {
    if (n < 1) throw InvalidInput("area target needs a positive element count");
    if (units < 0 || units > n) throw InvalidInput("area target unit count out of range");
    AreaTarget t;
    t.fraction = static_cast<double>(units) / static_cast<double>(n);
    t.count = n;
    return t;
}

std::int64_t AreaTarget::split_point() const {
    return static_cast<std::int64_t>(std::floor(fraction * static_cast<double>(count) + 0.5));
}

Tensor reference_vector(const AreaTarget& target) {
    Tensor r({static_cast<int>(target.count)});
    const std::int64_t ones = target.split_point();
    for (std::int64_t i = target.count - ones; i < target.count; ++i) r[i] = 1.0f;
    return r;
}

Var area_loss(Graph& g, Var mask, const AreaTarget& target) {
    if (g.value(mask).numel() != target.count) {
        throw InvalidInput("area_loss: mask numel does not match the target element count");
    }
    Var sorted = g.sort_with_permutation(mask);
    Var r = g.constant(reference_vector(target));
    Var diff = g.sub(sorted, r);
    return g.sum(g.mul(diff, diff));
}

double area_loss_value(const Tensor& mask, const AreaTarget& target) {
    if (mask.numel() != target.count) {
        throw InvalidInput("area_loss: mask numel does not match the target element count");
    }
    std::vector<float> sorted(mask.data());
    std::sort(sorted.begin(), sorted.end());
    const std::int64_t ones = target.split_point();
    const std::int64_t n = target.count;
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const float r = i >= n - ones ? 1.0f : 0.0f;
        const double d = static_cast<double>(sorted[static_cast<std::size_t>(i)]) - r;
        acc += d * d;
    }
    return acc;
}

double achieved_area(const Tensor& mask, float threshold) {
    std::int64_t above = 0;
    for (float v : mask.data()) {
        if (v > threshold) ++above;
    }
    return static_cast<double>(above) / static_cast<double>(mask.numel());
}

} // namespace extremal
