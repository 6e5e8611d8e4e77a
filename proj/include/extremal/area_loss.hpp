#ifndef EXTREMAL_AREA_LOSS_HPP
#define EXTREMAL_AREA_LOSS_HPP

#include <cstdint>

#include "extremal/graph.hpp"
#include "extremal/tensor.hpp"

namespace extremal {

// Target mask area, either a fraction of the element count or an explicit
// element count (channel masks use whole channels).
struct AreaTarget {
    double fraction = 0.0;
    std::int64_t count = 0;  // total element count

    static AreaTarget from_fraction(double a, std::int64_t n);
    static AreaTarget from_units(std::int64_t units, std::int64_t n);

    // Number of ones in the reference vector: round-half-up of fraction*count.
    std::int64_t split_point() const;
};

// Non-decreasing binary vector with (1-a)*n zeros followed by a*n ones.
Tensor reference_vector(const AreaTarget& target);

// Rank-order area constraint: squared distance between the sorted mask and
// the reference vector. Zero exactly on binary masks of the target area.
// Differentiable through the (fixed) sort permutation.
Var area_loss(Graph& g, Var mask, const AreaTarget& target);
double area_loss_value(const Tensor& mask, const AreaTarget& target);

// Fraction of elements strictly above the threshold.
double achieved_area(const Tensor& mask, float threshold = 0.5f);

} // namespace extremal

#endif
