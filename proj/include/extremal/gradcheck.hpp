#ifndef EXTREMAL_GRADCHECK_HPP
#define EXTREMAL_GRADCHECK_HPP

#include <functional>
#include <string>
#include <vector>

#include "extremal/tensor.hpp"

namespace extremal {

// Central finite-difference comparison against an analytic gradient.
// A coordinate passes when its relative error is below rel_tol, or failing
// that, when its absolute error is below abs_tol. The overall check passes
// when every coordinate passes and at least `rel_fraction` of them pass on
// the relative criterion.
struct GradCheckReport {
    std::int64_t total = 0;
    std::int64_t rel_ok = 0;
    std::int64_t abs_rescued = 0;
    std::int64_t failed = 0;
    double worst_rel = 0.0;
    double worst_abs = 0.0;
    std::int64_t worst_index = -1;
    double rel_tol = 1e-3;
    double abs_tol = 1e-5;

    bool pass(double rel_fraction = 0.99) const {
        if (failed > 0) return false;
        return static_cast<double>(rel_ok) >= rel_fraction * static_cast<double>(total);
    }
    std::string describe() const;
};

// The reference function runs in double precision (an independent
// re-evaluation of the checked computation): differencing the f32 forward
// itself would drown the stated tolerances in output rounding.
using ReferenceFn = std::function<double(const std::vector<double>&)>;

GradCheckReport check_gradient(const ReferenceFn& f, const Tensor& x0, const Tensor& analytic,
                               double step = 1e-3, double rel_tol = 1e-3, double abs_tol = 1e-5);

} // namespace extremal

#endif
