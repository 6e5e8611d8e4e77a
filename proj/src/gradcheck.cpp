#include "extremal/gradcheck.hpp"

#include <cmath>
#include <sstream>

namespace extremal {

std::string GradCheckReport::describe() const {
    std::ostringstream os;
    os << rel_ok << "/" << total << " coords within rel " << rel_tol << ", " << abs_rescued
       << " rescued by abs " << abs_tol << ", " << failed << " failed"
       << " (worst rel " << worst_rel << ", worst abs " << worst_abs << " at index " << worst_index << ")";
    return os.str();
}

GradCheckReport check_gradient(const ReferenceFn& f, const Tensor& x0, const Tensor& analytic,
                               double step, double rel_tol, double abs_tol) {
    if (!analytic.same_shape(x0)) throw InvalidInput("check_gradient: gradient shape mismatch");
    GradCheckReport report;
    report.rel_tol = rel_tol;
    report.abs_tol = abs_tol;
    report.total = x0.numel();

    std::vector<double> probe(x0.data().begin(), x0.data().end());
    for (std::int64_t i = 0; i < x0.numel(); ++i) {
        const double saved = probe[static_cast<std::size_t>(i)];
        probe[static_cast<std::size_t>(i)] = saved + step;
        const double fp = f(probe);
        probe[static_cast<std::size_t>(i)] = saved - step;
        const double fm = f(probe);
        probe[static_cast<std::size_t>(i)] = saved;

        const double fd = (fp - fm) / (2.0 * step);
        const double an = analytic[i];
        const double abs_err = std::abs(an - fd);
        const double scale = std::max({std::abs(an), std::abs(fd), 1e-8});
        const double rel_err = abs_err / scale;

        if (rel_err > report.worst_rel) {
            report.worst_rel = rel_err;
            report.worst_index = i;
        }
        report.worst_abs = std::max(report.worst_abs, abs_err);

        if (rel_err < rel_tol) {
            ++report.rel_ok;
        } else if (abs_err < abs_tol) {
            ++report.abs_rescued;
        } else {
            ++report.failed;
        }
    }
    return report;
}

} // namespace extremal
