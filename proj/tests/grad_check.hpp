#ifndef DWL_TESTS_GRAD_CHECK_HPP
#define DWL_TESTS_GRAD_CHECK_HPP

// Central finite-difference oracle used by the gradient tests. Lives in test
// code only and never touches the tape machinery it is checking.

#include <cmath>
#include <functional>
#include <vector>

namespace dwl::testing {

inline constexpr double kFdStep = 1e-5;

/// d f / d x[i] by central differences.
inline std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> x, double h = kFdStep) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double fp = f(x);
        x[i] = orig - h;
        const double fm = f(x);
        x[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

/// Relative error with a floor so near-zero gradients compare absolutely.
inline double grad_rel_error(double a, double b, double floor = 1e-2) {
    const double denom = std::max({std::abs(a), std::abs(b), floor});
    return std::abs(a - b) / denom;
}

inline double max_grad_rel_error(const std::vector<double>& a, const std::vector<double>& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, grad_rel_error(a[i], b[i]));
    return worst;
}

} // namespace dwl::testing

#endif
