#pragma once

#include <cmath>
#include <functional>
#include <vector>

// Shared test helpers: independent finite-difference oracles that AD results
// are checked against, plus small numeric utilities.

namespace rfdtest {

// Central finite difference of a scalar function of one variable.
inline double central_fd(const std::function<double(double)>& f, double x, double h = 1e-6) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

// Central finite difference of component i of a vector-input function.
inline double central_fd_vec(const std::function<double(const std::vector<double>&)>& f,
                             std::vector<double> x, size_t i, double h = 1e-6) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = f(x);
    x[i] = x0 - h;
    const double fm = f(x);
    return (fp - fm) / (2.0 * h);
}

inline double rel_err(double got, double want) {
    const double scale = std::max({1.0, std::abs(got), std::abs(want)});
    return std::abs(got - want) / scale;
}

// Relative error with a floor suited to comparing against FD oracles whose
// own truncation error is ~h^2.
inline bool close_rel(double got, double want, double tol) { return rel_err(got, want) <= tol; }

} // namespace rfdtest
