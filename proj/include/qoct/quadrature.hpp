#pragma once

#include <functional>

namespace qoct {

// Adaptive Gauss-Kronrod 15(7) to an absolute tolerance. Bisects while the
// embedded error estimate exceeds the local budget; deterministic recursion
// order. Exact for polynomials well past anything we integrate.
double integrate(const std::function<double(double)>& f, double a, double b,
                 double abs_tol = 1e-10);

}  // namespace qoct
