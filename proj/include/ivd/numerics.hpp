#pragma once

// Thin wrappers over Boost.Math: beta CDF/tails, the standard normal, and a
// bracketed root finder. Domain errors surface as ivd::ComputationError.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <boost/math/tools/toms748_solve.hpp>

#include "ivd/types.hpp"

namespace ivd::num {

// I_x(a, b)
inline double beta_cdf(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) throw ParameterError("beta parameters must be positive");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    try {
        return boost::math::ibeta(a, b, x);
    } catch (const std::exception& e) {
        throw ComputationError(std::string("incomplete beta failed: ") + e.what());
    }
}

// 1 - I_x(a, b), evaluated directly to keep precision in the upper tail.
inline double beta_sf(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) throw ParameterError("beta parameters must be positive");
    if (x <= 0.0) return 1.0;
    if (x >= 1.0) return 0.0;
    try {
        return boost::math::ibetac(a, b, x);
    } catch (const std::exception& e) {
        throw ComputationError(std::string("incomplete beta failed: ") + e.what());
    }
}

inline double normal_cdf(double z) {
    return 0.5 * std::erfc(-z / std::sqrt(2.0));
}

inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw ParameterError("normal quantile needs p in (0,1)");
    return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

// Root of f on [lo, hi]; f(lo) and f(hi) must differ in sign.
template <class F>
double find_root(F&& f, double lo, double hi, double xtol = 1e-14) {
    const double flo = f(lo);
    const double fhi = f(hi);
    if (flo == 0.0) return lo;
    if (fhi == 0.0) return hi;
    if ((flo < 0.0) == (fhi < 0.0)) throw ComputationError("root is not bracketed");
    std::uintmax_t max_iter = 200;
    auto tol = [xtol](double a, double b) { return std::abs(b - a) <= xtol; };
    try {
        auto [a, b] = boost::math::tools::toms748_solve(f, lo, hi, flo, fhi, tol, max_iter);
        return 0.5 * (a + b);
    } catch (const std::exception& e) {
        throw ComputationError(std::string("root finding failed: ") + e.what());
    }
}

}  // namespace ivd::num
