#pragma once

#include <algorithm>
#include <cmath>

#include "flowadam/problem.hpp"

namespace testutil {

/// Full central-difference gradient; only for small problems.
inline flowadam::ParamVector fd_gradient(const flowadam::Problem& p, const flowadam::ParamVector& theta,
                                         double h = 1e-6) {
    flowadam::ParamVector g = flowadam::ParamVector::zeros_like(theta);
    flowadam::ParamVector x = theta;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double step = h * std::max(1.0, std::abs(theta[i]));
        x[i] = theta[i] + step;
        const double fp = p.loss(x);
        x[i] = theta[i] - step;
        const double fm = p.loss(x);
        x[i] = theta[i];
        g[i] = (fp - fm) / (2.0 * step);
    }
    return g;
}

/// max_i |a_i - b_i| / max(|a|_inf, |b|_inf, floor)
inline double rel_error(const flowadam::ParamVector& a, const flowadam::ParamVector& b, double floor = 1e-8) {
    double num = 0.0, scale = floor;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num = std::max(num, std::abs(a[i] - b[i]));
        scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
    }
    return num / scale;
}

}  // namespace testutil
