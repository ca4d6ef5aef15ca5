#pragma once

#include "flowadam/param_space.hpp"
#include "flowadam/problem.hpp"

namespace flowadam::problems {

/// f(x, y) = (1 - x)^2 + 100 (y - x^2)^2, started at (-1.5, 1.5).
inline Problem rosenbrock() {
    Problem p;
    p.name = "rosenbrock";
    p.scenario = "default";
    p.layout = make_layout({{"xy", 2}});
    p.dim = 2;
    p.init = [layout = p.layout](Rng&) { return ParamVector({-1.5, 1.5}, layout); };
    p.loss_grad = [](const ParamVector& th) {
        const double x = th[0], y = th[1];
        const double a = 1.0 - x, b = y - x * x;
        LossGrad out{a * a + 100.0 * b * b, ParamVector::zeros_like(th)};
        out.grad[0] = -2.0 * a - 400.0 * x * b;
        out.grad[1] = 200.0 * b;
        return out;
    };
    p.loss_only = [](const ParamVector& th) {
        const double a = 1.0 - th[0], b = th[1] - th[0] * th[0];
        return a * a + 100.0 * b * b;
    };
    p.metric_name = "final_loss";
    return p;
}

}  // namespace flowadam::problems
