#pragma once

#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "flowadam/param_space.hpp"
#include "flowadam/problem.hpp"

namespace flowadam::problems {

struct InverseKinematicsScenario {
    std::size_t links = 8;
    std::size_t waypoints = 10;
    double smoothness = 1.0;
    double min_radius = 2.0;
    double max_radius = 6.0;
    double init_std = 0.1;
};

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

/// End effector of a planar chain of unit links; angles are relative joint angles.
inline Point2 forward_kinematics(std::span<const double> angles) {
    Point2 p;
    double phi = 0.0;
    for (double a : angles) {
        phi += a;
        p.x += std::cos(phi);
        p.y += std::sin(phi);
    }
    return p;
}

struct IkModel {
    InverseKinematicsScenario sc;
    std::vector<Point2> targets;

    double loss(const ParamVector& th) const {
        const std::size_t L = sc.links;
        double acc = 0.0;
        for (std::size_t w = 0; w < sc.waypoints; ++w) {
            const Point2 p = forward_kinematics(th.values().subspan(w * L, L));
            const double ex = p.x - targets[w].x, ey = p.y - targets[w].y;
            acc += ex * ex + ey * ey;
        }
        for (std::size_t w = 0; w + 1 < sc.waypoints; ++w)
            for (std::size_t j = 0; j < L; ++j) {
                const double d = th[(w + 1) * L + j] - th[w * L + j];
                acc += sc.smoothness * d * d;
            }
        return acc;
    }

    LossGrad loss_grad(const ParamVector& th) const {
        const std::size_t L = sc.links;
        LossGrad out{0.0, ParamVector::zeros_like(th)};
        std::vector<double> c(L), s(L);
        for (std::size_t w = 0; w < sc.waypoints; ++w) {
            const std::size_t base = w * L;
            double phi = 0.0, px = 0.0, py = 0.0;
            for (std::size_t j = 0; j < L; ++j) {
                phi += th[base + j];
                c[j] = std::cos(phi);
                s[j] = std::sin(phi);
                px += c[j];
                py += s[j];
            }
            const double ex = px - targets[w].x, ey = py - targets[w].y;
            out.loss += ex * ex + ey * ey;
            // d p / d angle_k = sum_{j >= k} (-sin phi_j, cos phi_j)
            double sx = 0.0, sy = 0.0;
            for (std::size_t k = L; k-- > 0;) {
                sx -= s[k];
                sy += c[k];
                out.grad[base + k] = 2.0 * (ex * sx + ey * sy);
            }
        }
        for (std::size_t w = 0; w + 1 < sc.waypoints; ++w)
            for (std::size_t j = 0; j < L; ++j) {
                const double d = th[(w + 1) * L + j] - th[w * L + j];
                out.loss += sc.smoothness * d * d;
                out.grad[(w + 1) * L + j] += 2.0 * sc.smoothness * d;
                out.grad[w * L + j] -= 2.0 * sc.smoothness * d;
            }
        return out;
    }

    /// sqrt(mean squared end-effector distance to the targets)
    double target_rmse(const ParamVector& th) const {
        double acc = 0.0;
        for (std::size_t w = 0; w < sc.waypoints; ++w) {
            const Point2 p = forward_kinematics(th.values().subspan(w * sc.links, sc.links));
            const double ex = p.x - targets[w].x, ey = p.y - targets[w].y;
            acc += ex * ex + ey * ey;
        }
        return std::sqrt(acc / static_cast<double>(sc.waypoints));
    }
};

/// Reachable targets at radius U[min_radius, max_radius], heading U[-pi/2, pi/2].
inline std::vector<Point2> sample_ik_targets(const InverseKinematicsScenario& sc, Rng& rng) {
    std::vector<Point2> t(sc.waypoints);
    for (auto& p : t) {
        const double r = rng.uniform(sc.min_radius, sc.max_radius);
        const double a = rng.uniform(-std::numbers::pi / 2, std::numbers::pi / 2);
        p = Point2{r * std::cos(a), r * std::sin(a)};
    }
    return t;
}

inline Problem make_ik_problem(const InverseKinematicsScenario& sc, std::vector<Point2> targets,
                               std::uint64_t seed) {
    if (sc.links == 0 || sc.waypoints == 0) throw std::invalid_argument("inverse_kinematics: empty arm");
    if (targets.size() != sc.waypoints) throw std::invalid_argument("inverse_kinematics: one target per waypoint");
    auto model = std::make_shared<IkModel>(IkModel{sc, std::move(targets)});
    Problem p;
    p.name = "inverse_kinematics";
    p.scenario = "default";
    p.seed = seed;
    p.dim = sc.links * sc.waypoints;
    p.layout = make_layout({{"angles", p.dim}});
    p.init = [layout = p.layout, s = sc.init_std](Rng& rng) {
        std::vector<double> v(layout_size(layout));
        for (double& x : v) x = rng.normal(0.0, s);
        return ParamVector(std::move(v), layout);
    };
    p.loss_grad = [model](const ParamVector& th) { return model->loss_grad(th); };
    p.loss_only = [model](const ParamVector& th) { return model->loss(th); };
    p.test_metric = [model](const ParamVector& th) { return model->target_rmse(th); };
    p.metric_name = "target_rmse";
    p.metadata["links"] = std::to_string(sc.links);
    p.metadata["waypoints"] = std::to_string(sc.waypoints);
    return p;
}

/// Joint-angle trajectory through random waypoints with a smoothness penalty.
inline Problem inverse_kinematics(const InverseKinematicsScenario& sc, std::uint64_t seed) {
    Rng rng = Rng(seed).fork(0);
    auto targets = sample_ik_targets(sc, rng);
    return make_ik_problem(sc, std::move(targets), seed);
}

}  // namespace flowadam::problems
