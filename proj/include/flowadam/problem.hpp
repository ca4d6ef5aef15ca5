#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>

#include "flowadam/param_space.hpp"

namespace flowadam {

struct LossGrad {
    double loss = 0.0;
    ParamVector grad;
};

/// Whether a smaller or a larger held-out metric is better.
enum class MetricKind { LowerIsBetter, HigherIsBetter };

/**
 * A differentiable objective plus its held-out evaluation.
 *
 * Instances are immutable after construction; all callables are pure and safe
 * to call concurrently.
 */
struct Problem {
    std::string name;
    std::string scenario;
    std::size_t dim = 0;
    Layout layout;
    std::uint64_t seed = 0;

    std::function<ParamVector(Rng&)> init;
    std::function<LossGrad(const ParamVector&)> loss_grad;
    /// Forward-only loss; falls back to loss_grad when unset.
    std::function<double(const ParamVector&)> loss_only;
    std::function<double(const ParamVector&)> test_metric;

    std::string metric_name = "loss";
    MetricKind metric_kind = MetricKind::LowerIsBetter;
    std::map<std::string, std::string> metadata;

    LossGrad evaluate(const ParamVector& theta) const {
        if (theta.size() != dim)
            throw std::invalid_argument(name + ": parameter length " + std::to_string(theta.size()) +
                                        " != dim " + std::to_string(dim));
        return loss_grad(theta);
    }

    double loss(const ParamVector& theta) const {
        if (loss_only) return loss_only(theta);
        return loss_grad(theta).loss;
    }

    bool has_test_metric() const noexcept { return static_cast<bool>(test_metric); }
};

}  // namespace flowadam
