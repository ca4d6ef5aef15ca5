#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowadam/problem.hpp"
#include "flowadam/problems/completion.hpp"
#include "flowadam/problems/inverse_kinematics.hpp"
#include "flowadam/problems/rosenbrock.hpp"
#include "flowadam/problems/stiff_valley.hpp"
#include "flowadam/problems/two_spirals.hpp"

namespace flowadam::problems {

/// Problem name, scenario name and optional per-field overrides.
struct ProblemRequest {
    std::string name;
    std::string scenario = "default";
    std::map<std::string, double> params;
};

class UnknownProblemError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

namespace detail {

inline std::size_t as_count(const std::string& key, double v) {
    if (!(v >= 0.0) || v != std::floor(v))
        throw std::invalid_argument("parameter '" + key + "' must be a non-negative integer");
    return static_cast<std::size_t>(v);
}

template <class Scenario>
using Setter = std::function<void(Scenario&, double)>;

template <class Scenario>
void apply_params(Scenario& sc, const std::map<std::string, double>& params,
                  const std::map<std::string, Setter<Scenario>>& setters, const std::string& problem) {
    for (const auto& [key, value] : params) {
        auto it = setters.find(key);
        if (it == setters.end())
            throw UnknownProblemError("problem '" + problem + "' has no parameter '" + key + "'");
        it->second(sc, value);
    }
}

inline const std::map<std::string, Setter<CompletionScenario>>& completion_setters() {
    static const std::map<std::string, Setter<CompletionScenario>> s = {
        {"lambda", [](auto& c, double v) { c.lambda = v; }},
        {"noise_std", [](auto& c, double v) { c.noise_std = v; }},
        {"factor_std", [](auto& c, double v) { c.factor_std = v; }},
        {"init_std", [](auto& c, double v) { c.init_std = v; }},
        {"observed_fraction", [](auto& c, double v) { c.observed_fraction = v; }},
        {"outlier_fraction", [](auto& c, double v) { c.outlier_fraction = v; }},
        {"outlier_min", [](auto& c, double v) { c.outlier_min = v; }},
        {"outlier_max", [](auto& c, double v) { c.outlier_max = v; }},
        {"huber_delta", [](auto& c, double v) { c.huber_delta = v; }},
        {"true_rank", [](auto& c, double v) { c.true_rank = as_count("true_rank", v); }},
        {"model_rank", [](auto& c, double v) { c.model_rank = as_count("model_rank", v); }},
    };
    return s;
}

}  // namespace detail

/// Named matrix-completion scenarios: small (200x300, r10, 30%), medium (300x400, r15, 20%),
/// large (400x500, r20, 15%).
inline CompletionScenario matrix_completion_scenario(const std::string& name) {
    CompletionScenario sc;
    if (name == "small" || name == "small_dense") {
        sc.shape = {200, 300};
        sc.true_rank = 10;
        sc.observed_fraction = 0.30;
    } else if (name == "medium" || name == "medium_moderate" || name == "default") {
        sc.shape = {300, 400};
        sc.true_rank = 15;
        sc.observed_fraction = 0.20;
    } else if (name == "large" || name == "larger_sparse") {
        sc.shape = {400, 500};
        sc.true_rank = 20;
        sc.observed_fraction = 0.15;
    } else {
        throw UnknownProblemError("matrix_completion: unknown scenario '" + name + "'");
    }
    return sc;
}

/// Robust MF: fully observed, 20% of entries carry outliers of 4-5x the signal scale and no other noise.
inline CompletionScenario robust_mf_scenario(const std::string& name) {
    CompletionScenario sc;
    sc.noise_std = 0.0;
    sc.outlier_fraction = 0.2;
    sc.huber_delta = 1.0;
    sc.observed_fraction = 1.0;
    if (name == "small" || name == "small_heavy") {
        sc.shape = {60, 80};
        sc.true_rank = 5;
    } else if (name == "medium" || name == "medium_heavy" || name == "default") {
        sc.shape = {80, 100};
        sc.true_rank = 8;
    } else if (name == "large" || name == "large_heavy") {
        sc.shape = {100, 120};
        sc.true_rank = 10;
    } else {
        throw UnknownProblemError("robust_mf: unknown scenario '" + name + "'");
    }
    return sc;
}

/// Tensor completion: small (30x40x50, r5, 10%), medium (40x50x60, r8, 8%), large (50x60x70, r10, 8%).
inline CompletionScenario tensor_completion_scenario(const std::string& name) {
    CompletionScenario sc;
    if (name == "small" || name == "small_sparse") {
        sc.shape = {30, 40, 50};
        sc.true_rank = 5;
        sc.observed_fraction = 0.10;
    } else if (name == "medium" || name == "medium_sparse" || name == "default") {
        sc.shape = {40, 50, 60};
        sc.true_rank = 8;
        sc.observed_fraction = 0.08;
    } else if (name == "large" || name == "larger_sparse") {
        sc.shape = {50, 60, 70};
        sc.true_rank = 10;
        sc.observed_fraction = 0.08;
    } else {
        throw UnknownProblemError("tensor_completion: unknown scenario '" + name + "'");
    }
    return sc;
}

inline const std::vector<std::string>& problem_names() {
    static const std::vector<std::string> names = {"rosenbrock",       "stiff_valley",      "matrix_completion",
                                                   "robust_mf",        "tensor_completion", "inverse_kinematics",
                                                   "two_spirals"};
    return names;
}

inline std::vector<std::string> scenario_names(const std::string& problem) {
    if (problem == "matrix_completion" || problem == "robust_mf" || problem == "tensor_completion")
        return {"small", "medium", "large"};
    for (const auto& n : problem_names())
        if (n == problem) return {"default"};
    throw UnknownProblemError("unknown problem '" + problem + "'");
}

/// True when the problem has an explicit L2 term controlled by "lambda".
inline bool has_regularizer(const std::string& problem) {
    return problem == "matrix_completion" || problem == "robust_mf" || problem == "tensor_completion";
}

inline CompletionScenario completion_scenario(const ProblemRequest& req) {
    CompletionScenario sc;
    if (req.name == "matrix_completion")
        sc = matrix_completion_scenario(req.scenario);
    else if (req.name == "robust_mf")
        sc = robust_mf_scenario(req.scenario);
    else if (req.name == "tensor_completion")
        sc = tensor_completion_scenario(req.scenario);
    else
        throw UnknownProblemError("'" + req.name + "' is not a completion problem");
    detail::apply_params(sc, req.params, detail::completion_setters(), req.name);
    return sc;
}

/// Builds the problem for one seed. Identical (request, seed) gives identical data.
inline Problem make_problem(const ProblemRequest& req, std::uint64_t seed) {
    const auto require_default = [&] {
        if (req.scenario != "default" && !req.scenario.empty())
            throw UnknownProblemError(req.name + ": unknown scenario '" + req.scenario + "'");
    };

    if (req.name == "rosenbrock") {
        require_default();
        if (!req.params.empty()) throw UnknownProblemError("rosenbrock takes no parameters");
        Problem p = rosenbrock();
        p.seed = seed;
        return p;
    }
    if (req.name == "stiff_valley") {
        require_default();
        StiffValleyScenario sc;
        detail::apply_params<StiffValleyScenario>(
            sc, req.params,
            {{"dim", [](auto& c, double v) { c.dim = detail::as_count("dim", v); }},
             {"condition", [](auto& c, double v) { c.condition = v; }},
             {"stiff_directions",
              [](auto& c, double v) { c.stiff_directions = detail::as_count("stiff_directions", v); }},
             {"init_std", [](auto& c, double v) { c.init_std = v; }}},
            req.name);
        return stiff_valley(sc, seed);
    }
    if (req.name == "inverse_kinematics") {
        require_default();
        InverseKinematicsScenario sc;
        detail::apply_params<InverseKinematicsScenario>(
            sc, req.params,
            {{"links", [](auto& c, double v) { c.links = detail::as_count("links", v); }},
             {"waypoints", [](auto& c, double v) { c.waypoints = detail::as_count("waypoints", v); }},
             {"smoothness", [](auto& c, double v) { c.smoothness = v; }},
             {"min_radius", [](auto& c, double v) { c.min_radius = v; }},
             {"max_radius", [](auto& c, double v) { c.max_radius = v; }},
             {"init_std", [](auto& c, double v) { c.init_std = v; }}},
            req.name);
        return inverse_kinematics(sc, seed);
    }
    if (req.name == "two_spirals") {
        require_default();
        TwoSpiralsScenario sc;
        detail::apply_params<TwoSpiralsScenario>(
            sc, req.params,
            {{"points", [](auto& c, double v) { c.points = detail::as_count("points", v); }},
             {"rotation_deg", [](auto& c, double v) { c.rotation_deg = v; }},
             {"noise_std", [](auto& c, double v) { c.noise_std = v; }},
             {"radius_start", [](auto& c, double v) { c.radius_start = v; }},
             {"radius_end", [](auto& c, double v) { c.radius_end = v; }},
             {"hidden", [](auto& c, double v) { c.hidden = detail::as_count("hidden", v); }}},
            req.name);
        return two_spirals(sc, seed);
    }
    if (req.name == "matrix_completion") return matrix_completion(completion_scenario(req), seed, req.scenario);
    if (req.name == "robust_mf") return robust_mf(completion_scenario(req), seed, req.scenario);
    if (req.name == "tensor_completion") return tensor_completion(completion_scenario(req), seed, req.scenario);
    throw UnknownProblemError("unknown problem '" + req.name + "'");
}

}  // namespace flowadam::problems
