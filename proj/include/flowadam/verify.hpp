#pragma once

// Property and invariant checks shared by `flowflow verify` and the acceptance binary.

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "flowadam/harness.hpp"
#include "flowadam/ode_solver.hpp"
#include "flowadam/optimizers.hpp"
#include "flowadam/problems.hpp"

namespace flowadam::verify {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

inline std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

/// Every benchmark problem at every scenario it defines.
inline std::vector<problems::ProblemRequest> benchmark_requests() {
    std::vector<problems::ProblemRequest> out;
    for (const auto& name : problems::problem_names())
        for (const auto& sc : problems::scenario_names(name)) out.push_back({name, sc, {}});
    return out;
}

inline std::string label(const problems::ProblemRequest& r) { return r.name + "/" + r.scenario; }

// ---------------------------------------------------------------------------

/// Clamp semantics: idempotent, sign preserving, g . clip(g) >= 0 per coordinate, identity inside the box.
inline CheckResult check_clip_grad(std::size_t trials = 200) {
    Rng rng(7);
    for (std::size_t t = 0; t < trials; ++t) {
        ParamVector g(gaussian_fill(rng, 16, 0.0, 3.0));
        const ParamVector c = clip_grad(g);
        if (!(clip_grad(c) == c)) return {"clip_grad", false, "not idempotent"};
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (g[i] * c[i] < 0.0 || std::abs(c[i]) > 1.0) return {"clip_grad", false, "sign or range violated"};
            if (std::abs(g[i]) <= 1.0 && c[i] != g[i]) return {"clip_grad", false, "changed an in-box entry"};
            if (std::abs(g[i]) > 1.0 && c[i] != std::copysign(1.0, g[i]))
                return {"clip_grad", false, "wrong saturation value"};
        }
    }
    return {"clip_grad", true, ""};
}

/// ||clip_vel(v, m)|| <= 5 ||m||, and identity when already under the limit.
inline CheckResult check_clip_vel(std::size_t trials = 1000) {
    Rng rng(11);
    for (std::size_t t = 0; t < trials; ++t) {
        ParamVector v(gaussian_fill(rng, 12, 0.0, rng.uniform(0.01, 20.0)));
        ParamVector m(gaussian_fill(rng, 12, 0.0, rng.uniform(0.01, 2.0)));
        const ParamVector c = clip_vel(v, m);
        if (l2_norm(c) > 5.0 * l2_norm(m) + 1e-12) return {"clip_vel", false, "norm above 5||m||"};
        if (l2_norm(v) <= 5.0 * l2_norm(m) && !(c == v)) return {"clip_vel", false, "modified an in-bound velocity"};
    }
    return {"clip_vel", true, ""};
}

/// ||(1-g) m + g v|| <= max(||m||, ||v||) on random triples.
inline CheckResult check_soft_injection_bound(std::size_t trials = 1000) {
    Rng rng(13);
    double worst = -1e300;
    for (std::size_t t = 0; t < trials; ++t) {
        const std::size_t n = 1 + rng.below(64);
        ParamVector m(gaussian_fill(rng, n, 0.0, rng.uniform(1e-3, 10.0)));
        ParamVector v(gaussian_fill(rng, n, 0.0, rng.uniform(1e-3, 10.0)));
        const double gamma = rng.uniform();
        const double excess = l2_norm(soft_inject(m, v, gamma)) - std::max(l2_norm(m), l2_norm(v));
        worst = std::max(worst, excess);
    }
    return {"soft_injection_bound", worst <= 1e-12,
            std::to_string(trials) + " triples, max excess " + fmt("%.3g", worst)};
}

// ---------------------------------------------------------------------------

/// dy/dt = -y: endpoint error at several spans, and the observed order of the fifth-order solution.
inline CheckResult check_ode_oracle() {
    ode::OdeConfig cfg;
    const double tol = 10.0 * (cfg.rtol + cfg.atol);
    auto field = [](const ParamVector& y) { return scaled(y, -1.0); };
    const ParamVector y0{1.0, -0.5, 0.25};
    std::string detail;
    for (double span : {0.1, 0.5, 1.0, 2.0}) {
        const auto r = ode::integrate(field, y0, span, cfg);
        if (!r.ok()) return {"ode_oracle", false, "integrate failed at span " + harness::format_double(span)};
        double err = 0.0;
        for (std::size_t i = 0; i < y0.size(); ++i) err = std::max(err, std::abs(r.y_end[i] - y0[i] * std::exp(-span)));
        if (err > tol) return {"ode_oracle", false, "span " + harness::format_double(span) + " error " + fmt("%.3g", err)};
    }
    // Fixed-step error on [0, 1] at h and h/2.
    auto fixed_error = [&](std::size_t n) {
        ParamVector y = y0;
        const double h = 1.0 / double(n);
        for (std::size_t i = 0; i < n; ++i) y = ode::step_once(field, y, h, cfg).y_candidate;
        double err = 0.0;
        for (std::size_t i = 0; i < y0.size(); ++i) err = std::max(err, std::abs(y[i] - y0[i] * std::exp(-1.0)));
        return err;
    };
    double min_order = 1e300;
    for (std::size_t n : {2, 4, 8}) min_order = std::min(min_order, std::log2(fixed_error(n) / fixed_error(2 * n)));
    detail = "convergence order " + fmt("%.2f", min_order);
    return {"ode_oracle", min_order >= 4.5, detail};
}

/// Unclipped regime: L = 0.5||y||^2 from inside the unit box matches y0 exp(-t).
inline CheckResult check_ode_clipped_quadratic() {
    ode::OdeConfig cfg;
    auto field = [](const ParamVector& y) {
        ParamVector out = y;
        for (double& x : out) x = -std::clamp(x, -1.0, 1.0);
        return out;
    };
    const ParamVector y0{0.9, -0.3, 0.5, -0.99};
    const auto r = ode::integrate(field, y0, 0.5, cfg);
    double err = 0.0;
    for (std::size_t i = 0; i < y0.size(); ++i) err = std::max(err, std::abs(r.y_end[i] - y0[i] * std::exp(-0.5)));
    const double l0 = 0.5 * dot(y0, y0), l1 = 0.5 * dot(r.y_end, r.y_end);
    return {"ode_clipped_quadratic", r.ok() && err <= 1e-3 && l1 <= l0 + 10.0 * (cfg.rtol + cfg.atol),
            "max error " + fmt("%.3g", err)};
}

// ---------------------------------------------------------------------------

/// Central differences along random directions and on random coordinates, at 10 random points.
inline CheckResult check_gradient(const problems::ProblemRequest& req, std::size_t points = 10) {
    const Problem p = problems::make_problem(req, 3);
    Rng rng(Rng(17).fork(std::hash<std::string>{}(label(req))).next_u64());
    const double h = 1e-4;
    const double rel_tol = 1e-4;
    double worst = 0.0;
    std::size_t checks = 0;
    for (std::size_t k = 0; k < points; ++k) {
        ParamVector theta = p.init(rng);
        for (double& x : theta) x += rng.normal(0.0, 0.3);
        const LossGrad lg = p.evaluate(theta);

        auto directional = [&](const ParamVector& dir) {
            ParamVector plus = axpby(1.0, theta, h, dir), minus = axpby(1.0, theta, -h, dir);
            const double fd = (p.loss(plus) - p.loss(minus)) / (2.0 * h);
            const double an = dot(lg.grad, dir);
            // Absolute floor covers directions along which the loss is flat.
            const double scale = std::max({std::abs(fd), std::abs(an), 1e-6 * (1.0 + std::abs(lg.loss))});
            worst = std::max(worst, std::abs(fd - an) / scale);
            ++checks;
        };
        for (int d = 0; d < 3; ++d) {
            ParamVector dir = gaussian_fill(rng, p.dim, 0.0, 1.0);
            directional(scaled(dir, 1.0 / l2_norm(dir)));
        }
        const std::size_t coords = std::min<std::size_t>(p.dim, 20);
        for (std::size_t i : sample_without_replacement(rng, p.dim, coords)) {
            ParamVector e = ParamVector::zeros_like(theta);
            e[i] = 1.0;
            directional(e);
        }
    }
    return {"gradient " + label(req), worst <= rel_tol,
            std::to_string(checks) + " probes, max rel error " + fmt("%.3g", worst)};
}

// ---------------------------------------------------------------------------

/// FlowAdam with triggering disabled against plain Adam, coordinate by coordinate at every step.
inline CheckResult check_adam_equivalence(const problems::ProblemRequest& req, std::size_t steps = 1000) {
    const Problem p = problems::make_problem(req, 1);
    Rng init_rng = Rng(1).fork(1);
    ParamVector a = p.init(init_rng);
    ParamVector b = a;
    FlowAdamConfig fc = mode_preset(Mode::B);
    fc.t_warmup = kNoWarmupEnd;
    AdamConfig ac = fc.adam;
    FlowAdamState fs = FlowAdamState::zeros_like(a);
    AdamState as = AdamState::zeros_like(b);
    double worst = 0.0;
    for (std::size_t t = 0; t < steps; ++t) {
        const StepEvent ev = flowadam_step(p, a, fs, fc);
        adam_step(b, as, p.evaluate(b).grad, ac);
        if (ev.triggered) return {"adam_equivalence " + label(req), false, "trigger fired"};
        for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    }
    return {"adam_equivalence " + label(req), worst <= 1e-12,
            std::to_string(steps) + " steps, max |diff| " + fmt("%.3g", worst)};
}

// ---------------------------------------------------------------------------

/// Cumulative accounting in a run report: +1 per plain step, +1+nfe per triggered step.
inline bool accounting_consistent(const harness::RunReport& r, std::string* why = nullptr) {
    std::size_t cum = 0, nfe = 0, triggers = 0;
    for (const auto& s : r.steps) {
        if (!s.triggered && s.nfe != 0) {
            if (why) *why = "nfe on an untriggered step " + std::to_string(s.step);
            return false;
        }
        cum += 1 + s.nfe;
        nfe += s.nfe;
        triggers += s.triggered ? 1 : 0;
        if (s.cum_grad_evals != cum) {
            if (why) *why = "cum_grad_evals mismatch at step " + std::to_string(s.step);
            return false;
        }
    }
    if (r.finals.total_grad_evals != r.finals.steps_run + nfe || r.finals.total_nfe != nfe) {
        if (why) *why = "totals differ from steps + sum(nfe)";
        return false;
    }
    if (r.finals.trigger_count != triggers) {
        if (why) *why = "trigger_count differs from triggered rows";
        return false;
    }
    return true;
}

struct DescentOutcome {
    CheckResult descent;
    std::vector<harness::RunReport> runs;
};

/// Full Mode-B FlowAdam runs; counts accepted ODE segments whose loss rose beyond the slack.
inline DescentOutcome check_monotonic_descent(const problems::ProblemRequest& req, std::size_t steps,
                                              const std::vector<std::uint64_t>& seeds) {
    harness::ExperimentConfig cfg;
    cfg.experiment = "descent";
    cfg.problem = req;
    cfg.optimizer = harness::OptimizerKind::FlowAdam;
    cfg.mode = Mode::B;
    cfg.steps = steps;
    cfg.seeds = seeds;
    cfg.record_wall_time = false;
    DescentOutcome out;
    out.runs = harness::run_experiment(cfg);
    std::size_t checks = 0, violations = 0;
    double worst = -1e300;
    for (const auto& r : out.runs) {
        checks += r.finals.descent_checks;
        violations += r.finals.descent_violations;
        if (r.finals.descent_checks) worst = std::max(worst, r.finals.max_descent_excess);
    }
    out.descent = {"monotonic_descent " + label(req), violations == 0 && checks > 0,
                   std::to_string(checks) + " segments, " + std::to_string(violations) + " violations, max excess " +
                       fmt("%.3g", checks ? worst : 0.0)};
    return out;
}

/// Accounting over a set of runs of every optimizer kind.
inline CheckResult check_accounting(const std::vector<harness::RunReport>& runs) {
    for (const auto& r : runs) {
        std::string why;
        if (!accounting_consistent(r, &why))
            return {"accounting", false, r.problem + "/" + r.optimizer + " seed " + std::to_string(r.seed) + ": " + why};
    }
    return {"accounting", !runs.empty(), std::to_string(runs.size()) + " runs"};
}

// ---------------------------------------------------------------------------

/// The whole property suite. `quick` shortens the trajectory-based checks.
inline std::vector<CheckResult> run_all(bool quick = false) {
    std::vector<CheckResult> out;
    out.push_back(check_clip_grad());
    out.push_back(check_clip_vel());
    out.push_back(check_soft_injection_bound());
    out.push_back(check_ode_oracle());
    out.push_back(check_ode_clipped_quadratic());
    for (const auto& req : benchmark_requests()) out.push_back(check_gradient(req));
    const std::size_t eq_steps = quick ? 100 : 1000;
    for (const auto& req : benchmark_requests()) out.push_back(check_adam_equivalence(req, eq_steps));

    std::vector<harness::RunReport> all_runs;
    const std::vector<std::uint64_t> seeds = quick ? std::vector<std::uint64_t>{1} : std::vector<std::uint64_t>{1, 2, 3, 4, 5};
    const std::vector<std::pair<problems::ProblemRequest, std::size_t>> descent = {
        {{"rosenbrock", "default", {}}, 500},
        {{"stiff_valley", "default", {}}, 500},
        {{"matrix_completion", "small", {}}, quick ? 200 : 1000}};
    for (const auto& [req, steps] : descent) {
        auto d = check_monotonic_descent(req, steps, seeds);
        out.push_back(d.descent);
        all_runs.insert(all_runs.end(), d.runs.begin(), d.runs.end());
    }
    for (auto kind : {harness::OptimizerKind::Adam, harness::OptimizerKind::AdamW, harness::OptimizerKind::SgdMomentum,
                      harness::OptimizerKind::FlowAdamHard}) {
        harness::ExperimentConfig cfg;
        cfg.problem = {"rosenbrock", "default", {}};
        cfg.optimizer = kind;
        cfg.mode = Mode::A;
        cfg.steps = 200;
        cfg.seeds = {1};
        cfg.record_wall_time = false;
        if (kind == harness::OptimizerKind::SgdMomentum) cfg.optimizer_params["lr"] = 1e-4;
        auto runs = harness::run_experiment(cfg);
        all_runs.insert(all_runs.end(), runs.begin(), runs.end());
    }
    out.push_back(check_accounting(all_runs));
    return out;
}

}  // namespace flowadam::verify
