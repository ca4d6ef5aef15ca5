#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "flowadam/ode_solver.hpp"
#include "flowadam/param_space.hpp"
#include "flowadam/problem.hpp"

namespace flowadam {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    /// Decoupled (AdamW) decay; 0 gives plain Adam.
    double weight_decay = 0.0;

    void validate() const {
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
            throw std::invalid_argument("AdamConfig: betas must lie in [0, 1)");
        if (!(lr > 0.0) || !(eps > 0.0))
            throw std::invalid_argument("AdamConfig: lr and eps must be positive");
        if (!(weight_decay >= 0.0)) throw std::invalid_argument("AdamConfig: weight_decay must be >= 0");
    }
};

struct SgdConfig {
    double lr = 1e-2;
    double momentum = 0.9;

    void validate() const {
        if (!(lr > 0.0)) throw std::invalid_argument("SgdConfig: lr must be positive");
        if (!(momentum >= 0.0 && momentum < 1.0))
            throw std::invalid_argument("SgdConfig: momentum must lie in [0, 1)");
    }
};

enum class InjectionMode { Soft, Hard };

inline std::string_view to_string(InjectionMode m) { return m == InjectionMode::Soft ? "soft" : "hard"; }

enum class Mode { A, B };

inline std::string_view to_string(Mode m) { return m == Mode::A ? "A" : "B"; }

inline Mode parse_mode(std::string_view s) {
    if (s == "A" || s == "a") return Mode::A;
    if (s == "B" || s == "b") return Mode::B;
    throw std::invalid_argument("unknown mode '" + std::string(s) + "' (expected A or B)");
}

inline constexpr std::size_t kNoWarmupEnd = std::numeric_limits<std::size_t>::max();

struct FlowAdamConfig {
    AdamConfig adam;
    double beta_ema = 0.9;
    /// Plateau sensitivity: trigger when ||g|| < alpha_s * g_bar.
    double alpha_s = 0.9;
    /// Variation sensitivity: trigger when ||g - g_prev|| > alpha_c * c_bar.
    double alpha_c = 0.1;
    double gamma = 0.5;
    /// ODE time scale; each segment spans lr * tau.
    double tau = 0.5;
    /// No triggers while t <= t_warmup. kNoWarmupEnd disables triggering.
    std::size_t t_warmup = 10;
    double vel_clip_factor = 5.0;
    InjectionMode injection = InjectionMode::Soft;
    ode::OdeConfig ode;

    void validate() const {
        adam.validate();
        ode.validate();
        if (!(beta_ema >= 0.0 && beta_ema < 1.0))
            throw std::invalid_argument("FlowAdamConfig: beta_ema must lie in [0, 1)");
        if (!(gamma >= 0.0 && gamma <= 1.0))
            throw std::invalid_argument("FlowAdamConfig: gamma must lie in [0, 1]");
        if (!(alpha_s > 0.0) || !(alpha_c > 0.0))
            throw std::invalid_argument("FlowAdamConfig: alpha_s and alpha_c must be positive");
        if (!(tau >= 0.0)) throw std::invalid_argument("FlowAdamConfig: tau must be >= 0");
        if (!(vel_clip_factor > 0.0))
            throw std::invalid_argument("FlowAdamConfig: vel_clip_factor must be positive");
    }

    /// Settings that are legal but known to behave badly.
    std::vector<std::string> warnings() const {
        std::vector<std::string> w;
        if (alpha_s > 1.0)
            w.push_back("alpha_s > 1: the plateau test fires on almost every step, "
                        "degenerating into always-ODE mode");
        return w;
    }
};

/// Mode A: conservative triggering for stochastic training. Mode B: aggressive, full-batch.
inline FlowAdamConfig mode_preset(Mode mode) {
    FlowAdamConfig cfg;
    switch (mode) {
        case Mode::A:
            cfg.alpha_s = 0.4;
            cfg.alpha_c = 3.0;
            cfg.tau = 2.0;
            break;
        case Mode::B:
            cfg.alpha_s = 0.9;
            cfg.alpha_c = 0.1;
            cfg.tau = 0.5;
            break;
    }
    return cfg;
}

inline FlowAdamConfig mode_preset(std::string_view mode) { return mode_preset(parse_mode(mode)); }

// ---------------------------------------------------------------------------
// Baseline steps
// ---------------------------------------------------------------------------

struct AdamState {
    ParamVector m;
    ParamVector v;
    /// Number of Adam updates applied; drives bias correction.
    std::size_t step_count = 0;

    static AdamState zeros_like(const ParamVector& theta) {
        return AdamState{ParamVector::zeros_like(theta), ParamVector::zeros_like(theta), 0};
    }
};

inline void require_finite_gradient(const ParamVector& g, const char* who) {
    if (!all_finite(g.values())) throw std::domain_error(std::string(who) + ": non-finite gradient");
}

/// Bias-corrected Adam update; AdamW decay is applied to theta before the moments.
inline void adam_step(ParamVector& theta, AdamState& st, const ParamVector& g, const AdamConfig& cfg) {
    if (g.size() != theta.size() || st.m.size() != theta.size() || st.v.size() != theta.size())
        throw std::invalid_argument("adam_step: length mismatch");
    require_finite_gradient(g, "adam_step");

    const std::size_t k = ++st.step_count;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(k));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(k));
    const double decay = cfg.lr * cfg.weight_decay;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        if (decay != 0.0) theta[i] -= decay * theta[i];
        st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * g[i];
        st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        const double m_hat = st.m[i] / bc1;
        const double v_hat = st.v[i] / bc2;
        theta[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
}

struct SgdState {
    ParamVector buf;
};

inline void sgd_momentum_step(ParamVector& theta, SgdState& st, const ParamVector& g, double lr,
                              double momentum) {
    if (g.size() != theta.size()) throw std::invalid_argument("sgd_momentum_step: length mismatch");
    require_finite_gradient(g, "sgd_momentum_step");
    if (st.buf.size() != theta.size()) st.buf = ParamVector::zeros_like(theta);
    for (std::size_t i = 0; i < theta.size(); ++i) {
        st.buf[i] = momentum * st.buf[i] + g[i];
        theta[i] -= lr * st.buf[i];
    }
}

// ---------------------------------------------------------------------------
// FlowAdam building blocks
// ---------------------------------------------------------------------------

/// Componentwise clamp to [-1, 1].
inline ParamVector clip_grad(const ParamVector& g) {
    ParamVector out = ParamVector::zeros_like(g);
    for (std::size_t i = 0; i < g.size(); ++i) out[i] = std::clamp(g[i], -1.0, 1.0);
    return out;
}

/// Rescales v_ode so that ||v_ode|| <= factor * ||m||. m == 0 yields zero.
inline ParamVector clip_vel(const ParamVector& v_ode, const ParamVector& m, double factor = 5.0) {
    if (v_ode.size() != m.size()) throw std::invalid_argument("clip_vel: length mismatch");
    const double v_norm = l2_norm(v_ode);
    const double limit = factor * l2_norm(m);
    if (v_norm <= limit) return v_ode;
    return scaled(v_ode, limit / v_norm);
}

/// (1 - gamma) * m + gamma * v
inline ParamVector soft_inject(const ParamVector& m, const ParamVector& v_clipped, double gamma) {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("soft_inject: gamma outside [0, 1]");
    return axpby(1.0 - gamma, m, gamma, v_clipped);
}

/// Overwrites the momentum with the ODE velocity. Only used for the ablation.
inline ParamVector hard_inject(const ParamVector& /*m*/, const ParamVector& v) { return v; }

struct FlowAdamState {
    AdamState adam;
    double g_bar = 0.0;
    double c_bar = 0.0;
    ParamVector g_prev;
    /// Outer step index; the step being executed has index t.
    std::size_t t = 0;
    std::size_t trigger_count = 0;
    std::size_t total_nfe = 0;
    std::size_t fallback_count = 0;

    static FlowAdamState zeros_like(const ParamVector& theta) {
        FlowAdamState s;
        s.adam = AdamState::zeros_like(theta);
        s.g_prev = ParamVector::zeros_like(theta);
        return s;
    }

    /// Gradient evaluations consumed so far: one per outer step plus ODE evaluations.
    std::size_t total_grad_evals() const noexcept { return t + total_nfe; }
};

struct EmaNorms {
    double grad_norm = 0.0;
    double change_norm = 0.0;
};

/// g_bar and c_bar EMA update. g_prev is left for the caller to advance.
inline EmaNorms update_emas(FlowAdamState& st, const ParamVector& g, double beta_ema) {
    EmaNorms n{l2_norm(g), distance(g.values(), st.g_prev.values())};
    st.g_bar = beta_ema * st.g_bar + (1.0 - beta_ema) * n.grad_norm;
    st.c_bar = beta_ema * st.c_bar + (1.0 - beta_ema) * n.change_norm;
    return n;
}

struct TriggerDecision {
    bool fired = false;
    bool plateau = false;
    bool grad_change = false;
    double grad_norm = 0.0;
    double change_norm = 0.0;
};

/// Expects the EMAs to already include the current gradient.
inline TriggerDecision should_trigger(const FlowAdamState& st, const ParamVector& g,
                                      const FlowAdamConfig& cfg) {
    TriggerDecision d;
    d.grad_norm = l2_norm(g);
    d.change_norm = distance(g.values(), st.g_prev.values());
    d.plateau = d.grad_norm < cfg.alpha_s * st.g_bar;
    d.grad_change = d.change_norm > cfg.alpha_c * st.c_bar;
    d.fired = (d.plateau || d.grad_change) && st.t > cfg.t_warmup;
    return d;
}

struct OdeProposal {
    ParamVector theta_new;
    ParamVector v_ode;
    std::size_t nfe = 0;
    ode::OdeStatus status = ode::OdeStatus::Success;
};

/// Integrates dtheta/dt = -clip_grad(grad L) over [0, lr * tau]; v_ode = (theta - theta_new) / lr.
inline OdeProposal ode_propose(const Problem& problem, const ParamVector& theta, const FlowAdamConfig& cfg) {
    const double span = cfg.adam.lr * cfg.tau;
    auto field = [&problem](const ParamVector& y) {
        ParamVector g = problem.evaluate(y).grad;
        for (double& x : g) x = -std::clamp(x, -1.0, 1.0);
        return g;
    };
    ode::OdeResult r = ode::integrate(field, theta, span, cfg.ode);

    OdeProposal p;
    p.nfe = r.nfe;
    p.status = r.status;
    if (r.ok()) {
        p.v_ode = axpby(1.0 / cfg.adam.lr, theta, -1.0 / cfg.adam.lr, r.y_end);
        p.theta_new = std::move(r.y_end);
    }
    return p;
}

struct StepEvent {
    std::size_t t = 0;
    /// Loss at the parameters the step started from.
    double loss = 0.0;
    bool triggered = false;
    /// The ODE segment failed and an Adam step was taken instead.
    bool fallback = false;
    std::size_t nfe = 0;
    ode::OdeStatus ode_status = ode::OdeStatus::Success;
    TriggerDecision decision;

    /// True when the step moved theta along an accepted ODE segment.
    bool ode_accepted() const noexcept { return triggered && !fallback; }
    std::size_t grad_evals() const noexcept { return 1 + nfe; }
};

/**
 * One outer FlowAdam iteration.
 *
 * Gradient, EMA update, trigger test. On a trigger the clipped flow is integrated
 * and its velocity injected into the first moment; v and the Adam step counter
 * are left alone. Otherwise (or if the integrator fails) a plain Adam step runs.
 * g_prev advances last.
 */
inline StepEvent flowadam_step(const Problem& problem, ParamVector& theta, FlowAdamState& st,
                               const FlowAdamConfig& cfg) {
    ++st.t;
    StepEvent ev;
    ev.t = st.t;

    LossGrad lg = problem.evaluate(theta);
    ev.loss = lg.loss;
    const ParamVector& g = lg.grad;
    require_finite_gradient(g, "flowadam_step");

    update_emas(st, g, cfg.beta_ema);
    ev.decision = should_trigger(st, g, cfg);

    bool adam_needed = true;
    if (ev.decision.fired) {
        ev.triggered = true;
        ++st.trigger_count;
        OdeProposal p = ode_propose(problem, theta, cfg);
        ev.nfe = p.nfe;
        ev.ode_status = p.status;
        st.total_nfe += p.nfe;
        if (p.status == ode::OdeStatus::Success) {
            ParamVector v_clipped = clip_vel(p.v_ode, st.adam.m, cfg.vel_clip_factor);
            st.adam.m = cfg.injection == InjectionMode::Soft ? soft_inject(st.adam.m, v_clipped, cfg.gamma)
                                                             : hard_inject(st.adam.m, v_clipped);
            theta = std::move(p.theta_new);
            adam_needed = false;
        } else {
            ev.fallback = true;
            ++st.fallback_count;
        }
    }
    if (adam_needed) adam_step(theta, st.adam, g, cfg.adam);

    st.g_prev = g;
    return ev;
}

}  // namespace flowadam
