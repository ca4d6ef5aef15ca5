#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "flowadam/optimizers.hpp"
#include "flowadam/problems/rosenbrock.hpp"

using namespace flowadam;

namespace {

/// L = 0.5 * sum_i d_i x_i^2
Problem diagonal_quadratic(std::vector<double> d) {
    Problem p;
    p.name = "quadratic";
    p.dim = d.size();
    p.layout = make_layout({{"x", d.size()}});
    p.loss_grad = [d](const ParamVector& x) {
        LossGrad lg{0.0, ParamVector::zeros_like(x)};
        for (std::size_t i = 0; i < d.size(); ++i) {
            lg.loss += 0.5 * d[i] * x[i] * x[i];
            lg.grad[i] = d[i] * x[i];
        }
        return lg;
    };
    return p;
}

// Scalar textbook Adam, written independently of adam_step.
struct RefAdam {
    double m = 0, v = 0;
    int t = 0;
    double step(double x, double g, double lr = 1e-3, double b1 = 0.9, double b2 = 0.999, double eps = 1e-8) {
        ++t;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
        return x - lr * mh / (std::sqrt(vh) + eps);
    }
};

}  // namespace

TEST(Adam, MatchesScalarReferenceOverSeveralSteps) {
    ParamVector theta{1.0, -2.0, 0.5};
    AdamState st = AdamState::zeros_like(theta);
    std::vector<RefAdam> ref(3);
    std::vector<double> x{1.0, -2.0, 0.5};
    for (int k = 0; k < 25; ++k) {
        ParamVector g{std::sin(k + 1.0), 3.0 * x[1], -0.1 * k};
        std::vector<double> gv{g[0], g[1], g[2]};
        adam_step(theta, st, g, AdamConfig{});
        for (int i = 0; i < 3; ++i) x[i] = ref[i].step(x[i], gv[i]);
        for (int i = 0; i < 3; ++i) EXPECT_NEAR(theta[i], x[i], 1e-14);
    }
    EXPECT_EQ(st.step_count, 25u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    ParamVector theta{0.0, 0.0};
    AdamState st = AdamState::zeros_like(theta);
    adam_step(theta, st, ParamVector{5.0, -0.2}, AdamConfig{});
    EXPECT_NEAR(theta[0], -1e-3, 1e-10);
    EXPECT_NEAR(theta[1], 1e-3, 1e-9);
}

TEST(Adam, NonFiniteGradientLeavesStateUntouched) {
    ParamVector theta{1.0, 1.0};
    AdamState st = AdamState::zeros_like(theta);
    adam_step(theta, st, ParamVector{0.1, 0.2}, AdamConfig{});
    const ParamVector theta_before = theta, m_before = st.m;
    EXPECT_THROW(adam_step(theta, st, ParamVector{std::nan(""), 0.0}, AdamConfig{}), std::domain_error);
    EXPECT_EQ(theta, theta_before);
    EXPECT_EQ(st.m, m_before);
    EXPECT_EQ(st.step_count, 1u);
}

TEST(AdamW, DecoupledDecayShrinksParametersWithoutGradient) {
    ParamVector theta{2.0};
    AdamState st = AdamState::zeros_like(theta);
    AdamConfig cfg;
    cfg.weight_decay = 0.1;
    cfg.lr = 0.01;
    adam_step(theta, st, ParamVector{0.0}, cfg);
    EXPECT_DOUBLE_EQ(theta[0], 2.0 * (1.0 - 0.01 * 0.1));
}

TEST(Sgd, MomentumRecurrence) {
    ParamVector theta{1.0};
    SgdState st;
    sgd_momentum_step(theta, st, ParamVector{2.0}, 0.1, 0.9);
    EXPECT_DOUBLE_EQ(theta[0], 1.0 - 0.1 * 2.0);
    sgd_momentum_step(theta, st, ParamVector{1.0}, 0.1, 0.9);
    EXPECT_DOUBLE_EQ(theta[0], 0.8 - 0.1 * (0.9 * 2.0 + 1.0));
}

TEST(ClipGrad, ClampsComponentwise) {
    auto c = clip_grad(ParamVector{-3.0, -0.5, 0.0, 0.7, 12.0});
    EXPECT_EQ(c, (ParamVector{-1.0, -0.5, 0.0, 0.7, 1.0}));
    const ParamVector in_box{0.3, -1.0, 1.0};
    EXPECT_EQ(clip_grad(in_box), in_box);
}

TEST(ClipGrad, IdempotentAndSignPreserving) {
    Rng rng(21);
    for (int k = 0; k < 500; ++k) {
        ParamVector g = gaussian_fill(rng, 8, 0.0, 4.0);
        auto c = clip_grad(g);
        EXPECT_EQ(clip_grad(c), c);
        for (std::size_t i = 0; i < g.size(); ++i) EXPECT_GE(g[i] * c[i], 0.0);
    }
}

TEST(ClipVel, ZeroMomentumGivesZero) {
    auto c = clip_vel(ParamVector{1.0, 2.0}, ParamVector{0.0, 0.0});
    EXPECT_EQ(l2_norm(c), 0.0);
}

TEST(ClipVel, UnderThresholdUnchanged) {
    const ParamVector v{3.0, 4.0};  // norm 5
    EXPECT_EQ(clip_vel(v, ParamVector{1.0, 0.0}), v);
}

TEST(ClipVel, RescalesToFiveTimesMomentumNorm) {
    const ParamVector v{30.0, 40.0};  // norm 50
    auto c = clip_vel(v, ParamVector{0.0, 2.0});
    EXPECT_NEAR(l2_norm(c), 10.0, 1e-12);
    EXPECT_NEAR(c[0] / c[1], 0.75, 1e-12);
}

TEST(ClipVel, BoundHoldsOnRandomInputs) {
    Rng rng(4);
    for (int k = 0; k < 1000; ++k) {
        auto v = gaussian_fill(rng, 10, 0.0, rng.uniform(0.0, 50.0));
        auto m = gaussian_fill(rng, 10, 0.0, rng.uniform(0.0, 2.0));
        EXPECT_LE(l2_norm(clip_vel(v, m)), 5.0 * l2_norm(m) + 1e-12);
    }
}

TEST(SoftInject, EndpointsAndRange) {
    const ParamVector m{1.0, 0.0}, v{0.0, 2.0};
    EXPECT_EQ(soft_inject(m, v, 0.0), m);
    EXPECT_EQ(soft_inject(m, v, 1.0), v);
    auto half = soft_inject(m, v, 0.5);
    EXPECT_DOUBLE_EQ(half[0], 0.5);
    EXPECT_DOUBLE_EQ(half[1], 1.0);
    EXPECT_THROW(soft_inject(m, v, 1.5), std::invalid_argument);
    EXPECT_THROW(soft_inject(m, v, -0.1), std::invalid_argument);
}

TEST(SoftInject, ConvexBlendNormBound) {
    Rng rng(99);
    for (int k = 0; k < 1000; ++k) {
        auto m = gaussian_fill(rng, 6, 0.0, rng.uniform(0.01, 5.0));
        auto v = gaussian_fill(rng, 6, 0.0, rng.uniform(0.01, 5.0));
        const double gamma = rng.uniform();
        EXPECT_LE(l2_norm(soft_inject(m, v, gamma)), std::max(l2_norm(m), l2_norm(v)) + 1e-12);
    }
}

TEST(HardInject, ReplacesMomentum) {
    EXPECT_EQ(hard_inject(ParamVector{1.0, 1.0}, ParamVector{-2.0, 3.0}), (ParamVector{-2.0, 3.0}));
}

TEST(ModePreset, QuotedConstants) {
    auto a = mode_preset(Mode::A);
    EXPECT_EQ(a.alpha_s, 0.4);
    EXPECT_EQ(a.alpha_c, 3.0);
    EXPECT_EQ(a.tau, 2.0);
    auto b = mode_preset("B");
    EXPECT_EQ(b.alpha_s, 0.9);
    EXPECT_EQ(b.alpha_c, 0.1);
    EXPECT_EQ(b.tau, 0.5);
    for (const auto& c : {a, b}) {
        EXPECT_EQ(c.gamma, 0.5);
        EXPECT_EQ(c.beta_ema, 0.9);
        EXPECT_EQ(c.t_warmup, 10u);
        EXPECT_EQ(c.vel_clip_factor, 5.0);
        EXPECT_EQ(c.ode.rtol, 1e-4);
        EXPECT_EQ(c.ode.atol, 1e-4);
        EXPECT_EQ(c.adam.lr, 1e-3);
    }
    EXPECT_THROW(mode_preset("C"), std::invalid_argument);
}

TEST(FlowAdamConfig, WarnsWhenPlateauThresholdExceedsOne) {
    auto cfg = mode_preset(Mode::B);
    EXPECT_TRUE(cfg.warnings().empty());
    cfg.alpha_s = 1.5;
    EXPECT_EQ(cfg.warnings().size(), 1u);
    cfg.gamma = 2.0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Emas, UpdateFromZeroState) {
    FlowAdamState st = FlowAdamState::zeros_like(ParamVector{0.0, 0.0});
    auto n = update_emas(st, ParamVector{3.0, 4.0}, 0.9);
    EXPECT_DOUBLE_EQ(n.grad_norm, 5.0);
    EXPECT_DOUBLE_EQ(st.g_bar, 0.5);
    EXPECT_DOUBLE_EQ(st.c_bar, 0.5);
}

TEST(Trigger, StrictInequalities) {
    FlowAdamConfig cfg = mode_preset(Mode::B);
    cfg.t_warmup = 0;
    FlowAdamState st = FlowAdamState::zeros_like(ParamVector{0.0});
    st.t = 5;
    st.g_prev = ParamVector{0.5};
    // Both thresholds hit with equality (0.9 * 1 and 0.1 * 4 are exact): nothing fires.
    st.g_bar = 1.0;
    st.c_bar = 4.0;
    auto d = should_trigger(st, ParamVector{0.9}, cfg);
    EXPECT_FALSE(d.plateau);
    EXPECT_FALSE(d.grad_change);
    EXPECT_FALSE(d.fired);
    d = should_trigger(st, ParamVector{0.85}, cfg);
    EXPECT_TRUE(d.plateau);
    EXPECT_FALSE(d.grad_change);
    EXPECT_TRUE(d.fired);
    d = should_trigger(st, ParamVector{0.95}, cfg);
    EXPECT_FALSE(d.plateau);
    EXPECT_TRUE(d.grad_change);
    EXPECT_TRUE(d.fired);
}

TEST(Trigger, SuppressedDuringWarmup) {
    FlowAdamConfig cfg = mode_preset(Mode::B);
    FlowAdamState st = FlowAdamState::zeros_like(ParamVector{0.0});
    st.g_bar = 10.0;
    st.c_bar = 0.0;
    st.t = 10;
    EXPECT_FALSE(should_trigger(st, ParamVector{1.0}, cfg).fired);
    st.t = 11;
    EXPECT_TRUE(should_trigger(st, ParamVector{1.0}, cfg).fired);
}

TEST(FlowAdamStep, WarmupStepsAreAdamSteps) {
    const Problem p = diagonal_quadratic({1.0, 100.0});
    ParamVector a{1.0, 1.0}, b{1.0, 1.0};
    auto cfg = mode_preset(Mode::B);
    FlowAdamState st = FlowAdamState::zeros_like(a);
    AdamState ref = AdamState::zeros_like(b);
    for (int k = 0; k < 10; ++k) {
        auto ev = flowadam_step(p, a, st, cfg);
        EXPECT_FALSE(ev.triggered);
        adam_step(b, ref, p.evaluate(b).grad, cfg.adam);
    }
    EXPECT_EQ(a, b);
}

TEST(FlowAdamStep, TriggeredStepFollowsTheAlgorithm) {
    const Problem p = diagonal_quadratic({1.0, 100.0});
    ParamVector theta{1.0, 1.0};
    auto cfg = mode_preset(Mode::B);
    FlowAdamState st = FlowAdamState::zeros_like(theta);
    for (int k = 0; k < 10; ++k) flowadam_step(p, theta, st, cfg);

    // Force a trigger with a large gradient-change EMA shortfall.
    st.c_bar = 0.0;
    const FlowAdamState before = st;
    const ParamVector theta_before = theta;
    const ParamVector g = p.evaluate(theta).grad;
    auto ev = flowadam_step(p, theta, st, cfg);
    ASSERT_TRUE(ev.triggered);
    ASSERT_TRUE(ev.ode_accepted());

    // Endpoint of the clipped flow over [0, lr * tau] from theta_before.
    auto field = [&](const ParamVector& y) {
        ParamVector f = p.evaluate(y).grad;
        for (double& x : f) x = -std::clamp(x, -1.0, 1.0);
        return f;
    };
    auto r = ode::integrate(field, theta_before, cfg.adam.lr * cfg.tau, cfg.ode);
    EXPECT_EQ(theta, r.y_end);
    EXPECT_EQ(ev.nfe, r.nfe);

    ParamVector v_ode = scaled(axpby(1.0, theta_before, -1.0, r.y_end), 1.0 / cfg.adam.lr);
    ParamVector expect_m = axpby(0.5, before.adam.m, 0.5, clip_vel(v_ode, before.adam.m));
    for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(st.adam.m[i], expect_m[i], 1e-12);
    EXPECT_EQ(st.adam.v, before.adam.v);
    EXPECT_EQ(st.adam.step_count, before.adam.step_count);
    EXPECT_EQ(st.g_prev, g);
    EXPECT_EQ(st.trigger_count, before.trigger_count + 1);
    EXPECT_EQ(st.total_nfe, before.total_nfe + ev.nfe);
}

TEST(FlowAdamStep, HardInjectionOverwritesMomentum) {
    const Problem p = diagonal_quadratic({1.0, 100.0});
    ParamVector theta{1.0, 1.0};
    auto cfg = mode_preset(Mode::B);
    cfg.injection = InjectionMode::Hard;
    FlowAdamState st = FlowAdamState::zeros_like(theta);
    for (int k = 0; k < 10; ++k) flowadam_step(p, theta, st, cfg);
    st.c_bar = 0.0;
    const ParamVector m_before = st.adam.m, theta_before = theta;
    auto ev = flowadam_step(p, theta, st, cfg);
    ASSERT_TRUE(ev.ode_accepted());
    ParamVector v_ode = scaled(axpby(1.0, theta_before, -1.0, theta), 1.0 / cfg.adam.lr);
    auto expect_m = clip_vel(v_ode, m_before);
    for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(st.adam.m[i], expect_m[i], 1e-9);
}

TEST(FlowAdamStep, SolverFailureFallsBackToAdam) {
    const Problem p = diagonal_quadratic({1.0, 100.0});
    ParamVector theta{1.0, 1.0};
    auto cfg = mode_preset(Mode::B);
    cfg.ode.max_field_evals = 7;  // room for one stage set, the span needs several
    FlowAdamState st = FlowAdamState::zeros_like(theta);
    for (int k = 0; k < 10; ++k) flowadam_step(p, theta, st, cfg);
    st.c_bar = 0.0;
    FlowAdamState shadow = st;
    ParamVector theta_shadow = theta;
    adam_step(theta_shadow, shadow.adam, p.evaluate(theta_shadow).grad, cfg.adam);

    auto ev = flowadam_step(p, theta, st, cfg);
    EXPECT_TRUE(ev.triggered);
    EXPECT_TRUE(ev.fallback);
    EXPECT_EQ(ev.ode_status, ode::OdeStatus::EvalBudgetExceeded);
    EXPECT_EQ(theta, theta_shadow);
    EXPECT_EQ(st.adam.step_count, shadow.adam.step_count);
    EXPECT_EQ(st.fallback_count, 1u);
    EXPECT_GT(ev.nfe, 0u);
}

TEST(FlowAdamStep, DisabledTriggerReproducesAdamOnRosenbrock) {
    const Problem p = problems::rosenbrock();
    ParamVector a{-1.5, 1.5}, b{-1.5, 1.5};
    auto cfg = mode_preset(Mode::B);
    cfg.t_warmup = kNoWarmupEnd;
    FlowAdamState st = FlowAdamState::zeros_like(a);
    AdamState ref = AdamState::zeros_like(b);
    for (int k = 0; k < 1000; ++k) {
        flowadam_step(p, a, st, cfg);
        adam_step(b, ref, p.evaluate(b).grad, cfg.adam);
        ASSERT_LE(std::abs(a[0] - b[0]), 1e-12);
        ASSERT_LE(std::abs(a[1] - b[1]), 1e-12);
    }
    EXPECT_EQ(st.trigger_count, 0u);
}

TEST(FlowAdamStep, AccountingCountsOuterStepsPlusNfe) {
    const Problem p = problems::rosenbrock();
    ParamVector theta{-1.5, 1.5};
    auto cfg = mode_preset(Mode::B);
    FlowAdamState st = FlowAdamState::zeros_like(theta);
    std::size_t evals = 0;
    for (int k = 0; k < 200; ++k) evals += flowadam_step(p, theta, st, cfg).grad_evals();
    EXPECT_EQ(st.total_grad_evals(), evals);
    EXPECT_EQ(evals, 200u + st.total_nfe);
    EXPECT_GT(st.trigger_count, 0u);
}
