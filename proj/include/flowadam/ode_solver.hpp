#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string_view>

#include "flowadam/param_space.hpp"

namespace flowadam::ode {

/// Tolerances and limits for the adaptive Dormand-Prince integrator.
struct OdeConfig {
    double rtol = 1e-4;
    double atol = 1e-4;
    std::size_t max_field_evals = 1000;
    /// Absolute lower bound on the step. Unset means 1e-12 * span.
    std::optional<double> min_step;
    double safety = 0.9;
    double max_step_growth = 5.0;
    /// Initial step as a fraction of the span.
    double initial_step_fraction = 0.1;

    void validate() const {
        if (!(rtol > 0.0) || !(atol > 0.0))
            throw std::invalid_argument("OdeConfig: rtol and atol must be positive");
        if (max_field_evals < 7)
            throw std::invalid_argument("OdeConfig: max_field_evals must allow one full stage set (7)");
        if (!(safety > 0.0 && safety <= 1.0))
            throw std::invalid_argument("OdeConfig: safety must be in (0, 1]");
        if (!(max_step_growth > 1.0))
            throw std::invalid_argument("OdeConfig: max_step_growth must exceed 1");
        if (!(initial_step_fraction > 0.0 && initial_step_fraction <= 1.0))
            throw std::invalid_argument("OdeConfig: initial_step_fraction must be in (0, 1]");
    }
};

enum class OdeStatus { Success, StepUnderflow, EvalBudgetExceeded, NonFiniteField };

inline std::string_view to_string(OdeStatus s) {
    switch (s) {
        case OdeStatus::Success: return "success";
        case OdeStatus::StepUnderflow: return "step_underflow";
        case OdeStatus::EvalBudgetExceeded: return "eval_budget_exceeded";
        case OdeStatus::NonFiniteField: return "non_finite_field";
    }
    return "unknown";
}

/// Endpoint of an integration. y_end is meaningless unless status == Success.
struct OdeResult {
    ParamVector y_end;
    std::size_t nfe = 0;
    OdeStatus status = OdeStatus::Success;
    std::size_t accepted_steps = 0;
    std::size_t rejected_steps = 0;

    bool ok() const noexcept { return status == OdeStatus::Success; }
};

/// Dormand-Prince 5(4) tableau.
namespace dopri5 {
inline constexpr std::array<double, 7> c = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
inline constexpr double a21 = 1.0 / 5;
inline constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
inline constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
inline constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                        a54 = -212.0 / 729;
inline constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                        a64 = 49.0 / 176, a65 = -5103.0 / 18656;
// Row 7 equals the 5th-order weights (FSAL).
inline constexpr std::array<double, 7> b5 = {35.0 / 384,     0.0, 500.0 / 1113, 125.0 / 192,
                                             -2187.0 / 6784, 11.0 / 84, 0.0};
inline constexpr std::array<double, 7> b4 = {5179.0 / 57600,     0.0,          7571.0 / 16695,
                                             393.0 / 640,        -92097.0 / 339200,
                                             187.0 / 2100,       1.0 / 40};
}  // namespace dopri5

/// One Dormand-Prince trial step.
struct StepResult {
    ParamVector y_candidate;
    /// Weighted RMS of (y5 - y4) against atol + rtol*max(|y|, |y5|).
    double error_estimate = 0.0;
    std::size_t nfe_used = 0;
    /// Field at y_candidate, reusable as k1 of the next step (FSAL).
    ParamVector k_last;
    bool finite = true;
};

namespace detail {

inline bool finite_field(const ParamVector& k) { return all_finite(k.values()); }

/// out = y + h * sum_j coeffs[j] * ks[j]
template <std::size_t N>
void stage_point(ParamVector& out, const ParamVector& y, double h,
                 const std::array<const ParamVector*, N>& ks, const std::array<double, N>& coeffs) {
    const std::size_t n = y.size();
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < N; ++j) acc += coeffs[j] * (*ks[j])[i];
        out[i] = y[i] + h * acc;
    }
}

}  // namespace detail

/**
 * Evaluates one Dormand-Prince 5(4) step of size h from y.
 *
 * Pass the field value at y as `k1` to reuse it (6 evaluations); otherwise it is
 * computed here (7 evaluations).
 */
template <class Field>
StepResult step_once(Field&& field, const ParamVector& y, double h, const OdeConfig& cfg,
                     const ParamVector* k1 = nullptr) {
    using namespace dopri5;
    if (!(h > 0.0)) throw std::invalid_argument("step_once: h must be positive");

    StepResult out;
    ParamVector k1_local;
    if (k1 == nullptr) {
        k1_local = field(y);
        ++out.nfe_used;
        if (!detail::finite_field(k1_local)) {
            out.finite = false;
            return out;
        }
        k1 = &k1_local;
    }

    ParamVector tmp = ParamVector::zeros_like(y);
    auto eval = [&](ParamVector& k) {
        k = field(tmp);
        ++out.nfe_used;
        return detail::finite_field(k);
    };

    ParamVector k2, k3, k4, k5, k6, k7;
    detail::stage_point<1>(tmp, y, h, {k1}, {a21});
    if (!eval(k2)) return out.finite = false, out;
    detail::stage_point<2>(tmp, y, h, {k1, &k2}, {a31, a32});
    if (!eval(k3)) return out.finite = false, out;
    detail::stage_point<3>(tmp, y, h, {k1, &k2, &k3}, {a41, a42, a43});
    if (!eval(k4)) return out.finite = false, out;
    detail::stage_point<4>(tmp, y, h, {k1, &k2, &k3, &k4}, {a51, a52, a53, a54});
    if (!eval(k5)) return out.finite = false, out;
    detail::stage_point<5>(tmp, y, h, {k1, &k2, &k3, &k4, &k5}, {a61, a62, a63, a64, a65});
    if (!eval(k6)) return out.finite = false, out;

    ParamVector y5 = ParamVector::zeros_like(y);
    detail::stage_point<6>(y5, y, h, {k1, &k2, &k3, &k4, &k5, &k6},
                           {b5[0], b5[1], b5[2], b5[3], b5[4], b5[5]});
    tmp = y5;
    if (!eval(k7)) return out.finite = false, out;

    const std::size_t n = y.size();
    double sum_sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double diff = h * ((b5[0] - b4[0]) * (*k1)[i] + (b5[2] - b4[2]) * k3[i] +
                                 (b5[3] - b4[3]) * k4[i] + (b5[4] - b4[4]) * k5[i] +
                                 (b5[5] - b4[5]) * k6[i] + (b5[6] - b4[6]) * k7[i]);
        const double scale = cfg.atol + cfg.rtol * std::max(std::abs(y[i]), std::abs(y5[i]));
        const double w = diff / scale;
        sum_sq += w * w;
    }
    out.error_estimate = n == 0 ? 0.0 : std::sqrt(sum_sq / static_cast<double>(n));
    out.y_candidate = std::move(y5);
    out.k_last = std::move(k7);
    return out;
}

/**
 * Integrates dy/dt = field(y) from y0 over [0, t_span] with adaptive step control.
 *
 * Failure statuses (step underflow, evaluation budget, non-finite field) are
 * reported in the result, never thrown.
 */
template <class Field>
OdeResult integrate(Field&& field, const ParamVector& y0, double t_span, const OdeConfig& cfg) {
    cfg.validate();
    if (!(t_span >= 0.0) || !std::isfinite(t_span))
        throw std::invalid_argument("integrate: t_span must be finite and >= 0");
    if (!all_finite(y0.values())) throw std::invalid_argument("integrate: y0 must be finite");

    OdeResult res;
    res.y_end = y0;
    if (t_span == 0.0) return res;

    const double min_step = cfg.min_step.value_or(1e-12 * t_span);
    const double order_exp = 1.0 / 5.0;

    ParamVector y = y0;
    ParamVector k1 = field(y);
    res.nfe = 1;
    if (!detail::finite_field(k1)) {
        res.status = OdeStatus::NonFiniteField;
        return res;
    }

    double t = 0.0;
    double h = cfg.initial_step_fraction * t_span;
    while (t < t_span) {
        const double remaining = t_span - t;
        bool last = false;
        if (h >= remaining) {
            h = remaining;
            last = true;
        }
        if (h < min_step && !last) {
            res.status = OdeStatus::StepUnderflow;
            return res;
        }
        if (res.nfe + 6 > cfg.max_field_evals) {
            res.status = OdeStatus::EvalBudgetExceeded;
            return res;
        }

        StepResult step = step_once(field, y, h, cfg, &k1);
        res.nfe += step.nfe_used;
        if (!step.finite) {
            res.status = OdeStatus::NonFiniteField;
            return res;
        }

        const double err = step.error_estimate;
        double factor;
        if (err == 0.0)
            factor = cfg.max_step_growth;
        else
            factor = std::clamp(cfg.safety * std::pow(1.0 / err, order_exp), 0.1, cfg.max_step_growth);

        if (err <= 1.0) {
            t = last ? t_span : t + h;
            y = std::move(step.y_candidate);
            k1 = std::move(step.k_last);
            ++res.accepted_steps;
        } else {
            ++res.rejected_steps;
            if (h <= min_step) {
                res.status = OdeStatus::StepUnderflow;
                return res;
            }
        }
        h *= factor;
    }
    res.y_end = std::move(y);
    return res;
}

}  // namespace flowadam::ode
