#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "flowadam/optimizers.hpp"
#include "flowadam/problems.hpp"

namespace flowadam::harness {

using problems::ProblemRequest;

enum class OptimizerKind { FlowAdam, FlowAdamHard, Adam, AdamL2, AdamW, SgdMomentum };

inline std::string to_string(OptimizerKind k) {
    switch (k) {
        case OptimizerKind::FlowAdam: return "flowadam";
        case OptimizerKind::FlowAdamHard: return "flowadam_hard";
        case OptimizerKind::Adam: return "adam";
        case OptimizerKind::AdamL2: return "adam_l2";
        case OptimizerKind::AdamW: return "adamw";
        case OptimizerKind::SgdMomentum: return "sgd_momentum";
    }
    return "unknown";
}

inline OptimizerKind parse_optimizer(const std::string& s) {
    for (auto k : {OptimizerKind::FlowAdam, OptimizerKind::FlowAdamHard, OptimizerKind::Adam, OptimizerKind::AdamL2,
                   OptimizerKind::AdamW, OptimizerKind::SgdMomentum})
        if (to_string(k) == s) return k;
    throw std::invalid_argument("unknown optimizer '" + s + "'");
}

inline bool is_flowadam(OptimizerKind k) { return k == OptimizerKind::FlowAdam || k == OptimizerKind::FlowAdamHard; }

/// Optimizers that see the explicit L2 term in the loss. The others train on the unregularized loss.
inline bool uses_loss_regularizer(OptimizerKind k) { return is_flowadam(k) || k == OptimizerKind::AdamL2; }

struct ExperimentConfig {
    std::string experiment = "experiment";
    ProblemRequest problem;
    OptimizerKind optimizer = OptimizerKind::FlowAdam;
    Mode mode = Mode::B;
    /// Overrides on top of the mode preset / baseline defaults: lr, beta1, beta2, eps, weight_decay,
    /// momentum, gamma, alpha_s, alpha_c, tau, t_warmup (<0 disables triggering), beta_ema,
    /// vel_clip_factor, rtol, atol, max_field_evals.
    std::map<std::string, double> optimizer_params;
    std::size_t steps = 1000;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    /// Evaluate the held-out metric every eval_every steps (0: only at the end).
    std::size_t eval_every = 0;
    /// Stop once cumulative gradient evaluations reach this budget.
    std::optional<std::size_t> grad_eval_budget;
    std::size_t threads = 1;
    /// Record per-step wall time; disable for byte-identical reports.
    bool record_wall_time = true;

    void validate() const {
        if (steps < 1) throw std::invalid_argument("ExperimentConfig: steps must be >= 1");
        if (seeds.empty()) throw std::invalid_argument("ExperimentConfig: seeds must be non-empty");
        if (grad_eval_budget && *grad_eval_budget < 1)
            throw std::invalid_argument("ExperimentConfig: grad_eval_budget must be >= 1");
    }
};

inline double param_or(const std::map<std::string, double>& p, const std::string& key, double fallback) {
    auto it = p.find(key);
    return it == p.end() ? fallback : it->second;
}

inline const std::vector<std::string>& known_optimizer_params() {
    static const std::vector<std::string> keys = {"lr",    "beta1",   "beta2",   "eps",      "weight_decay",
                                                  "momentum", "gamma", "alpha_s", "alpha_c", "tau",
                                                  "t_warmup", "beta_ema", "vel_clip_factor", "rtol", "atol",
                                                  "max_field_evals"};
    return keys;
}

inline void check_optimizer_params(const std::map<std::string, double>& p) {
    const auto& keys = known_optimizer_params();
    for (const auto& [k, v] : p)
        if (std::find(keys.begin(), keys.end(), k) == keys.end())
            throw std::invalid_argument("unknown optimizer parameter '" + k + "'");
}

inline AdamConfig adam_config_from(const std::map<std::string, double>& p, double default_decay) {
    AdamConfig c;
    c.lr = param_or(p, "lr", c.lr);
    c.beta1 = param_or(p, "beta1", c.beta1);
    c.beta2 = param_or(p, "beta2", c.beta2);
    c.eps = param_or(p, "eps", c.eps);
    c.weight_decay = param_or(p, "weight_decay", default_decay);
    c.validate();
    return c;
}

/// Mode preset with overrides applied.
inline FlowAdamConfig flowadam_config_from(Mode mode, const std::map<std::string, double>& p, InjectionMode inj) {
    FlowAdamConfig c = mode_preset(mode);
    c.adam = adam_config_from(p, 0.0);
    c.gamma = param_or(p, "gamma", c.gamma);
    c.alpha_s = param_or(p, "alpha_s", c.alpha_s);
    c.alpha_c = param_or(p, "alpha_c", c.alpha_c);
    c.tau = param_or(p, "tau", c.tau);
    c.beta_ema = param_or(p, "beta_ema", c.beta_ema);
    c.vel_clip_factor = param_or(p, "vel_clip_factor", c.vel_clip_factor);
    c.ode.rtol = param_or(p, "rtol", c.ode.rtol);
    c.ode.atol = param_or(p, "atol", c.ode.atol);
    if (auto it = p.find("max_field_evals"); it != p.end())
        c.ode.max_field_evals = static_cast<std::size_t>(it->second);
    if (auto it = p.find("t_warmup"); it != p.end())
        c.t_warmup = it->second < 0.0 ? kNoWarmupEnd : static_cast<std::size_t>(it->second);
    c.injection = inj;
    c.validate();
    return c;
}

/// Uniform stepping interface over the optimizers in the grid.
class StepRunner {
public:
    virtual ~StepRunner() = default;
    virtual StepEvent step(const Problem& problem, ParamVector& theta) = 0;
    /// Steps during which no trigger can fire.
    virtual std::size_t warmup() const { return 0; }
    /// Allowed loss increase across an accepted ODE segment.
    virtual double descent_slack() const { return 0.0; }
};

class AdamRunner final : public StepRunner {
public:
    AdamRunner(AdamConfig cfg, const ParamVector& theta) : cfg_(cfg), st_(AdamState::zeros_like(theta)) {}
    StepEvent step(const Problem& problem, ParamVector& theta) override {
        StepEvent ev;
        ev.t = ++t_;
        LossGrad lg = problem.evaluate(theta);
        ev.loss = lg.loss;
        adam_step(theta, st_, lg.grad, cfg_);
        return ev;
    }

private:
    AdamConfig cfg_;
    AdamState st_;
    std::size_t t_ = 0;
};

class SgdRunner final : public StepRunner {
public:
    SgdRunner(SgdConfig cfg, const ParamVector& theta) : cfg_(cfg) { st_.buf = ParamVector::zeros_like(theta); }
    StepEvent step(const Problem& problem, ParamVector& theta) override {
        StepEvent ev;
        ev.t = ++t_;
        LossGrad lg = problem.evaluate(theta);
        ev.loss = lg.loss;
        sgd_momentum_step(theta, st_, lg.grad, cfg_.lr, cfg_.momentum);
        return ev;
    }

private:
    SgdConfig cfg_;
    SgdState st_;
    std::size_t t_ = 0;
};

class FlowAdamRunner final : public StepRunner {
public:
    FlowAdamRunner(FlowAdamConfig cfg, const ParamVector& theta)
        : cfg_(std::move(cfg)), st_(FlowAdamState::zeros_like(theta)) {}
    StepEvent step(const Problem& problem, ParamVector& theta) override {
        return flowadam_step(problem, theta, st_, cfg_);
    }
    std::size_t warmup() const override { return cfg_.t_warmup; }
    double descent_slack() const override { return 10.0 * (cfg_.ode.rtol + cfg_.ode.atol); }
    const FlowAdamState& state() const noexcept { return st_; }

private:
    FlowAdamConfig cfg_;
    FlowAdamState st_;
};

inline std::unique_ptr<StepRunner> make_runner(const ExperimentConfig& cfg, const ParamVector& theta) {
    const auto& p = cfg.optimizer_params;
    check_optimizer_params(p);
    switch (cfg.optimizer) {
        case OptimizerKind::FlowAdam:
            return std::make_unique<FlowAdamRunner>(flowadam_config_from(cfg.mode, p, InjectionMode::Soft), theta);
        case OptimizerKind::FlowAdamHard:
            return std::make_unique<FlowAdamRunner>(flowadam_config_from(cfg.mode, p, InjectionMode::Hard), theta);
        case OptimizerKind::Adam:
        case OptimizerKind::AdamL2:
            return std::make_unique<AdamRunner>(adam_config_from(p, 0.0), theta);
        case OptimizerKind::AdamW:
            return std::make_unique<AdamRunner>(adam_config_from(p, 1e-2), theta);
        case OptimizerKind::SgdMomentum: {
            SgdConfig s;
            s.lr = param_or(p, "lr", s.lr);
            s.momentum = param_or(p, "momentum", s.momentum);
            s.validate();
            return std::make_unique<SgdRunner>(s, theta);
        }
    }
    throw std::logic_error("make_runner: unhandled optimizer");
}

/// Problem request as seen by a given optimizer (explicit L2 dropped for plain baselines).
inline ProblemRequest effective_problem(const ExperimentConfig& cfg) {
    ProblemRequest req = cfg.problem;
    if (!uses_loss_regularizer(cfg.optimizer) && problems::has_regularizer(req.name)) req.params["lambda"] = 0.0;
    return req;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct StepRecord {
    std::size_t step = 0;
    double train_loss = 0.0;
    std::optional<double> test_metric;
    bool triggered = false;
    std::size_t nfe = 0;
    std::size_t cum_grad_evals = 0;
    double wall_ms = 0.0;

    bool operator==(const StepRecord&) const = default;
};

struct RunFinals {
    double train_loss = 0.0;
    std::optional<double> test_metric;
    /// test_metric when the problem has one, otherwise the final train loss.
    double metric = 0.0;
    std::size_t steps_run = 0;
    std::size_t trigger_count = 0;
    double trigger_rate_all = 0.0;
    double trigger_rate_post_warmup = 0.0;
    std::size_t total_grad_evals = 0;
    std::size_t total_nfe = 0;
    std::size_t fallback_count = 0;
    std::size_t descent_checks = 0;
    std::size_t descent_violations = 0;
    double max_descent_excess = 0.0;
    bool diverged = false;
    std::optional<std::size_t> diverged_at;

    bool operator==(const RunFinals&) const = default;
};

struct RunReport {
    std::string experiment;
    std::string problem;
    std::string scenario;
    std::string optimizer;
    std::string mode;
    std::string metric_name;
    bool higher_is_better = false;
    std::uint64_t seed = 0;
    std::vector<StepRecord> steps;
    RunFinals finals;
    nlohmann::json config;

    bool operator==(const RunReport&) const = default;
};

inline nlohmann::json config_to_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["experiment"] = cfg.experiment;
    j["problem"] = cfg.problem.name;
    j["scenario"] = cfg.problem.scenario;
    j["problem_params"] = cfg.problem.params;
    j["optimizer"] = to_string(cfg.optimizer);
    j["mode"] = std::string(to_string(cfg.mode));
    j["optimizer_params"] = cfg.optimizer_params;
    j["steps"] = cfg.steps;
    j["seeds"] = cfg.seeds;
    j["eval_every"] = cfg.eval_every;
    if (cfg.grad_eval_budget) j["grad_eval_budget"] = *cfg.grad_eval_budget;
    return j;
}

using StepObserver = std::function<void(const StepEvent&, const ParamVector&)>;

/**
 * Runs one seed. Divergence (non-finite loss or gradient) ends the run and is
 * recorded, never thrown.
 */
inline RunReport run_single(const ExperimentConfig& cfg, std::uint64_t seed, const StepObserver& observer = {}) {
    cfg.validate();
    const Problem problem = problems::make_problem(effective_problem(cfg), seed);
    Rng init_rng = Rng(seed).fork(1);
    ParamVector theta = problem.init(init_rng);
    auto runner = make_runner(cfg, theta);

    RunReport rep;
    rep.experiment = cfg.experiment;
    rep.problem = cfg.problem.name;
    rep.scenario = cfg.problem.scenario;
    rep.optimizer = to_string(cfg.optimizer);
    rep.mode = std::string(to_string(cfg.mode));
    rep.seed = seed;
    rep.config = config_to_json(cfg);
    rep.metric_name = problem.has_test_metric() ? problem.metric_name : "final_loss";
    rep.higher_is_better = problem.metric_kind == MetricKind::HigherIsBetter;
    rep.steps.reserve(cfg.steps);

    auto& fin = rep.finals;
    const double slack = runner->descent_slack();
    bool descent_pending = false;
    double loss_before_segment = 0.0;
    std::size_t cum = 0;
    const auto t0 = std::chrono::steady_clock::now();

    auto check_descent = [&](double loss_after) {
        if (!descent_pending) return;
        ++fin.descent_checks;
        const double excess = loss_after - loss_before_segment;
        if (excess > slack) ++fin.descent_violations;
        fin.max_descent_excess = fin.descent_checks == 1 ? excess : std::max(fin.max_descent_excess, excess);
        descent_pending = false;
    };

    for (std::size_t t = 1; t <= cfg.steps; ++t) {
        StepEvent ev;
        try {
            ev = runner->step(problem, theta);
        } catch (const std::domain_error&) {
            fin.diverged = true;
            fin.diverged_at = t;
            break;
        }
        if (!std::isfinite(ev.loss)) {
            fin.diverged = true;
            fin.diverged_at = t;
            break;
        }
        check_descent(ev.loss);
        if (ev.ode_accepted()) {
            descent_pending = true;
            loss_before_segment = ev.loss;
        }

        cum += ev.grad_evals();
        StepRecord rec;
        rec.step = t;
        rec.train_loss = ev.loss;
        rec.triggered = ev.triggered;
        rec.nfe = ev.nfe;
        rec.cum_grad_evals = cum;
        fin.trigger_count += ev.triggered ? 1 : 0;
        fin.total_nfe += ev.nfe;
        fin.fallback_count += ev.fallback ? 1 : 0;

        const bool budget_hit = cfg.grad_eval_budget && cum >= *cfg.grad_eval_budget;
        const bool last = t == cfg.steps || budget_hit;
        if (problem.has_test_metric() && (last || (cfg.eval_every > 0 && t % cfg.eval_every == 0)))
            rec.test_metric = problem.test_metric(theta);
        if (cfg.record_wall_time)
            rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        rep.steps.push_back(rec);
        if (observer) observer(ev, theta);
        if (budget_hit) break;
    }

    fin.steps_run = rep.steps.size();
    fin.total_grad_evals = cum;
    if (!fin.diverged) {
        fin.train_loss = problem.loss(theta);
        if (!std::isfinite(fin.train_loss)) {
            fin.diverged = true;
            fin.diverged_at = fin.steps_run + 1;
        } else {
            check_descent(fin.train_loss);
        }
    }
    if (!fin.diverged) {
        if (problem.has_test_metric()) fin.test_metric = rep.steps.empty() || !rep.steps.back().test_metric
                                                             ? problem.test_metric(theta)
                                                             : *rep.steps.back().test_metric;
        fin.metric = fin.test_metric.value_or(fin.train_loss);
    } else {
        fin.train_loss = std::numeric_limits<double>::quiet_NaN();
        fin.metric = std::numeric_limits<double>::quiet_NaN();
    }

    const std::size_t warm = runner->warmup();
    fin.trigger_rate_all = fin.steps_run ? double(fin.trigger_count) / double(fin.steps_run) : 0.0;
    if (warm < fin.steps_run)
        fin.trigger_rate_post_warmup = double(fin.trigger_count) / double(fin.steps_run - warm);
    return rep;
}

/// Runs every seed, in parallel when cfg.threads > 1. Output order follows cfg.seeds.
inline std::vector<RunReport> run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    // Build one problem up front so configuration errors surface as exceptions here.
    (void)problems::make_problem(effective_problem(cfg), cfg.seeds.front());
    {
        ParamVector probe(1);
        (void)make_runner(cfg, probe);
    }

    std::vector<RunReport> out(cfg.seeds.size());
    const std::size_t workers = std::max<std::size_t>(1, std::min(cfg.threads, cfg.seeds.size()));
    if (workers == 1) {
        for (std::size_t i = 0; i < cfg.seeds.size(); ++i) out[i] = run_single(cfg, cfg.seeds[i]);
        return out;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < cfg.seeds.size(); i = next++) {
                try {
                    out[i] = run_single(cfg, cfg.seeds[i]);
                } catch (...) {
                    std::lock_guard lock(error_mu);
                    if (!error) error = std::current_exception();
                }
            }
        });
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
    return out;
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

struct MetricSummary {
    std::string metric;
    double mean = 0.0;
    double std = 0.0;
    double median = 0.0;
    std::size_t n = 0;
};

struct AggregateReport {
    std::string experiment;
    std::string problem;
    std::string scenario;
    std::string optimizer;
    std::string mode;
    std::vector<std::uint64_t> seeds;
    bool higher_is_better = false;
    MetricSummary final_metric;
    MetricSummary final_train_loss;
    std::string baseline;
    std::optional<double> improvement_pct;
    std::optional<double> improvement_median_pct;
    std::optional<double> train_loss_improvement_pct;
    double trigger_rate_all = 0.0;
    double trigger_rate_post_warmup = 0.0;
    double trigger_count_mean = 0.0;
    double total_grad_evals_mean = 0.0;
    std::size_t diverged_count = 0;
    std::size_t descent_violations = 0;
};

/// Mean, unbiased (n-1) std and median.
inline MetricSummary summarize(std::string name, std::vector<double> xs) {
    MetricSummary s;
    s.metric = std::move(name);
    s.n = xs.size();
    if (xs.empty()) {
        s.mean = s.std = s.median = std::numeric_limits<double>::quiet_NaN();
        return s;
    }
    double sum = 0.0;
    for (double x : xs) sum += x;
    s.mean = sum / double(xs.size());
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - s.mean) * (x - s.mean);
        s.std = std::sqrt(ss / double(xs.size() - 1));
    }
    std::sort(xs.begin(), xs.end());
    const std::size_t m = xs.size() / 2;
    s.median = xs.size() % 2 ? xs[m] : 0.5 * (xs[m - 1] + xs[m]);
    return s;
}

/// Relative improvement in percent: (base - cand)/base for lower-is-better, (cand - base)/base otherwise.
inline double relative_improvement_pct(double candidate, double baseline, bool higher_is_better) {
    if (baseline == 0.0) return std::numeric_limits<double>::quiet_NaN();
    return (higher_is_better ? (candidate - baseline) : (baseline - candidate)) / baseline * 100.0;
}

/**
 * Summarizes a set of per-seed runs, optionally against a baseline with the same
 * seeds. Diverged runs are excluded from every statistic and counted separately.
 */
inline AggregateReport aggregate(const std::vector<RunReport>& reports,
                                 const std::vector<RunReport>* baseline = nullptr) {
    if (reports.empty()) throw std::invalid_argument("aggregate: no reports");
    AggregateReport a;
    const auto& first = reports.front();
    a.experiment = first.experiment;
    a.problem = first.problem;
    a.scenario = first.scenario;
    a.optimizer = first.optimizer;
    a.mode = first.mode;
    a.higher_is_better = first.higher_is_better;

    std::vector<double> metric, train;
    double trig_all = 0.0, trig_post = 0.0, trig_count = 0.0, evals = 0.0;
    std::size_t ok = 0;
    for (const auto& r : reports) {
        a.seeds.push_back(r.seed);
        a.descent_violations += r.finals.descent_violations;
        if (r.finals.diverged) {
            ++a.diverged_count;
            continue;
        }
        ++ok;
        metric.push_back(r.finals.metric);
        train.push_back(r.finals.train_loss);
        trig_all += r.finals.trigger_rate_all;
        trig_post += r.finals.trigger_rate_post_warmup;
        trig_count += double(r.finals.trigger_count);
        evals += double(r.finals.total_grad_evals);
    }
    a.final_metric = summarize(first.metric_name, metric);
    a.final_train_loss = summarize("train_loss", train);
    if (ok) {
        a.trigger_rate_all = trig_all / double(ok);
        a.trigger_rate_post_warmup = trig_post / double(ok);
        a.trigger_count_mean = trig_count / double(ok);
        a.total_grad_evals_mean = evals / double(ok);
    }

    if (baseline) {
        if (baseline->size() != reports.size())
            throw std::invalid_argument("aggregate: baseline has a different number of seeds");
        std::vector<std::uint64_t> mine = a.seeds, theirs;
        for (const auto& r : *baseline) theirs.push_back(r.seed);
        std::sort(mine.begin(), mine.end());
        std::sort(theirs.begin(), theirs.end());
        if (mine != theirs) throw std::invalid_argument("aggregate: baseline seeds do not match");

        AggregateReport b = aggregate(*baseline);
        a.baseline = b.optimizer;
        a.improvement_pct = relative_improvement_pct(a.final_metric.mean, b.final_metric.mean, a.higher_is_better);
        a.improvement_median_pct =
            relative_improvement_pct(a.final_metric.median, b.final_metric.median, a.higher_is_better);
        a.train_loss_improvement_pct =
            relative_improvement_pct(a.final_train_loss.mean, b.final_train_loss.mean, false);
    }
    return a;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

class ReportParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline const char* kCsvHeader = "step,train_loss,test_metric,triggered,nfe,cum_grad_evals,wall_ms";

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[32];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, x);
        if (std::strtod(buf, nullptr) == x) break;
    }
    return buf;
}

inline nlohmann::json json_number(double x) {
    if (std::isfinite(x)) return x;
    return nullptr;
}

inline double json_double(const nlohmann::json& j) {
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

inline nlohmann::json finals_to_json(const RunFinals& f) {
    nlohmann::json j;
    j["train_loss"] = json_number(f.train_loss);
    j["test_metric"] = f.test_metric ? json_number(*f.test_metric) : nlohmann::json(nullptr);
    j["metric"] = json_number(f.metric);
    j["steps_run"] = f.steps_run;
    j["trigger_count"] = f.trigger_count;
    j["trigger_rate_all"] = f.trigger_rate_all;
    j["trigger_rate_post_warmup"] = f.trigger_rate_post_warmup;
    j["total_grad_evals"] = f.total_grad_evals;
    j["total_nfe"] = f.total_nfe;
    j["fallback_count"] = f.fallback_count;
    j["descent_checks"] = f.descent_checks;
    j["descent_violations"] = f.descent_violations;
    j["max_descent_excess"] = f.max_descent_excess;
    j["diverged"] = f.diverged;
    j["diverged_at"] = f.diverged_at ? nlohmann::json(*f.diverged_at) : nlohmann::json(nullptr);
    return j;
}

inline RunFinals finals_from_json(const nlohmann::json& j) {
    RunFinals f;
    f.train_loss = json_double(j.at("train_loss"));
    if (!j.at("test_metric").is_null()) f.test_metric = j.at("test_metric").get<double>();
    f.metric = json_double(j.at("metric"));
    f.steps_run = j.at("steps_run").get<std::size_t>();
    f.trigger_count = j.at("trigger_count").get<std::size_t>();
    f.trigger_rate_all = j.at("trigger_rate_all").get<double>();
    f.trigger_rate_post_warmup = j.at("trigger_rate_post_warmup").get<double>();
    f.total_grad_evals = j.at("total_grad_evals").get<std::size_t>();
    f.total_nfe = j.at("total_nfe").get<std::size_t>();
    f.fallback_count = j.at("fallback_count").get<std::size_t>();
    f.descent_checks = j.at("descent_checks").get<std::size_t>();
    f.descent_violations = j.at("descent_violations").get<std::size_t>();
    f.max_descent_excess = j.at("max_descent_excess").get<double>();
    f.diverged = j.at("diverged").get<bool>();
    if (!j.at("diverged_at").is_null()) f.diverged_at = j.at("diverged_at").get<std::size_t>();
    return f;
}

inline void write_steps_csv(const RunReport& r, std::ostream& out) {
    out << kCsvHeader << '\n';
    for (const auto& s : r.steps) {
        out << s.step << ',' << format_double(s.train_loss) << ','
            << (s.test_metric ? format_double(*s.test_metric) : std::string()) << ',' << (s.triggered ? 1 : 0)
            << ',' << s.nfe << ',' << s.cum_grad_evals << ',' << format_double(s.wall_ms) << '\n';
    }
}

/// `<base>.csv` holds the per-step series, `<base>.json` the finals and config echo.
inline void write_report(const RunReport& r, const std::string& base) {
    {
        std::ofstream csv(base + ".csv");
        if (!csv) throw std::runtime_error("write_report: cannot open " + base + ".csv");
        write_steps_csv(r, csv);
    }
    nlohmann::json j;
    j["experiment"] = r.experiment;
    j["problem"] = r.problem;
    j["scenario"] = r.scenario;
    j["optimizer"] = r.optimizer;
    j["mode"] = r.mode;
    j["metric_name"] = r.metric_name;
    j["higher_is_better"] = r.higher_is_better;
    j["seed"] = r.seed;
    j["finals"] = finals_to_json(r.finals);
    j["config"] = r.config;
    std::ofstream js(base + ".json");
    if (!js) throw std::runtime_error("write_report: cannot open " + base + ".json");
    js << j.dump(2) << '\n';
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    cells.push_back(cur);
    return cells;
}

template <class T>
T parse_cell(const std::string& cell, const std::string& file, std::size_t line, const char* field) {
    auto fail = [&] {
        return ReportParseError(file + ":" + std::to_string(line) + ": field '" + field + "': cannot parse '" +
                                cell + "'");
    };
    if (cell.empty()) throw fail();
    std::size_t used = 0;
    try {
        if constexpr (std::is_same_v<T, double>) {
            T v = std::stod(cell, &used);
            if (used != cell.size()) throw fail();
            return v;
        } else {
            if (cell.front() == '-') throw fail();
            T v = static_cast<T>(std::stoull(cell, &used));
            if (used != cell.size()) throw fail();
            return v;
        }
    } catch (const std::logic_error&) {
        throw fail();
    }
}

}  // namespace detail

inline std::vector<StepRecord> read_steps_csv(std::istream& in, const std::string& file) {
    std::string line;
    if (!std::getline(in, line)) throw ReportParseError(file + ":1: empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kCsvHeader) throw ReportParseError(file + ":1: unexpected header '" + line + "'");
    std::vector<StepRecord> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto c = detail::split_csv_line(line);
        if (c.size() != 7)
            throw ReportParseError(file + ":" + std::to_string(lineno) + ": expected 7 fields, got " +
                                   std::to_string(c.size()));
        StepRecord s;
        s.step = detail::parse_cell<std::size_t>(c[0], file, lineno, "step");
        s.train_loss = detail::parse_cell<double>(c[1], file, lineno, "train_loss");
        if (!c[2].empty()) s.test_metric = detail::parse_cell<double>(c[2], file, lineno, "test_metric");
        if (c[3] != "0" && c[3] != "1")
            throw ReportParseError(file + ":" + std::to_string(lineno) + ": field 'triggered': expected 0 or 1");
        s.triggered = c[3] == "1";
        s.nfe = detail::parse_cell<std::size_t>(c[4], file, lineno, "nfe");
        s.cum_grad_evals = detail::parse_cell<std::size_t>(c[5], file, lineno, "cum_grad_evals");
        s.wall_ms = detail::parse_cell<double>(c[6], file, lineno, "wall_ms");
        rows.push_back(s);
    }
    return rows;
}

inline RunReport read_report(const std::string& base) {
    RunReport r;
    {
        std::ifstream csv(base + ".csv");
        if (!csv) throw ReportParseError("cannot open " + base + ".csv");
        r.steps = read_steps_csv(csv, base + ".csv");
    }
    std::ifstream js(base + ".json");
    if (!js) throw ReportParseError("cannot open " + base + ".json");
    try {
        const auto j = nlohmann::json::parse(js);
        r.experiment = j.at("experiment").get<std::string>();
        r.problem = j.at("problem").get<std::string>();
        r.scenario = j.at("scenario").get<std::string>();
        r.optimizer = j.at("optimizer").get<std::string>();
        r.mode = j.at("mode").get<std::string>();
        r.metric_name = j.at("metric_name").get<std::string>();
        r.higher_is_better = j.at("higher_is_better").get<bool>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.finals = finals_from_json(j.at("finals"));
        r.config = j.at("config");
    } catch (const nlohmann::json::exception& e) {
        throw ReportParseError(base + ".json: " + e.what());
    }
    return r;
}

inline nlohmann::json aggregate_to_json(const AggregateReport& a) {
    auto opt = [](const std::optional<double>& v) { return v ? json_number(*v) : nlohmann::json(nullptr); };
    nlohmann::json j;
    j["experiment"] = a.experiment;
    j["problem"] = a.problem;
    j["scenario"] = a.scenario;
    j["optimizer"] = a.optimizer;
    j["mode"] = a.mode;
    j["seeds"] = a.seeds;
    j["higher_is_better"] = a.higher_is_better;
    j["final"] = {{"metric", a.final_metric.metric},
                  {"mean", json_number(a.final_metric.mean)},
                  {"std", json_number(a.final_metric.std)},
                  {"median", json_number(a.final_metric.median)},
                  {"n", a.final_metric.n},
                  {"improvement_vs_baseline_pct", opt(a.improvement_pct)},
                  {"median_improvement_vs_baseline_pct", opt(a.improvement_median_pct)}};
    j["final_train_loss"] = {{"metric", "train_loss"},
                             {"mean", json_number(a.final_train_loss.mean)},
                             {"std", json_number(a.final_train_loss.std)},
                             {"median", json_number(a.final_train_loss.median)},
                             {"n", a.final_train_loss.n},
                             {"improvement_vs_baseline_pct", opt(a.train_loss_improvement_pct)}};
    j["baseline"] = a.baseline.empty() ? nlohmann::json(nullptr) : nlohmann::json(a.baseline);
    j["improvement_vs_baseline_pct"] = opt(a.improvement_pct);
    j["trigger_rate_all"] = a.trigger_rate_all;
    j["trigger_rate_post_warmup"] = a.trigger_rate_post_warmup;
    j["trigger_count_mean"] = a.trigger_count_mean;
    j["total_grad_evals_mean"] = a.total_grad_evals_mean;
    j["diverged_count"] = a.diverged_count;
    j["descent_violations"] = a.descent_violations;
    return j;
}

inline AggregateReport aggregate_from_json(const nlohmann::json& j) {
    auto opt = [](const nlohmann::json& v) -> std::optional<double> {
        if (v.is_null()) return std::nullopt;
        return v.get<double>();
    };
    auto summary = [](const nlohmann::json& s) {
        MetricSummary m;
        m.metric = s.at("metric").get<std::string>();
        m.mean = json_double(s.at("mean"));
        m.std = json_double(s.at("std"));
        m.median = json_double(s.at("median"));
        m.n = s.at("n").get<std::size_t>();
        return m;
    };
    AggregateReport a;
    a.experiment = j.at("experiment").get<std::string>();
    a.problem = j.at("problem").get<std::string>();
    a.scenario = j.at("scenario").get<std::string>();
    a.optimizer = j.at("optimizer").get<std::string>();
    a.mode = j.at("mode").get<std::string>();
    a.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    a.higher_is_better = j.at("higher_is_better").get<bool>();
    a.final_metric = summary(j.at("final"));
    a.final_train_loss = summary(j.at("final_train_loss"));
    a.baseline = j.at("baseline").is_null() ? std::string() : j.at("baseline").get<std::string>();
    a.improvement_pct = opt(j.at("improvement_vs_baseline_pct"));
    a.improvement_median_pct = opt(j.at("final").at("median_improvement_vs_baseline_pct"));
    a.train_loss_improvement_pct = opt(j.at("final_train_loss").at("improvement_vs_baseline_pct"));
    a.trigger_rate_all = j.at("trigger_rate_all").get<double>();
    a.trigger_rate_post_warmup = j.at("trigger_rate_post_warmup").get<double>();
    a.trigger_count_mean = j.at("trigger_count_mean").get<double>();
    a.total_grad_evals_mean = j.at("total_grad_evals_mean").get<double>();
    a.diverged_count = j.at("diverged_count").get<std::size_t>();
    a.descent_violations = j.at("descent_violations").get<std::size_t>();
    return a;
}

inline void write_aggregate(const AggregateReport& a, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_aggregate: cannot open " + path);
    out << aggregate_to_json(a).dump(2) << '\n';
}

inline AggregateReport read_aggregate(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ReportParseError("cannot open " + path);
    try {
        return aggregate_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw ReportParseError(path + ": " + e.what());
    }
}

/// Fixed-width summary: optimizer, mean +- std, median, improvement, triggers, grad evals.
inline std::string format_summary_table(const std::vector<AggregateReport>& rows) {
    std::ostringstream out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-16s %-10s %-22s %-10s %-9s %-9s %-10s %s\n", "optimizer", "scenario",
                  "metric (mean +- std)", "median", "improv%", "triggers", "gradevals", "diverged");
    out << buf;
    for (const auto& a : rows) {
        char ms[64], med[32], imp[32];
        std::snprintf(ms, sizeof ms, "%.4f +- %.4f", a.final_metric.mean, a.final_metric.std);
        std::snprintf(med, sizeof med, "%.4f", a.final_metric.median);
        if (a.improvement_pct)
            std::snprintf(imp, sizeof imp, "%.1f", *a.improvement_pct);
        else
            std::snprintf(imp, sizeof imp, "--");
        std::snprintf(buf, sizeof buf, "%-16s %-10s %-22s %-10s %-9s %-9.1f %-10.0f %zu\n", a.optimizer.c_str(),
                      a.scenario.c_str(), ms, med, imp, a.trigger_count_mean, a.total_grad_evals_mean,
                      a.diverged_count);
        out << buf;
    }
    return out.str();
}

}  // namespace flowadam::harness
