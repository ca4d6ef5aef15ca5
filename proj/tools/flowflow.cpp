// flowflow: benchmark, ablation, sweep and verification front end.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "flowadam/harness.hpp"
#include "flowadam/verify.hpp"

namespace fs = std::filesystem;
using namespace flowadam;
using namespace flowadam::harness;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct GlobalOptions {
    std::size_t seeds = 5;
    std::vector<std::uint64_t> seed_list;
    std::string mode = "B";
    std::string out;
    std::size_t threads = 0;
    bool allow_divergence = false;

    std::vector<std::uint64_t> seed_values() const {
        if (!seed_list.empty()) return seed_list;
        std::vector<std::uint64_t> s(seeds);
        for (std::size_t i = 0; i < seeds; ++i) s[i] = i + 1;
        return s;
    }

    std::size_t thread_count() const {
        if (threads > 0) return threads;
        if (const char* env = std::getenv("FLOWFLOW_THREADS")) {
            try {
                const long v = std::stol(env);
                if (v > 0) return static_cast<std::size_t>(v);
            } catch (const std::exception&) {
            }
            throw UsageError(std::string("FLOWFLOW_THREADS must be a positive integer, got '") + env + "'");
        }
        return 1;
    }

    fs::path out_dir() const {
        if (!out.empty()) return out;
        const std::time_t now = std::time(nullptr);
        char buf[32];
        std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", std::localtime(&now));
        return fs::path("results") / buf;
    }
};

std::map<std::string, double> parse_assignments(const std::vector<std::string>& items, const char* flag) {
    std::map<std::string, double> out;
    for (const auto& item : items) {
        const auto eq = item.find('=');
        if (eq == std::string::npos || eq == 0)
            throw UsageError(std::string(flag) + " expects key=value, got '" + item + "'");
        const std::string key = item.substr(0, eq), val = item.substr(eq + 1);
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(val, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != val.size())
            throw UsageError(std::string(flag) + " " + key + ": not a number '" + val + "'");
        out[key] = v;
    }
    return out;
}

Mode mode_of(const GlobalOptions& g) {
    try {
        return parse_mode(g.mode);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
}

/// Checks names and builds one problem so bad requests fail before any run starts.
void check_request(const ProblemRequest& req) {
    try {
        (void)problems::make_problem(req, 1);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
}

std::string run_dir_name(const ExperimentConfig& cfg) {
    std::string s = cfg.problem.name + "_" + cfg.problem.scenario + "_" + to_string(cfg.optimizer);
    if (is_flowadam(cfg.optimizer)) s += "_mode" + std::string(to_string(cfg.mode));
    return s;
}

/// Runs all seeds, writes per-run files plus `<tag>.aggregate.json`, returns the aggregate path.
struct ArmResult {
    std::vector<RunReport> runs;
    fs::path aggregate_path;
    std::size_t diverged = 0;
};

ArmResult run_arm(const ExperimentConfig& cfg, const fs::path& dir, const std::string& tag,
                  const std::vector<RunReport>* baseline) {
    ArmResult res;
    res.runs = run_experiment(cfg);
    const fs::path run_dir = dir / tag;
    fs::create_directories(run_dir);
    for (const auto& r : res.runs) {
        write_report(r, (run_dir / ("seed" + std::to_string(r.seed))).string());
        res.diverged += r.finals.diverged ? 1 : 0;
    }
    const AggregateReport agg = aggregate(res.runs, baseline);
    res.aggregate_path = dir / (tag + ".aggregate.json");
    write_aggregate(agg, res.aggregate_path.string());
    return res;
}

int finish(std::size_t diverged, bool allow) {
    if (diverged > 0 && !allow) {
        std::cerr << diverged << " run(s) diverged (use --allow-divergence to accept)\n";
        return kFailure;
    }
    return kOk;
}

std::vector<AggregateReport> load_aggregates(const std::vector<fs::path>& paths) {
    std::vector<AggregateReport> rows;
    for (const auto& p : paths) rows.push_back(read_aggregate(p.string()));
    return rows;
}

// ---------------------------------------------------------------------------

struct BenchOptions {
    std::string problem;
    std::string scenario = "default";
    std::vector<std::string> optimizers{"adam", "flowadam"};
    std::size_t steps = 1000;
    std::size_t eval_every = 0;
    std::size_t grad_eval_budget = 0;
    std::vector<std::string> params;
    std::vector<std::string> opt_params;
};

int cmd_bench(const GlobalOptions& g, const BenchOptions& o) {
    ProblemRequest req{o.problem, o.scenario, parse_assignments(o.params, "--param")};
    check_request(req);
    const auto opt_params = parse_assignments(o.opt_params, "--opt");
    try {
        check_optimizer_params(opt_params);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    std::vector<OptimizerKind> kinds;
    for (const auto& name : o.optimizers) {
        try {
            kinds.push_back(parse_optimizer(name));
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
    }
    // Adam runs first so every other arm can report improvement against it.
    std::stable_partition(kinds.begin(), kinds.end(), [](OptimizerKind k) { return k == OptimizerKind::Adam; });

    const fs::path dir = g.out_dir();
    fs::create_directories(dir);
    std::vector<fs::path> aggregates;
    std::vector<RunReport> adam_runs;
    std::size_t diverged = 0;
    for (auto kind : kinds) {
        ExperimentConfig cfg;
        cfg.experiment = "bench";
        cfg.problem = req;
        cfg.optimizer = kind;
        cfg.mode = mode_of(g);
        cfg.optimizer_params = opt_params;
        cfg.steps = o.steps;
        cfg.seeds = g.seed_values();
        cfg.eval_every = o.eval_every;
        if (o.grad_eval_budget > 0) cfg.grad_eval_budget = o.grad_eval_budget;
        cfg.threads = g.thread_count();
        const bool has_base = !adam_runs.empty();
        auto arm = run_arm(cfg, dir, run_dir_name(cfg), has_base ? &adam_runs : nullptr);
        if (kind == OptimizerKind::Adam) adam_runs = arm.runs;
        diverged += arm.diverged;
        aggregates.push_back(arm.aggregate_path);
    }
    std::cout << o.problem << " / " << o.scenario << ", " << o.steps << " steps, mode " << g.mode << "\n"
              << format_summary_table(load_aggregates(aggregates)) << "reports: " << dir.string() << "\n";
    return finish(diverged, g.allow_divergence);
}

// ---------------------------------------------------------------------------

struct AblationOptions {
    std::size_t steps = 4000;
    std::string injection = "both";
};

int cmd_ablation(const GlobalOptions& g, const AblationOptions& o) {
    if (o.injection != "both" && o.injection != "soft-only" && o.injection != "hard-only")
        throw UsageError("--injection must be both, soft-only or hard-only");
    const fs::path dir = g.out_dir();
    fs::create_directories(dir);
    std::vector<fs::path> aggregates;
    std::size_t diverged = 0;
    for (auto kind : {OptimizerKind::FlowAdam, OptimizerKind::FlowAdamHard}) {
        if (kind == OptimizerKind::FlowAdamHard && o.injection == "soft-only") continue;
        if (kind == OptimizerKind::FlowAdam && o.injection == "hard-only") continue;
        ExperimentConfig cfg;
        cfg.experiment = "ablation_injection";
        cfg.problem = {"two_spirals", "default", {}};
        cfg.optimizer = kind;
        cfg.mode = Mode::A;
        cfg.steps = o.steps;
        cfg.seeds = g.seed_values();
        cfg.threads = g.thread_count();
        auto arm = run_arm(cfg, dir, run_dir_name(cfg), nullptr);
        diverged += arm.diverged;
        aggregates.push_back(arm.aggregate_path);
    }
    std::cout << "two_spirals injection ablation, mode A, " << o.steps << " steps\n";
    for (const auto& a : load_aggregates(aggregates)) {
        const char* arm = a.optimizer == "flowadam" ? "soft" : "hard";
        std::printf("%-5s accuracy %.2f%%", arm, 100.0 * a.final_metric.mean);
        if (a.final_metric.n > 1) std::printf(" +- %.2f", 100.0 * a.final_metric.std);
        std::printf("  triggers %.1f\n", a.trigger_count_mean);
    }
    std::cout << "reports: " << dir.string() << "\n";
    return finish(diverged, g.allow_divergence);
}

// ---------------------------------------------------------------------------

struct SweepOptions {
    std::string param;
    std::vector<std::string> grid;
    std::string problem = "matrix_completion";
    std::string scenario = "medium";
    std::size_t steps = 1000;
    std::vector<std::string> params;
};

int cmd_sweep(const GlobalOptions& g, const SweepOptions& o) {
    if (o.param != "gamma" && o.param != "alpha_s") throw UsageError("--param must be gamma or alpha_s");
    std::vector<double> grid;
    for (const auto& cell : o.grid) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(cell, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != cell.size()) throw UsageError("--grid: not a number '" + cell + "'");
        grid.push_back(v);
    }
    if (grid.empty()) throw UsageError("--grid must not be empty");
    ProblemRequest req{o.problem, o.scenario, parse_assignments(o.params, "--set")};
    check_request(req);
    const fs::path dir = g.out_dir();
    fs::create_directories(dir);
    std::vector<fs::path> aggregates;
    std::size_t diverged = 0;
    std::vector<std::string> flags;
    for (double value : grid) {
        ExperimentConfig cfg;
        cfg.experiment = "sweep_" + o.param;
        cfg.problem = req;
        cfg.optimizer = OptimizerKind::FlowAdam;
        cfg.mode = mode_of(g);
        cfg.optimizer_params[o.param] = value;
        cfg.steps = o.steps;
        cfg.seeds = g.seed_values();
        cfg.threads = g.thread_count();
        FlowAdamConfig fc;
        try {
            fc = flowadam_config_from(cfg.mode, cfg.optimizer_params, InjectionMode::Soft);
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
        for (const auto& w : fc.warnings()) flags.push_back(o.param + "=" + format_double(value) + ": " + w);
        auto arm = run_arm(cfg, dir, o.param + "_" + format_double(value), nullptr);
        diverged += arm.diverged;
        aggregates.push_back(arm.aggregate_path);
    }
    const auto rows = load_aggregates(aggregates);
    std::printf("%-10s %-22s %-9s %s\n", o.param.c_str(), "metric (mean +- std)", "triggers", "gradevals");
    double lo = 0.0, hi = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& a = rows[i];
        std::printf("%-10s %.4f +- %.4f       %-9.1f %.0f\n", format_double(grid[i]).c_str(), a.final_metric.mean,
                    a.final_metric.std, a.trigger_count_mean, a.total_grad_evals_mean);
        lo = i == 0 ? a.final_metric.mean : std::min(lo, a.final_metric.mean);
        hi = i == 0 ? a.final_metric.mean : std::max(hi, a.final_metric.mean);
    }
    std::printf("max/min %s ratio: %.4f\n", rows.front().final_metric.metric.c_str(), hi / lo);
    for (const auto& f : flags) std::cout << "warning: " << f << "\n";
    std::cout << "reports: " << dir.string() << "\n";
    return finish(diverged, g.allow_divergence);
}

// ---------------------------------------------------------------------------

int cmd_verify(bool quick) {
    const auto results = verify::run_all(quick);
    bool ok = true;
    for (const auto& r : results) {
        std::cout << (r.pass ? "PASS " : "FAIL ") << r.name;
        if (!r.detail.empty()) std::cout << "  " << r.detail;
        std::cout << "\n";
        ok = ok && r.pass;
    }
    return ok ? kOk : kFailure;
}

/// Re-prints the summary table from aggregate files saved under a directory.
int cmd_report(const std::string& dir) {
    if (!fs::is_directory(dir)) throw UsageError("not a directory: " + dir);
    std::vector<fs::path> paths;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        if (name.size() > 15 && name.ends_with(".aggregate.json")) paths.push_back(e.path());
    }
    if (paths.empty()) throw UsageError("no aggregate reports in " + dir);
    std::sort(paths.begin(), paths.end());
    std::cout << format_summary_table(load_aggregates(paths));
    return kOk;
}

int cmd_export_data(const std::string& problem, const std::string& scenario, std::uint64_t seed,
                    const std::vector<std::string>& params, const std::string& path) {
    ProblemRequest req{problem, scenario, parse_assignments(params, "--param")};
    problems::CompletionScenario sc;
    try {
        sc = problems::completion_scenario(req);
        sc.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    const auto data = problems::generate_completion_data(sc, seed);
    problems::write_dataset_csv(data, path);
    std::cout << "wrote " << data.observed.size() << " observed of " << sc.cells() << " cells to " << path << "\n";
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"FlowAdam benchmarks, ablations, sweeps and property checks"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "Config file (key=value lines, [subcommand] sections)");
    app.allow_config_extras(false);

    GlobalOptions g;
    auto* seeds_opt = app.add_option("--seeds", g.seeds, "Number of seeds (1..N)")->check(CLI::PositiveNumber);
    app.add_option("--seed-list", g.seed_list, "Explicit seeds")->delimiter(',')->excludes(seeds_opt);
    app.add_option("--mode", g.mode, "FlowAdam mode preset")->check(CLI::IsMember({"A", "B"}));
    app.add_option("--out", g.out, "Output directory (default results/<timestamp>)");
    app.add_option("--threads", g.threads, "Worker threads (fallback: FLOWFLOW_THREADS)");
    app.add_flag("--allow-divergence", g.allow_divergence, "Exit 0 even if some runs diverge");

    BenchOptions bench;
    auto* bench_cmd = app.add_subcommand("bench", "Run optimizers on one problem and compare against adam");
    bench_cmd->add_option("--problem", bench.problem, "Problem name")->required();
    bench_cmd->add_option("--scenario", bench.scenario, "Scenario name");
    bench_cmd->add_option("--optimizers", bench.optimizers, "Comma-separated optimizers")->delimiter(',');
    bench_cmd->add_option("--steps", bench.steps, "Optimizer steps")->check(CLI::PositiveNumber);
    bench_cmd->add_option("--eval-every", bench.eval_every, "Held-out evaluation interval (0: end only)");
    bench_cmd->add_option("--grad-eval-budget", bench.grad_eval_budget, "Stop at this many gradient evaluations");
    bench_cmd->add_option("--param", bench.params, "Problem parameter override key=value");
    bench_cmd->add_option("--opt", bench.opt_params, "Optimizer parameter override key=value");

    AblationOptions ablation;
    auto* abl_cmd = app.add_subcommand("ablation-injection", "Soft vs hard momentum injection on two spirals");
    abl_cmd->add_option("--steps", ablation.steps, "Optimizer steps")->check(CLI::PositiveNumber);
    abl_cmd->add_option("--injection", ablation.injection, "both | soft-only | hard-only");

    SweepOptions sweep;
    auto* sweep_cmd = app.add_subcommand("sweep", "Sensitivity sweep of gamma or alpha_s");
    sweep_cmd->add_option("--param", sweep.param, "gamma | alpha_s")->required();
    sweep_cmd->add_option("--grid", sweep.grid, "Comma-separated values")->delimiter(',')->required();
    sweep_cmd->add_option("--problem", sweep.problem, "Problem name");
    sweep_cmd->add_option("--scenario", sweep.scenario, "Scenario name");
    sweep_cmd->add_option("--steps", sweep.steps, "Optimizer steps")->check(CLI::PositiveNumber);
    sweep_cmd->add_option("--set", sweep.params, "Problem parameter override key=value");

    bool quick = false;
    auto* verify_cmd = app.add_subcommand("verify", "Run the property and invariant suite");
    verify_cmd->add_flag("--quick", quick, "Shorter runs for the trajectory-based checks");

    std::string report_dir;
    auto* report_cmd = app.add_subcommand("report", "Print the summary table of saved aggregate reports");
    report_cmd->add_option("dir", report_dir, "Directory holding *.aggregate.json")->required();

    std::string ex_problem = "matrix_completion", ex_scenario = "medium", ex_path = "dataset.csv";
    std::uint64_t ex_seed = 1;
    std::vector<std::string> ex_params;
    auto* export_cmd = app.add_subcommand("export-data", "Write a synthetic completion dataset as CSV");
    export_cmd->add_option("--problem", ex_problem, "Completion problem name");
    export_cmd->add_option("--scenario", ex_scenario, "Scenario name");
    export_cmd->add_option("--seed", ex_seed, "Data seed");
    export_cmd->add_option("--param", ex_params, "Problem parameter override key=value");
    export_cmd->add_option("--file", ex_path, "Output CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (*bench_cmd) return cmd_bench(g, bench);
        if (*abl_cmd) return cmd_ablation(g, ablation);
        if (*sweep_cmd) return cmd_sweep(g, sweep);
        if (*verify_cmd) return cmd_verify(quick);
        if (*report_cmd) return cmd_report(report_dir);
        if (*export_cmd) return cmd_export_data(ex_problem, ex_scenario, ex_seed, ex_params, ex_path);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
    return kUsage;
}
