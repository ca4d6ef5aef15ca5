#pragma once

// Low-rank matrix completion, robust (Huber) matrix factorization and CP tensor
// completion on synthetic data with known ground truth.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowadam/param_space.hpp"
#include "flowadam/problem.hpp"

namespace flowadam::problems {

/// Synthetic completion scenario. Defaults follow the medium matrix case.
struct CompletionScenario {
    std::vector<std::size_t> shape{300, 400};
    std::size_t true_rank = 15;
    /// 0 means true_rank + 5.
    std::size_t model_rank = 0;
    double observed_fraction = 0.2;
    double lambda = 1e-5;
    /// Std of ground-truth factor entries; <= 0 means 1/sqrt(true_rank).
    double factor_std = 0.0;
    /// Additive Gaussian noise on observed entries.
    double noise_std = 0.1;
    double init_std = 0.1;
    // Robust MF only.
    double outlier_fraction = 0.0;
    double outlier_min = 4.0;
    double outlier_max = 5.0;
    double huber_delta = 1.0;

    std::size_t rank() const noexcept { return model_rank == 0 ? true_rank + 5 : model_rank; }

    std::size_t cells() const noexcept {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        return n;
    }

    double effective_factor_std() const {
        if (factor_std > 0.0) return factor_std;
        return 1.0 / std::sqrt(static_cast<double>(true_rank));
    }

    void validate() const {
        if (shape.size() != 2 && shape.size() != 3)
            throw std::invalid_argument("CompletionScenario: only 2-way and 3-way data are supported");
        for (auto d : shape)
            if (d == 0) throw std::invalid_argument("CompletionScenario: zero-length dimension");
        if (true_rank == 0) throw std::invalid_argument("CompletionScenario: true_rank must be >= 1");
        if (rank() < true_rank) throw std::invalid_argument("CompletionScenario: model_rank < true_rank");
        if (!(observed_fraction > 0.0 && observed_fraction <= 1.0))
            throw std::invalid_argument("CompletionScenario: observed_fraction must lie in (0, 1]");
        if (observed_fraction * static_cast<double>(cells()) < 1.0)
            throw std::invalid_argument("CompletionScenario: fewer than one observed entry");
        if (!(lambda >= 0.0)) throw std::invalid_argument("CompletionScenario: lambda must be >= 0");
        if (!(noise_std >= 0.0) || !(init_std >= 0.0))
            throw std::invalid_argument("CompletionScenario: noise_std and init_std must be >= 0");
        if (!(outlier_fraction >= 0.0 && outlier_fraction <= 1.0))
            throw std::invalid_argument("CompletionScenario: outlier_fraction must lie in [0, 1]");
        if (!(huber_delta > 0.0)) throw std::invalid_argument("CompletionScenario: huber_delta must be > 0");
    }
};

/// Ground truth, mask and observations for a matrix or 3-way tensor.
struct CompletionData {
    CompletionScenario scenario;
    std::uint64_t seed = 0;
    /// Dense ground truth, row-major (last index fastest).
    std::vector<double> truth;
    /// Flat indices of observed cells, ascending.
    std::vector<std::size_t> observed;
    /// Observed value (truth + noise + outliers) for each entry of `observed`.
    std::vector<double> values;
    std::vector<bool> mask;
    std::vector<bool> outlier;

    std::size_t observed_count() const noexcept { return observed.size(); }
    std::size_t heldout_count() const noexcept { return truth.size() - observed.size(); }
};

inline std::size_t observed_count_for(const CompletionScenario& sc) {
    return static_cast<std::size_t>(std::llround(sc.observed_fraction * static_cast<double>(sc.cells())));
}

/**
 * Draws ground-truth factors, the observation mask and observation corruption.
 *
 * Draw order is fixed: factors (mode by mode), mask, noise, outliers. Outlier
 * magnitudes are relative to the standard deviation of the clean signal.
 */
inline CompletionData generate_completion_data(const CompletionScenario& sc, std::uint64_t seed) {
    sc.validate();
    CompletionData d;
    d.scenario = sc;
    d.seed = seed;
    Rng rng = Rng(seed).fork(0);

    const std::size_t r = sc.true_rank;
    const double s = sc.effective_factor_std();
    std::vector<std::vector<double>> factors;
    for (auto dim : sc.shape) {
        std::vector<double> f(dim * r);
        for (double& x : f) x = rng.normal(0.0, s);
        factors.push_back(std::move(f));
    }

    const std::size_t cells = sc.cells();
    d.truth.assign(cells, 0.0);
    if (sc.shape.size() == 2) {
        const std::size_t n1 = sc.shape[0], n2 = sc.shape[1];
        for (std::size_t i = 0; i < n1; ++i)
            for (std::size_t j = 0; j < n2; ++j) {
                double acc = 0.0;
                for (std::size_t q = 0; q < r; ++q) acc += factors[0][i * r + q] * factors[1][j * r + q];
                d.truth[i * n2 + j] = acc;
            }
    } else {
        const std::size_t n1 = sc.shape[0], n2 = sc.shape[1], n3 = sc.shape[2];
        for (std::size_t i = 0; i < n1; ++i)
            for (std::size_t j = 0; j < n2; ++j)
                for (std::size_t k = 0; k < n3; ++k) {
                    double acc = 0.0;
                    for (std::size_t q = 0; q < r; ++q)
                        acc += factors[0][i * r + q] * factors[1][j * r + q] * factors[2][k * r + q];
                    d.truth[(i * n2 + j) * n3 + k] = acc;
                }
    }

    const std::size_t k = observed_count_for(sc);
    if (k < 1) throw std::invalid_argument("completion: fewer than one observed entry");
    d.observed = sample_without_replacement(rng, cells, k);
    d.mask.assign(cells, false);
    for (auto idx : d.observed) d.mask[idx] = true;

    d.values.resize(k);
    for (std::size_t e = 0; e < k; ++e) d.values[e] = d.truth[d.observed[e]];
    if (sc.noise_std > 0.0)
        for (double& v : d.values) v += rng.normal(0.0, sc.noise_std);

    d.outlier.assign(k, false);
    if (sc.outlier_fraction > 0.0) {
        double mean = 0.0;
        for (double x : d.truth) mean += x;
        mean /= static_cast<double>(cells);
        double var = 0.0;
        for (double x : d.truth) var += (x - mean) * (x - mean);
        const double signal_std = std::sqrt(var / static_cast<double>(cells));
        const auto n_out = static_cast<std::size_t>(std::llround(sc.outlier_fraction * static_cast<double>(k)));
        for (auto e : sample_without_replacement(rng, k, n_out)) {
            const double magnitude = rng.uniform(sc.outlier_min, sc.outlier_max) * signal_std;
            d.values[e] += rng.rademacher() * magnitude;
            d.outlier[e] = true;
        }
    }
    return d;
}

/// Huber function: r^2/2 inside [-delta, delta], linear outside.
inline double huber(double r, double delta) {
    const double a = std::abs(r);
    return a <= delta ? 0.5 * r * r : delta * (a - 0.5 * delta);
}

inline double huber_derivative(double r, double delta) { return std::clamp(r, -delta, delta); }

enum class CompletionLoss { SquaredError, Huber };

namespace detail {

inline Layout factor_layout(const CompletionScenario& sc) {
    static const char* names[] = {"U", "V", "W"};
    Layout layout;
    std::size_t offset = 0;
    for (std::size_t m = 0; m < sc.shape.size(); ++m) {
        const std::size_t len = sc.shape[m] * sc.rank();
        layout.push_back(Segment{names[m], offset, len});
        offset += len;
    }
    return layout;
}

/// Residual-weighted gradient of the data term for one observed cell.
struct CompletionModel {
    std::shared_ptr<const CompletionData> data;
    CompletionLoss loss_kind;
    std::size_t rank;
    std::vector<std::size_t> offsets;  // segment offsets

    double data_term(double residual) const {
        return loss_kind == CompletionLoss::SquaredError ? residual * residual
                                                         : huber(residual, data->scenario.huber_delta);
    }
    double data_slope(double residual) const {
        return loss_kind == CompletionLoss::SquaredError ? 2.0 * residual
                                                         : huber_derivative(residual, data->scenario.huber_delta);
    }

    double predict(std::span<const double> th, std::size_t cell) const {
        const auto& shape = data->scenario.shape;
        const std::size_t r = rank;
        if (shape.size() == 2) {
            const std::size_t i = cell / shape[1], j = cell % shape[1];
            const double* u = th.data() + offsets[0] + i * r;
            const double* v = th.data() + offsets[1] + j * r;
            double acc = 0.0;
            for (std::size_t q = 0; q < r; ++q) acc += u[q] * v[q];
            return acc;
        }
        const std::size_t k = cell % shape[2];
        const std::size_t j = (cell / shape[2]) % shape[1];
        const std::size_t i = cell / (shape[1] * shape[2]);
        const double* a = th.data() + offsets[0] + i * r;
        const double* b = th.data() + offsets[1] + j * r;
        const double* c = th.data() + offsets[2] + k * r;
        double acc = 0.0;
        for (std::size_t q = 0; q < r; ++q) acc += a[q] * b[q] * c[q];
        return acc;
    }

    double regularizer(std::span<const double> th) const {
        double s = 0.0;
        for (double x : th) s += x * x;
        return data->scenario.lambda * s;
    }

    double loss(const ParamVector& theta) const {
        const auto th = theta.values();
        const std::size_t k = data->observed.size();
        double acc = 0.0;
        for (std::size_t e = 0; e < k; ++e) acc += data_term(predict(th, data->observed[e]) - data->values[e]);
        return acc / static_cast<double>(k) + regularizer(th);
    }

    LossGrad loss_grad(const ParamVector& theta) const {
        const auto th = theta.values();
        const auto& shape = data->scenario.shape;
        const std::size_t r = rank;
        const std::size_t k = data->observed.size();
        const double inv_k = 1.0 / static_cast<double>(k);
        LossGrad out{0.0, ParamVector::zeros_like(theta)};
        double* g = out.grad.values().data();
        double acc = 0.0;

        if (shape.size() == 2) {
            for (std::size_t e = 0; e < k; ++e) {
                const std::size_t cell = data->observed[e];
                const std::size_t i = cell / shape[1], j = cell % shape[1];
                const double* u = th.data() + offsets[0] + i * r;
                const double* v = th.data() + offsets[1] + j * r;
                double pred = 0.0;
                for (std::size_t q = 0; q < r; ++q) pred += u[q] * v[q];
                const double res = pred - data->values[e];
                acc += data_term(res);
                const double w = data_slope(res) * inv_k;
                double* gu = g + offsets[0] + i * r;
                double* gv = g + offsets[1] + j * r;
                for (std::size_t q = 0; q < r; ++q) {
                    gu[q] += w * v[q];
                    gv[q] += w * u[q];
                }
            }
        } else {
            for (std::size_t e = 0; e < k; ++e) {
                const std::size_t cell = data->observed[e];
                const std::size_t kk = cell % shape[2];
                const std::size_t j = (cell / shape[2]) % shape[1];
                const std::size_t i = cell / (shape[1] * shape[2]);
                const double* a = th.data() + offsets[0] + i * r;
                const double* b = th.data() + offsets[1] + j * r;
                const double* c = th.data() + offsets[2] + kk * r;
                double pred = 0.0;
                for (std::size_t q = 0; q < r; ++q) pred += a[q] * b[q] * c[q];
                const double res = pred - data->values[e];
                acc += data_term(res);
                const double w = data_slope(res) * inv_k;
                double* ga = g + offsets[0] + i * r;
                double* gb = g + offsets[1] + j * r;
                double* gc = g + offsets[2] + kk * r;
                for (std::size_t q = 0; q < r; ++q) {
                    ga[q] += w * b[q] * c[q];
                    gb[q] += w * a[q] * c[q];
                    gc[q] += w * a[q] * b[q];
                }
            }
        }
        const double lam = data->scenario.lambda;
        for (std::size_t p = 0; p < th.size(); ++p) g[p] += 2.0 * lam * th[p];
        out.loss = acc * inv_k + regularizer(th);
        return out;
    }

    /// RMSE against the clean ground truth over held-out cells, or all cells if none are held out.
    double heldout_rmse(const ParamVector& theta, bool all_cells) const {
        const auto th = theta.values();
        double acc = 0.0;
        std::size_t count = 0;
        for (std::size_t cell = 0; cell < data->truth.size(); ++cell) {
            if (!all_cells && data->mask[cell]) continue;
            const double e = predict(th, cell) - data->truth[cell];
            acc += e * e;
            ++count;
        }
        return count == 0 ? 0.0 : std::sqrt(acc / static_cast<double>(count));
    }
};

inline Problem make_completion_problem(std::shared_ptr<const CompletionData> data, CompletionLoss kind,
                                       std::string name, std::string scenario_name, bool test_on_all_cells) {
    const auto& sc = data->scenario;
    Problem p;
    p.name = std::move(name);
    p.scenario = std::move(scenario_name);
    p.seed = data->seed;
    p.layout = factor_layout(sc);
    p.dim = layout_size(p.layout);

    auto model = std::make_shared<CompletionModel>();
    model->data = data;
    model->loss_kind = kind;
    model->rank = sc.rank();
    for (const auto& seg : p.layout) model->offsets.push_back(seg.offset);

    const double init_std = sc.init_std;
    const Layout layout = p.layout;
    p.init = [init_std, layout](Rng& rng) {
        const std::size_t n = layout_size(layout);
        std::vector<double> v(n);
        for (double& x : v) x = rng.normal(0.0, init_std);
        return ParamVector(std::move(v), layout);
    };
    p.loss_grad = [model](const ParamVector& th) { return model->loss_grad(th); };
    p.loss_only = [model](const ParamVector& th) { return model->loss(th); };
    p.test_metric = [model, test_on_all_cells](const ParamVector& th) {
        return model->heldout_rmse(th, test_on_all_cells);
    };
    p.metric_name = "test_rmse";
    p.metric_kind = MetricKind::LowerIsBetter;

    std::string shape;
    for (std::size_t m = 0; m < sc.shape.size(); ++m) shape += (m ? "x" : "") + std::to_string(sc.shape[m]);
    p.metadata["shape"] = shape;
    p.metadata["true_rank"] = std::to_string(sc.true_rank);
    p.metadata["model_rank"] = std::to_string(sc.rank());
    p.metadata["observed"] = std::to_string(data->observed_count());
    p.metadata["heldout"] = std::to_string(data->heldout_count());
    return p;
}

}  // namespace detail

/// Parameters [U | V]; loss = mean squared error on observed entries + lambda * (|U|^2 + |V|^2).
inline Problem matrix_completion(const CompletionScenario& sc, std::uint64_t seed,
                                 const std::string& scenario_name = "custom") {
    if (sc.shape.size() != 2) throw std::invalid_argument("matrix_completion: scenario must be 2-way");
    auto data = std::make_shared<const CompletionData>(generate_completion_data(sc, seed));
    return detail::make_completion_problem(data, CompletionLoss::SquaredError, "matrix_completion",
                                           scenario_name, false);
}

/// Parameters [U | V]; loss = mean Huber residual on corrupted observations + L2; metric vs clean truth.
inline Problem robust_mf(const CompletionScenario& sc, std::uint64_t seed,
                         const std::string& scenario_name = "custom") {
    if (sc.shape.size() != 2) throw std::invalid_argument("robust_mf: scenario must be 2-way");
    auto data = std::make_shared<const CompletionData>(generate_completion_data(sc, seed));
    const bool all_cells = data->heldout_count() == 0;
    return detail::make_completion_problem(data, CompletionLoss::Huber, "robust_mf", scenario_name, all_cells);
}

/// CP model [U | V | W]; masked mean squared error + lambda * sum of squared factor norms.
inline Problem tensor_completion(const CompletionScenario& sc, std::uint64_t seed,
                                 const std::string& scenario_name = "custom") {
    if (sc.shape.size() != 3) throw std::invalid_argument("tensor_completion: scenario must be 3-way");
    auto data = std::make_shared<const CompletionData>(generate_completion_data(sc, seed));
    return detail::make_completion_problem(data, CompletionLoss::SquaredError, "tensor_completion",
                                           scenario_name, false);
}

/**
 * Writes every cell as CSV. The first line is a comment naming shape, ranks and
 * seed; then `i,j[,k],truth,observed,value,outlier` rows, with empty value cells
 * for unobserved entries.
 */
inline void write_dataset_csv(const CompletionData& d, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_dataset_csv: cannot open " + path);
    const auto& sc = d.scenario;
    out.precision(17);
    out << "# shape=";
    for (std::size_t m = 0; m < sc.shape.size(); ++m) out << (m ? "x" : "") << sc.shape[m];
    out << " true_rank=" << sc.true_rank << " model_rank=" << sc.rank() << " seed=" << d.seed
        << " observed=" << d.observed_count() << "\n";
    out << (sc.shape.size() == 2 ? "i,j" : "i,j,k") << ",truth,observed,value,outlier\n";

    std::vector<std::ptrdiff_t> slot(d.truth.size(), -1);
    for (std::size_t e = 0; e < d.observed.size(); ++e) slot[d.observed[e]] = static_cast<std::ptrdiff_t>(e);
    for (std::size_t cell = 0; cell < d.truth.size(); ++cell) {
        if (sc.shape.size() == 2) {
            out << cell / sc.shape[1] << ',' << cell % sc.shape[1];
        } else {
            out << cell / (sc.shape[1] * sc.shape[2]) << ',' << (cell / sc.shape[2]) % sc.shape[1] << ','
                << cell % sc.shape[2];
        }
        out << ',' << d.truth[cell] << ',' << (slot[cell] >= 0 ? 1 : 0) << ',';
        if (slot[cell] >= 0) {
            const auto e = static_cast<std::size_t>(slot[cell]);
            out << d.values[e] << ',' << (d.outlier[e] ? 1 : 0);
        } else {
            out << ",0";
        }
        out << '\n';
    }
}

}  // namespace flowadam::problems
