#pragma once

#include <Eigen/Dense>

#include <memory>
#include <stdexcept>

#include "flowadam/param_space.hpp"
#include "flowadam/problem.hpp"

namespace flowadam::problems {

struct StiffValleyScenario {
    std::size_t dim = 50;
    double condition = 2000.0;
    /// Number of stiff eigen-directions carrying `condition`; the rest have eigenvalue 1.
    std::size_t stiff_directions = 2;
    double init_std = 1.0;
};

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with diag(R) > 0.
inline Eigen::MatrixXd random_orthogonal(Rng& rng, std::size_t n) {
    const auto N = static_cast<Eigen::Index>(n);
    Eigen::MatrixXd g(N, N);
    for (Eigen::Index i = 0; i < N; ++i)
        for (Eigen::Index j = 0; j < N; ++j) g(i, j) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(N, N);
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < N; ++j)
        if (r(j, j) < 0.0) q.col(j) = -q.col(j);
    return q;
}

/// Hessian Q diag(cond, ..., cond, 1, ..., 1) Q^T, symmetrized.
inline Eigen::MatrixXd stiff_valley_hessian(const StiffValleyScenario& sc, std::uint64_t seed) {
    if (sc.dim < 2) throw std::invalid_argument("stiff_valley: dim must be >= 2");
    if (sc.stiff_directions > sc.dim) throw std::invalid_argument("stiff_valley: too many stiff directions");
    Rng rng = Rng(seed).fork(0);
    const Eigen::MatrixXd q = random_orthogonal(rng, sc.dim);
    Eigen::VectorXd eig = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(sc.dim));
    for (std::size_t i = 0; i < sc.stiff_directions; ++i) eig(static_cast<Eigen::Index>(i)) = sc.condition;
    Eigen::MatrixXd h = q * eig.asDiagonal() * q.transpose();
    return 0.5 * (h + h.transpose());
}

/// L(theta) = theta^T H theta / 2 with a randomly rotated, ill-conditioned H.
inline Problem stiff_valley(const StiffValleyScenario& sc, std::uint64_t seed) {
    auto h = std::make_shared<const Eigen::MatrixXd>(stiff_valley_hessian(sc, seed));
    Problem p;
    p.name = "stiff_valley";
    p.scenario = "default";
    p.seed = seed;
    p.dim = sc.dim;
    p.layout = make_layout({{"theta", sc.dim}});
    p.init = [layout = p.layout, s = sc.init_std](Rng& rng) {
        std::vector<double> v(layout_size(layout));
        for (double& x : v) x = rng.normal(0.0, s);
        return ParamVector(std::move(v), layout);
    };
    p.loss_grad = [h](const ParamVector& th) {
        const Eigen::Map<const Eigen::VectorXd> x(th.values().data(), static_cast<Eigen::Index>(th.size()));
        LossGrad out{0.0, ParamVector::zeros_like(th)};
        Eigen::Map<Eigen::VectorXd> g(out.grad.values().data(), static_cast<Eigen::Index>(th.size()));
        g.noalias() = (*h) * x;
        out.loss = 0.5 * x.dot(g);
        return out;
    };
    p.metric_name = "final_loss";
    p.metadata["dim"] = std::to_string(sc.dim);
    p.metadata["condition"] = std::to_string(sc.condition);
    return p;
}

}  // namespace flowadam::problems
