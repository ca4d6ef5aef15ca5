#pragma once

#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "flowadam/param_space.hpp"
#include "flowadam/problem.hpp"

namespace flowadam::problems {

struct TwoSpiralsScenario {
    std::size_t points = 1000;
    double rotation_deg = 1200.0;
    double noise_std = 0.02;
    /// Radius runs linearly from radius_start to radius_end along each arm.
    double radius_start = 0.1;
    double radius_end = 5.0;
    std::size_t hidden = 24;
};

struct LabeledPoint {
    double x = 0.0;
    double y = 0.0;
    double label = 0.0;
};

/// Two interleaved Archimedean spirals; class 1 is class 0 rotated by pi.
inline std::vector<LabeledPoint> make_spirals(const TwoSpiralsScenario& sc, Rng& rng) {
    if (sc.points < 2) throw std::invalid_argument("two_spirals: need at least two points");
    const std::size_t per_class = sc.points / 2;
    const double turn = sc.rotation_deg * std::numbers::pi / 180.0;
    std::vector<LabeledPoint> pts;
    pts.reserve(sc.points);
    for (std::size_t cls = 0; cls < 2; ++cls) {
        const std::size_t count = cls == 0 ? per_class : sc.points - per_class;
        for (std::size_t i = 0; i < count; ++i) {
            const double t = count > 1 ? static_cast<double>(i) / static_cast<double>(count - 1) : 0.0;
            const double r = sc.radius_start + (sc.radius_end - sc.radius_start) * t;
            const double a = t * turn + (cls == 0 ? 0.0 : std::numbers::pi);
            const double nx = rng.normal(0.0, sc.noise_std);
            const double ny = rng.normal(0.0, sc.noise_std);
            pts.push_back({r * std::cos(a) + nx, r * std::sin(a) + ny, static_cast<double>(cls)});
        }
    }
    return pts;
}

/// 2 -> H -> H -> 1 tanh network with a logistic output, trained with binary cross-entropy.
class SpiralMlp {
public:
    SpiralMlp(std::vector<LabeledPoint> data, std::size_t hidden) : data_(std::move(data)), h_(hidden) {
        layout_ = make_layout({{"W1", h_ * 2}, {"b1", h_}, {"W2", h_ * h_}, {"b2", h_}, {"W3", h_}, {"b3", 1}});
        for (const auto& s : layout_) off_.push_back(s.offset);
    }

    const Layout& layout() const noexcept { return layout_; }
    const std::vector<LabeledPoint>& data() const noexcept { return data_; }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias.
    ParamVector init(Rng& rng) const {
        std::vector<double> v(layout_size(layout_));
        const double fan_in[] = {2.0, 2.0, double(h_), double(h_), double(h_), double(h_)};
        for (std::size_t s = 0; s < layout_.size(); ++s) {
            const double bound = 1.0 / std::sqrt(fan_in[s]);
            for (std::size_t i = 0; i < layout_[s].length; ++i)
                v[layout_[s].offset + i] = rng.uniform(-bound, bound);
        }
        return ParamVector(std::move(v), layout_);
    }

    /// Pre-sigmoid output for one input.
    double logit(std::span<const double> th, double x0, double x1, std::vector<double>& h1,
                 std::vector<double>& h2) const {
        const double* W1 = th.data() + off_[0];
        const double* b1 = th.data() + off_[1];
        const double* W2 = th.data() + off_[2];
        const double* b2 = th.data() + off_[3];
        const double* W3 = th.data() + off_[4];
        const double b3 = th[off_[5]];
        for (std::size_t i = 0; i < h_; ++i) h1[i] = std::tanh(W1[2 * i] * x0 + W1[2 * i + 1] * x1 + b1[i]);
        double z = b3;
        for (std::size_t i = 0; i < h_; ++i) {
            double a = b2[i];
            const double* row = W2 + i * h_;
            for (std::size_t j = 0; j < h_; ++j) a += row[j] * h1[j];
            h2[i] = std::tanh(a);
            z += W3[i] * h2[i];
        }
        return z;
    }

    /// Numerically stable log(1 + e^z) - y z.
    static double bce_with_logit(double z, double y) {
        const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
        return softplus - y * z;
    }

    static double sigmoid(double z) {
        return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    }

    double loss(const ParamVector& theta) const {
        std::vector<double> h1(h_), h2(h_);
        double acc = 0.0;
        for (const auto& p : data_) acc += bce_with_logit(logit(theta.values(), p.x, p.y, h1, h2), p.label);
        return acc / static_cast<double>(data_.size());
    }

    LossGrad loss_grad(const ParamVector& theta) const {
        const auto th = theta.values();
        LossGrad out{0.0, ParamVector::zeros_like(theta)};
        double* g = out.grad.values().data();
        const double* W2 = th.data() + off_[2];
        const double* W3 = th.data() + off_[4];
        std::vector<double> h1(h_), h2(h_), d2(h_), d1(h_);
        const double inv_n = 1.0 / static_cast<double>(data_.size());
        for (const auto& p : data_) {
            const double z = logit(th, p.x, p.y, h1, h2);
            out.loss += bce_with_logit(z, p.label);
            const double dz = (sigmoid(z) - p.label) * inv_n;
            g[off_[5]] += dz;
            for (std::size_t i = 0; i < h_; ++i) {
                g[off_[4] + i] += dz * h2[i];
                d2[i] = dz * W3[i] * (1.0 - h2[i] * h2[i]);
            }
            std::fill(d1.begin(), d1.end(), 0.0);
            for (std::size_t i = 0; i < h_; ++i) {
                g[off_[3] + i] += d2[i];
                double* gW2 = g + off_[2] + i * h_;
                const double* row = W2 + i * h_;
                for (std::size_t j = 0; j < h_; ++j) {
                    gW2[j] += d2[i] * h1[j];
                    d1[j] += row[j] * d2[i];
                }
            }
            for (std::size_t j = 0; j < h_; ++j) {
                const double a = d1[j] * (1.0 - h1[j] * h1[j]);
                g[off_[0] + 2 * j] += a * p.x;
                g[off_[0] + 2 * j + 1] += a * p.y;
                g[off_[1] + j] += a;
            }
        }
        out.loss *= inv_n;
        return out;
    }

    /// Fraction of points where (logit > 0) matches the label.
    double accuracy(const ParamVector& theta) const {
        std::vector<double> h1(h_), h2(h_);
        std::size_t hits = 0;
        for (const auto& p : data_) {
            const bool predicted = logit(theta.values(), p.x, p.y, h1, h2) > 0.0;
            hits += predicted == (p.label > 0.5);
        }
        return static_cast<double>(hits) / static_cast<double>(data_.size());
    }

private:
    std::vector<LabeledPoint> data_;
    std::size_t h_;
    Layout layout_;
    std::vector<std::size_t> off_;
};

inline Problem make_spiral_problem(std::shared_ptr<const SpiralMlp> mlp, std::uint64_t seed) {
    Problem p;
    p.name = "two_spirals";
    p.scenario = "default";
    p.seed = seed;
    p.layout = mlp->layout();
    p.dim = layout_size(p.layout);
    p.init = [mlp](Rng& rng) { return mlp->init(rng); };
    p.loss_grad = [mlp](const ParamVector& th) { return mlp->loss_grad(th); };
    p.loss_only = [mlp](const ParamVector& th) { return mlp->loss(th); };
    p.test_metric = [mlp](const ParamVector& th) { return mlp->accuracy(th); };
    p.metric_name = "accuracy";
    p.metric_kind = MetricKind::HigherIsBetter;
    p.metadata["points"] = std::to_string(mlp->data().size());
    return p;
}

/// Spiral classification; the metric is training-set accuracy.
inline Problem two_spirals(const TwoSpiralsScenario& sc, std::uint64_t seed) {
    Rng rng = Rng(seed).fork(0);
    auto mlp = std::make_shared<const SpiralMlp>(make_spirals(sc, rng), sc.hidden);
    return make_spiral_problem(std::move(mlp), seed);
}

}  // namespace flowadam::problems
