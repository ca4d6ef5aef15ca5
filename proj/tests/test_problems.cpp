#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "flowadam/problems.hpp"
#include "test_util.hpp"

using namespace flowadam;
using namespace flowadam::problems;

namespace {

ParamVector perturbed_init(const Problem& p, std::uint64_t seed, double jitter) {
    Rng rng(seed);
    ParamVector th = p.init(rng);
    for (double& x : th) x += rng.normal(0.0, jitter);
    return th;
}

}  // namespace

TEST(Rosenbrock, KnownValues) {
    const Problem p = rosenbrock();
    EXPECT_EQ(p.loss(ParamVector{1.0, 1.0}), 0.0);
    EXPECT_EQ(p.evaluate(ParamVector{1.0, 1.0}).grad, (ParamVector{0.0, 0.0}));
    // (1 + 1.5)^2 + 100 (1.5 - 2.25)^2 = 6.25 + 56.25
    EXPECT_DOUBLE_EQ(p.loss(ParamVector{-1.5, 1.5}), 62.5);
    Rng rng(0);
    EXPECT_EQ(p.init(rng), ParamVector({-1.5, 1.5}, p.layout));
}

TEST(Rosenbrock, GradientMatchesFiniteDifferences) {
    const Problem p = rosenbrock();
    Rng rng(7);
    for (int k = 0; k < 20; ++k) {
        ParamVector th{rng.uniform(-2.0, 2.0), rng.uniform(-1.0, 3.0)};
        EXPECT_LT(testutil::rel_error(p.evaluate(th).grad, testutil::fd_gradient(p, th)), 1e-6);
    }
}

TEST(StiffValley, SpectrumIsTwoStiffDirectionsAndUnitRest) {
    StiffValleyScenario sc;
    const Eigen::MatrixXd h = stiff_valley_hessian(sc, 3);
    EXPECT_LT((h - h.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
    auto ev = es.eigenvalues();
    ASSERT_EQ(ev.size(), 50);
    for (int i = 0; i < 48; ++i) EXPECT_NEAR(ev(i), 1.0, 1e-9);
    EXPECT_NEAR(ev(48), 2000.0, 1e-8);
    EXPECT_NEAR(ev(49), 2000.0, 1e-8);
}

TEST(StiffValley, QuadraticFormAndGradient) {
    const Problem p = stiff_valley(StiffValleyScenario{}, 11);
    EXPECT_EQ(p.loss(ParamVector(50)), 0.0);
    const ParamVector th = perturbed_init(p, 2, 0.0);
    const auto lg = p.evaluate(th);
    EXPECT_NEAR(lg.loss, 0.5 * dot(th.values(), lg.grad.values()), 1e-9 * lg.loss);
    EXPECT_LT(testutil::rel_error(lg.grad, testutil::fd_gradient(p, th)), 1e-6);
}

TEST(StiffValley, SeedDeterminesRotation) {
    StiffValleyScenario sc;
    EXPECT_EQ(stiff_valley_hessian(sc, 5), stiff_valley_hessian(sc, 5));
    EXPECT_GT((stiff_valley_hessian(sc, 5) - stiff_valley_hessian(sc, 6)).norm(), 1.0);
}

TEST(MatrixCompletion, ExactFactorsGiveZeroLossAndError) {
    CompletionScenario sc;
    sc.shape = {5, 4};
    sc.true_rank = 2;
    sc.model_rank = 2;
    sc.lambda = 0.0;
    const std::vector<double> U = {1, 0, 0, 1, 1, 1, 2, -1, 0.5, 0.5};
    const std::vector<double> V = {1, 2, -1, 0, 3, 1, 0, 0};
    CompletionData d;
    d.scenario = sc;
    d.truth.assign(20, 0.0);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 4; ++j) d.truth[i * 4 + j] = U[i * 2] * V[j * 2] + U[i * 2 + 1] * V[j * 2 + 1];
    d.observed = {0, 3, 5, 6, 11, 12, 17, 19};
    d.mask.assign(20, false);
    for (auto c : d.observed) {
        d.mask[c] = true;
        d.values.push_back(d.truth[c]);
    }
    d.outlier.assign(d.observed.size(), false);
    auto data = std::make_shared<const CompletionData>(d);
    const Problem p = detail::make_completion_problem(data, CompletionLoss::SquaredError, "mc", "tiny", false);
    ASSERT_EQ(p.dim, 18u);

    std::vector<double> th = U;
    th.insert(th.end(), V.begin(), V.end());
    const ParamVector theta(th, p.layout);
    const auto lg = p.evaluate(theta);
    EXPECT_EQ(lg.loss, 0.0);
    EXPECT_EQ(l2_norm(lg.grad), 0.0);
    EXPECT_EQ(p.test_metric(theta), 0.0);

    // A unit error on one held-out cell (cell 1 = (0, 1)) changes only the metric.
    std::vector<double> off = th;
    off[10 + 2] += 1.0;  // V[1][0]; U[0] = (1, 0), so cell (0, 1) moves by 1
    const ParamVector moved(off, p.layout);
    EXPECT_GT(p.test_metric(moved), 0.0);
}

TEST(MatrixCompletion, GradientMatchesFiniteDifferences) {
    CompletionScenario sc;
    sc.shape = {6, 8};
    sc.true_rank = 2;
    sc.observed_fraction = 0.5;
    sc.lambda = 1e-2;
    const Problem p = matrix_completion(sc, 3);
    for (std::uint64_t s = 0; s < 5; ++s) {
        const ParamVector th = perturbed_init(p, s, 0.5);
        EXPECT_LT(testutil::rel_error(p.evaluate(th).grad, testutil::fd_gradient(p, th)), 1e-5);
    }
}

TEST(MatrixCompletion, ObservedAndHeldOutPartitionTheCells) {
    const auto sc = matrix_completion_scenario("small");
    const auto d = generate_completion_data(sc, 1);
    EXPECT_EQ(d.truth.size(), 200u * 300u);
    EXPECT_EQ(d.observed_count(), 18000u);
    EXPECT_EQ(d.heldout_count(), 42000u);
    EXPECT_TRUE(std::is_sorted(d.observed.begin(), d.observed.end()));
    EXPECT_EQ(std::set<std::size_t>(d.observed.begin(), d.observed.end()).size(), d.observed.size());
    std::size_t masked = std::count(d.mask.begin(), d.mask.end(), true);
    EXPECT_EQ(masked, d.observed_count());
}

TEST(MatrixCompletion, ScenarioShapes) {
    auto s = matrix_completion_scenario("small");
    EXPECT_EQ(s.shape, (std::vector<std::size_t>{200, 300}));
    EXPECT_EQ(s.true_rank, 10u);
    EXPECT_EQ(s.rank(), 15u);
    auto m = matrix_completion_scenario("medium");
    EXPECT_EQ(m.shape, (std::vector<std::size_t>{300, 400}));
    EXPECT_EQ(m.observed_fraction, 0.20);
    auto l = matrix_completion_scenario("large");
    EXPECT_EQ(l.shape, (std::vector<std::size_t>{400, 500}));
    EXPECT_EQ(l.true_rank, 20u);
    EXPECT_EQ(l.observed_fraction, 0.15);
    EXPECT_EQ(make_problem({"matrix_completion", "medium", {}}, 1).dim, (300u + 400u) * 20u);
}

// Factor entries with std 1/sqrt(r): each cell is a sum of r products of variance 1/r^2.
TEST(MatrixCompletion, GroundTruthVarianceIsOneOverRank) {
    const auto d = generate_completion_data(matrix_completion_scenario("medium"), 4);
    double var = 0.0;
    for (double x : d.truth) var += x * x;
    var /= static_cast<double>(d.truth.size());
    EXPECT_NEAR(var * 15.0, 1.0, 0.15);
}

TEST(MatrixCompletion, SameSeedSameData) {
    const auto sc = matrix_completion_scenario("small");
    const auto a = generate_completion_data(sc, 9), b = generate_completion_data(sc, 9);
    EXPECT_EQ(a.truth, b.truth);
    EXPECT_EQ(a.observed, b.observed);
    EXPECT_EQ(a.values, b.values);
    EXPECT_NE(a.observed, generate_completion_data(sc, 10).observed);
}

TEST(MatrixCompletion, RejectsDegenerateScenarios) {
    CompletionScenario sc;
    sc.shape = {3, 3};
    sc.true_rank = 1;
    sc.observed_fraction = 0.05;  // 0.45 entries
    EXPECT_THROW(generate_completion_data(sc, 1), std::invalid_argument);
    sc.observed_fraction = 0.0;
    EXPECT_THROW(generate_completion_data(sc, 1), std::invalid_argument);
    sc.observed_fraction = 0.5;
    sc.shape = {3, 0};
    EXPECT_THROW(generate_completion_data(sc, 1), std::invalid_argument);
    EXPECT_THROW(matrix_completion_scenario("huge"), UnknownProblemError);
}

TEST(TensorCompletion, RankOneAllOnes) {
    CompletionScenario sc;
    sc.shape = {2, 3, 4};
    sc.true_rank = 1;
    sc.model_rank = 1;
    sc.lambda = 0.0;
    CompletionData d;
    d.scenario = sc;
    d.truth.assign(24, 1.0);
    for (std::size_t c = 0; c < 24; c += 2) d.observed.push_back(c);
    d.mask.assign(24, false);
    for (auto c : d.observed) d.mask[c] = true;
    d.values.assign(d.observed.size(), 1.0);
    d.outlier.assign(d.observed.size(), false);
    const Problem p = detail::make_completion_problem(std::make_shared<const CompletionData>(d),
                                                      CompletionLoss::SquaredError, "tc", "tiny", false);
    ASSERT_EQ(p.dim, 9u);
    const ParamVector ones(std::vector<double>(9, 1.0), p.layout);
    EXPECT_EQ(p.loss(ones), 0.0);
    EXPECT_EQ(p.test_metric(ones), 0.0);
    // Doubling one mode doubles every prediction: residual 1 on every observed cell.
    std::vector<double> v(9, 1.0);
    v[0] = v[1] = 2.0;
    EXPECT_DOUBLE_EQ(p.loss(ParamVector(v, p.layout)), 1.0);
}

TEST(TensorCompletion, GradientMatchesFiniteDifferences) {
    CompletionScenario sc;
    sc.shape = {4, 5, 6};
    sc.true_rank = 2;
    sc.observed_fraction = 0.4;
    sc.lambda = 1e-2;
    const Problem p = tensor_completion(sc, 8);
    for (std::uint64_t s = 0; s < 5; ++s) {
        const ParamVector th = perturbed_init(p, s, 0.5);
        EXPECT_LT(testutil::rel_error(p.evaluate(th).grad, testutil::fd_gradient(p, th)), 1e-5);
    }
}

TEST(TensorCompletion, ScenarioShapes) {
    EXPECT_EQ(tensor_completion_scenario("small").shape, (std::vector<std::size_t>{30, 40, 50}));
    EXPECT_EQ(tensor_completion_scenario("medium").true_rank, 8u);
    EXPECT_EQ(tensor_completion_scenario("large").observed_fraction, 0.08);
    const auto d = generate_completion_data(tensor_completion_scenario("small"), 2);
    EXPECT_EQ(d.observed_count(), 6000u);
}

TEST(RobustMf, HuberIsContinuousWithMatchingSlope) {
    for (double delta : {0.5, 1.0, 2.0}) {
        const double eps = 1e-9;
        EXPECT_NEAR(huber(delta - eps, delta), huber(delta + eps, delta), 1e-8);
        EXPECT_NEAR(huber(-delta - eps, delta), huber(-delta + eps, delta), 1e-8);
        EXPECT_DOUBLE_EQ(huber(delta, delta), 0.5 * delta * delta);
        EXPECT_DOUBLE_EQ(huber(3.0 * delta, delta), delta * (3.0 * delta - 0.5 * delta));
        EXPECT_DOUBLE_EQ(huber_derivative(10.0, delta), delta);
        EXPECT_DOUBLE_EQ(huber_derivative(-0.1 * delta, delta), -0.1 * delta);
    }
}

TEST(RobustMf, OutliersHaveTheConfiguredShareAndSize) {
    const auto sc = robust_mf_scenario("medium");
    const auto d = generate_completion_data(sc, 5);
    EXPECT_EQ(d.observed_count(), 80u * 100u);
    double mean = 0.0;
    for (double x : d.truth) mean += x;
    mean /= static_cast<double>(d.truth.size());
    double var = 0.0;
    for (double x : d.truth) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / static_cast<double>(d.truth.size()));

    std::size_t n_out = 0;
    for (std::size_t e = 0; e < d.observed.size(); ++e) {
        const double dev = std::abs(d.values[e] - d.truth[d.observed[e]]);
        if (d.outlier[e]) {
            ++n_out;
            EXPECT_GE(dev, 4.0 * sd - 1e-12);
            EXPECT_LE(dev, 5.0 * sd + 1e-12);
        } else {
            EXPECT_EQ(dev, 0.0);
        }
    }
    EXPECT_EQ(n_out, 1600u);
}

TEST(RobustMf, GradientMatchesFiniteDifferences) {
    CompletionScenario sc = robust_mf_scenario("small");
    sc.shape = {6, 7};
    sc.true_rank = 2;
    const Problem p = robust_mf(sc, 4);
    for (std::uint64_t s = 0; s < 5; ++s) {
        const ParamVector th = perturbed_init(p, s, 1.0);
        EXPECT_LT(testutil::rel_error(p.evaluate(th).grad, testutil::fd_gradient(p, th)), 1e-5);
    }
}

TEST(RobustMf, MetricIsAgainstCleanTruthOnAllCells) {
    const Problem p = make_problem({"robust_mf", "small", {}}, 1);
    EXPECT_EQ(p.metadata.at("heldout"), "0");
    Rng rng(0);
    const ParamVector zero = ParamVector::zeros_like(p.init(rng));
    const auto d = generate_completion_data(robust_mf_scenario("small"), 1);
    double ms = 0.0;
    for (double x : d.truth) ms += x * x;
    EXPECT_NEAR(p.test_metric(zero), std::sqrt(ms / static_cast<double>(d.truth.size())), 1e-12);
}

TEST(InverseKinematics, StraightArm) {
    const std::vector<double> zeros(8, 0.0);
    const Point2 tip = forward_kinematics(zeros);
    EXPECT_DOUBLE_EQ(tip.x, 8.0);
    EXPECT_DOUBLE_EQ(tip.y, 0.0);
    std::vector<double> bent(8, 0.0);
    bent[0] = std::numbers::pi / 2;
    const Point2 up = forward_kinematics(bent);
    EXPECT_NEAR(up.x, 0.0, 1e-12);
    EXPECT_NEAR(up.y, 8.0, 1e-12);
}

TEST(InverseKinematics, ReachedTargetsGiveZeroLoss) {
    InverseKinematicsScenario sc;
    const Problem p = make_ik_problem(sc, std::vector<Point2>(sc.waypoints, Point2{8.0, 0.0}), 0);
    const ParamVector zero(p.dim);
    EXPECT_EQ(p.loss(zero), 0.0);
    EXPECT_EQ(p.test_metric(zero), 0.0);
    EXPECT_EQ(l2_norm(p.evaluate(zero).grad), 0.0);
}

TEST(InverseKinematics, GradientMatchesFiniteDifferences) {
    const Problem p = inverse_kinematics(InverseKinematicsScenario{}, 6);
    EXPECT_EQ(p.dim, 80u);
    for (std::uint64_t s = 0; s < 5; ++s) {
        const ParamVector th = perturbed_init(p, s, 0.8);
        EXPECT_LT(testutil::rel_error(p.evaluate(th).grad, testutil::fd_gradient(p, th)), 1e-6);
    }
}

TEST(InverseKinematics, TargetsAreReachable) {
    InverseKinematicsScenario sc;
    Rng rng(1);
    for (const auto& t : sample_ik_targets(sc, rng)) {
        const double r = std::hypot(t.x, t.y);
        EXPECT_GE(r, 2.0);
        EXPECT_LE(r, 6.0);
        EXPECT_GE(t.x, 0.0);
    }
}

TEST(TwoSpirals, ZeroNetworkIsChance) {
    const Problem p = two_spirals(TwoSpiralsScenario{}, 1);
    const ParamVector zero(std::vector<double>(p.dim, 0.0), p.layout);
    EXPECT_NEAR(p.loss(zero), std::numbers::ln2, 1e-12);
    EXPECT_DOUBLE_EQ(p.test_metric(zero), 0.5);
}

TEST(TwoSpirals, GradientMatchesFiniteDifferences) {
    TwoSpiralsScenario sc;
    sc.points = 60;
    sc.hidden = 5;
    const Problem p = two_spirals(sc, 2);
    for (std::uint64_t s = 0; s < 5; ++s) {
        const ParamVector th = perturbed_init(p, s, 0.5);
        EXPECT_LT(testutil::rel_error(p.evaluate(th).grad, testutil::fd_gradient(p, th)), 1e-6);
    }
}

TEST(TwoSpirals, DataGeometry) {
    TwoSpiralsScenario sc;
    sc.noise_std = 0.0;
    Rng rng(0);
    const auto pts = make_spirals(sc, rng);
    ASSERT_EQ(pts.size(), 1000u);
    std::size_t ones = 0;
    for (const auto& q : pts) ones += q.label > 0.5;
    EXPECT_EQ(ones, 500u);
    // Class 1 is class 0 rotated by pi.
    EXPECT_NEAR(pts[17].x, -pts[517].x, 1e-12);
    EXPECT_NEAR(pts[17].y, -pts[517].y, 1e-12);
    EXPECT_NEAR(std::hypot(pts[0].x, pts[0].y), 0.1, 1e-12);
    EXPECT_NEAR(std::hypot(pts[499].x, pts[499].y), 5.0, 1e-12);
}

TEST(Registry, UnknownNamesAndParametersThrow) {
    EXPECT_THROW(make_problem({"nope", "default", {}}, 1), UnknownProblemError);
    EXPECT_THROW(make_problem({"rosenbrock", "medium", {}}, 1), UnknownProblemError);
    EXPECT_THROW(make_problem({"matrix_completion", "medium", {{"colour", 1.0}}}, 1), UnknownProblemError);
    EXPECT_THROW(make_problem({"stiff_valley", "default", {{"dim", 2.5}}}, 1), std::invalid_argument);
    EXPECT_THROW(scenario_names("nope"), UnknownProblemError);
    EXPECT_EQ(scenario_names("tensor_completion").size(), 3u);
}

TEST(Registry, ParametersOverrideScenario) {
    const Problem p = make_problem({"stiff_valley", "default", {{"dim", 10}}}, 1);
    EXPECT_EQ(p.dim, 10u);
    const Problem q = make_problem({"matrix_completion", "small", {{"model_rank", 10}}}, 1);
    EXPECT_EQ(q.dim, 500u * 10u);
}
