#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <set>

#include "flowadam/param_space.hpp"

using namespace flowadam;

TEST(ParamVector, SegmentsAreViewsIntoTheFlatVector) {
    ParamVector p(std::vector<double>(7, 0.0), make_layout({{"U", 4}, {"V", 3}}));
    auto v = p.segment("V");
    ASSERT_EQ(v.size(), 3u);
    v[0] = 2.5;
    EXPECT_EQ(p[4], 2.5);
    EXPECT_EQ(p.segment_info("U").offset, 0u);
    EXPECT_THROW(p.segment("W"), std::out_of_range);
}

TEST(ParamVector, LayoutMustCoverTheVector) {
    EXPECT_THROW(ParamVector(std::vector<double>(6, 0.0), make_layout({{"U", 4}, {"V", 3}})), std::invalid_argument);
    Layout gap = {{"U", 0, 2}, {"V", 3, 2}};
    EXPECT_THROW(ParamVector(std::vector<double>(5, 0.0), gap), std::invalid_argument);
}

TEST(ParamVector, ZerosLikeKeepsLayout) {
    ParamVector p(std::vector<double>{1, 2, 3}, make_layout({{"a", 1}, {"b", 2}}));
    auto z = ParamVector::zeros_like(p);
    EXPECT_TRUE(z.same_layout(p));
    EXPECT_EQ(l2_norm(z), 0.0);
}

TEST(Norms, MatchHandComputedValues) {
    ParamVector a{3.0, 4.0};
    ParamVector b{0.0, 1.0};
    EXPECT_DOUBLE_EQ(l2_norm(a), 5.0);
    EXPECT_DOUBLE_EQ(dot(a, b), 4.0);
    EXPECT_DOUBLE_EQ(distance(a.values(), b.values()), std::sqrt(9.0 + 9.0));
    EXPECT_DOUBLE_EQ(max_abs(a.values()), 4.0);
}

TEST(Norms, NonFiniteInputIsAnError) {
    ParamVector a{1.0, std::numeric_limits<double>::quiet_NaN()};
    EXPECT_THROW(l2_norm(a), std::domain_error);
    ParamVector b{1.0, std::numeric_limits<double>::infinity()};
    EXPECT_THROW(distance(b.values(), a.values()), std::domain_error);
    EXPECT_FALSE(all_finite(b.values()));
}

TEST(Axpby, LinearCombinationAndLengthCheck) {
    ParamVector x{1.0, 2.0}, y{10.0, 20.0};
    auto z = axpby(2.0, x, 0.5, y);
    EXPECT_DOUBLE_EQ(z[0], 7.0);
    EXPECT_DOUBLE_EQ(z[1], 14.0);
    EXPECT_THROW(axpby(1.0, x, 1.0, ParamVector{1.0}), std::invalid_argument);
}

TEST(Rng, SameSeedSameStream) {
    Rng a(42), b(42), c(43);
    bool differs = false;
    for (int i = 0; i < 100; ++i) {
        const auto x = a.next_u64();
        EXPECT_EQ(x, b.next_u64());
        differs = differs || x != c.next_u64();
    }
    EXPECT_TRUE(differs);
}

TEST(Rng, ForksAreIndependentOfParentPosition) {
    Rng a(9);
    Rng f1 = a.fork(3);
    a.next_u64();
    Rng f2 = a.fork(3);
    EXPECT_EQ(f1.next_u64(), f2.next_u64());
    EXPECT_NE(Rng(9).fork(1).next_u64(), Rng(9).fork(2).next_u64());
}

TEST(Rng, UniformAndNormalMoments) {
    Rng rng(5);
    const int n = 200000;
    double su = 0.0, sn = 0.0, sn2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        su += u;
        const double z = rng.normal();
        sn += z;
        sn2 += z * z;
    }
    EXPECT_NEAR(su / n, 0.5, 0.005);
    EXPECT_NEAR(sn / n, 0.0, 0.01);
    EXPECT_NEAR(sn2 / n, 1.0, 0.015);
}

TEST(Rng, BelowCoversRangeUniformly) {
    Rng rng(8);
    std::vector<int> counts(7, 0);
    for (int i = 0; i < 70000; ++i) ++counts[rng.below(7)];
    for (int c : counts) EXPECT_NEAR(c, 10000, 500);
}

TEST(SampleWithoutReplacement, DistinctSortedInRange) {
    Rng rng(3);
    auto idx = sample_without_replacement(rng, 100, 30);
    ASSERT_EQ(idx.size(), 30u);
    EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
    EXPECT_EQ(std::set<std::size_t>(idx.begin(), idx.end()).size(), 30u);
    EXPECT_LT(idx.back(), 100u);
    EXPECT_THROW(sample_without_replacement(rng, 5, 6), std::invalid_argument);
}

TEST(GaussianFill, RejectsEmptyAndNegativeStd) {
    Rng rng(1);
    EXPECT_THROW(gaussian_fill(rng, 0, 0.0, 1.0), std::invalid_argument);
    EXPECT_THROW(gaussian_fill(rng, 3, 0.0, -1.0), std::invalid_argument);
    EXPECT_EQ(gaussian_fill(rng, 4, 2.0, 0.0), (ParamVector{2.0, 2.0, 2.0, 2.0}));
}
