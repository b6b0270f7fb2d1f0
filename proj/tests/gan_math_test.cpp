#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "gshield/error.hpp"
#include "gshield/gan_math.hpp"

using namespace gshield;
using namespace gshield::gan;

TEST(OptimalDiscriminator, EqualDistributionsGiveOneHalf) {
    const DiscreteDistPair pair{{0.2, 0.3, 0.5}, {0.2, 0.3, 0.5}};
    for (double f : optimal_discriminator(pair).f) EXPECT_DOUBLE_EQ(f, 0.5);
}

TEST(OptimalDiscriminator, DisjointSupports) {
    const auto opt = optimal_discriminator({{1.0, 0.0}, {0.0, 1.0}});
    EXPECT_DOUBLE_EQ(opt.f[0], 1.0);
    EXPECT_DOUBLE_EQ(opt.f[1], 0.0);
}

TEST(OptimalDiscriminator, OutcomeOutsideSupportIsExcluded) {
    const auto opt = optimal_discriminator({{0.5, 0.0, 0.5}, {0.25, 0.0, 0.75}});
    EXPECT_FALSE(opt.in_support[1]);
    EXPECT_TRUE(opt.in_support[0]);
    EXPECT_DOUBLE_EQ(opt.f[0], 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(opt.f[2], 0.4);
}

TEST(OptimalDiscriminator, MatchesGridArgminOnRandomPairs) {
    Rng rng(11);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto pair = random_pair(4, rng, trial % 3 == 0 ? 1 : 0);
        const auto report = grid_search_discriminator(pair);
        ASSERT_TRUE(report.matches) << "trial " << trial << " deviation " << report.max_deviation;
        ASSERT_LE(report.max_deviation, 0.01);
    }
}

TEST(OptimalDiscriminator, CoordinateGridEqualsFullProductGrid) {
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        const auto pair = random_pair(2, rng);
        const auto coordinate = grid_search_discriminator(pair, 0.01, 0.99, 0.01).argmin;
        const auto joint = joint_grid_argmin(pair, 0.01, 0.99, 0.01);
        EXPECT_EQ(coordinate, joint);
    }
}

TEST(OptimalDiscriminator, NoGridPointBeatsFormula) {
    Rng rng(13);
    for (int trial = 0; trial < 200; ++trial) {
        const auto pair = random_pair(3, rng);
        const double at_opt = discriminator_objective(pair, optimal_discriminator(pair).f);
        const auto report = grid_search_discriminator(pair, 0.01, 0.99, 0.01);
        EXPECT_LE(at_opt, discriminator_objective(pair, report.argmin) + 1e-15);
    }
}

TEST(GanIdentity, EqualDistributionsReachTwoLogTwo) {
    const auto r = gan_identity_check({{0.1, 0.6, 0.3}, {0.1, 0.6, 0.3}});
    EXPECT_NEAR(r.direct, 2.0 * std::numbers::ln2, 1e-12);
    EXPECT_NEAR(r.via_divergence, 1.386294361, 1e-9);
    EXPECT_NEAR(r.jsd, 0.0, 1e-15);
    EXPECT_TRUE(r.at_maximum);
    EXPECT_TRUE(r.agrees);
}

TEST(GanIdentity, DisjointSupportsGiveZero) {
    const auto r = gan_identity_check({{1.0, 0.0}, {0.0, 1.0}});
    EXPECT_NEAR(r.direct, 0.0, 1e-15);
    EXPECT_NEAR(r.via_divergence, 0.0, 1e-12);
    EXPECT_NEAR(r.jsd, std::numbers::ln2, 1e-12);
    EXPECT_TRUE(r.agrees);
}

TEST(GanIdentity, RandomPairsAgree) {
    Rng rng(14);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto r = gan_identity_check(random_pair(2 + trial % 7, rng, trial % 4 == 0 ? 1 : 0));
        ASSERT_TRUE(r.agrees) << trial;
        if (!r.equal_distributions) EXPECT_LT(r.direct, 2.0 * std::numbers::ln2);
        worst = std::max(worst, r.discrepancy);
    }
    EXPECT_LT(worst, 1e-9);
}

TEST(BarberAgakov, IndependentVariables) {
    const DiscreteJoint joint{2, 2, {0.12, 0.28, 0.18, 0.42}};
    Conditional marginal{0.4, 0.4, 0.6, 0.6};
    const auto r = ba_bound_check(joint, marginal);
    EXPECT_NEAR(r.mutual_information, 0.0, 1e-12);
    EXPECT_NEAR(r.lower_bound, 0.0, 1e-12);
    EXPECT_TRUE(r.holds);
    EXPECT_TRUE(r.tight);
}

TEST(BarberAgakov, PerfectlyCorrelatedBinary) {
    const DiscreteJoint joint{2, 2, {0.5, 0.0, 0.0, 0.5}};
    const auto r = ba_bound_check(joint, true_posterior(joint));
    EXPECT_NEAR(r.mutual_information, std::numbers::ln2, 1e-12);
    EXPECT_NEAR(r.entropy_x, std::numbers::ln2, 1e-12);
    EXPECT_NEAR(r.gap, 0.0, 1e-9);
    EXPECT_TRUE(r.tight);
}

TEST(BarberAgakov, HoldsOnRandomJointsAndIsTightAtPosterior) {
    Rng rng(15);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto joint = random_joint(4, 4, rng);
        const auto r = ba_bound_check(joint, random_conditional(4, 4, rng));
        ASSERT_TRUE(r.holds) << trial << " gap " << r.gap;
        ASSERT_TRUE(r.tight) << trial << " posterior gap " << r.posterior_gap;
        const auto at_post = ba_bound_check(joint, true_posterior(joint));
        ASSERT_NEAR(at_post.gap, 0.0, 1e-9);
        EXPECT_GE(r.gap, at_post.gap - 1e-12);
    }
}

TEST(GanMath, RejectsInvalidInputs) {
    EXPECT_THROW(optimal_discriminator({{0.5, 0.6}, {0.5, 0.5}}), DataError);
    EXPECT_THROW(optimal_discriminator({{-0.1, 1.1}, {0.5, 0.5}}), DataError);
    EXPECT_THROW(optimal_discriminator({{1.0}, {0.5, 0.5}}), DataError);
    EXPECT_THROW(ba_bound_check({2, 2, {0.5, 0.5, 0.5, 0.5}}, {0.5, 0.5, 0.5, 0.5}), DataError);
    EXPECT_THROW(ba_bound_check({2, 2, {0.25, 0.25, 0.25, 0.25}}, {0.9, 0.5, 0.5, 0.5}), DataError);
    EXPECT_THROW(grid_search_discriminator({{0.5, 0.5}, {0.5, 0.5}}, 0.5, 0.1, 0.01), ConfigError);
}
