#include <gtest/gtest.h>

#include <random>

#include "extval/distribution.hpp"
#include "support/oracles.hpp"

using namespace extval;

TEST(WeightedAtoms, SortsMergesAndNormalizes) {
    WeightedAtoms a({2.0, 1.0, 2.0, 3.0}, {1.0, 2.0, 1.0, 0.0});
    ASSERT_EQ(a.size(), 2u);
    EXPECT_EQ(a.values(), (std::vector<double>{1.0, 2.0}));
    EXPECT_DOUBLE_EQ(a.probs()[0], 0.5);
    EXPECT_DOUBLE_EQ(a.cdf(1.5), 0.5);
    EXPECT_DOUBLE_EQ(a.cdf(2.0), 1.0);
    EXPECT_DOUBLE_EQ(a.cdf_below(2.0), 0.5);
    EXPECT_DOUBLE_EQ(a.midrank(2.0), 0.75);
    EXPECT_DOUBLE_EQ(a.mean(), 1.5);
    EXPECT_THROW(WeightedAtoms({1.0}, {0.0}), InvalidArgument);
    EXPECT_THROW(WeightedAtoms({1.0}, {-1.0}), InvalidArgument);
}

TEST(WeightedAtoms, GeneralizedInverseIsLeftContinuous) {
    auto a = WeightedAtoms::uniform({0.0, 1.0, 2.0, 3.0});
    EXPECT_EQ(a.quantile(0.0), 0.0);
    EXPECT_EQ(a.quantile(0.25), 0.0);
    EXPECT_EQ(a.quantile(0.2500001), 1.0);
    EXPECT_EQ(a.quantile(1.0), 3.0);
}

TEST(RankMaps, EqualMassAtomsPairInOrder) {
    auto from = WeightedAtoms::uniform({0.0, 0.5, 1.0});
    auto to = WeightedAtoms::uniform({10.0, 20.0, 30.0});
    EXPECT_EQ(rank_map(from, to, 0.0), 10.0);
    EXPECT_EQ(rank_map(from, to, 0.5), 20.0);
    EXPECT_EQ(rank_map(from, to, 1.0), 30.0);
    EXPECT_EQ(antitone_map(from, to, 0.0), 30.0);
    EXPECT_EQ(antitone_map(from, to, 0.5), 20.0);
    EXPECT_EQ(antitone_map(from, to, 1.0), 10.0);
}

TEST(ExpectedMin, TwoFairCoins) {
    auto c = WeightedAtoms::uniform({0.0, 1.0});
    EXPECT_DOUBLE_EQ(expected_min(c, 0.0, c, 0.0), 0.25);
}

TEST(ExpectedMin, ShiftsMoveAtoms) {
    auto c = WeightedAtoms::uniform({0.0, 1.0});
    // min{A + 5, B} = B when the shift clears the support.
    EXPECT_DOUBLE_EQ(expected_min(c, 5.0, c, 0.0), 0.5);
    EXPECT_DOUBLE_EQ(expected_min(WeightedAtoms::point(2.0), 0.0, WeightedAtoms::point(-1.0), 0.5), -0.5);
}

TEST(ExpectedMin, MatchesPairwiseEnumeration) {
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> u(-3, 3), w(0.01, 1.0), shift(0, 2);
    std::uniform_int_distribution<int> m(1, 12);
    std::uniform_int_distribution<int> grid(-4, 4);
    for (int t = 0; t < 1000; ++t) {
        std::vector<double> va(m(rng)), pa(va.size()), vb(m(rng)), pb(vb.size());
        // Half the cases use a lattice so atoms collide after shifting.
        const bool lattice = t % 2 == 0;
        for (std::size_t i = 0; i < va.size(); ++i) {
            va[i] = lattice ? grid(rng) * 0.5 : u(rng);
            pa[i] = w(rng);
        }
        for (std::size_t i = 0; i < vb.size(); ++i) {
            vb[i] = lattice ? grid(rng) * 0.5 : u(rng);
            pb[i] = w(rng);
        }
        const double sa = lattice ? 0.5 * (t % 3) : shift(rng), sb = lattice ? 0.0 : shift(rng);
        WeightedAtoms A(va, pa), B(vb, pb);
        std::vector<double> sva = va, svb = vb;
        for (double& v : sva) v += sa;
        for (double& v : svb) v += sb;
        EXPECT_NEAR(expected_min(A, sa, B, sb), oracles::pairwise_expected_min(sva, pa, svb, pb), 1e-12);
    }
}
