#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "extval/datagen.hpp"

using namespace extval;
using namespace extval::datagen;

namespace {

DgpSpec linear_spec(NoiseLaw noise = NoiseLaw::normal(1.0)) {
    DgpSpec s;
    s.outcome = LinearConstantTE{1.0, {2.0, -1.0}, 0.5, {1.0, 0.0}, noise, NoiseLaw::none()};
    s.covariates = UniformCovariates{{0.0, -1.0}, {1.0, 1.0}};
    s.seed = 11;
    return s;
}

DgpSpec factor_spec() {
    DgpSpec s;
    s.outcome = FactorModel{{1.0}, {2.0}, 1.0, 2.0, {-1.0, 0.0, 3.0}, NoiseLaw::normal(1.0), NoiseLaw::uniform(1.5)};
    s.covariates = DiscreteGridCovariates{{{0.0, 1.0}}};
    s.seed = 12;
    return s;
}

DgpSpec rank_spec() {
    DgpSpec s;
    s.outcome = RankInvariant{0.0, {1.0}, NoiseLaw::uniform(1.0), 1.0, {0.5}};
    s.covariates = DiscreteGridCovariates{{{0.0, 1.0}}};
    s.seed = 13;
    return s;
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i] / n;
        mb += b[i] / n;
    }
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

} // namespace

TEST(Generate, ObservedOutcomeFollowsAssignment) {
    auto lin = linear_spec();
    auto prop = linear_spec();
    prop.assignment = Propensity{0.2, {1.0, -0.5}};
    auto iv = factor_spec();
    iv.assignment = Instrumented{0.4, 0.7, 0.3};
    for (const auto& spec : {lin, prop, iv, factor_spec(), rank_spec()}) {
        const auto g = generate(spec, 2000);
        ASSERT_EQ(g.data.size(), 2000u);
        ASSERT_EQ(g.truth.y0.size(), 2000u);
        for (std::size_t i = 0; i < g.data.size(); ++i) {
            const auto& o = g.data[i];
            EXPECT_EQ(o.y, o.d ? g.truth.y1[i] : g.truth.y0[i]);
        }
    }
}

TEST(Generate, NoiselessConstantEffectIsExact) {
    const auto g = generate(linear_spec(NoiseLaw::none()), 500);
    for (std::size_t i = 0; i < g.data.size(); ++i) {
        EXPECT_NEAR(g.truth.y1[i] - g.truth.y0[i], 0.5 + g.data[i].x[0], 1e-12);
        EXPECT_NEAR(g.truth.effect_x[i], 0.5 + g.data[i].x[0], 1e-15);
        EXPECT_NEAR(g.truth.y0[i], 1.0 + 2.0 * g.data[i].x[0] - g.data[i].x[1], 1e-12);
    }
}

TEST(Generate, RandomizedShareWithinThreeStandardDeviations) {
    auto s = linear_spec();
    s.assignment = Randomized{0.3};
    const std::size_t n = 10000;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        s.seed = seed;
        const auto g = generate(s, n);
        const double share = static_cast<double>(g.data.count_arm(1)) / static_cast<double>(n);
        EXPECT_LE(std::abs(share - 0.3), 3.0 * std::sqrt(0.3 * 0.7 / static_cast<double>(n)));
    }
}

TEST(Generate, PropensityAndInstrumentAssignments) {
    auto s = linear_spec();
    s.assignment = Propensity{0.2, {1.0, -0.5}};
    const auto g = generate(s, 20000);
    double expected = 0.0;
    for (const auto& o : g.data) expected += s.propensity(o.x) / 20000.0;
    const double share = static_cast<double>(g.data.count_arm(1)) / 20000.0;
    EXPECT_LE(std::abs(share - expected), 4.0 * std::sqrt(0.25 / 20000.0));

    auto iv = linear_spec();
    iv.assignment = Instrumented{0.5, 0.6, 0.5};
    const auto h = generate(iv, 20000);
    double d1 = 0, n1 = 0, d0 = 0, n0 = 0;
    for (const auto& o : h.data) {
        ASSERT_TRUE(o.z.has_value());
        (*o.z == 1 ? d1 : d0) += o.d;
        (*o.z == 1 ? n1 : n0) += 1;
    }
    EXPECT_NEAR(d1 / n1 - d0 / n0, 0.6, 4.0 * std::sqrt(0.25 / n1 + 0.25 / n0));
}

TEST(Generate, TruthMomentsMatchSampleMoments) {
    for (const auto& spec : {linear_spec(), factor_spec(), rank_spec()}) {
        const auto g = generate(spec, 40000);
        double m0 = 0, eff = 0, eff_x = 0;
        const double n = static_cast<double>(g.data.size());
        for (std::size_t i = 0; i < g.data.size(); ++i) {
            m0 += g.truth.y0[i] / n;
            eff += (g.truth.y1[i] - g.truth.y0[i]) / n;
            eff_x += g.truth.effect_x[i] / n;
        }
        EXPECT_NEAR(m0, g.truth.y0_mean, 0.05);
        EXPECT_NEAR(eff, eff_x, 0.05);
        EXPECT_EQ(g.truth.effect(g.data[0].x), g.truth.effect_x[0]);
    }
}

TEST(Generate, FactorModelResidualsUncorrelatedWithinCells) {
    const auto spec = factor_spec();
    const auto& f = std::get<FactorModel>(spec.outcome);
    const auto g = generate(spec, 10000);
    std::map<std::pair<double, std::int64_t>, std::pair<std::vector<double>, std::vector<double>>> cells;
    for (std::size_t i = 0; i < g.data.size(); ++i) {
        const auto& o = g.data[i];
        ASSERT_TRUE(o.c.has_value());
        const double a = f.group_effects[static_cast<std::size_t>(*o.c)];
        auto& cell = cells[{o.x[0], *o.c}];
        cell.first.push_back(g.truth.y0[i] - f.beta0[0] * o.x[0] - f.lambda0 * a);
        cell.second.push_back(g.truth.y1[i] - f.beta1[0] * o.x[0] - f.lambda1 * a);
    }
    ASSERT_EQ(cells.size(), 6u);
    for (const auto& [key, cell] : cells) {
        const double r = correlation(cell.first, cell.second);
        EXPECT_LT(std::abs(r), 4.0 / std::sqrt(static_cast<double>(cell.first.size())));
    }
    // Pooled over groups the shared component makes the outcomes dependent.
    EXPECT_GT(correlation(g.truth.y0, g.truth.y1), 0.5);
}

TEST(Generate, SeedDeterminesOutputRegardlessOfThreads) {
    const auto s = factor_spec();
    const auto a = generate(s, 10000, 1), b = generate(s, 10000, 3);
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        EXPECT_EQ(a.data[i].y, b.data[i].y);
        EXPECT_EQ(a.data[i].x, b.data[i].x);
        EXPECT_EQ(a.data[i].d, b.data[i].d);
        EXPECT_EQ(a.data[i].c, b.data[i].c);
    }
    auto other = s;
    other.seed = s.seed + 1;
    const auto c = generate(other, 100);
    bool differs = false;
    for (std::size_t i = 0; i < c.data.size(); ++i) differs |= c.data[i].y != a.data[i].y;
    EXPECT_TRUE(differs);
    EXPECT_NE(block_seed(1, 0), block_seed(1, 1));
    EXPECT_NE(block_seed(1, 0), block_seed(2, 0));
}

TEST(Generate, RankMapRecoversLocationShift) {
    const auto g = generate(rank_spec(), 1500);
    KernelOptions opt;
    opt.multiplier = 0.05;
    const auto cdfs = ConditionalCdfs::fit(g.data, opt);
    const auto eff = rank_effects(g.data, cdfs);
    double err = 0.0;
    for (std::size_t i = 0; i < eff.size(); ++i) err += std::abs(eff[i] - g.truth.effect_x[i]) / eff.size();
    EXPECT_LT(err, 0.05);
}

TEST(Generate, RejectsInvalidSpecs) {
    auto s = linear_spec();
    EXPECT_THROW(generate(s, 0), InvalidArgument);
    s.assignment = Randomized{1.0};
    EXPECT_THROW(generate(s, 10), InvalidArgument);
    auto bad_dim = linear_spec();
    std::get<LinearConstantTE>(bad_dim.outcome).beta = {1.0};
    EXPECT_THROW(generate(bad_dim, 10), DimensionMismatch);
    auto bounded = linear_spec();
    bounded.bounds = SupportBounds::interval(0.0, 1.0);
    EXPECT_THROW(generate(bounded, 100), InvalidArgument);
    auto empty_grid = factor_spec();
    empty_grid.covariates = DiscreteGridCovariates{{{}}};
    EXPECT_THROW(generate(empty_grid, 10), InvalidArgument);
}

TEST(Generate, DiscreteGridAtomsFormAProductLaw) {
    const CovariateLaw law = DiscreteGridCovariates{{{0.0, 1.0, 2.0}, {-1.0, 1.0}}};
    const auto [pts, mass] = covariate_atoms(law);
    ASSERT_EQ(pts.size(), 6u);
    double total = 0;
    for (double m : mass) total += m;
    EXPECT_NEAR(total, 1.0, 1e-15);
    EXPECT_EQ(pts[1], (std::vector<double>{0.0, 1.0}));
    EXPECT_EQ(covariate_mean(law), (std::vector<double>{1.0, 0.0}));
    EXPECT_THROW(covariate_atoms(UniformCovariates{{0.0}, {1.0}}), InvalidArgument);
}
