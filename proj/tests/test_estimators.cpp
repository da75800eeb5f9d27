#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "extval/estimators.hpp"

using namespace extval;

namespace {

Observation obs(std::vector<double> x, double y, int d) {
    Observation o;
    o.x = std::move(x);
    o.y = y;
    o.d = d;
    return o;
}

Dataset noisy_linear(std::size_t n, std::uint64_t seed, double noise) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ux(0.0, 2.0);
    std::normal_distribution<double> e(0.0, 1.0);
    std::vector<Observation> rows;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = ux(rng);
        const int d = static_cast<int>(i % 2);
        rows.push_back(obs({x}, 1.0 + 2.0 * x + d * (3.0 - x) + noise * e(rng), d));
    }
    return Dataset(std::move(rows), SupportBounds::unbounded());
}

std::vector<std::array<WeightedAtoms, 2>> repeat(const WeightedAtoms& f0, const WeightedAtoms& f1, std::size_t n) {
    return std::vector<std::array<WeightedAtoms, 2>>(n, std::array<WeightedAtoms, 2>{f0, f1});
}

} // namespace

TEST(Regression, NoiselessLinearDesignIsExact) {
    const auto data = noisy_linear(40, 1, 0.0);
    const auto fit = fit_delta_regression(data);
    EXPECT_FALSE(fit.ridge_used);
    EXPECT_NEAR(fit.coef_treated[0] - fit.coef_control[0], 3.0, 1e-10);
    EXPECT_NEAR(fit.coef_treated[1] - fit.coef_control[1], -1.0, 1e-10);
    for (double x : {0.0, 0.7, 1.9}) EXPECT_NEAR(fit.predict(std::vector<double>{x}), 3.0 - x, 1e-10);
}

TEST(Regression, ConstantBasisGivesDifferenceInMeans) {
    const auto data = noisy_linear(31, 2, 1.0);
    const auto fit = fit_delta_regression(data, Basis{Basis::Kind::Constant});
    double s[2] = {0, 0}, c[2] = {0, 0};
    for (const auto& o : data) {
        s[o.d] += o.y;
        c[o.d] += 1;
    }
    EXPECT_NEAR(fit.predict(std::vector<double>{0.3}), s[1] / c[1] - s[0] / c[0], 1e-12);
}

TEST(Regression, ErrorShrinksWithSampleSize) {
    auto mae = [](std::size_t n) {
        double acc = 0.0;
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const auto data = noisy_linear(n, 100 + seed, 1.0);
            const auto fit = fit_delta_regression(data);
            double e = 0.0;
            for (const auto& o : data) e += std::abs(fit.predict(o.x) - (3.0 - o.x[0]));
            acc += e / static_cast<double>(n);
        }
        return acc / 20.0;
    };
    const double ratio = mae(2000) / mae(500);
    EXPECT_GT(ratio, 0.35);
    EXPECT_LT(ratio, 0.7);
}

TEST(Regression, SingularDesignFallsBackToRidge) {
    std::vector<Observation> rows;
    for (int i = 0; i < 10; ++i) rows.push_back(obs({double(i), double(i)}, 2.0 * i + (i % 2), i % 2));
    const auto fit = fit_delta_regression(Dataset(rows, SupportBounds::unbounded()));
    EXPECT_TRUE(fit.ridge_used);
    ASSERT_FALSE(fit.warnings.empty());
    for (double v : fit.coef_treated) EXPECT_TRUE(std::isfinite(v));
    EXPECT_NEAR(fit.predict(std::vector<double>{4.0, 4.0}), 1.0, 1e-5);
}

TEST(Regression, NeedsBothArms) {
    std::vector<Observation> rows{obs({0.0}, 1.0, 1), obs({1.0}, 2.0, 1)};
    EXPECT_THROW(fit_delta_regression(Dataset(rows, SupportBounds::unbounded())), InvalidArgument);
}

TEST(Iv, PerfectInstrumentRecoversConstantEffect) {
    std::vector<Observation> rows;
    for (int i = 0; i < 20; ++i) {
        auto o = obs({0.0}, 0.1 * (i / 2) + 3.0 * (i % 2), i % 2);
        o.z = static_cast<double>(i % 2);
        rows.push_back(o);
    }
    const auto fit = fit_delta_iv(Dataset(rows, SupportBounds::unbounded()), CellPartition::single());
    ASSERT_TRUE(fit.ok());
    EXPECT_NEAR(fit.cell_effect[0], 3.0, 1e-12);
}

TEST(Iv, TwoCellMonteCarlo) {
    std::mt19937_64 rng(7);
    std::bernoulli_distribution coin(0.5), comply(0.9);
    std::normal_distribution<double> e(0.0, 0.25);
    std::vector<Observation> rows;
    for (int i = 0; i < 100000; ++i) {
        const double x = coin(rng) ? 1.0 : 0.0;
        const double z = coin(rng) ? 1.0 : 0.0;
        const double u = e(rng);
        // Noncompliers self-select on the outcome noise, so OLS would be biased.
        const int d = comply(rng) ? static_cast<int>(z) : (u > 0 ? 1 : 0);
        const double effect = x == 0.0 ? 1.0 : -1.0;
        auto o = obs({x}, u + d * effect, d);
        o.z = z;
        rows.push_back(o);
    }
    const auto fit = fit_delta_iv(Dataset(rows, SupportBounds::unbounded()), CellPartition::cuts_on(0, {0.5}));
    ASSERT_TRUE(fit.ok());
    EXPECT_NEAR(fit.cell_effect[0], 1.0, 1e-2);
    EXPECT_NEAR(fit.cell_effect[1], -1.0, 1e-2);
}

TEST(Iv, UncorrelatedInstrumentIsFlagged) {
    std::vector<Observation> rows;
    const int d[] = {0, 0, 1, 1};
    const double z[] = {0, 1, 0, 1};
    for (int i = 0; i < 4; ++i) {
        auto o = obs({0.0}, 1.0 * i, d[i]);
        o.z = z[i];
        rows.push_back(o);
    }
    const auto fit = fit_delta_iv(Dataset(rows, SupportBounds::unbounded()), CellPartition::single());
    EXPECT_FALSE(fit.ok());
    EXPECT_EQ(fit.cell_effect[0], 0.0);
    EXPECT_THROW(fit.function(), MissingEstimate);
}

TEST(ConditionalCdfs, HugeBandwidthGivesArmMarginals) {
    const auto data = noisy_linear(30, 3, 1.0);
    KernelOptions opt;
    opt.multiplier = 1e8;
    const auto cdfs = ConditionalCdfs::fit(data, opt);
    for (int arm = 0; arm < 2; ++arm) {
        std::vector<double> ys;
        for (const auto& o : data)
            if (o.d == arm) ys.push_back(o.y);
        const auto marginal = WeightedAtoms::uniform(ys);
        for (std::size_t i : {0u, 13u, 29u}) {
            const auto f = cdfs.distribution(i, arm);
            ASSERT_EQ(f.values(), marginal.values());
            for (std::size_t k = 0; k < f.size(); ++k) EXPECT_NEAR(f.probs()[k], marginal.probs()[k], 1e-12);
        }
    }
}

TEST(ConditionalCdfs, OneObservationPerArmGivesPointMasses) {
    std::vector<Observation> rows{obs({0.0}, 2.0, 0), obs({1.0}, 5.0, 1)};
    const auto cdfs = ConditionalCdfs::fit(Dataset(rows, SupportBounds::unbounded()));
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_TRUE(cdfs.distribution(i, 0).degenerate());
        EXPECT_EQ(cdfs.distribution(i, 0).values()[0], 2.0);
        EXPECT_EQ(cdfs.distribution(i, 1).values()[0], 5.0);
    }
}

TEST(ConditionalCdfs, RecoversShiftedDiscreteLaw) {
    // Y_d = x + d + U with U uniform on {0, 1, 2, 3}.
    std::mt19937_64 rng(11);
    std::bernoulli_distribution coin(0.5);
    std::uniform_int_distribution<int> u(0, 3);
    const std::size_t n = 5000;
    std::vector<Observation> rows;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = coin(rng) ? 1.0 : 0.0;
        const int d = coin(rng) ? 1 : 0;
        rows.push_back(obs({x}, x + d + u(rng), d));
    }
    const Dataset data(rows, SupportBounds::unbounded());
    KernelOptions opt;
    opt.multiplier = std::pow(static_cast<double>(n), -0.2);
    const auto cdfs = ConditionalCdfs::fit(data, opt);
    double sup = 0.0;
    for (std::size_t i = 0; i < 50; ++i) {
        const double x = data[i].x[0];
        for (int arm = 0; arm < 2; ++arm) {
            const auto f = cdfs.distribution(i, arm);
            for (double y = x + arm - 0.5; y < x + arm + 4.0; y += 1.0) {
                const double truth = std::clamp((y - x - arm + 0.5) / 4.0, 0.0, 1.0);
                sup = std::max(sup, std::abs(f.cdf(y) - truth));
            }
        }
    }
    EXPECT_LT(sup, 0.05);
}

TEST(ConditionalCdfs, ExactGroupMatching) {
    std::vector<Observation> rows;
    for (int i = 0; i < 8; ++i) {
        auto o = obs({0.0}, 10.0 * (i % 2) + i, i / 4);
        o.c = i % 2;
        rows.push_back(o);
    }
    KernelOptions opt;
    opt.grouping = Grouping::UseXandC;
    const auto cdfs = ConditionalCdfs::fit(Dataset(rows, SupportBounds::unbounded()), opt);
    const auto even_treated = cdfs.distribution(0, 1), odd_control = cdfs.distribution(1, 0);
    for (double v : even_treated.values()) EXPECT_LT(v, 10.0);
    for (double v : odd_control.values()) EXPECT_GT(v, 10.0);
}

TEST(ConditionalCdfs, IsolatedPointTriggersWidening) {
    std::vector<Observation> rows{obs({0.0}, 0.0, 0), obs({0.1}, 1.0, 1), obs({0.05}, 1.0, 0), obs({0.02}, 2.0, 1),
                                  obs({1000.0}, 3.0, 0)};
    KernelOptions opt;
    opt.multiplier = 1e-4;
    const auto cdfs = ConditionalCdfs::fit(Dataset(rows, SupportBounds::unbounded()), opt);
    EXPECT_FALSE(cdfs.warnings().empty());
    EXPECT_FALSE(cdfs.distribution(4, 1).empty());
}

TEST(RankEffects, IdenticalMarginalsGiveZero) {
    const auto f = WeightedAtoms::uniform({0.0, 1.0});
    std::vector<Observation> rows{obs({0.0}, 1.0, 1), obs({0.0}, 0.0, 0)};
    const Dataset data(rows, SupportBounds::binary());
    const auto cdfs = ConditionalCdfs::from_atoms(repeat(f, f, 2));
    EXPECT_EQ(rank_effects(data, cdfs), (std::vector<double>{0.0, 0.0}));
}

TEST(RankEffects, LocationShiftGivesUnitEffects) {
    const auto f0 = WeightedAtoms::uniform({0.0, 1.0}), f1 = WeightedAtoms::uniform({1.0, 2.0});
    std::vector<Observation> rows{obs({0.0}, 1.0, 1), obs({0.0}, 2.0, 1), obs({0.0}, 0.0, 0), obs({0.0}, 1.0, 0)};
    const Dataset data(rows, SupportBounds::unbounded());
    const auto d = rank_effects(data, ConditionalCdfs::from_atoms(repeat(f0, f1, 4)));
    for (double v : d) EXPECT_EQ(v, 1.0);
}

TEST(RankEffects, DiscretizedGaussianLocationFamily) {
    std::vector<double> grid, w0, w1;
    for (int k = 0; k <= 200; ++k) {
        const double v = -5.0 + 0.05 * k;
        grid.push_back(v);
        w0.push_back(std::exp(-0.5 * v * v));
        w1.push_back(std::exp(-0.5 * (v - 1.0) * (v - 1.0)));
    }
    const WeightedAtoms f0(grid, w0), f1(grid, w1);
    std::vector<Observation> rows;
    for (double y = -2.0; y <= 2.0; y += 0.25) {
        rows.push_back(obs({0.0}, y + 1.0, 1));
        rows.push_back(obs({0.0}, y, 0));
    }
    const Dataset data(rows, SupportBounds::unbounded());
    const auto d = rank_effects(data, ConditionalCdfs::from_atoms(repeat(f0, f1, data.size())));
    for (double v : d) EXPECT_NEAR(v, 1.0, 0.02);
}

TEST(RankEffects, AntitonePairingOfUniforms) {
    const auto f = WeightedAtoms::uniform({0.0, 0.5, 1.0});
    std::vector<Observation> rows{obs({0.0}, 0.0, 0), obs({0.0}, 1.0, 0), obs({0.0}, 0.5, 1)};
    const Dataset data(rows, SupportBounds::binary());
    const auto d = negative_rank_effects(data, ConditionalCdfs::from_atoms(repeat(f, f, 3)));
    EXPECT_EQ(d[0], 1.0);  // phi*_1(0) = 1
    EXPECT_EQ(d[1], -1.0); // phi*_1(1) = 0
    EXPECT_EQ(d[2], 0.0);
}

TEST(RankEffects, PointMassesMakeBothCouplingsAgree) {
    std::vector<std::array<WeightedAtoms, 2>> atoms;
    std::vector<Observation> rows;
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-2, 2);
    for (int i = 0; i < 12; ++i) {
        const double a = u(rng), b = u(rng);
        atoms.push_back({WeightedAtoms::point(a), WeightedAtoms::point(b)});
        rows.push_back(i % 2 ? obs({0.0}, b, 1) : obs({0.0}, a, 0));
    }
    const Dataset data(rows, SupportBounds::unbounded());
    const auto cdfs = ConditionalCdfs::from_atoms(atoms);
    const auto d = rank_effects(data, cdfs), ds = negative_rank_effects(data, cdfs);
    for (std::size_t i = 0; i < d.size(); ++i) {
        EXPECT_EQ(d[i], ds[i]);
        EXPECT_EQ(d[i], atoms[i][1].values()[0] - atoms[i][0].values()[0]);
    }
}

TEST(RankEffects, CouplingsShareMeanOnExactAtomSamples) {
    // Each arm's sample is exactly its atom list, so sample means equal marginal means.
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> u(-3, 3);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t m = 2 + trial % 6;
        std::vector<double> a(m), b(m);
        for (auto& v : a) v = u(rng);
        for (auto& v : b) v = u(rng);
        std::vector<Observation> rows;
        for (double v : a) rows.push_back(obs({0.0}, v, 0));
        for (double v : b) rows.push_back(obs({0.0}, v, 1));
        const Dataset data(rows, SupportBounds::unbounded());
        const auto cdfs = ConditionalCdfs::from_atoms(repeat(WeightedAtoms::uniform(a), WeightedAtoms::uniform(b), 2 * m));
        const auto d = rank_effects(data, cdfs), ds = negative_rank_effects(data, cdfs);
        const double md = std::accumulate(d.begin(), d.end(), 0.0) / d.size();
        const double mds = std::accumulate(ds.begin(), ds.end(), 0.0) / ds.size();
        const double truth = std::accumulate(b.begin(), b.end(), 0.0) / m - std::accumulate(a.begin(), a.end(), 0.0) / m;
        EXPECT_NEAR(md, mds, 1e-9);
        EXPECT_NEAR(md, truth, 1e-9);
    }
}

TEST(BaselineMean, ControlMeanAndErrors) {
    std::vector<Observation> rows{obs({0.0}, 1.0, 0), obs({0.0}, 3.0, 0), obs({0.0}, 9.0, 1)};
    rows[1].w = 3.0;
    EXPECT_DOUBLE_EQ(estimate_y0_mean(Dataset(rows, SupportBounds::unbounded())), 2.5);
    std::vector<Observation> treated{obs({0.0}, 1.0, 1)};
    EXPECT_THROW(estimate_y0_mean(Dataset(treated, SupportBounds::unbounded())), InvalidArgument);
    EXPECT_THROW(estimate_y0_mean(Dataset(rows, SupportBounds::unbounded()),
                                  Y0Method::ipw([](std::span<const double>) { return 1.0; })),
                 InvalidArgument);
}

TEST(BaselineMean, IpwAgreesWithControlMeanUnderRandomization) {
    std::mt19937_64 rng(17);
    std::bernoulli_distribution coin(0.5);
    std::normal_distribution<double> e(2.0, 1.0);
    std::vector<Observation> rows;
    for (int i = 0; i < 4000; ++i) rows.push_back(obs({0.0}, e(rng), coin(rng) ? 1 : 0));
    const Dataset data(rows, SupportBounds::unbounded());
    const double cm = estimate_y0_mean(data);
    const double ipw = estimate_y0_mean(data, Y0Method::ipw([](std::span<const double>) { return 0.5; }));
    double s2 = 0.0;
    for (const auto& o : data) s2 += std::pow(2.0 * (1 - o.d) * o.y - ipw, 2);
    const double se = std::sqrt(s2 / (data.size() - 1.0) / data.size());
    EXPECT_LT(std::abs(ipw - cm), 2.0 * se);
}

TEST(Overlap, RandomizedDesignHasInteriorPropensity) {
    const auto data = noisy_linear(200, 4, 1.0);
    const double e = min_estimated_propensity(data, 0.3);
    EXPECT_GT(e, 0.2);
    EXPECT_LE(e, 0.5);
}

TEST(Bundle, RejectsNonFiniteAndMissingFields) {
    std::vector<Observation> rows{obs({0.0}, 1.0, 0), obs({1.0}, 2.0, 1)};
    const Dataset data(rows, SupportBounds::unbounded());
    EstimatorBundle b;
    b.y0_mean = 1.0;
    EXPECT_THROW(b.effects_for(CouplingAssumption::ConstantTE, data), MissingEstimate);
    EXPECT_THROW(b.effects_for(CouplingAssumption::PerfectPositiveDependence, data), MissingEstimate);
    b.delta_fn = [](std::span<const double> x) { return 1.0 + x[0]; };
    EXPECT_EQ(b.effects_for(CouplingAssumption::ConstantTE, data), (std::vector<double>{1.0, 2.0}));
    b.delta_i = std::vector<double>{1.0, std::nan("")};
    EXPECT_THROW(b.validate(), MissingEstimate);
    b.delta_i = std::vector<double>{1.0};
    EXPECT_THROW(b.effects_for(CouplingAssumption::PerfectPositiveDependence, data), DimensionMismatch);
    b.delta_i.reset();
    b.y0_mean = std::nan("");
    EXPECT_THROW(b.validate(), MissingEstimate);
}
