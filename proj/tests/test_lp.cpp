#include <gtest/gtest.h>

#include <random>

#include "extval/lp.hpp"
#include "support/oracles.hpp"

using namespace extval;
using lp::RowSense;

namespace {

double residual_inf(const lp::LinearProgram& p, const std::vector<double>& x, bool equality_only) {
    double worst = 0.0;
    for (std::size_t i = 0; i < p.num_rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < p.num_vars(); ++j) s += p.rows[i][j] * x[j];
        const double r = s - p.rhs[i];
        if (p.senses[i] == RowSense::Equal) worst = std::max(worst, std::abs(r));
        if (equality_only) continue;
        if (p.senses[i] == RowSense::LessEqual) worst = std::max(worst, r);
        if (p.senses[i] == RowSense::GreaterEqual) worst = std::max(worst, -r);
    }
    return worst;
}

// Random bounded LP: max c'x over mixed rows inside a box, with a known feasible point.
lp::LinearProgram random_lp(std::mt19937_64& rng, int n, int m) {
    std::uniform_real_distribution<double> u(-1, 1);
    std::uniform_int_distribution<int> sense(0, 2);
    lp::LinearProgram p;
    p.sense = lp::Sense::Maximize;
    std::vector<double> x0(n);
    for (int j = 0; j < n; ++j) {
        p.add_variable(u(rng), -2.0, 2.0);
        x0[j] = u(rng);
    }
    for (int i = 0; i < m; ++i) {
        std::vector<double> a(n);
        double s = 0.0;
        for (int j = 0; j < n; ++j) {
            a[j] = std::round(u(rng) * 4) / 4; // coarse entries create degenerate ties
            s += a[j] * x0[j];
        }
        const int k = i == 0 ? 1 : sense(rng);
        if (k == 0) p.add_row(a, RowSense::LessEqual, s + std::abs(u(rng)));
        if (k == 1) p.add_row(a, RowSense::Equal, s);
        if (k == 2) p.add_row(a, RowSense::GreaterEqual, s - std::abs(u(rng)));
    }
    return p;
}

} // namespace

TEST(Simplex, SingleUpperBoundRow) {
    lp::LinearProgram p;
    p.sense = lp::Sense::Maximize;
    p.add_variable(1.0);
    p.add_row({1.0}, RowSense::LessEqual, 3.0);
    auto s = lp::solve(p);
    ASSERT_EQ(s.status, lp::Status::Optimal);
    EXPECT_DOUBLE_EQ(s.x[0], 3.0);
    EXPECT_DOUBLE_EQ(s.value, 3.0);
    EXPECT_NEAR(s.dual_value, 3.0, 1e-12);
}

TEST(Simplex, ContradictoryEqualitiesAreInfeasible) {
    lp::LinearProgram p;
    p.add_variable(0.0, -lp::kInf, lp::kInf);
    p.add_row({1.0}, RowSense::Equal, 1.0);
    p.add_row({1.0}, RowSense::Equal, 2.0);
    EXPECT_EQ(lp::solve(p).status, lp::Status::Infeasible);
}

TEST(Simplex, DetectsUnboundedness) {
    lp::LinearProgram p;
    p.sense = lp::Sense::Maximize;
    p.add_variable(1.0);
    p.add_variable(-1.0);
    p.add_row({1.0, -1.0}, RowSense::LessEqual, 1.0);
    p.add_row({-1.0, 1.0}, RowSense::LessEqual, 5.0);
    p.add_variable(1.0, -lp::kInf, lp::kInf);
    EXPECT_EQ(lp::solve(p).status, lp::Status::Unbounded);
}

TEST(Simplex, HandlesUpperOnlyAndFreeVariables) {
    // min x + y with x <= 4 (no lower bound) and y free, x + y >= 1, x - y = 2.
    lp::LinearProgram p;
    p.add_variable(1.0, -lp::kInf, 4.0);
    p.add_variable(1.0, -lp::kInf, lp::kInf);
    p.add_row({1.0, 1.0}, RowSense::GreaterEqual, 1.0);
    p.add_row({1.0, -1.0}, RowSense::Equal, 2.0);
    auto s = lp::solve(p);
    ASSERT_EQ(s.status, lp::Status::Optimal);
    EXPECT_NEAR(s.value, 1.0, 1e-12);
    EXPECT_NEAR(s.x[0], 1.5, 1e-12);
    EXPECT_NEAR(s.x[1], -0.5, 1e-12);
}

TEST(Simplex, RedundantEqualityRowsAreTolerated) {
    lp::LinearProgram p;
    p.add_variable(1.0);
    p.add_variable(2.0);
    p.add_row({1.0, 1.0}, RowSense::Equal, 1.0);
    p.add_row({2.0, 2.0}, RowSense::Equal, 2.0);
    auto s = lp::solve(p);
    ASSERT_EQ(s.status, lp::Status::Optimal);
    EXPECT_NEAR(s.value, 1.0, 1e-12);
}

TEST(Simplex, ClassicCyclingExampleTerminates) {
    // Beale's example: cycles under the textbook largest-coefficient rule.
    lp::LinearProgram p;
    for (double c : {-0.75, 150.0, -0.02, 6.0}) p.add_variable(c);
    p.add_row({0.25, -60.0, -0.04, 9.0}, RowSense::LessEqual, 0.0);
    p.add_row({0.5, -90.0, -0.02, 3.0}, RowSense::LessEqual, 0.0);
    p.add_row({0.0, 0.0, 1.0, 0.0}, RowSense::LessEqual, 1.0);
    auto s = lp::solve(p);
    ASSERT_EQ(s.status, lp::Status::Optimal);
    EXPECT_NEAR(s.value, -0.05, 1e-12);
}

TEST(Simplex, MalformedInputThrows) {
    lp::LinearProgram p;
    p.add_variable(1.0, 2.0, 1.0);
    EXPECT_THROW(lp::solve(p), InvalidArgument);
    lp::LinearProgram q;
    q.add_variable(std::nan(""));
    EXPECT_THROW(lp::solve(q), InvalidArgument);
}

TEST(Simplex, MatchesVertexEnumerationOnSmallPrograms) {
    std::mt19937_64 rng(101);
    for (int trial = 0; trial < 150; ++trial) {
        const int n = 2 + trial % 3, m = 1 + trial % 3;
        auto p = random_lp(rng, n, m);
        // Oracle form: A x <= b with bounds and equalities as inequality pairs.
        std::vector<std::vector<double>> A;
        std::vector<double> b;
        for (std::size_t i = 0; i < p.num_rows(); ++i) {
            if (p.senses[i] != RowSense::GreaterEqual) {
                A.push_back(p.rows[i]);
                b.push_back(p.rhs[i]);
            }
            if (p.senses[i] != RowSense::LessEqual) {
                std::vector<double> neg = p.rows[i];
                for (double& v : neg) v = -v;
                A.push_back(neg);
                b.push_back(-p.rhs[i]);
            }
        }
        for (int j = 0; j < n; ++j) {
            std::vector<double> e(n, 0.0);
            e[j] = 1.0;
            A.push_back(e);
            b.push_back(p.upper[j]);
            e[j] = -1.0;
            A.push_back(e);
            b.push_back(-p.lower[j]);
        }
        const auto expected = oracles::vertex_enumeration_max(A, b, p.objective);
        const auto s = lp::solve(p);
        ASSERT_TRUE(expected.has_value());
        ASSERT_EQ(s.status, lp::Status::Optimal);
        EXPECT_NEAR(s.value, *expected, 1e-7);
    }
}

TEST(Simplex, LargerProgramsSatisfyStrongDualityAndFeasibility) {
    std::mt19937_64 rng(202);
    for (int trial = 0; trial < 60; ++trial) {
        const int n = 5 + trial % 16, m = 3 + trial % 18;
        auto p = random_lp(rng, n, m);
        const auto s = lp::solve(p);
        ASSERT_EQ(s.status, lp::Status::Optimal);
        EXPECT_NEAR(s.dual_value, s.value, 1e-9 * (1.0 + std::abs(s.value)));
        EXPECT_LT(residual_inf(p, s.x, true), 1e-9);
        EXPECT_LT(residual_inf(p, s.x, false), 1e-9);
        for (int j = 0; j < n; ++j) {
            EXPECT_GE(s.x[j], p.lower[j]);
            EXPECT_LE(s.x[j], p.upper[j]);
        }
        // Dual feasibility in the maximization convention: <= rows carry y >= 0.
        for (std::size_t i = 0; i < p.num_rows(); ++i) {
            if (p.senses[i] == RowSense::LessEqual) {
                EXPECT_GE(s.row_duals[i], -1e-9);
            }
            if (p.senses[i] == RowSense::GreaterEqual) {
                EXPECT_LE(s.row_duals[i], 1e-9);
            }
        }
    }
}

TEST(Simplex, DeterministicAcrossRepeatedSolves) {
    std::mt19937_64 rng(303);
    auto p = random_lp(rng, 12, 10);
    const auto a = lp::solve(p), b = lp::solve(p);
    EXPECT_EQ(a.x, b.x);
    EXPECT_EQ(a.iterations, b.iterations);
    EXPECT_EQ(a.row_duals, b.row_duals);
}
