#include <slicereg/optim.hpp>

#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"

using namespace slicereg;
using namespace oracle;



TEST(MinimizeDf, QuadraticMinimum)
{
    auto r = minimize_df(quadratic_1d(-10, 10));
    EXPECT_NEAR(r.x[0], 3.0, 1e-4);
    EXPECT_TRUE(r.converged);
}

TEST(MinimizeDf, ClampedOptimumAtActiveBound)
{
    auto r = minimize_df(quadratic_1d(-10, 2));
    EXPECT_NEAR(r.x[0], 2.0, 1e-9);
}

TEST(MinimizeDf, RosenbrockAgreesWithGridOracle)
{
    const auto oracle = grid_refine(rosenbrock, {-2.0, -2.0}, {2.0, 2.0});
    EXPECT_NEAR(oracle[0], 1.0, 1e-6);
    EXPECT_NEAR(oracle[1], 1.0, 1e-6);

    OptimProblem p;
    p.objective = rosenbrock;
    p.x0 = {-1.2, 1.0};
    p.lower = {-2.0, -2.0};
    p.upper = {2.0, 2.0};
    p.max_evaluations = 5000;
    auto r = minimize_df(p);
    EXPECT_NEAR(r.x[0], oracle[0], 1e-3);
    EXPECT_NEAR(r.x[1], oracle[1], 1e-3);
}

TEST(MinimizeDf, TerminatesOnParameterChangeTolerance)
{
    OptimProblem p;
    p.objective = [](std::span<const double> x) {
        return (x[0] - 1.0) * (x[0] - 1.0) + 2.0 * (x[1] + 0.5) * (x[1] + 0.5) + std::cos(x[0]);
    };
    p.x0 = {0.0, 0.0};
    p.lower = {-5.0, -5.0};
    p.upper = {5.0, 5.0};
    p.stop = 1e-4;
    auto tight = minimize_df(p);
    EXPECT_TRUE(tight.converged);
    EXPECT_LE(tight.final_radius, 1e-4);
    EXPECT_LT(tight.evaluations, p.max_evaluations);

    p.stop = 1e-2;
    auto loose = minimize_df(p);
    EXPECT_TRUE(loose.converged);
    EXPECT_LE(loose.final_radius, 1e-2);
    EXPECT_GT(loose.final_radius, 1e-4);
    EXPECT_LE(loose.evaluations, tight.evaluations);
}

TEST(MinimizeDf, IteratesStayInBoundsAndNeverWorseThanStart)
{
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 10; ++trial)
    {
        const int n = 3 + trial % 4;
        std::vector<double> c(n);
        for (auto& v : c)
            v = 3.0 * u(rng);
        OptimProblem p;
        p.lower.assign(n, -1.0);
        p.upper.assign(n, 1.5);
        p.x0.assign(n, 0.2);
        bool inside = true;
        p.objective = [&](std::span<const double> x) {
            double s = 0.0;
            for (int i = 0; i < n; ++i)
            {
                inside = inside && x[i] >= p.lower[i] && x[i] <= p.upper[i];
                s += (x[i] - c[i]) * (x[i] - c[i]) * (1.0 + i) + 0.1 * std::sin(3.0 * x[i]);
            }
            return s;
        };
        const double f0 = p.objective(p.x0);
        auto r = minimize_df(p);
        EXPECT_TRUE(inside);
        EXPECT_LE(r.f, f0);
        // optimum of the separable part is the clamped centre
        for (int i = 0; i < n; ++i)
        {
            if (c[i] > 1.6)
            {
                EXPECT_NEAR(r.x[i], 1.5, 1e-6);
            }
        }
    }
}

TEST(MinimizeDf, DeterministicAndBudgetRespected)
{
    OptimProblem p;
    p.objective = rosenbrock;
    p.x0 = {-1.2, 1.0};
    p.lower = {-2.0, -2.0};
    p.upper = {2.0, 2.0};
    p.max_evaluations = 37;
    auto a = minimize_df(p);
    auto b = minimize_df(p);
    EXPECT_EQ(a.x, b.x);
    EXPECT_EQ(a.f, b.f);
    EXPECT_EQ(a.evaluations, 37);
    EXPECT_FALSE(a.converged);
}

TEST(MinimizeDf, NonFiniteStartIsAnError)
{
    OptimProblem p = quadratic_1d(-1, 1);
    p.objective = [](std::span<const double>) { return std::nan(""); };
    EXPECT_THROW(minimize_df(p), Error);
}

TEST(MinimizeDf, HigherDimensionalQuadraticWithFewPoints)
{
    const int n = 16;
    OptimProblem p;
    p.lower.assign(n, -5.0);
    p.upper.assign(n, 5.0);
    p.x0.assign(n, 0.0);
    p.objective = [](std::span<const double> x) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i)
            s += (1.0 + 0.1 * i) * (x[i] - 1.0) * (x[i] - 1.0);
        return s;
    };
    p.interpolation_points = n + 2;
    auto r = minimize_df(p);
    for (int i = 0; i < n; ++i)
        EXPECT_NEAR(r.x[i], 1.0, 1e-3);
}

TEST(MinimizeBfgs, QuadraticExactMinimum)
{
    // (x−c)ᵀA(x−c), A SPD
    const double A[3][3] = {{4, 1, 0.5}, {1, 3, 0.2}, {0.5, 0.2, 2}};
    const double c[3] = {0.3, -0.7, 1.1};
    OptimProblem p;
    p.objective = [&](std::span<const double> x) {
        double s = 0.0;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                s += (x[i] - c[i]) * A[i][j] * (x[j] - c[j]);
        return s;
    };
    p.x0 = {0, 0, 0};
    p.lower = {-5, -5, -5};
    p.upper = {5, 5, 5};
    p.stop = 1e-9;
    auto r = minimize_bfgs(p);
    EXPECT_LE(r.iterations, 20);
    for (int i = 0; i < 3; ++i)
        EXPECT_NEAR(r.x[i], c[i], 1e-6);
}

TEST(MinimizeBfgs, FiniteDifferenceGradientMatchesAnalytic)
{
    const std::vector<double> c = {0.5, -2.0, 3.0};
    Objective f = [&](std::span<const double> x) {
        double s = 0.0;
        for (int i = 0; i < 3; ++i)
            s += (x[i] - c[i]) * (x[i] - c[i]);
        return s;
    };
    const std::vector<double> lo = {-10, -10, -10}, hi = {10, 10, 10};
    const std::vector<double> x = {1.7, 4.0, -3.5};
    const auto g = finite_difference_gradient(f, x, lo, hi);
    for (int i = 0; i < 3; ++i)
    {
        const double analytic = 2.0 * (x[i] - c[i]);
        EXPECT_LE(std::abs(g[i] - analytic), 1e-4 * std::abs(analytic));
    }
}

TEST(MinimizeBfgs, FiniteDifferenceMatchesAnalyticOnPolynomials)
{
    Objective f = [](std::span<const double> x) { return x[0] * x[0] * x[1] + 3.0 * x[1] * x[1] - x[0]; };
    const std::vector<double> lo = {-3, -3}, hi = {3, 3};
    for (double a : {-1.5, 0.4, 2.0})
        for (double b : {-2.0, 0.7})
        {
            const std::vector<double> x = {a, b};
            const auto g = finite_difference_gradient(f, x, lo, hi);
            const double gx = 2 * a * b - 1, gy = a * a + 6 * b;
            EXPECT_LE(std::abs(g[0] - gx), 1e-4 * std::max(1.0, std::abs(gx)));
            EXPECT_LE(std::abs(g[1] - gy), 1e-4 * std::max(1.0, std::abs(gy)));
        }
}

TEST(MinimizeBfgs, Rosenbrock)
{
    OptimProblem p;
    p.objective = rosenbrock;
    p.x0 = {-1.2, 1.0};
    p.lower = {-2.0, -2.0};
    p.upper = {2.0, 2.0};
    p.stop = 1e-10;
    p.max_evaluations = 20000;
    auto r = minimize_bfgs(p, rosenbrock_gradient);
    EXPECT_NEAR(r.x[0], 1.0, 1e-4);
    EXPECT_NEAR(r.x[1], 1.0, 1e-4);
}

TEST(MinimizeBfgs, RespectsBoundsByProjection)
{
    OptimProblem p = quadratic_1d(-10, 2);
    auto r = minimize_bfgs(p);
    EXPECT_NEAR(r.x[0], 2.0, 1e-12);
    EXPECT_LE(r.f, 9.0);
}
