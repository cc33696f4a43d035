#pragma once

// Bounded local minimizers.
//
// minimize_df: derivative-free trust-region method in the BOBYQA family. An interpolation set of
// m points carries a quadratic model whose Hessian changes by the least Frobenius norm each time
// the model is rebuilt; steps minimize the model inside the trust region intersected with the
// bounds. The lower trust radius rho shrinks from initial_step to stop; the run ends when rho
// reaches stop (the parameter-change tolerance) or the evaluation budget is exhausted.
//
// minimize_bfgs: projected quasi-Newton with Armijo backtracking, using an analytic gradient or
// central finite differences with step 1e-3 of each parameter's bound range.

#include "error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace slicereg
{

using Objective = std::function<double(std::span<const double>)>;
using Gradient = std::function<void(std::span<const double>, std::span<double>)>;

struct OptimProblem
{
    Objective objective;
    std::vector<double> x0;
    std::vector<double> lower;
    std::vector<double> upper;
    double stop = 1e-4;           ///< parameter-change tolerance
    double initial_step = 0.0;    ///< starting trust radius; 0 picks 0.1 of the smallest bound range
    int max_evaluations = 2000;
    int interpolation_points = 0; ///< minimize_df only; 0 means 2n+1
    int max_iterations = 500;     ///< minimize_bfgs only
};

struct OptimResult
{
    std::vector<double> x;
    double f = 0.0;
    int evaluations = 0;
    int iterations = 0;
    double final_radius = 0.0; ///< rho for minimize_df, last step length for minimize_bfgs
    bool converged = false;    ///< stop tolerance reached (as opposed to budget exhausted)
    bool warning = false;      ///< line search failure (minimize_bfgs)
};

namespace detail
{
inline void validate_problem(const OptimProblem& p)
{
    const std::size_t n = p.x0.size();
    require(n > 0, ErrorCode::InvalidArgument, "optimization needs at least one parameter");
    require(p.lower.size() == n && p.upper.size() == n, ErrorCode::InvalidArgument, "bounds size mismatch");
    require(static_cast<bool>(p.objective), ErrorCode::InvalidArgument, "objective missing");
    require(p.stop > 0.0, ErrorCode::InvalidArgument, "stop tolerance must be > 0");
    require(p.max_evaluations >= 1, ErrorCode::InvalidArgument, "evaluation budget must be >= 1");
    for (std::size_t i = 0; i < n; ++i)
    {
        require(p.lower[i] < p.upper[i], ErrorCode::InvalidArgument, "each bound range must be non-empty");
        require(p.lower[i] <= p.x0[i] && p.x0[i] <= p.upper[i], ErrorCode::InvalidArgument,
                "start point outside bounds");
    }
}

// Evaluation bookkeeping shared by both methods: counts calls and keeps the best point seen.
class Tracker
{
public:
    Tracker(const OptimProblem& p)
        : m_problem(p)
    {
    }

    double operator()(const Eigen::VectorXd& x)
    {
        const double f = m_problem.objective(std::span<const double>(x.data(), x.size()));
        ++m_evals;
        if (m_evals == 1)
            require(std::isfinite(f), ErrorCode::InvalidArgument, "objective is not finite at the start point");
        double v = f;
        if (!std::isfinite(v))
            v = m_worst + std::abs(m_worst) + 1.0;
        m_worst = std::max(m_worst, v);
        if (m_evals == 1 || v < m_best_f)
        {
            m_best_f = v;
            m_best_x = x;
        }
        return v;
    }

    bool exhausted() const { return m_evals >= m_problem.max_evaluations; }
    int evaluations() const { return m_evals; }

    OptimResult result() const
    {
        OptimResult r;
        r.x.assign(m_best_x.data(), m_best_x.data() + m_best_x.size());
        r.f = m_best_f;
        r.evaluations = m_evals;
        return r;
    }

private:
    const OptimProblem& m_problem;
    int m_evals = 0;
    double m_best_f = 0.0;
    double m_worst = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd m_best_x;
};

// Minimizes g·d + ½dᵀHd over ‖d‖ ≤ delta and lo ≤ xc + d ≤ hi by truncated conjugate gradients,
// freezing variables as they reach a bound.
inline Eigen::VectorXd trust_region_step(const Eigen::VectorXd& g, const Eigen::MatrixXd& H, const Eigen::VectorXd& xc,
                                         const Eigen::VectorXd& lo, const Eigen::VectorXd& hi, double delta)
{
    const int n = static_cast<int>(g.size());
    Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
    std::vector<bool> free(n, true);
    for (int i = 0; i < n; ++i)
        if ((xc[i] <= lo[i] && g[i] > 0.0) || (xc[i] >= hi[i] && g[i] < 0.0))
            free[i] = false;

    auto mask = [&](Eigen::VectorXd v) {
        for (int i = 0; i < n; ++i)
            if (!free[i])
                v[i] = 0.0;
        return v;
    };

    for (int restart = 0; restart <= n; ++restart)
    {
        Eigen::VectorXd r = mask(-(g + H * d));
        double rr = r.squaredNorm();
        const double rr0 = rr;
        if (rr <= 1e-30)
            return d;
        Eigen::VectorXd p = r;
        bool hit_bound = false;
        for (int it = 0; it < n; ++it)
        {
            const Eigen::VectorXd Hp = mask(H * p);
            const double pHp = p.dot(Hp);

            // distance to the ball boundary along p
            const double pp = p.squaredNorm(), dp = d.dot(p), dd = d.squaredNorm();
            const double disc = std::max(0.0, dp * dp + pp * (delta * delta - dd));
            const double a_ball = (std::sqrt(disc) - dp) / pp;

            double a_box = std::numeric_limits<double>::infinity();
            int hit = -1;
            for (int i = 0; i < n; ++i)
            {
                if (!free[i] || p[i] == 0.0)
                    continue;
                const double room = p[i] > 0.0 ? hi[i] - xc[i] - d[i] : lo[i] - xc[i] - d[i];
                const double a = std::max(0.0, room / p[i]);
                if (a < a_box)
                {
                    a_box = a;
                    hit = i;
                }
            }
            const double a_cg = pHp > 0.0 ? rr / pHp : std::numeric_limits<double>::infinity();
            const double a = std::min({a_cg, a_ball, a_box});
            d += a * p;

            if (a == a_box && a_box < a_ball && a_box <= a_cg)
            {
                d[hit] = (p[hit] > 0.0 ? hi[hit] : lo[hit]) - xc[hit];
                free[hit] = false;
                hit_bound = true;
                break;
            }
            if (a == a_ball)
                return d;
            r -= a * Hp;
            const double rr_new = r.squaredNorm();
            if (rr_new <= 1e-20 * rr0)
                return d;
            p = r + (rr_new / rr) * p;
            rr = rr_new;
        }
        if (!hit_bound)
            return d;
    }
    return d;
}

// Quadratic model around the interpolation-set centre with the KKT factorisation needed for
// Lagrange function values.
struct DfModel
{
    Eigen::VectorXd g;
    Eigen::MatrixXd H;
    Eigen::MatrixXd S; ///< scaled displacements of the points from the centre (n × m)
    double scale = 1.0;
    Eigen::FullPivLU<Eigen::MatrixXd> lu;
    bool ok = false;

    // Values of all Lagrange functions at the displacement d from the centre.
    Eigen::VectorXd lagrange_values(const Eigen::VectorXd& d) const
    {
        const int n = static_cast<int>(S.rows()), m = static_cast<int>(S.cols());
        const Eigen::VectorXd ds = d / scale;
        Eigen::VectorXd phi(m + n + 1);
        for (int j = 0; j < m; ++j)
        {
            const double t = S.col(j).dot(ds);
            phi[j] = 0.5 * t * t;
        }
        phi[m] = 1.0;
        phi.tail(n) = ds;
        return lu.solve(phi).head(m);
    }

    // Coefficients (λ, c, ĝ) of Lagrange function k in scaled coordinates.
    Eigen::VectorXd lagrange_coefficients(int k) const
    {
        const int n = static_cast<int>(S.rows()), m = static_cast<int>(S.cols());
        Eigen::VectorXd e = Eigen::VectorXd::Zero(m + n + 1);
        e[k] = 1.0;
        return lu.solve(e);
    }
};

inline DfModel build_model(const Eigen::MatrixXd& Y, const Eigen::VectorXd& F, int centre, const Eigen::MatrixXd& H_prev)
{
    const int n = static_cast<int>(Y.rows()), m = static_cast<int>(Y.cols());
    DfModel model;
    Eigen::MatrixXd D = Y.colwise() - Y.col(centre);
    double scale = 0.0;
    for (int j = 0; j < m; ++j)
        scale = std::max(scale, D.col(j).norm());
    model.scale = scale > 0.0 ? scale : 1.0;
    model.S = D / model.scale;

    const int N = m + n + 1;
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(N, N);
    const Eigen::MatrixXd G = model.S.transpose() * model.S;
    W.topLeftCorner(m, m) = 0.5 * G.array().square().matrix();
    W.block(0, m, m, 1).setOnes();
    W.block(m, 0, 1, m).setOnes();
    W.block(0, m + 1, m, n) = model.S.transpose();
    W.block(m + 1, 0, n, m) = model.S;

    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(N);
    for (int j = 0; j < m; ++j)
        rhs[j] = F[j] - F[centre] - 0.5 * D.col(j).dot(H_prev * D.col(j));

    model.lu.compute(W);
    if (model.lu.rank() < N)
        return model;
    const Eigen::VectorXd sol = model.lu.solve(rhs);
    const Eigen::VectorXd lambda = sol.head(m);
    model.g = sol.tail(n) / model.scale;
    model.H = H_prev + (model.S * lambda.asDiagonal() * model.S.transpose()) / (model.scale * model.scale);
    model.ok = model.H.allFinite() && model.g.allFinite();
    return model;
}

// Step from the centre, inside radius `radius` and the bounds, that makes |L_k| large.
inline Eigen::VectorXd geometry_step(const DfModel& model, int k, int centre, const Eigen::VectorXd& xc,
                                     const Eigen::VectorXd& lo, const Eigen::VectorXd& hi, double radius)
{
    const int n = static_cast<int>(model.S.rows()), m = static_cast<int>(model.S.cols());
    const Eigen::VectorXd coef = model.lagrange_coefficients(k);
    const Eigen::VectorXd lambda = coef.head(m);
    const Eigen::VectorXd ghat = coef.tail(n);

    auto value = [&](const Eigen::VectorXd& d) {
        const Eigen::VectorXd ds = d / model.scale;
        double v = coef[m] + ghat.dot(ds);
        for (int j = 0; j < m; ++j)
        {
            const double t = model.S.col(j).dot(ds);
            v += 0.5 * lambda[j] * t * t;
        }
        return v;
    };
    // Largest feasible multiple of a unit direction, up to the radius.
    auto feasible_length = [&](const Eigen::VectorXd& u) {
        double a = radius;
        for (int i = 0; i < n; ++i)
        {
            if (u[i] > 0.0)
                a = std::min(a, (hi[i] - xc[i]) / u[i]);
            else if (u[i] < 0.0)
                a = std::min(a, (lo[i] - xc[i]) / u[i]);
        }
        return std::max(0.0, a);
    };

    std::vector<Eigen::VectorXd> dirs;
    for (int j = 0; j < m; ++j)
        if (j != centre && model.S.col(j).norm() > 0.0)
            dirs.push_back(model.S.col(j).normalized());
    if (ghat.norm() > 0.0)
        dirs.push_back(ghat.normalized());
    for (int i = 0; i < n; ++i)
        dirs.push_back(Eigen::VectorXd::Unit(n, i));

    Eigen::VectorXd best = Eigen::VectorXd::Zero(n);
    double best_v = -1.0;
    for (const auto& u : dirs)
        for (double sign : {1.0, -1.0})
        {
            const Eigen::VectorXd su = sign * u;
            const double a = feasible_length(su);
            if (a <= 0.0)
                continue;
            const Eigen::VectorXd d = a * su;
            const double v = std::abs(value(d));
            if (v > best_v)
            {
                best_v = v;
                best = d;
            }
        }
    return best;
}
} // namespace detail

/// Central differences with step 1e-3 of each bound range (one-sided at a bound).
inline std::vector<double> finite_difference_gradient(const Objective& f, std::span<const double> x,
                                                      std::span<const double> lower, std::span<const double> upper)
{
    const std::size_t n = x.size();
    std::vector<double> g(n), xp(x.begin(), x.end()), xm(x.begin(), x.end());
    const double fx = f(x);
    for (std::size_t i = 0; i < n; ++i)
    {
        const double h = 1e-3 * (upper[i] - lower[i]);
        xp[i] = std::min(upper[i], x[i] + h);
        xm[i] = std::max(lower[i], x[i] - h);
        const double fp = xp[i] != x[i] ? f(xp) : fx;
        const double fm = xm[i] != x[i] ? f(xm) : fx;
        g[i] = (fp - fm) / (xp[i] - xm[i]);
        xp[i] = x[i];
        xm[i] = x[i];
    }
    return g;
}

/// Bound-constrained derivative-free minimization.
inline OptimResult minimize_df(const OptimProblem& problem)
{
    detail::validate_problem(problem);
    const int n = static_cast<int>(problem.x0.size());
    int m = problem.interpolation_points > 0 ? problem.interpolation_points : 2 * n + 1;
    m = std::clamp(m, n + 2, (n + 1) * (n + 2) / 2);

    const Eigen::VectorXd lo = Eigen::Map<const Eigen::VectorXd>(problem.lower.data(), n);
    const Eigen::VectorXd hi = Eigen::Map<const Eigen::VectorXd>(problem.upper.data(), n);
    const Eigen::VectorXd x0 = Eigen::Map<const Eigen::VectorXd>(problem.x0.data(), n);
    const double min_range = (hi - lo).minCoeff();
    double rho = problem.initial_step > 0.0 ? problem.initial_step : 0.1 * min_range;
    rho = std::min(rho, 0.5 * min_range);
    const double rho_end = std::min(problem.stop, rho);
    double delta = rho;

    detail::Tracker eval(problem);
    auto finish = [&](bool converged, int iterations) {
        OptimResult r = eval.result();
        r.converged = converged;
        r.iterations = iterations;
        r.final_radius = rho;
        return r;
    };

    // Initial set: x0, then one or two points per coordinate at distance rho.
    Eigen::MatrixXd Y(n, m);
    Eigen::VectorXd F(m);
    Y.col(0) = x0;
    F[0] = eval(x0);
    for (int k = 1; k < m; ++k)
    {
        if (eval.exhausted())
            return finish(false, 0);
        const int i = (k - 1) % n;
        const bool second = k > n;
        const double up = hi[i] - x0[i], down = x0[i] - lo[i];
        double step = up >= rho ? rho : -rho;
        if (second)
        {
            if (-step > 0.0 ? up >= rho : down >= rho)
                step = -step;
            else
            {
                const double room = step > 0.0 ? up : down;
                step = (room >= 2.0 * rho ? 2.0 : 0.5) * step;
            }
        }
        Y.col(k) = x0;
        Y(i, k) += step;
        F[k] = eval(Y.col(k));
    }

    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n, n);
    auto reduce_rho = [&]() {
        const double old = rho, ratio = rho / rho_end;
        rho = ratio <= 16.0 ? rho_end : (ratio <= 250.0 ? std::sqrt(ratio) * rho_end : 0.1 * rho);
        delta = std::max(0.5 * old, rho);
    };
    auto farthest = [&](int centre, double& dist) {
        int far = -1;
        dist = 0.0;
        for (int j = 0; j < m; ++j)
        {
            const double dj = (Y.col(j) - Y.col(centre)).norm();
            if (j != centre && dj > dist)
            {
                dist = dj;
                far = j;
            }
        }
        return far;
    };
    auto replace_for_geometry = [&](const detail::DfModel& model, int k, int centre, double radius) {
        Eigen::VectorXd d;
        if (model.ok)
            d = detail::geometry_step(model, k, centre, Y.col(centre), lo, hi, radius);
        if (d.size() == 0 || d.norm() == 0.0)
        {
            // factorisation unusable: fall back to a feasible coordinate probe
            const int i = k % n;
            d = Eigen::VectorXd::Zero(n);
            d[i] = Y(i, centre) + radius <= hi[i] ? radius : -std::min(radius, Y(i, centre) - lo[i]);
        }
        Y.col(k) = (Y.col(centre) + d).cwiseMax(lo).cwiseMin(hi);
        F[k] = eval(Y.col(k));
    };

    int iterations = 0;
    while (!eval.exhausted())
    {
        ++iterations;
        int centre = 0;
        F.minCoeff(&centre);
        const Eigen::VectorXd xc = Y.col(centre);

        const detail::DfModel model = detail::build_model(Y, F, centre, H);
        double far_dist = 0.0;
        const int far = farthest(centre, far_dist);
        if (!model.ok)
        {
            replace_for_geometry(model, far, centre, std::max(std::min(0.1 * far_dist, delta), rho));
            continue;
        }
        H = model.H;

        const Eigen::VectorXd d = detail::trust_region_step(model.g, model.H, xc, lo, hi, delta);
        const double dnorm = d.norm();
        if (dnorm < 0.5 * rho)
        {
            if (far_dist > 2.0 * rho)
            {
                replace_for_geometry(model, far, centre, std::max(std::min(0.1 * far_dist, delta), rho));
                continue;
            }
            if (rho <= rho_end)
                return finish(true, iterations);
            reduce_rho();
            continue;
        }

        const Eigen::VectorXd x_new = (xc + d).cwiseMax(lo).cwiseMin(hi);
        const double f_new = eval(x_new);
        const double predicted = -(model.g.dot(d) + 0.5 * d.dot(model.H * d));
        const double ratio = predicted > 0.0 ? (F[centre] - f_new) / predicted : -1.0;

        if (ratio <= 0.1)
            delta = std::min(0.5 * delta, dnorm);
        else if (ratio <= 0.7)
            delta = std::max(0.5 * delta, dnorm);
        else
            delta = std::max(0.5 * delta, 2.0 * dnorm);
        if (delta <= 1.5 * rho)
            delta = rho;

        // Replace the point whose Lagrange value at x_new, weighted by distance, is largest.
        const Eigen::VectorXd L = model.lagrange_values(x_new - xc);
        int knew = -1;
        double best_score = -1.0;
        for (int j = 0; j < m; ++j)
        {
            if (j == centre)
                continue;
            const double dist = (Y.col(j) - xc).norm();
            const double w = std::max(1.0, (dist / delta) * (dist / delta));
            const double score = std::abs(L[j]) * w;
            if (score > best_score)
            {
                best_score = score;
                knew = j;
            }
        }
        Y.col(knew) = x_new;
        F[knew] = f_new;

        if (ratio < 0.1)
        {
            F.minCoeff(&centre);
            const int far2 = farthest(centre, far_dist);
            if (far_dist > 2.0 * delta && !eval.exhausted())
            {
                const detail::DfModel m2 = detail::build_model(Y, F, centre, H);
                replace_for_geometry(m2, far2, centre, std::max(std::min(0.1 * far_dist, delta), rho));
            }
            else if (delta <= rho)
            {
                if (rho <= rho_end)
                    return finish(true, iterations);
                reduce_rho();
            }
        }
    }
    return finish(false, iterations);
}

/// Projected BFGS. `gradient` may be empty, in which case central differences are used.
inline OptimResult minimize_bfgs(const OptimProblem& problem, const Gradient& gradient = {})
{
    detail::validate_problem(problem);
    const int n = static_cast<int>(problem.x0.size());
    const Eigen::VectorXd lo = Eigen::Map<const Eigen::VectorXd>(problem.lower.data(), n);
    const Eigen::VectorXd hi = Eigen::Map<const Eigen::VectorXd>(problem.upper.data(), n);
    const Eigen::VectorXd range = hi - lo;

    // Work in coordinates normalized to the bound ranges.
    constexpr double h = 1e-3; // finite-difference step, of the bound range
    Eigen::VectorXd side = Eigen::VectorXd::Zero(n);
    auto to_x = [&](const Eigen::VectorXd& z) { return (lo + range.cwiseProduct(z)).eval(); };
    detail::Tracker eval(problem);
    auto f = [&](const Eigen::VectorXd& z) { return eval(to_x(z)); };
    auto grad = [&](const Eigen::VectorXd& z, double fz) {
        Eigen::VectorXd gz(n);
        const Eigen::VectorXd x = to_x(z);
        if (gradient)
        {
            Eigen::VectorXd gx(n);
            gradient(std::span<const double>(x.data(), n), std::span<double>(gx.data(), n));
            return gx.cwiseProduct(range).eval();
        }
        for (int i = 0; i < n; ++i)
        {
            Eigen::VectorXd zp = z, zm = z;
            zp[i] = std::min(1.0, z[i] + h);
            zm[i] = std::max(0.0, z[i] - h);
            const double fp = zp[i] != z[i] ? f(zp) : fz;
            const double fm = zm[i] != z[i] ? f(zm) : fz;
            gz[i] = (fp - fm) / (zp[i] - zm[i]);
            // one-sided slopes, for the fallback direction at kinks
            side[i] = 0.0;
            if (fp < fz && fp <= fm)
                side[i] = (fz - fp) / (zp[i] - z[i]);
            else if (fm < fz)
                side[i] = -(fz - fm) / (z[i] - zm[i]);
        }
        return gz;
    };

    Eigen::VectorXd z = (Eigen::Map<const Eigen::VectorXd>(problem.x0.data(), n) - lo).cwiseQuotient(range);
    double fz = f(z);
    Eigen::VectorXd g = grad(z, fz);
    Eigen::MatrixXd Hinv = Eigen::MatrixXd::Identity(n, n);
    bool warning = false, converged = false, scaled = false;
    int it = 0;
    double last_step = 0.0;

    for (; it < problem.max_iterations && !eval.exhausted(); ++it)
    {
        std::vector<bool> active(n, false);
        Eigen::VectorXd pg = g;
        for (int i = 0; i < n; ++i)
            if ((z[i] <= 0.0 && g[i] > 0.0) || (z[i] >= 1.0 && g[i] < 0.0))
            {
                active[i] = true;
                pg[i] = 0.0;
            }
        if (pg.lpNorm<Eigen::Infinity>() < 1e-12)
        {
            converged = true;
            break;
        }
        Eigen::VectorXd dir = -(Hinv * pg);
        for (int i = 0; i < n; ++i)
            if (active[i])
                dir[i] = 0.0;
        if (pg.dot(dir) >= 0.0)
        {
            Hinv.setIdentity();
            scaled = false;
            dir = -pg;
        }

        double alpha = 1.0;
        Eigen::VectorXd z_new;
        double f_new = fz;
        bool accepted = false;
        for (int bt = 0; bt < 40 && !eval.exhausted(); ++bt, alpha *= 0.5)
        {
            z_new = (z + alpha * dir).cwiseMax(0.0).cwiseMin(1.0);
            f_new = f(z_new);
            if (f_new <= fz + 1e-4 * g.dot(z_new - z))
            {
                accepted = true;
                break;
            }
        }
        if (!accepted && !gradient && side.lpNorm<Eigen::Infinity>() > 0.0)
        {
            // The model direction failed (typically at a kink of a piecewise-smooth objective):
            // retry along the coordinates whose one-sided probes improved, then restart the
            // curvature estimate.
            const Eigen::VectorXd d = side;
            alpha = 1.0;
            for (int bt = 0; bt < 40 && !eval.exhausted(); ++bt, alpha *= 0.5)
            {
                z_new = (z + alpha * d).cwiseMax(0.0).cwiseMin(1.0);
                f_new = f(z_new);
                if (f_new < fz - 1e-4 * alpha * d.squaredNorm())
                {
                    accepted = true;
                    break;
                }
            }
            Hinv.setIdentity();
            scaled = false;
            if (accepted)
            {
                const Eigen::VectorXd s = z_new - z;
                last_step = s.cwiseProduct(range).lpNorm<Eigen::Infinity>();
                z = z_new;
                fz = f_new;
                g = grad(z, fz);
                if (last_step < problem.stop)
                {
                    converged = true;
                    break;
                }
                continue;
            }
        }
        if (!accepted)
        {
            warning = !eval.exhausted();
            break;
        }

        const Eigen::VectorXd s = z_new - z;
        last_step = s.cwiseProduct(range).lpNorm<Eigen::Infinity>();
        const Eigen::VectorXd g_new = grad(z_new, f_new);
        const Eigen::VectorXd y = g_new - g;
        z = z_new;
        fz = f_new;
        g = g_new;

        if (last_step < problem.stop)
        {
            converged = true;
            break;
        }
        const double sy = s.dot(y);
        if (sy > 1e-14 * s.norm() * y.norm())
        {
            if (!scaled)
            {
                Hinv *= sy / y.squaredNorm();
                scaled = true;
            }
            const double rho = 1.0 / sy;
            const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
            Hinv = (I - rho * s * y.transpose()) * Hinv * (I - rho * y * s.transpose()) + rho * s * s.transpose();
        }
    }

    OptimResult r = eval.result();
    r.iterations = it;
    r.converged = converged;
    r.warning = warning;
    r.final_radius = last_step;
    return r;
}

} // namespace slicereg
