#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "sofr/cvs.hpp"

namespace sofr {

// Quadratic-plus-group-lasso problem
//   min_d (delta_hat - d)' Q (delta_hat - d) + zeta * sum_k ||d_k||_2
// over K groups of size M.
struct GroupLassoProblem {
    Eigen::MatrixXd q;
    Eigen::VectorXd delta_hat;
    double zeta = 0.0;
    int group_size = 0;
    int n_groups = 0;
};

struct GroupLassoSolution {
    Eigen::VectorXd delta_zeta;
    long iterations = 0;
    double kkt_residual = 0.0;
    std::vector<int> active_groups;  // 0-based source-block indices with nonzero solution
};

namespace detail {

inline std::vector<int> nonzero_groups(const Eigen::VectorXd& x, int m, int k) {
    std::vector<int> active;
    for (int g = 0; g < k; ++g)
        if (x.segment(g * m, m).norm() > 0.0) active.push_back(g);
    return active;
}

// Stationarity violation: active groups must satisfy
// 2[Q(d - delta_hat)]_g + zeta d_g/||d_g|| = 0; inactive groups need
// ||2[Q(d - delta_hat)]_g|| <= zeta.
inline double group_lasso_kkt(const Eigen::MatrixXd& q, const Eigen::VectorXd& delta_hat,
                              double zeta, const Eigen::VectorXd& x, int m, int k) {
    Eigen::VectorXd grad = 2.0 * (q * (x - delta_hat));
    double worst = 0.0;
    for (int g = 0; g < k; ++g) {
        auto xg = x.segment(g * m, m);
        auto gg = grad.segment(g * m, m);
        double norm_x = xg.norm();
        double violation = (norm_x > 0.0) ? (gg + zeta * xg / norm_x).norm()
                                          : std::max(0.0, gg.norm() - zeta);
        worst = std::max(worst, violation);
    }
    return worst;
}

inline void soft_threshold_groups(Eigen::VectorXd& x, double amount, int m, int k) {
    for (int g = 0; g < k; ++g) {
        auto xg = x.segment(g * m, m);
        double norm = xg.norm();
        xg *= (norm > 0.0) ? std::max(0.0, 1.0 - amount / norm) : 0.0;
    }
}

}  // namespace detail

// Smallest penalty at which the all-zero solution satisfies the optimality
// conditions; above it every group is thresholded out.
inline double zeta_max(const Eigen::MatrixXd& q, const Eigen::VectorXd& delta_hat,
                       int group_size) {
    const int k = static_cast<int>(delta_hat.size()) / group_size;
    Eigen::VectorXd grad = 2.0 * (q * delta_hat);
    double worst = 0.0;
    for (int g = 0; g < k; ++g)
        worst = std::max(worst, grad.segment(g * group_size, group_size).norm());
    return worst;
}

// Accelerated proximal gradient with restart on a non-monotone objective.
// The step is 1/L with L = 2 lambda_max(Q) from 100 power iterations; the
// proximal map is blockwise soft-thresholding. Terminates on the KKT
// residual. The two exact endpoints (zeta = 0 and zeta >= zeta_max) are
// certified directly instead of iterated.
inline GroupLassoSolution group_lasso_solve(const GroupLassoProblem& p, double tol = 1e-8,
                                            long max_iter = 50000,
                                            const Eigen::VectorXd* warm_start = nullptr,
                                            std::vector<double>* objective_trace = nullptr) {
    const int m = p.group_size, k = p.n_groups;
    if (tol <= 0.0) throw std::invalid_argument("group_lasso_solve: tol must be > 0");
    if (m < 1 || k < 1 || p.delta_hat.size() != static_cast<Eigen::Index>(m) * k ||
        p.q.rows() != p.delta_hat.size() || p.q.cols() != p.delta_hat.size())
        throw std::invalid_argument("group_lasso_solve: inconsistent dimensions");
    if (p.zeta < 0.0) throw std::invalid_argument("group_lasso_solve: zeta must be >= 0");

    double lambda_max = power_max_eigenvalue(p.q, 100);
    {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(p.q, Eigen::EigenvaluesOnly);
        if (eig.eigenvalues()(0) < -1e-8 * std::max(lambda_max, 1e-300))
            throw std::invalid_argument("group_lasso_solve: Q is not positive semidefinite");
    }

    GroupLassoSolution sol;
    if (p.zeta == 0.0) {
        sol.delta_zeta = p.delta_hat;
        sol.active_groups = detail::nonzero_groups(sol.delta_zeta, m, k);
        return sol;
    }
    if (p.zeta >= zeta_max(p.q, p.delta_hat, m)) {
        sol.delta_zeta = Eigen::VectorXd::Zero(p.delta_hat.size());
        return sol;
    }

    double step = 1.0 / (2.0 * lambda_max * (1.0 + 1e-9));
    auto objective = [&](const Eigen::VectorXd& x) {
        Eigen::VectorXd d = x - p.delta_hat;
        double val = d.dot(p.q * d);
        for (int g = 0; g < k; ++g) val += p.zeta * x.segment(g * m, m).norm();
        return val;
    };
    auto prox_step = [&](const Eigen::VectorXd& from) {
        Eigen::VectorXd next = from - step * 2.0 * (p.q * (from - p.delta_hat));
        detail::soft_threshold_groups(next, step * p.zeta, m, k);
        return next;
    };

    Eigen::VectorXd x = warm_start ? *warm_start : p.delta_hat;
    Eigen::VectorXd momentum = x;
    double t = 1.0;
    double f_x = objective(x);
    if (objective_trace) objective_trace->push_back(f_x);
    for (long it = 1; it <= max_iter; ++it) {
        Eigen::VectorXd next = prox_step(momentum);
        double f_next = objective(next);
        if (f_next > f_x + 1e-12) {
            // Restart: plain proximal step from the last accepted point.
            t = 1.0;
            next = prox_step(x);
            f_next = objective(next);
        }
        double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        momentum = next + ((t - 1.0) / t_next) * (next - x);
        x = next;
        f_x = f_next;
        t = t_next;
        if (objective_trace) objective_trace->push_back(f_x);
        sol.iterations = it;
        sol.kkt_residual = detail::group_lasso_kkt(p.q, p.delta_hat, p.zeta, x, m, k);
        if (sol.kkt_residual <= tol) {
            sol.delta_zeta = x;
            sol.active_groups = detail::nonzero_groups(x, m, k);
            return sol;
        }
    }
    throw NonConvergenceError("group_lasso_solve: KKT residual " +
                                  std::to_string(sol.kkt_residual) + " after " +
                                  std::to_string(max_iter) + " iterations (tol " +
                                  std::to_string(tol) + ")",
                              sol.kkt_residual);
}

inline GroupLassoProblem make_group_lasso_problem(const CvsSystem& sys, const Eigen::MatrixXd& q,
                                                  double zeta) {
    GroupLassoProblem p;
    p.q = q;
    p.delta_hat = sys.delta_hat;
    p.zeta = zeta;
    p.group_size = sys.basis_size;
    p.n_groups = sys.n_sources;
    return p;
}

// Penalized control-variates estimate: the group lasso replaces the plug-in
// conditional mean of the control variates, then the optimal combiner is
// applied as in the unpenalized version.
inline CoefEstimate pcvs_estimate(const CvsSystem& sys, const Eigen::MatrixXd& q,
                                  const LocalFit& target_fit, double zeta, double tol = 1e-8,
                                  long max_iter = 50000) {
    if (target_fit.c_hat.size() != sys.basis_size)
        throw std::invalid_argument("pcvs_estimate: dimension mismatch");
    GroupLassoSolution sol = group_lasso_solve(make_group_lasso_problem(sys, q, zeta), tol, max_iter);
    Eigen::VectorXd c = target_fit.c_hat - sys.u_star * (sys.delta_hat - sol.delta_zeta);
    return {std::move(c), Method::pcvs, target_fit.smoothed->basis};
}

struct ZetaPathPoint {
    double zeta = 0.0;
    CoefEstimate estimate;
    std::vector<int> active_groups;
};

// Warm-started solutions along a descending penalty grid; the threshold
// zeta_max (all-zero solution) is prepended automatically.
inline std::vector<ZetaPathPoint> zeta_path(const CvsSystem& sys, const Eigen::MatrixXd& q,
                                            const LocalFit& target_fit,
                                            const std::vector<double>& grid_descending,
                                            double tol = 1e-8, long max_iter = 50000) {
    for (std::size_t i = 1; i < grid_descending.size(); ++i)
        if (grid_descending[i] > grid_descending[i - 1])
            throw std::invalid_argument("zeta_path: grid must be sorted descending");

    std::vector<double> grid;
    grid.push_back(zeta_max(q, sys.delta_hat, sys.basis_size));
    for (double z : grid_descending) grid.push_back(z);

    std::vector<ZetaPathPoint> path;
    path.reserve(grid.size());
    Eigen::VectorXd warm = Eigen::VectorXd::Zero(sys.delta_hat.size());
    for (double zeta : grid) {
        GroupLassoSolution sol =
            group_lasso_solve(make_group_lasso_problem(sys, q, zeta), tol, max_iter, &warm);
        warm = sol.delta_zeta;
        Eigen::VectorXd c = target_fit.c_hat - sys.u_star * (sys.delta_hat - sol.delta_zeta);
        path.push_back({zeta,
                        {std::move(c), Method::pcvs, target_fit.smoothed->basis},
                        std::move(sol.active_groups)});
    }
    return path;
}

}  // namespace sofr
