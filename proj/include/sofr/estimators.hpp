#pragma once

#include <Eigen/Dense>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "sofr/rng.hpp"
#include "sofr/smoothing.hpp"

namespace sofr {

enum class VarianceMode { homoskedastic, hc };

// Trapezoid weight vector diag{1/2, 1, ..., 1, 1/2}.
inline Eigen::VectorXd trapezoid_weights(int j) {
    Eigen::VectorXd d = Eigen::VectorXd::Ones(j);
    d(0) = 0.5;
    d(j - 1) = 0.5;
    return d;
}

// Penalized fit of one dataset together with the plug-in conditional moments
// of the coefficient estimate and the two error-variance estimates.
struct LocalFit {
    Eigen::VectorXd c_hat;
    double lambda = 0.0;
    Eigen::VectorXd e_hat;    // plug-in E(c_hat | Z)
    Eigen::MatrixXd v_hat;    // plug-in var(c_hat | Z), jitter already applied
    double v_jitter = 0.0;    // ridge added to v_hat (0 when none was needed)
    double sigma2_meas = 0.0; // measurement-error variance estimate
    double sigma2_reg = 0.0;  // regression-error variance estimate
    std::shared_ptr<const SmoothedDataset> smoothed;

    CoefEstimate estimate() const { return {c_hat, Method::local, smoothed->basis}; }
};

// var(c_hat) has rank at most n and may be numerically singular; downstream
// combiners invert it, so a small ridge is applied here, in one place, and
// recorded in the fit.
inline double apply_variance_jitter(Eigen::MatrixXd& v_hat) {
    symmetrize(v_hat);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(v_hat, Eigen::EigenvaluesOnly);
    double trace = v_hat.trace();
    if (eig.eigenvalues()(0) < 1e-10 * trace) {
        double jitter = 1e-8 * trace / v_hat.rows();
        v_hat.diagonal().array() += jitter;
        return jitter;
    }
    return 0.0;
}

inline LocalFit fit_local(std::shared_ptr<const SmoothedDataset> sm, double lambda,
                          VarianceMode mode = VarianceMode::homoskedastic) {
    if (!sm) throw std::invalid_argument("fit_local: null dataset");
    if (lambda < 0.0) throw std::invalid_argument("fit_local: lambda must be >= 0");
    const int n = sm->n(), j = sm->grid_size(), m = sm->basis_size();
    if (mode == VarianceMode::hc && n <= m)
        throw std::invalid_argument("fit_local: hc variance needs n > basis size (n=" +
                                    std::to_string(n) + ", M=" + std::to_string(m) + ")");

    LocalFit fit;
    fit.smoothed = sm;
    fit.lambda = lambda;
    Eigen::MatrixXd a = sm->omega + lambda * sm->basis->w;
    SpdSolver solver(a, "fit_local(lambda=" + std::to_string(lambda) + ")");

    const Eigen::MatrixXd g = sm->v.transpose();  // M x n, equals Psi P Z
    const Eigen::VectorXd& y = sm->y();
    fit.c_hat = solver.solve(Eigen::VectorXd(g * y));

    fit.sigma2_meas = (sm->raw->z - sm->phi * sm->b).squaredNorm() / (static_cast<double>(n) * j);
    Eigen::VectorXd resid = y - sm->v * fit.c_hat;
    fit.sigma2_reg = resid.squaredNorm() / n;

    // Plug-in conditional mean: responses are approximated by the trapezoid
    // rule over the observation grid.
    Eigen::VectorXd d = trapezoid_weights(j);
    Eigen::VectorXd beta_grid = sm->phi * fit.c_hat;           // fitted beta at grid points
    Eigen::VectorXd y_cond = sm->raw->z.transpose() * d.cwiseProduct(beta_grid) / j;
    fit.e_hat = solver.solve(Eigen::VectorXd(g * y_cond));

    if (mode == VarianceMode::homoskedastic) {
        double var_y = fit.sigma2_reg +
                       fit.sigma2_meas * d.cwiseProduct(beta_grid).squaredNorm() /
                           (static_cast<double>(j) * j);
        Eigen::MatrixXd t = solver.solve(sm->omega);
        fit.v_hat = var_y * solver.solve(Eigen::MatrixXd(t.transpose()));
    } else {
        Eigen::VectorXd r = y - y_cond;
        Eigen::MatrixXd gt = solver.solve(g);  // M x n
        double factor = static_cast<double>(n) / (n - m);
        fit.v_hat = factor * gt * r.array().square().matrix().asDiagonal() * gt.transpose();
    }
    fit.v_jitter = apply_variance_jitter(fit.v_hat);
    return fit;
}

// Ridge fit on the pooled curves of the given datasets, stacking every
// subject's features: c = (V'V + lambda W)^-1 V'Y.
inline CoefEstimate fit_pooled(std::span<const std::shared_ptr<const SmoothedDataset>> sources,
                               double lambda_pool) {
    if (sources.empty()) throw std::invalid_argument("fit_pooled: empty source list");
    if (lambda_pool < 0.0) throw std::invalid_argument("fit_pooled: lambda must be >= 0");
    const auto& basis = sources.front()->basis;
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(basis->size, basis->size);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(basis->size);
    for (const auto& src : sources) {
        require_same_basis(*src->basis, *basis, "fit_pooled");
        gram += src->omega;
        rhs += src->v.transpose() * src->y();
    }
    gram += lambda_pool * basis->w;
    SpdSolver solver(gram, "fit_pooled(lambda=" + std::to_string(lambda_pool) + ")");
    return {solver.solve(rhs), Method::otl, basis};
}

// Offset step: ridge-regress the target residuals of the pooled estimate on
// the target features and add the correction.
inline CoefEstimate fit_offset(const CoefEstimate& pooled,
                               std::shared_ptr<const SmoothedDataset> target,
                               double lambda_offset) {
    if (!target) throw std::invalid_argument("fit_offset: null target");
    if (lambda_offset < 0.0) throw std::invalid_argument("fit_offset: lambda must be >= 0");
    require_same_basis(*pooled.basis, *target->basis, "fit_offset");
    Eigen::MatrixXd a = target->omega + lambda_offset * target->basis->w;
    SpdSolver solver(a, "fit_offset(lambda=" + std::to_string(lambda_offset) + ")");
    Eigen::VectorXd resid = target->y() - target->v * pooled.c;
    Eigen::VectorXd offset = solver.solve(Eigen::VectorXd(target->v.transpose() * resid));
    return {pooled.c + offset, Method::otl, target->basis};
}

// K-fold cross-validation of the ridge parameter on explicit features:
// squared prediction error summed over held-out folds, fold assignment by a
// seeded shuffle. Ties pick the smaller grid value.
inline double select_lambda_cv(const Eigen::MatrixXd& features, const Eigen::VectorXd& y,
                               const Eigen::MatrixXd& w, std::span<const double> grid,
                               std::mt19937_64& rng, int folds = 5) {
    const int n = static_cast<int>(features.rows());
    if (n < 2) throw std::invalid_argument("select_lambda_cv: need at least 2 subjects");
    if (grid.empty()) throw std::invalid_argument("select_lambda_cv: empty grid");
    folds = std::min(folds, n);
    std::vector<int> order = random_permutation(n, rng);

    // Per-fold Gram pieces; training Gram for fold f is total minus fold f.
    Eigen::MatrixXd gram_all = features.transpose() * features;
    Eigen::VectorXd rhs_all = features.transpose() * y;
    std::vector<Eigen::MatrixXd> gram_fold(folds, Eigen::MatrixXd::Zero(w.rows(), w.cols()));
    std::vector<Eigen::VectorXd> rhs_fold(folds, Eigen::VectorXd::Zero(w.rows()));
    std::vector<std::vector<int>> members(folds);
    for (int i = 0; i < n; ++i) {
        int f = i % folds;
        int row = order[i];
        members[f].push_back(row);
        gram_fold[f] += features.row(row).transpose() * features.row(row);
        rhs_fold[f] += features.row(row).transpose() * y(row);
    }

    double best_lambda = grid[0];
    double best_sse = std::numeric_limits<double>::infinity();
    for (double lambda : grid) {
        double sse = 0.0;
        for (int f = 0; f < folds; ++f) {
            if (members[f].empty()) continue;
            Eigen::MatrixXd a = gram_all - gram_fold[f] + lambda * w;
            Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
            if (ldlt.info() != Eigen::Success) {
                sse = std::numeric_limits<double>::infinity();
                break;
            }
            Eigen::VectorXd c = ldlt.solve(rhs_all - rhs_fold[f]);
            for (int row : members[f]) {
                double r = y(row) - features.row(row).dot(c);
                sse += r * r;
            }
        }
        if (sse < best_sse) {
            best_sse = sse;
            best_lambda = lambda;
        }
    }
    return best_lambda;
}

inline std::vector<double> default_lambda_grid() { return log_grid(1e-8, 1e2, 25); }

// How rho, lambda, and zeta are resolved when the caller does not fix them.
struct TuningPolicy {
    std::optional<double> rho;     // fixed rho; empty = per-dataset GCV
    std::optional<double> lambda;  // fixed lambda; empty = 5-fold CV per fit
    std::vector<double> lambda_grid = default_lambda_grid();
    std::vector<double> rho_grid = log_grid(1e-10, 1.0, 25);
    int cv_folds = 5;
    VarianceMode variance_mode = VarianceMode::homoskedastic;

    double resolve_rho(const RawDataset& raw, const BasisSystem& basis) const {
        return rho ? *rho : select_rho_gcv(raw, basis, rho_grid);
    }
    double resolve_lambda(const Eigen::MatrixXd& features, const Eigen::VectorXd& y,
                          const Eigen::MatrixXd& w, std::mt19937_64& rng) const {
        return lambda ? *lambda : select_lambda_cv(features, y, w, lambda_grid, rng, cv_folds);
    }
};

}  // namespace sofr
