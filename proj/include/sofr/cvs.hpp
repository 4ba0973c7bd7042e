#pragma once

#include <Eigen/Dense>
#include <span>
#include <string>
#include <vector>

#include "sofr/estimators.hpp"

namespace sofr {

// Stacked control variates over all sources together with the optimal linear
// combiner built from per-dataset precision blocks. Index 0 of the input fit
// list is always the target.
struct CvsSystem {
    Eigen::VectorXd delta_hat;               // stacked c_hat^(0) - c_hat^(k)
    Eigen::VectorXd e_delta;                 // stacked plug-in E(delta | Z)
    Eigen::MatrixXd u_star;                  // M x MK combiner
    std::vector<Eigen::MatrixXd> v_blocks;   // K+1 variance blocks, target first
    Eigen::MatrixXd precision_sum_inv;       // inverse of the summed precisions
    int basis_size = 0;
    int n_sources = 0;
};

namespace detail {

// Precision of each fit's v_hat; throws naming the offending dataset.
inline std::vector<Eigen::MatrixXd> variance_precisions(std::span<const LocalFit> fits) {
    std::vector<Eigen::MatrixXd> prec;
    prec.reserve(fits.size());
    for (std::size_t k = 0; k < fits.size(); ++k) {
        try {
            SpdSolver solver(fits[k].v_hat, "variance block");
            prec.push_back(solver.inverse());
        } catch (const SingularSystemError&) {
            throw SingularVarianceError("variance block of dataset " + std::to_string(k) +
                                        " is singular even after jitter");
        }
    }
    return prec;
}

inline void check_cvs_inputs(std::span<const LocalFit> fits) {
    if (fits.size() < 2)
        throw std::invalid_argument("control variates need a target fit and at least one source fit");
    for (std::size_t k = 1; k < fits.size(); ++k)
        require_same_basis(*fits[k].smoothed->basis, *fits[0].smoothed->basis, "control variates");
}

}  // namespace detail

inline CvsSystem assemble_cvs(std::span<const LocalFit> fits) {
    detail::check_cvs_inputs(fits);
    const int m = static_cast<int>(fits[0].c_hat.size());
    const int k_sources = static_cast<int>(fits.size()) - 1;

    std::vector<Eigen::MatrixXd> prec = detail::variance_precisions(fits);
    Eigen::MatrixXd prec_sum = Eigen::MatrixXd::Zero(m, m);
    for (const auto& p : prec) prec_sum += p;
    SpdSolver sum_solver(prec_sum, "summed precision");

    CvsSystem sys;
    sys.basis_size = m;
    sys.n_sources = k_sources;
    sys.precision_sum_inv = sum_solver.inverse();
    sys.u_star.resize(m, m * k_sources);
    sys.delta_hat.resize(m * k_sources);
    sys.e_delta.resize(m * k_sources);
    sys.v_blocks.reserve(fits.size());
    for (const auto& fit : fits) sys.v_blocks.push_back(fit.v_hat);
    for (int k = 1; k <= k_sources; ++k) {
        sys.u_star.middleCols((k - 1) * m, m) = sum_solver.solve(prec[k]);
        sys.delta_hat.segment((k - 1) * m, m) = fits[0].c_hat - fits[k].c_hat;
        sys.e_delta.segment((k - 1) * m, m) = fits[0].e_hat - fits[k].e_hat;
    }
    return sys;
}

// The control-variates estimate c^(0) - U* (delta_hat - E(delta | Z)).
inline CoefEstimate cvs_estimate(const CvsSystem& sys, const LocalFit& target_fit) {
    if (target_fit.c_hat.size() != sys.basis_size)
        throw std::invalid_argument("cvs_estimate: dimension mismatch");
    Eigen::VectorXd c = target_fit.c_hat - sys.u_star * (sys.delta_hat - sys.e_delta);
    return {std::move(c), Method::cvs, target_fit.smoothed->basis};
}

// Precision matrix of the stacked control variates, var^-1(delta | Z),
// assembled blockwise from the per-dataset precisions: the block-diagonal
// part minus the rank-reducing coupling through the summed precision.
inline Eigen::MatrixXd delta_precision(std::span<const LocalFit> fits) {
    detail::check_cvs_inputs(fits);
    const int m = static_cast<int>(fits[0].c_hat.size());
    const int k_sources = static_cast<int>(fits.size()) - 1;

    std::vector<Eigen::MatrixXd> prec = detail::variance_precisions(fits);
    Eigen::MatrixXd prec_sum = Eigen::MatrixXd::Zero(m, m);
    for (const auto& p : prec) prec_sum += p;
    SpdSolver sum_solver(prec_sum, "summed precision");

    Eigen::MatrixXd stacked(m, m * k_sources);  // [prec_1, ..., prec_K]
    for (int k = 1; k <= k_sources; ++k) stacked.middleCols((k - 1) * m, m) = prec[k];

    Eigen::MatrixXd q = -stacked.transpose() * sum_solver.solve(stacked);
    for (int k = 1; k <= k_sources; ++k)
        q.block((k - 1) * m, (k - 1) * m, m, m) += prec[k];
    symmetrize(q);
    return q;
}

// Blocks of the inverse joint covariance of (c_hat^(0), delta_hat):
// b11 = sum of all precisions, b12 = -[prec_1, ..., prec_K],
// b22 = blockdiag of the source precisions.
struct PartitionedPrecision {
    Eigen::MatrixXd b11;  // M x M
    Eigen::MatrixXd b12;  // M x MK
    Eigen::MatrixXd b22;  // MK x MK
};

inline PartitionedPrecision partitioned_inverse_blocks(std::span<const LocalFit> fits) {
    detail::check_cvs_inputs(fits);
    const int m = static_cast<int>(fits[0].c_hat.size());
    const int k_sources = static_cast<int>(fits.size()) - 1;

    std::vector<Eigen::MatrixXd> prec = detail::variance_precisions(fits);
    PartitionedPrecision out;
    out.b11 = Eigen::MatrixXd::Zero(m, m);
    for (const auto& p : prec) out.b11 += p;
    out.b12.resize(m, m * k_sources);
    out.b22 = Eigen::MatrixXd::Zero(m * k_sources, m * k_sources);
    for (int k = 1; k <= k_sources; ++k) {
        out.b12.middleCols((k - 1) * m, m) = -prec[k];
        out.b22.block((k - 1) * m, (k - 1) * m, m, m) = prec[k];
    }
    return out;
}

}  // namespace sofr
