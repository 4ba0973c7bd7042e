#pragma once

#include <Eigen/Dense>
#include <string>

#include "sofr/errors.hpp"

namespace sofr {

// Factorization of a symmetric positive-definite matrix with an explicit
// conditioning check. Systems that fail the check throw instead of being
// silently regularized.
class SpdSolver {
public:
    explicit SpdSolver(const Eigen::MatrixXd& a, const std::string& what,
                       double max_condition = 1e12) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
        if (eig.info() != Eigen::Success)
            throw SingularSystemError(what + ": eigendecomposition failed");
        const Eigen::VectorXd& ev = eig.eigenvalues();
        double lo = ev(0), hi = ev(ev.size() - 1);
        if (lo <= 0.0 || hi / lo > max_condition)
            throw SingularSystemError(what + ": singular or ill-conditioned system (min eigenvalue " +
                                      std::to_string(lo) + ", max " + std::to_string(hi) + ")");
        q_ = eig.eigenvectors();
        inv_ev_ = ev.cwiseInverse();
    }

    Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const {
        return q_ * (inv_ev_.asDiagonal() * (q_.transpose() * rhs));
    }

    Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
        return q_ * (inv_ev_.asDiagonal() * (q_.transpose() * rhs)).eval();
    }

    Eigen::MatrixXd inverse() const {
        return q_ * inv_ev_.asDiagonal() * q_.transpose();
    }

private:
    Eigen::MatrixXd q_;
    Eigen::VectorXd inv_ev_;
};

// Largest eigenvalue of a symmetric PSD matrix by power iteration with a
// deterministic start vector.
inline double power_max_eigenvalue(const Eigen::MatrixXd& s, int iters = 100) {
    const auto n = s.rows();
    Eigen::VectorXd v = Eigen::VectorXd::Ones(n).normalized();
    double lambda = 0.0;
    for (int it = 0; it < iters; ++it) {
        Eigen::VectorXd w = s * v;
        double norm = w.norm();
        if (norm == 0.0) return 0.0;
        v = w / norm;
        lambda = norm;
    }
    return lambda;
}

inline void symmetrize(Eigen::MatrixXd& a) {
    a = 0.5 * (a + a.transpose()).eval();
}

}  // namespace sofr
