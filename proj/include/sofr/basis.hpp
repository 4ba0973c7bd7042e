#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <utility>

#include "sofr/errors.hpp"

namespace sofr {

// Fourier basis on [0,1] of size M together with its exact Gram matrix and
// second-derivative roughness penalty. Both matrices are analytic: the basis
// is orthonormal (psi = I) and the penalty is diagonal.
struct BasisSystem {
    int size = 0;
    Eigen::MatrixXd psi;  // Gram matrix of the basis functions
    Eigen::MatrixXd w;    // Gram matrix of their second derivatives
};

// Harmonic order of basis function m (1-based): 0 for the constant,
// j for the cos/sin pair at frequency 2*pi*j.
inline int fourier_harmonic(int m) {
    if (m == 1) return 0;
    return (m % 2 == 0) ? m / 2 : (m - 1) / 2;
}

inline std::shared_ptr<const BasisSystem> fourier_basis(int m) {
    if (m < 1) throw std::invalid_argument("fourier_basis: size must be >= 1");
    auto basis = std::make_shared<BasisSystem>();
    basis->size = m;
    basis->psi = Eigen::MatrixXd::Identity(m, m);
    basis->w = Eigen::MatrixXd::Zero(m, m);
    const double c = 16.0 * std::pow(std::numbers::pi, 4);
    for (int i = 2; i <= m; ++i) {
        double j = static_cast<double>(fourier_harmonic(i));
        basis->w(i - 1, i - 1) = c * j * j * j * j;
    }
    return basis;
}

// Largest odd basis size not exceeding the grid size, 1 + 2*floor((J-1)/2).
inline int default_basis_size(int grid_size) {
    if (grid_size < 2) throw std::invalid_argument("default_basis_size: grid size must be >= 2");
    return 1 + 2 * ((grid_size - 1) / 2);
}

// Evaluation matrix with entry (j, m) = phi_m(t_j). Points must lie in [0,1].
inline Eigen::MatrixXd eval_basis(const BasisSystem& basis, const Eigen::VectorXd& t) {
    const double sqrt2 = std::numbers::sqrt2;
    const double two_pi = 2.0 * std::numbers::pi;
    for (Eigen::Index j = 0; j < t.size(); ++j)
        if (!(t(j) >= 0.0 && t(j) <= 1.0))
            throw std::invalid_argument("eval_basis: point outside [0,1]: " + std::to_string(t(j)));
    Eigen::MatrixXd phi(t.size(), basis.size);
    phi.col(0).setOnes();
    for (int m = 2; m <= basis.size; ++m) {
        double freq = two_pi * fourier_harmonic(m);
        if (m % 2 == 0)
            phi.col(m - 1) = (freq * t.array()).cos() * sqrt2;
        else
            phi.col(m - 1) = (freq * t.array()).sin() * sqrt2;
    }
    return phi;
}

// Normalized shifted Legendre polynomials of orders 1 and 2: unit L2[0,1]
// norm and mutually orthogonal.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> legendre_pair(const Eigen::VectorXd& t) {
    for (Eigen::Index j = 0; j < t.size(); ++j)
        if (!(t(j) >= 0.0 && t(j) <= 1.0))
            throw std::invalid_argument("legendre_pair: point outside [0,1]: " + std::to_string(t(j)));
    Eigen::VectorXd p1 = std::sqrt(3.0) * (2.0 * t.array() - 1.0);
    Eigen::VectorXd p2 = std::sqrt(5.0) * (6.0 * t.array().square() - 6.0 * t.array() + 1.0);
    return {std::move(p1), std::move(p2)};
}

}  // namespace sofr
