#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sofr/basis.hpp"
#include "sofr/errors.hpp"
#include "sofr/linalg.hpp"

namespace sofr {

// Discretely observed noisy curves on a shared even grid, one column per
// subject, plus the scalar responses.
struct RawDataset {
    Eigen::MatrixXd z;     // grid_size x n observations
    Eigen::VectorXd y;     // n responses
    Eigen::VectorXd grid;  // evenly spaced points, 0 to 1
    int id = 0;            // 0 = target

    int n() const { return static_cast<int>(z.cols()); }
    int grid_size() const { return static_cast<int>(z.rows()); }
};

inline Eigen::VectorXd even_grid(int j) {
    if (j < 2) throw std::invalid_argument("even_grid: need at least 2 points");
    return Eigen::VectorXd::LinSpaced(j, 0.0, 1.0);
}

inline void validate_raw(const RawDataset& raw) {
    if (raw.n() < 1) throw std::invalid_argument("dataset has no subjects");
    if (raw.grid.size() != raw.z.rows())
        throw std::invalid_argument("grid length does not match observation rows");
    if (raw.y.size() != raw.z.cols())
        throw std::invalid_argument("response length does not match subject count");
    int j = raw.grid_size();
    if (j < 2 || raw.grid(0) != 0.0 || raw.grid(j - 1) != 1.0)
        throw std::invalid_argument("grid must run from 0 to 1");
    double h = 1.0 / (j - 1);
    for (int i = 1; i < j; ++i)
        if (std::abs(raw.grid(i) - raw.grid(i - 1) - h) > 1e-8)
            throw std::invalid_argument("grid must be evenly spaced");
}

enum class Method { local, otl, aotl, cvs, pcvs };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::local: return "local";
        case Method::otl: return "otl";
        case Method::aotl: return "aotl";
        case Method::cvs: return "cvs";
        case Method::pcvs: return "pcvs";
    }
    return "?";
}

// A coefficient-function estimate beta(t) = phi(t)' c.
struct CoefEstimate {
    Eigen::VectorXd c;
    Method method = Method::local;
    std::shared_ptr<const BasisSystem> basis;
};

// Result of roughness-penalized smoothing of one dataset: the projector P,
// per-subject curve coefficients B = P Z, the feature Gram Omega, and the
// regression feature matrix V with row i equal to (Psi b_i)'.
struct SmoothedDataset {
    Eigen::MatrixXd p;      // M x J projector
    Eigen::MatrixXd phi;    // J x M basis values on the observation grid
    Eigen::MatrixXd b;      // M x n curve coefficients
    Eigen::MatrixXd omega;  // M x M feature Gram
    Eigen::MatrixXd v;      // n x M regression features
    double rho = 0.0;
    bool centered = false;
    double y_mean = 0.0;                // subtracted response mean (0 unless centered)
    Eigen::VectorXd z_row_means;        // subtracted per-grid-point means (empty unless centered)
    std::shared_ptr<const BasisSystem> basis;
    std::shared_ptr<const RawDataset> raw;  // the data actually smoothed

    int n() const { return static_cast<int>(b.cols()); }
    int grid_size() const { return static_cast<int>(phi.rows()); }
    int basis_size() const { return basis->size; }
    const Eigen::VectorXd& y() const { return raw->y; }
};

// Ridge smoothing of every subject's curve: P = (Phi'Phi + rho W)^-1 Phi'.
// With rho = 0 the system must be well conditioned (basis size <= grid size);
// a near-singular system throws rather than being silently regularized.
inline std::shared_ptr<const SmoothedDataset> smooth(std::shared_ptr<const RawDataset> raw,
                                                     std::shared_ptr<const BasisSystem> basis,
                                                     double rho, bool center = false) {
    if (!raw || !basis) throw std::invalid_argument("smooth: null dataset or basis");
    if (rho < 0.0) throw std::invalid_argument("smooth: rho must be >= 0");
    validate_raw(*raw);

    auto sm = std::make_shared<SmoothedDataset>();
    if (center) {
        auto centered = std::make_shared<RawDataset>(*raw);
        sm->y_mean = centered->y.mean();
        centered->y.array() -= sm->y_mean;
        sm->z_row_means = centered->z.rowwise().mean();
        centered->z.colwise() -= sm->z_row_means;
        sm->centered = true;
        sm->raw = centered;
    } else {
        sm->raw = raw;
    }

    sm->basis = basis;
    sm->rho = rho;
    sm->phi = eval_basis(*basis, raw->grid);
    Eigen::MatrixXd a = sm->phi.transpose() * sm->phi + rho * basis->w;
    SpdSolver solver(a, "smooth(rho=" + std::to_string(rho) + ")");
    sm->p = solver.solve(Eigen::MatrixXd(sm->phi.transpose()));
    sm->b = sm->p * sm->raw->z;
    Eigen::MatrixXd g = basis->psi * sm->b;  // M x n
    sm->omega = g * g.transpose();
    symmetrize(sm->omega);
    sm->v = g.transpose();
    return sm;
}

// New dataset restricted to the given subjects; the projector is unchanged,
// coefficients and Gram are recomputed from the selected columns.
inline std::shared_ptr<const SmoothedDataset> subset_subjects(const SmoothedDataset& sm,
                                                              std::span<const int> idx) {
    if (idx.empty()) throw std::invalid_argument("subset_subjects: empty index set");
    auto raw = std::make_shared<RawDataset>();
    raw->grid = sm.raw->grid;
    raw->id = sm.raw->id;
    raw->z.resize(sm.grid_size(), static_cast<Eigen::Index>(idx.size()));
    raw->y.resize(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= sm.n())
            throw std::invalid_argument("subset_subjects: index out of range");
        raw->z.col(static_cast<Eigen::Index>(i)) = sm.raw->z.col(idx[i]);
        raw->y(static_cast<Eigen::Index>(i)) = sm.raw->y(idx[i]);
    }
    auto out = std::make_shared<SmoothedDataset>();
    out->p = sm.p;
    out->phi = sm.phi;
    out->rho = sm.rho;
    out->centered = sm.centered;
    out->y_mean = sm.y_mean;
    out->z_row_means = sm.z_row_means;
    out->basis = sm.basis;
    out->raw = raw;
    out->b = sm.p * raw->z;
    Eigen::MatrixXd g = sm.basis->psi * out->b;
    out->omega = g * g.transpose();
    symmetrize(out->omega);
    out->v = g.transpose();
    return out;
}

inline void require_same_basis(const BasisSystem& a, const BasisSystem& b, const char* what) {
    if (a.size != b.size)
        throw std::invalid_argument(std::string(what) + ": basis size mismatch (" +
                                    std::to_string(a.size) + " vs " + std::to_string(b.size) + ")");
}

// Squared norm of f in the empirical-covariance seminorm of the dataset's
// smoothed curves: n^-1 c' Omega c = n^-1 sum_i <f, Xhat_i>^2.
inline double empirical_cov_norm_sq(const CoefEstimate& f, const SmoothedDataset& target) {
    require_same_basis(*f.basis, *target.basis, "empirical_cov_norm_sq");
    return f.c.dot(target.omega * f.c) / target.n();
}

// Predicted responses <Xhat_i, f> for every subject.
inline Eigen::VectorXd predict(const CoefEstimate& f, const SmoothedDataset& curves) {
    require_same_basis(*f.basis, *curves.basis, "predict");
    return curves.v * f.c;
}

inline std::vector<double> log_grid(double lo, double hi, int count) {
    if (count < 1 || lo <= 0.0 || hi < lo) throw std::invalid_argument("log_grid: bad range");
    std::vector<double> g(count);
    if (count == 1) {
        g[0] = lo;
        return g;
    }
    double step = std::log(hi / lo) / (count - 1);
    for (int i = 0; i < count; ++i) g[i] = lo * std::exp(step * i);
    return g;
}

// Generalized cross-validation score of the smoothing step at one rho.
inline double smoothing_gcv(const RawDataset& raw, const Eigen::MatrixXd& phi,
                            const BasisSystem& basis, double rho) {
    int j = raw.grid_size(), n = raw.n();
    Eigen::MatrixXd a = phi.transpose() * phi + rho * basis.w;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
    if (ldlt.info() != Eigen::Success)
        throw SingularSystemError("smoothing_gcv: factorization failed at rho=" + std::to_string(rho));
    Eigen::MatrixXd fitted = phi * ldlt.solve(phi.transpose() * raw.z);
    double rss = (raw.z - fitted).squaredNorm();
    double df = ldlt.solve(phi.transpose() * phi).trace();
    double denom = 1.0 - df / j;
    if (denom <= 0.0) return std::numeric_limits<double>::infinity();
    return (rss / (static_cast<double>(n) * j)) / (denom * denom);
}

// GCV selection of the smoothing parameter over a grid; the default grid is
// 25 log-spaced values in [1e-10, 1].
inline double select_rho_gcv(const RawDataset& raw, const BasisSystem& basis,
                             std::span<const double> grid = {}) {
    std::vector<double> fallback;
    if (grid.empty()) {
        fallback = log_grid(1e-10, 1.0, 25);
        grid = fallback;
    }
    Eigen::MatrixXd phi = eval_basis(basis, raw.grid);
    double best_rho = grid[0];
    double best = std::numeric_limits<double>::infinity();
    for (double rho : grid) {
        double score = smoothing_gcv(raw, phi, basis, rho);
        if (score < best) {
            best = score;
            best_rho = rho;
        }
    }
    return best_rho;
}

}  // namespace sofr
