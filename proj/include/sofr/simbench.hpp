#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <chrono>
#include <cmath>
#include <optional>
#include <set>
#include <thread>
#include <vector>

#include "sofr/aotl.hpp"
#include "sofr/cvs.hpp"
#include "sofr/pcvs.hpp"

namespace sofr {

// Simulation design: multi-source functional datasets drawn from exponential-
// kernel Gaussian processes sharing one coefficient function.
struct SimConfig {
    int n = 300;
    int j = 50;
    int k_sources = 4;
    double eta = 100.0;          // source covariance scale
    double target_scale = 10.0;  // target covariance scale
    double kernel_rate = 15.0;
    double noise_var_meas = 0.01;
    double noise_var_reg = 0.01;
    int replications = 1;
    std::uint64_t seed = 1;
    double train_frac = 0.8;
    int latent_grid = 1001;  // requested latent resolution; rounded so the
                             // observation grid is an exact subset
    TuningPolicy tuning = [] {
        TuningPolicy t;
        t.rho = 0.0;  // simulated curves are fit by exact basis projection
        return t;
    }();
    double alpha = 0.05;                // aggregation confidence level
    std::optional<double> zeta;         // fixed group-lasso penalty; empty = validation path
    double solver_tol = 1e-8;
    long solver_max_iter = 50000;

    void validate() const {
        if (n < 5 || j < 2 || k_sources < 1 || replications < 1)
            throw std::invalid_argument("sim config: counts must be positive (n>=5, j>=2, k>=1)");
        if (!(train_frac > 0.0 && train_frac < 1.0))
            throw std::invalid_argument("sim config: train_frac must be in (0,1)");
        if (eta <= 0.0 || target_scale <= 0.0)
            throw std::invalid_argument("sim config: covariance scales must be > 0");
        if (noise_var_meas < 0.0 || noise_var_reg < 0.0)
            throw std::invalid_argument("sim config: noise variances must be >= 0");
        if (latent_grid < j) throw std::invalid_argument("sim config: latent grid coarser than observations");
    }

    // Latent points per observation interval.
    int latent_refinement() const {
        double per = static_cast<double>(latent_grid - 1) / (j - 1);
        return std::max(1, static_cast<int>(std::lround(per)));
    }
    int latent_size() const { return latent_refinement() * (j - 1) + 1; }
};

// One Monte-Carlo result: errors of a method relative to the target-only
// local estimator.
struct ResultRow {
    int replicate = 0;
    Method method = Method::local;
    double eta = 0.0;
    std::optional<double> ree;
    double rpe = 0.0;
    double wall_ms = 0.0;
    bool failed = false;
    std::string message;
};

// Exponential-kernel Gaussian-process sampler on a fixed grid; the kernel
// matrix is factored once and shared across draws.
class GpSampler {
public:
    GpSampler(Eigen::VectorXd grid, double scale, double rate) : grid_(std::move(grid)) {
        const auto g = grid_.size();
        Eigen::MatrixXd kernel(g, g);
        for (Eigen::Index a = 0; a < g; ++a)
            for (Eigen::Index b = 0; b < g; ++b)
                kernel(a, b) = scale * std::exp(-rate * std::abs(grid_(a) - grid_(b)));
        kernel.diagonal().array() += 1e-10;
        Eigen::LLT<Eigen::MatrixXd> llt(kernel);
        if (llt.info() != Eigen::Success)
            throw std::runtime_error("GpSampler: kernel matrix is not positive definite after jitter");
        chol_lower_ = llt.matrixL();
    }

    const Eigen::VectorXd& grid() const { return grid_; }

    // n independent paths, one per column.
    Eigen::MatrixXd draw_paths(int n, std::mt19937_64& rng) const {
        std::normal_distribution<double> normal(0.0, 1.0);
        Eigen::MatrixXd white(grid_.size(), n);
        for (Eigen::Index c = 0; c < n; ++c)
            for (Eigen::Index r = 0; r < grid_.size(); ++r) white(r, c) = normal(rng);
        return chol_lower_ * white;
    }

private:
    Eigen::VectorXd grid_;
    Eigen::MatrixXd chol_lower_;
};

struct SimulatedDataset {
    std::shared_ptr<RawDataset> raw;
    Eigen::MatrixXd x_latent;      // true paths on the latent grid
    Eigen::VectorXd beta_latent;   // true coefficient function on the latent grid
};

// Responses integrate the true path against the coefficient function on the
// latent grid (trapezoid rule); observations subsample the path at the
// observation points and add measurement noise. Data are generated centered.
inline SimulatedDataset simulate_dataset(const SimConfig& cfg, const GpSampler& sampler,
                                         std::mt19937_64& rng, int dataset_id = 0) {
    cfg.validate();
    const int g = cfg.latent_size();
    const int r = cfg.latent_refinement();
    if (sampler.grid().size() != g)
        throw std::invalid_argument("simulate_dataset: sampler grid does not match config");

    SimulatedDataset out;
    out.x_latent = sampler.draw_paths(cfg.n, rng);
    auto [p1, p2] = legendre_pair(sampler.grid());
    out.beta_latent = p1 + p2;

    Eigen::VectorXd quad = trapezoid_weights(g) / (g - 1.0);
    Eigen::VectorXd signal = out.x_latent.transpose() * quad.cwiseProduct(out.beta_latent);

    std::normal_distribution<double> normal(0.0, 1.0);
    out.raw = std::make_shared<RawDataset>();
    out.raw->id = dataset_id;
    out.raw->grid = even_grid(cfg.j);
    out.raw->y = signal;
    double sd_reg = std::sqrt(cfg.noise_var_reg);
    for (int i = 0; i < cfg.n; ++i) out.raw->y(i) += sd_reg * normal(rng);
    out.raw->z.resize(cfg.j, cfg.n);
    double sd_meas = std::sqrt(cfg.noise_var_meas);
    for (int i = 0; i < cfg.n; ++i)
        for (int jj = 0; jj < cfg.j; ++jj)
            out.raw->z(jj, i) = out.x_latent(static_cast<Eigen::Index>(jj) * r, i) +
                                sd_meas * normal(rng);
    return out;
}

// Basis projection of the true coefficient function, by high-resolution
// trapezoid quadrature. Works one basis function at a time to keep memory flat.
inline Eigen::VectorXd truth_coefficients(const BasisSystem& basis, int quad_points = 200001) {
    Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(quad_points, 0.0, 1.0);
    auto [p1, p2] = legendre_pair(t);
    Eigen::VectorXd weighted = trapezoid_weights(quad_points).cwiseProduct(
        Eigen::VectorXd(p1 + p2)) / (quad_points - 1.0);
    Eigen::VectorXd c(basis.size);
    const double sqrt2 = std::numbers::sqrt2;
    const double two_pi = 2.0 * std::numbers::pi;
    c(0) = weighted.sum();
    for (int m = 2; m <= basis.size; ++m) {
        double freq = two_pi * fourier_harmonic(m);
        if (m % 2 == 0)
            c(m - 1) = (weighted.array() * (freq * t.array()).cos()).sum() * sqrt2;
        else
            c(m - 1) = (weighted.array() * (freq * t.array()).sin()).sum() * sqrt2;
    }
    return c;
}

// Squared L2 norm of the part of the true coefficient function outside the
// basis span. The true function has unit-normed orthogonal components, so its
// squared norm is exactly 2.
inline double truth_projection_residual_sq(const BasisSystem& basis, int quad_points = 200001) {
    Eigen::VectorXd c = truth_coefficients(basis, quad_points);
    return std::max(0.0, 2.0 - c.squaredNorm());
}

// Estimation error of a candidate relative to the local estimator in the
// empirical-covariance norm of the target training curves.
inline double relative_estimation_error(const CoefEstimate& candidate, const CoefEstimate& local,
                                        const Eigen::VectorXd& truth_c,
                                        const SmoothedDataset& target_train) {
    CoefEstimate cand_err{candidate.c - truth_c, candidate.method, candidate.basis};
    CoefEstimate local_err{local.c - truth_c, local.method, local.basis};
    double denom = empirical_cov_norm_sq(local_err, target_train);
    if (denom == 0.0)
        throw DegenerateMetricError("relative_estimation_error: local estimator matches the truth");
    return empirical_cov_norm_sq(cand_err, target_train) / denom;
}

// Prediction error of a candidate relative to the local estimator on a test
// set (ratio of squared-error sums).
inline double relative_prediction_error(const CoefEstimate& candidate, const CoefEstimate& local,
                                        const SmoothedDataset& test) {
    Eigen::VectorXd cand_resid = test.y() - predict(candidate, test);
    Eigen::VectorXd local_resid = test.y() - predict(local, test);
    double denom = local_resid.squaredNorm();
    if (denom == 0.0)
        throw DegenerateMetricError("relative_prediction_error: local estimator predicts exactly");
    return cand_resid.squaredNorm() / denom;
}

namespace detail {

inline std::shared_ptr<RawDataset> slice_subjects(const RawDataset& raw,
                                                  std::span<const int> idx) {
    auto out = std::make_shared<RawDataset>();
    out->grid = raw.grid;
    out->id = raw.id;
    out->z.resize(raw.z.rows(), static_cast<Eigen::Index>(idx.size()));
    out->y.resize(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
        out->z.col(static_cast<Eigen::Index>(i)) = raw.z.col(idx[i]);
        out->y(static_cast<Eigen::Index>(i)) = raw.y(idx[i]);
    }
    return out;
}

struct ReplicateContext {
    const SimConfig& cfg;
    const std::shared_ptr<const BasisSystem>& basis;
    const Eigen::VectorXd& truth_c;
    const GpSampler& target_sampler;
    const GpSampler& source_sampler;
};

// Runs one replicate end to end; one row per requested method plus the local
// baseline. A failing method yields an error row, not an abort.
inline std::vector<ResultRow> run_replicate(const ReplicateContext& ctx, int rep,
                                            const std::set<Method>& methods) {
    const SimConfig& cfg = ctx.cfg;
    using clock = std::chrono::steady_clock;
    auto ms_since = [](clock::time_point t0) {
        return std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    };
    std::vector<ResultRow> rows;
    auto t_start = clock::now();

    auto rng_sim = substream(cfg.seed, "sim", static_cast<std::uint64_t>(rep));
    auto rng_split = substream(cfg.seed, "split", static_cast<std::uint64_t>(rep));
    auto rng_cv = substream(cfg.seed, "cv", static_cast<std::uint64_t>(rep));
    auto rng_aotl = substream(cfg.seed, "aotl-split", static_cast<std::uint64_t>(rep));
    auto rng_zeta = substream(cfg.seed, "zeta-val", static_cast<std::uint64_t>(rep));

    SimulatedDataset target = simulate_dataset(cfg, ctx.target_sampler, rng_sim, 0);
    std::vector<SimulatedDataset> sources;
    sources.reserve(cfg.k_sources);
    for (int k = 1; k <= cfg.k_sources; ++k)
        sources.push_back(simulate_dataset(cfg, ctx.source_sampler, rng_sim, k));

    std::vector<int> perm = random_permutation(cfg.n, rng_split);
    int n_train = static_cast<int>(std::lround(cfg.train_frac * cfg.n));
    n_train = std::min(std::max(n_train, 2), cfg.n - 1);
    std::vector<int> train_idx(perm.begin(), perm.begin() + n_train);
    std::vector<int> test_idx(perm.begin() + n_train, perm.end());

    auto train_raw = slice_subjects(*target.raw, train_idx);
    auto test_raw = slice_subjects(*target.raw, test_idx);

    const Eigen::MatrixXd& w = ctx.basis->w;
    double rho_target = cfg.tuning.resolve_rho(*train_raw, *ctx.basis);
    auto sm_train = smooth(train_raw, ctx.basis, rho_target);
    auto sm_test = smooth(test_raw, ctx.basis, rho_target);
    std::vector<std::shared_ptr<const SmoothedDataset>> sm_sources;
    sm_sources.reserve(sources.size());
    for (const auto& src : sources) {
        double rho = cfg.tuning.resolve_rho(*src.raw, *ctx.basis);
        sm_sources.push_back(smooth(src.raw, ctx.basis, rho));
    }

    double lambda0 = cfg.tuning.resolve_lambda(sm_train->v, sm_train->y(), w, rng_cv);
    LocalFit fit0 = fit_local(sm_train, lambda0, cfg.tuning.variance_mode);
    CoefEstimate local = fit0.estimate();

    rows.push_back({rep, Method::local, cfg.eta, 1.0, 1.0, ms_since(t_start), false, ""});

    // Source local fits are shared between the control-variates methods.
    std::vector<LocalFit> cvs_fits;
    auto ensure_cvs_fits = [&] {
        if (!cvs_fits.empty()) return;
        cvs_fits.push_back(fit0);
        for (const auto& src : sm_sources) {
            double lambda = cfg.tuning.resolve_lambda(src->v, src->y(), w, rng_cv);
            cvs_fits.push_back(fit_local(src, lambda, cfg.tuning.variance_mode));
        }
    };

    auto zeta_ratios = [] {
        std::vector<double> r = log_grid(1e-4, 1.0, 20);
        std::reverse(r.begin(), r.end());
        return r;
    }();

    for (Method method : methods) {
        if (method == Method::local) continue;
        auto t0 = clock::now();
        ResultRow row{rep, method, cfg.eta, std::nullopt, 0.0, 0.0, false, ""};
        try {
            CoefEstimate est;
            switch (method) {
                case Method::otl: {
                    Eigen::Index total = 0;
                    for (const auto& s : sm_sources) total += s->n();
                    Eigen::MatrixXd feats(total, ctx.basis->size);
                    Eigen::VectorXd ys(total);
                    Eigen::Index at = 0;
                    for (const auto& s : sm_sources) {
                        feats.middleRows(at, s->n()) = s->v;
                        ys.segment(at, s->n()) = s->y();
                        at += s->n();
                    }
                    double lambda_pool = cfg.tuning.resolve_lambda(feats, ys, w, rng_cv);
                    CoefEstimate pooled = fit_pooled(sm_sources, lambda_pool);
                    Eigen::VectorXd resid = sm_train->y() - sm_train->v * pooled.c;
                    double lambda_off = cfg.tuning.resolve_lambda(sm_train->v, resid, w, rng_cv);
                    est = fit_offset(pooled, sm_train, lambda_off);
                    break;
                }
                case Method::aotl:
                    est = run_aotl(sm_train, sm_sources, cfg.tuning, cfg.alpha, rng_aotl, rng_cv);
                    break;
                case Method::cvs: {
                    ensure_cvs_fits();
                    CvsSystem sys = assemble_cvs(cvs_fits);
                    est = cvs_estimate(sys, fit0);
                    break;
                }
                case Method::pcvs: {
                    ensure_cvs_fits();
                    CvsSystem sys = assemble_cvs(cvs_fits);
                    Eigen::MatrixXd q = delta_precision(cvs_fits);
                    if (cfg.zeta) {
                        est = pcvs_estimate(sys, q, fit0, *cfg.zeta, cfg.solver_tol,
                                            cfg.solver_max_iter);
                        break;
                    }
                    // Penalty level picked by prediction error on a held-out
                    // quarter of the training subjects, then refit at the
                    // same relative position on the full training system.
                    std::vector<int> vperm = random_permutation(n_train, rng_zeta);
                    int n_fit = static_cast<int>(std::lround(0.75 * n_train));
                    n_fit = std::min(std::max(n_fit, 2), n_train - 1);
                    std::vector<int> fit_idx(vperm.begin(), vperm.begin() + n_fit);
                    std::vector<int> val_idx(vperm.begin() + n_fit, vperm.end());
                    auto sm_fit = subset_subjects(*sm_train, fit_idx);
                    double lambda_fit = cfg.tuning.resolve_lambda(sm_fit->v, sm_fit->y(), w, rng_cv);
                    std::vector<LocalFit> val_fits;
                    val_fits.push_back(fit_local(sm_fit, lambda_fit, cfg.tuning.variance_mode));
                    for (std::size_t s = 1; s < cvs_fits.size(); ++s) val_fits.push_back(cvs_fits[s]);
                    CvsSystem val_sys = assemble_cvs(val_fits);
                    Eigen::MatrixXd val_q = delta_precision(val_fits);
                    double zmax_val = zeta_max(val_q, val_sys.delta_hat, val_sys.basis_size);
                    std::vector<double> val_grid;
                    for (std::size_t i = 1; i < zeta_ratios.size(); ++i)
                        val_grid.push_back(zmax_val * zeta_ratios[i]);
                    auto val_path = zeta_path(val_sys, val_q, val_fits[0], val_grid, cfg.solver_tol,
                                              cfg.solver_max_iter);
                    std::size_t best = 0;
                    double best_sse = std::numeric_limits<double>::infinity();
                    for (std::size_t i = 0; i < val_path.size(); ++i) {
                        double sse = 0.0;
                        for (int v : val_idx) {
                            double r = sm_train->y()(v) -
                                       sm_train->v.row(v).dot(val_path[i].estimate.c);
                            sse += r * r;
                        }
                        if (sse < best_sse) {
                            best_sse = sse;
                            best = i;
                        }
                    }
                    double zmax_full = zeta_max(q, sys.delta_hat, sys.basis_size);
                    std::vector<double> full_grid;
                    for (std::size_t i = 1; i < zeta_ratios.size(); ++i)
                        full_grid.push_back(zmax_full * zeta_ratios[i]);
                    auto full_path =
                        zeta_path(sys, q, fit0, full_grid, cfg.solver_tol, cfg.solver_max_iter);
                    est = full_path[std::min(best, full_path.size() - 1)].estimate;
                    break;
                }
                default:
                    continue;
            }
            row.ree = relative_estimation_error(est, local, ctx.truth_c, *sm_train);
            row.rpe = relative_prediction_error(est, local, *sm_test);
        } catch (const std::exception& e) {
            row.failed = true;
            row.message = e.what();
            row.ree = std::nullopt;
            row.rpe = std::numeric_limits<double>::quiet_NaN();
        }
        row.wall_ms = ms_since(t0);
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace detail

// Full Monte-Carlo experiment: per replicate, generate target and sources,
// split the target, fit the local baseline and every requested method, and
// record relative errors. Replicates run in parallel on seeded sub-streams;
// output order is (replicate, method) regardless of scheduling.
inline std::vector<ResultRow> run_experiment(const SimConfig& cfg, const std::set<Method>& methods,
                                             int threads = 0) {
    cfg.validate();
    auto basis = fourier_basis(default_basis_size(cfg.j));
    Eigen::VectorXd truth_c = truth_coefficients(*basis);
    Eigen::VectorXd latent = Eigen::VectorXd::LinSpaced(cfg.latent_size(), 0.0, 1.0);
    GpSampler target_sampler(latent, cfg.target_scale, cfg.kernel_rate);
    GpSampler source_sampler(latent, cfg.eta, cfg.kernel_rate);
    detail::ReplicateContext ctx{cfg, basis, truth_c, target_sampler, source_sampler};

    std::vector<std::vector<ResultRow>> per_rep(cfg.replications);
    int n_workers = threads > 0 ? threads
                                : static_cast<int>(std::thread::hardware_concurrency());
    n_workers = std::max(1, std::min(n_workers, cfg.replications));

    auto run_one = [&](int rep) {
        try {
            per_rep[rep] = detail::run_replicate(ctx, rep, methods);
        } catch (const std::exception& e) {
            // Replicate-level failure: error rows for the baseline and every
            // requested method, so the experiment still completes.
            per_rep[rep].clear();
            per_rep[rep].push_back({rep, Method::local, cfg.eta, std::nullopt,
                                    std::numeric_limits<double>::quiet_NaN(), 0.0, true, e.what()});
            for (Method m : methods)
                if (m != Method::local)
                    per_rep[rep].push_back({rep, m, cfg.eta, std::nullopt,
                                            std::numeric_limits<double>::quiet_NaN(), 0.0, true,
                                            e.what()});
        }
    };

    if (n_workers == 1) {
        for (int rep = 0; rep < cfg.replications; ++rep) run_one(rep);
    } else {
        std::atomic<int> next{0};
        auto worker = [&] {
            for (int rep = next.fetch_add(1); rep < cfg.replications; rep = next.fetch_add(1))
                run_one(rep);
        };
        std::vector<std::thread> pool;
        pool.reserve(n_workers);
        for (int i = 0; i < n_workers; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    std::vector<ResultRow> rows;
    for (auto& rep_rows : per_rep)
        for (auto& row : rep_rows) rows.push_back(std::move(row));
    return rows;
}

}  // namespace sofr
