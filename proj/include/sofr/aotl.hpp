#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "sofr/estimators.hpp"

namespace sofr {

// Constants of the hyper-sparse aggregation step: b3 is an empirical bound on
// response and prediction magnitudes, b1 = 4(1 + 9 b3), and
// b2 = b3 sqrt((ln(K+1) + alpha) / n0).
struct AggregationConstants {
    double b3 = 0.0;
    double b1 = 0.0;
    double b2 = 0.0;
    double alpha = 0.05;

    static AggregationConstants from_b3(double b3, double alpha, int n_sources, int n_target) {
        if (!(alpha > 0.0 && alpha < 1.0))
            throw std::invalid_argument("aggregation: alpha must be in (0,1)");
        if (n_target < 1) throw std::invalid_argument("aggregation: empty target");
        AggregationConstants c;
        c.b3 = b3;
        c.alpha = alpha;
        c.b1 = 4.0 * (1.0 + 9.0 * b3);
        c.b2 = b3 * std::sqrt((std::log(n_sources + 1.0) + alpha) / n_target);
        return c;
    }
};

// Disjoint split of the target subjects: a fitting half and two validation
// quarters. With odd counts the extra subject goes to the earlier part.
struct SplitPlan {
    std::vector<int> idx_01;
    std::vector<int> idx_021;
    std::vector<int> idx_022;
    std::uint64_t seed = 0;

    static SplitPlan draw(int n, std::mt19937_64& rng, std::uint64_t seed_label = 0) {
        if (n < 4) throw std::invalid_argument("SplitPlan: need at least 4 target subjects");
        std::vector<int> perm = random_permutation(n, rng);
        SplitPlan plan;
        plan.seed = seed_label;
        int n01 = (n + 1) / 2;
        int rest = n - n01;
        int n021 = (rest + 1) / 2;
        plan.idx_01.assign(perm.begin(), perm.begin() + n01);
        plan.idx_021.assign(perm.begin() + n01, perm.begin() + n01 + n021);
        plan.idx_022.assign(perm.begin() + n01 + n021, perm.end());
        return plan;
    }
};

// Mean squared prediction error of f over the given subjects.
inline double risk_r1(const CoefEstimate& f, const SmoothedDataset& data,
                      std::span<const int> idx) {
    if (idx.empty()) throw std::invalid_argument("risk_r1: empty index set");
    require_same_basis(*f.basis, *data.basis, "risk_r1");
    double sum = 0.0;
    for (int i : idx) {
        double r = data.y()(i) - data.v.row(i).dot(f.c);
        sum += r * r;
    }
    return sum / static_cast<double>(idx.size());
}

// Mean squared prediction gap between two estimates over the given subjects.
inline double dist_r2(const CoefEstimate& f1, const CoefEstimate& f2, const SmoothedDataset& data,
                      std::span<const int> idx) {
    if (idx.empty()) throw std::invalid_argument("dist_r2: empty index set");
    require_same_basis(*f1.basis, *f2.basis, "dist_r2");
    require_same_basis(*f1.basis, *data.basis, "dist_r2");
    Eigen::VectorXd diff = f1.c - f2.c;
    double sum = 0.0;
    for (int i : idx) {
        double d = data.v.row(i).dot(diff);
        sum += d * d;
    }
    return sum / static_cast<double>(idx.size());
}

// Nested candidate transferable sets: set k holds the k sources whose local
// estimates are closest to the target's fitting-half estimate, ties broken by
// smaller source index. Indices are 0-based into the source list.
inline std::vector<std::vector<int>> candidate_sets(const CoefEstimate& beta_01,
                                                    std::span<const CoefEstimate> source_fits,
                                                    const SmoothedDataset& target,
                                                    std::span<const int> idx_01) {
    if (source_fits.empty()) throw std::invalid_argument("candidate_sets: no sources");
    std::vector<std::pair<double, int>> ranked;
    ranked.reserve(source_fits.size());
    for (std::size_t s = 0; s < source_fits.size(); ++s)
        ranked.emplace_back(dist_r2(beta_01, source_fits[s], target, idx_01), static_cast<int>(s));
    std::sort(ranked.begin(), ranked.end());
    std::vector<std::vector<int>> sets;
    std::vector<int> current;
    for (const auto& [dist, s] : ranked) {
        current.push_back(s);
        std::vector<int> sorted = current;
        std::sort(sorted.begin(), sorted.end());
        sets.push_back(std::move(sorted));
    }
    return sets;
}

// Two-element convex aggregation: pick the candidate with the best fitting
// risk on the first validation quarter, keep the candidates within the
// (b1, b2) band, blend each kept candidate with the best one using the
// closed-form weight that minimizes the quadratic blend risk on the second
// quarter, and return the blend with the smallest risk there.
inline CoefEstimate hyper_sparse_aggregate(std::span<const CoefEstimate> candidates,
                                           const SmoothedDataset& target, const SplitPlan& split,
                                           const AggregationConstants& constants) {
    if (candidates.empty()) throw std::invalid_argument("hyper_sparse_aggregate: empty candidate set");
    if (split.idx_021.empty() || split.idx_022.empty())
        throw std::invalid_argument("hyper_sparse_aggregate: degenerate split");

    std::vector<double> risk_021(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i)
        risk_021[i] = risk_r1(candidates[i], target, split.idx_021);
    std::size_t best = static_cast<std::size_t>(
        std::min_element(risk_021.begin(), risk_021.end()) - risk_021.begin());
    const CoefEstimate& star = candidates[best];

    double star_risk_022 = risk_r1(star, target, split.idx_022);
    Eigen::VectorXd best_c = star.c;
    double best_risk = star_risk_022;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        double gap = dist_r2(star, candidates[i], target, split.idx_021);
        double band = constants.b1 * std::max(constants.b2 * constants.b2,
                                              constants.b2 * std::sqrt(gap));
        if (risk_021[i] > risk_021[best] + band) continue;

        double gap_022 = dist_r2(star, candidates[i], target, split.idx_022);
        double weight = 1.0;  // identical predictions: keep the best candidate
        if (gap_022 > 0.0) {
            double raw = 0.5 * (risk_r1(candidates[i], target, split.idx_022) - star_risk_022) /
                             gap_022 +
                         0.5;
            weight = std::clamp(raw, 0.0, 1.0);
        }
        Eigen::VectorXd blend = weight * star.c + (1.0 - weight) * candidates[i].c;
        double risk = risk_r1({blend, Method::aotl, star.basis}, target, split.idx_022);
        if (risk < best_risk) {
            best_risk = risk;
            best_c = std::move(blend);
        }
    }
    return {std::move(best_c), Method::aotl, star.basis};
}

// Aggregation-based offset transfer with an unknown transferable set: split
// the target, rank sources against the fitting-half estimate, run the offset
// fit for every nested candidate set, and aggregate.
inline CoefEstimate run_aotl(std::shared_ptr<const SmoothedDataset> target,
                             std::span<const std::shared_ptr<const SmoothedDataset>> sources,
                             const TuningPolicy& tuning, double alpha, std::mt19937_64& split_rng,
                             std::mt19937_64& cv_rng) {
    if (!target) throw std::invalid_argument("run_aotl: null target");
    if (sources.empty()) throw std::invalid_argument("run_aotl: need at least one source");
    const auto& w = target->basis->w;

    SplitPlan split = SplitPlan::draw(target->n(), split_rng);
    auto target_01 = subset_subjects(*target, split.idx_01);

    double lambda_01 = tuning.resolve_lambda(target_01->v, target_01->y(), w, cv_rng);
    LocalFit fit_01 = fit_local(target_01, lambda_01, tuning.variance_mode);
    CoefEstimate beta_01 = fit_01.estimate();

    std::vector<CoefEstimate> source_locals;
    source_locals.reserve(sources.size());
    for (const auto& src : sources) {
        double lambda = tuning.resolve_lambda(src->v, src->y(), w, cv_rng);
        source_locals.push_back(fit_local(src, lambda, tuning.variance_mode).estimate());
    }

    std::vector<std::vector<int>> sets =
        candidate_sets(beta_01, source_locals, *target, split.idx_01);

    std::vector<CoefEstimate> candidates;
    candidates.reserve(sets.size() + 1);
    candidates.push_back(beta_01);
    for (const auto& set : sets) {
        std::vector<std::shared_ptr<const SmoothedDataset>> pool;
        pool.reserve(set.size());
        for (int s : set) pool.push_back(sources[s]);
        Eigen::MatrixXd pooled_features(
            std::accumulate(pool.begin(), pool.end(), Eigen::Index(0),
                            [](Eigen::Index acc, const auto& d) { return acc + d->n(); }),
            target->basis_size());
        Eigen::VectorXd pooled_y(pooled_features.rows());
        Eigen::Index at = 0;
        for (const auto& d : pool) {
            pooled_features.middleRows(at, d->n()) = d->v;
            pooled_y.segment(at, d->n()) = d->y();
            at += d->n();
        }
        double lambda_pool = tuning.resolve_lambda(pooled_features, pooled_y, w, cv_rng);
        CoefEstimate pooled = fit_pooled(pool, lambda_pool);
        Eigen::VectorXd resid = target_01->y() - target_01->v * pooled.c;
        double lambda_offset = tuning.resolve_lambda(target_01->v, resid, w, cv_rng);
        CoefEstimate offset_fit = fit_offset(pooled, target_01, lambda_offset);
        offset_fit.method = Method::aotl;
        candidates.push_back(std::move(offset_fit));
    }

    // Empirical magnitude bound over the full target training set.
    double b3 = target->y().cwiseAbs().maxCoeff();
    for (const auto& cand : candidates)
        b3 = std::max(b3, (target->v * cand.c).cwiseAbs().maxCoeff());
    AggregationConstants constants =
        AggregationConstants::from_b3(b3, alpha, static_cast<int>(sources.size()), target->n());

    return hyper_sparse_aggregate(candidates, *target, split, constants);
}

}  // namespace sofr
