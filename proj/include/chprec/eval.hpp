#pragma once

#include "chprec/errors.hpp"
#include "chprec/model.hpp"
#include "chprec/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

namespace chprec {

struct PerUserMetrics {
    index_t user = 0;
    double recall = 0.0;
    double ndcg = 0.0;
};

struct DensityGroup {
    std::size_t boundary = 0; // group holds users with train count < boundary
    std::size_t n_users = 0;
    double recall = 0.0;
    double ndcg = 0.0;
};

/// Ranking quality aggregates. recall_at_k / ndcg_at_k are unweighted means
/// over the evaluated users (those with at least one test item).
struct EvalReport {
    double recall_at_k = 0.0;
    double ndcg_at_k = 0.0;
    std::size_t k = 0;
    std::vector<PerUserMetrics> per_user;
    std::optional<std::vector<DensityGroup>> groups;
};

/// Recall@K and NDCG@K with binary relevance. Per user: recall = hits /
/// |test|, DCG sums 1/log2(rank+1) over hit ranks, IDCG truncates at
/// min(K, |test|). Training items never enter the candidate list; users
/// without test items are skipped.
inline EvalReport recall_ndcg(const DenseMatrix& final, std::size_t n_users, std::size_t n_items,
                              const std::vector<std::vector<index_t>>& train_items,
                              const std::vector<std::vector<index_t>>& test_items, std::size_t k) {
    std::vector<index_t> evaluated;
    for (index_t u = 0; u < n_users; ++u)
        if (!test_items[u].empty()) evaluated.push_back(u);
    if (evaluated.empty()) throw NoTestUsers("recall_ndcg: no user has test items");

    std::vector<PerUserMetrics> per_user(evaluated.size());
    parallel_for(evaluated.size(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t idx = begin; idx < end; ++idx) {
            const index_t u = evaluated[idx];
            const auto& test = test_items[u];
            const auto ranked = rank_items(final, n_users, n_items, u, train_items[u], k);
            double hits = 0.0, dcg = 0.0;
            for (std::size_t r = 0; r < ranked.size(); ++r) {
                if (std::binary_search(test.begin(), test.end(), ranked[r])) {
                    hits += 1.0;
                    dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
                }
            }
            double idcg = 0.0;
            const std::size_t ideal = std::min(k, test.size());
            for (std::size_t r = 0; r < ideal; ++r)
                idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
            per_user[idx] = {u, hits / static_cast<double>(test.size()), dcg / idcg};
        }
    });

    EvalReport report;
    report.k = k;
    report.per_user = std::move(per_user);
    for (const auto& m : report.per_user) {
        report.recall_at_k += m.recall;
        report.ndcg_at_k += m.ndcg;
    }
    report.recall_at_k /= static_cast<double>(report.per_user.size());
    report.ndcg_at_k /= static_cast<double>(report.per_user.size());
    return report;
}

/// Splits the evaluated users into n_groups by ascending training count so
/// each group carries (as nearly as possible) the same total number of
/// training interactions. Boundary labels are exclusive upper bounds on the
/// group's training count.
inline std::vector<DensityGroup> density_groups(const std::vector<PerUserMetrics>& per_user,
                                                const std::vector<std::size_t>& train_counts,
                                                std::size_t n_groups = 4) {
    if (n_groups < 2) throw Error("density_groups: need at least 2 groups");
    if (per_user.size() < n_groups)
        throw TooFewUsers("density_groups: " + std::to_string(per_user.size()) + " users for " +
                          std::to_string(n_groups) + " groups");

    std::vector<std::size_t> order(per_user.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const std::size_t ca = train_counts[per_user[a].user];
        const std::size_t cb = train_counts[per_user[b].user];
        if (ca != cb) return ca < cb;
        return per_user[a].user < per_user[b].user;
    });

    double total = 0.0;
    for (std::size_t i : order) total += static_cast<double>(train_counts[per_user[i].user]);

    std::vector<DensityGroup> groups(n_groups);
    std::size_t g = 0;
    double cum = 0.0;
    std::vector<double> recall_sum(n_groups, 0.0), ndcg_sum(n_groups, 0.0);
    std::vector<std::size_t> max_count(n_groups, 0);
    for (std::size_t i = 0; i < order.size(); ++i) {
        const std::size_t remaining = order.size() - i;
        // advance when this group's interaction quota is filled, or when the
        // remaining users are exactly enough to keep later groups non-empty
        while (g + 1 < n_groups && groups[g].n_users > 0 &&
               (cum >= total * static_cast<double>(g + 1) / static_cast<double>(n_groups) ||
                remaining == n_groups - 1 - g))
            ++g;
        const auto& m = per_user[order[i]];
        const std::size_t c = train_counts[m.user];
        groups[g].n_users += 1;
        recall_sum[g] += m.recall;
        ndcg_sum[g] += m.ndcg;
        max_count[g] = std::max(max_count[g], c);
        cum += static_cast<double>(c);
    }
    for (std::size_t i = 0; i < n_groups; ++i) {
        groups[i].boundary = max_count[i] + 1;
        groups[i].recall = recall_sum[i] / static_cast<double>(groups[i].n_users);
        groups[i].ndcg = ndcg_sum[i] / static_cast<double>(groups[i].n_users);
    }
    return groups;
}

namespace detail {

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0)
        throw DegenerateVariance("pearson: one of the variables is constant");
    return sxy / std::sqrt(sxx * syy);
}

/// Min-max normalized log-degree over the given node range; zero-degree
/// nodes are excluded (their log-degree is undefined). Returns the matching
/// 1/alpha values alongside.
inline std::pair<std::vector<double>, std::vector<double>> locality_pairs(
    const std::vector<double>& alpha, const std::vector<std::size_t>& degrees, std::size_t begin,
    std::size_t end) {
    std::vector<double> inv_alpha, logdeg;
    for (std::size_t n = begin; n < end; ++n) {
        if (degrees[n] == 0) continue;
        inv_alpha.push_back(1.0 / alpha[n]);
        logdeg.push_back(std::log(static_cast<double>(degrees[n])));
    }
    if (logdeg.size() < 2) throw DegenerateVariance("locality_correlation: too few active nodes");
    const auto [lo, hi] = std::minmax_element(logdeg.begin(), logdeg.end());
    const double span = *hi - *lo;
    if (span > 0.0)
        for (double& v : logdeg) v = (v - *lo) / span;
    return {std::move(inv_alpha), std::move(logdeg)};
}

} // namespace detail

/// Pearson correlation between 1/alpha of the first locality layer and the
/// normalized log training degree, computed separately for users and items.
inline std::pair<double, double> locality_correlation(const ModelParams& params,
                                                      const std::vector<std::size_t>& train_degrees,
                                                      std::size_t n_users) {
    if (params.la_weights.empty())
        throw LayerCountMismatch("locality_correlation: model has no locality layers");
    const std::vector<double> alpha = la_alpha(params.la_weights.front());
    const std::size_t n = alpha.size();
    auto [xu, yu] = detail::locality_pairs(alpha, train_degrees, 0, n_users);
    auto [xi, yi] = detail::locality_pairs(alpha, train_degrees, n_users, n);
    return {detail::pearson(xu, yu), detail::pearson(xi, yi)};
}

/// Per-layer propagation-pattern window: entries of diag(alpha^(l)) (L + L_c)
/// restricted to rows [row0, row0+size) and columns [col0, col0+size),
/// normalized by the window's maximum so the strongest link is 1.
inline std::vector<DenseMatrix> propagation_patterns(const ModelParams& params,
                                                     const SparseMatrix& direct_plus_cross,
                                                     std::size_t row0, std::size_t col0,
                                                     std::size_t size) {
    if (row0 + size > direct_plus_cross.n_rows || col0 + size > direct_plus_cross.n_cols)
        throw IndexOutOfRange("propagation_patterns: window outside the operator");
    std::vector<DenseMatrix> windows;
    for (const auto& w : params.la_weights) {
        const std::vector<double> alpha = la_alpha(w);
        DenseMatrix win(size, size);
        double peak = 0.0;
        for (std::size_t r = 0; r < size; ++r) {
            for (std::size_t c = 0; c < size; ++c) {
                const double v = alpha[row0 + r] * direct_plus_cross.value_at(row0 + r, col0 + c);
                win(r, c) = v;
                peak = std::max(peak, std::abs(v));
            }
        }
        if (peak > 0.0)
            for (double& v : win.values) v /= peak;
        windows.push_back(std::move(win));
    }
    return windows;
}

} // namespace chprec
