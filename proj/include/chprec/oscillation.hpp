#pragma once

#include "chprec/errors.hpp"
#include "chprec/graph.hpp"
#include "chprec/sparse.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace chprec {

/// Probability vector over graph nodes: nonnegative, sums to 1 within 1e-12.
struct DistributionVector {
    std::vector<double> values;
};

inline void validate_distribution(const DistributionVector& x) {
    double sum = 0.0;
    for (double v : x.values) {
        if (!(v >= 0.0)) throw Error("distribution: negative or NaN entry");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-12)
        throw Error("distribution: entries sum to " + std::to_string(sum) + ", expected 1");
}

inline double l1_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d += std::abs(a[i] - b[i]);
    return d;
}

/// Record of one random-walk run: every iterate plus the even/odd limiting
/// distributions once their subsequences settle.
struct RandomWalkTrace {
    std::vector<DistributionVector> steps; // steps[0] = x0
    std::optional<DistributionVector> even_limit;
    std::optional<DistributionVector> odd_limit;
    bool oscillating = false;
    double amplitude = 0.0; // ||even_limit - odd_limit||_1 when both present
};

/// Scales each column by the reciprocal of its sum, so every column of the
/// result sums to 1 (the walk's transition matrix, A~(i,j) = w_ij / d(j)).
inline SparseMatrix column_stochastic(const SparseMatrix& a) {
    for (double v : a.values)
        if (v < 0.0) throw NegativeEntry("column_stochastic: negative entry");
    std::vector<double> d = col_sums(a);
    for (std::size_t j = 0; j < d.size(); ++j) {
        if (d[j] == 0.0) throw ZeroColumn("column_stochastic: column " + std::to_string(j) + " sums to 0");
        d[j] = 1.0 / d[j];
    }
    return scale_cols(a, d);
}

/// Iterates x_{t+1} = P x_t for `steps` steps, recording every iterate.
inline RandomWalkTrace walk(const SparseMatrix& p, const DistributionVector& x0, std::size_t steps) {
    if (p.n_rows != p.n_cols || p.n_cols != x0.values.size())
        throw DimensionMismatch("walk: operator and distribution sizes differ");
    validate_distribution(x0);
    RandomWalkTrace trace;
    trace.steps.reserve(steps + 1);
    trace.steps.push_back(x0);
    DenseMatrix x(x0.values.size(), 1);
    x.values = x0.values;
    for (std::size_t t = 0; t < steps; ++t) {
        x = spmm(p, x);
        trace.steps.push_back(DistributionVector{x.values});
    }
    return trace;
}

/// Analytic stationary distribution pi(i) = d(v_i) / (2|E|) of the walk on an
/// undirected graph given by its (possibly weighted) adjacency.
inline DistributionVector stationary_distribution(const SparseMatrix& adjacency) {
    if (adjacency.nnz() == 0) throw EmptyGraph("stationary_distribution: no edges");
    std::vector<double> d = row_sums(adjacency);
    double total = 0.0;
    for (double x : d) total += x; // equals 2|E| for a 0/1 adjacency
    DistributionVector pi;
    pi.values.resize(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) pi.values[i] = d[i] / total;
    return pi;
}

/// Runs the walk on column_stochastic(A) until the even- and odd-step
/// subsequences both settle, then compares their limits. The walk oscillates
/// when the two limits differ by more than tol in 1-norm.
inline RandomWalkTrace detect_oscillation(const SparseMatrix& adjacency, const DistributionVector& x0,
                                          std::size_t max_steps = 100000, double tol = 1e-10) {
    const SparseMatrix p = column_stochastic(adjacency);
    if (p.n_cols != x0.values.size())
        throw DimensionMismatch("detect_oscillation: distribution size mismatch");
    validate_distribution(x0);

    RandomWalkTrace trace;
    trace.steps.push_back(x0);
    DenseMatrix x(x0.values.size(), 1);
    x.values = x0.values;
    std::vector<double> prev_even = x0.values;
    std::vector<double> prev_odd;
    bool even_done = false, odd_done = false;
    for (std::size_t t = 1; t <= max_steps && !(even_done && odd_done); ++t) {
        x = spmm(p, x);
        trace.steps.push_back(DistributionVector{x.values});
        if (t % 2 == 0) {
            even_done = even_done || l1_distance(x.values, prev_even) < tol;
            prev_even = x.values;
        } else {
            odd_done = odd_done || (!prev_odd.empty() && l1_distance(x.values, prev_odd) < tol);
            prev_odd = x.values;
        }
    }
    if (!(even_done && odd_done))
        throw NoConvergence("detect_oscillation: subsequences not settled after " +
                            std::to_string(max_steps) + " steps");
    // limits taken from the last iterates, after both parities settled
    trace.even_limit = DistributionVector{prev_even};
    trace.odd_limit = DistributionVector{prev_odd};
    trace.amplitude = l1_distance(trace.even_limit->values, trace.odd_limit->values);
    trace.oscillating = trace.amplitude > tol;
    return trace;
}

namespace detail {

/// Splits the column-stochastic transition matrix of a bipartite adjacency
/// into its user-rows/item-cols block and item-rows/user-cols block.
/// Throws NotBipartite when any entry lives in a diagonal block.
inline void split_bipartite_blocks(const SparseMatrix& p, std::size_t n_users, SparseMatrix& upper,
                                   SparseMatrix& lower) {
    const std::size_t n = p.n_rows;
    const std::size_t n_items = n - n_users;
    std::vector<Triple> up, lo;
    for (std::size_t r = 0; r < n; ++r) {
        auto cols = p.row_cols(r);
        auto vals = p.row_vals(r);
        for (std::size_t k = 0; k < cols.size(); ++k) {
            const std::size_t c = cols[k];
            const bool row_user = r < n_users;
            const bool col_user = c < n_users;
            if (row_user == col_user)
                throw NotBipartite("oscillation_bound: entry (" + std::to_string(r) + ", " +
                                   std::to_string(c) + ") inside a diagonal block");
            if (row_user)
                up.emplace_back(static_cast<index_t>(r), static_cast<index_t>(c - n_users), vals[k]);
            else
                lo.emplace_back(static_cast<index_t>(r - n_users), static_cast<index_t>(c), vals[k]);
        }
    }
    upper = csr_from_coo(std::move(up), n_users, n_items);
    lower = csr_from_coo(std::move(lo), n_items, n_users);
}

/// Maximum column sum of M^k for M = U * L, without forming the product:
/// iterates the all-ones vector through M^T = L^T U^T applied k times.
inline double max_col_sum_of_power(const SparseMatrix& u, const SparseMatrix& l, std::size_t k) {
    const SparseMatrix ut = transpose(u);
    const SparseMatrix lt = transpose(l);
    DenseMatrix c(u.n_rows, 1, 1.0);
    for (std::size_t i = 0; i < k; ++i) {
        c = spmm(ut, c);
        c = spmm(lt, c);
    }
    double m = 0.0;
    for (double v : c.values) m = std::max(m, v);
    return m;
}

} // namespace detail

/// Checks the appendix inequality on the even/odd step gap:
///   ||x^{(2k)} - x^{(2k+1)}||_1 <= max(||V^k||_1, ||T^k||_1) * ||[eps; xi]||_1
/// where V and T are the side-graph transition blocks of the walk matrix and
/// eps, xi measure how far x0 is from the parity fixed point. Returns
/// (lhs, bound).
inline std::pair<double, double> oscillation_bound(const SparseMatrix& adjacency,
                                                   const DistributionVector& x0, std::size_t k,
                                                   std::size_t n_users) {
    const SparseMatrix p = column_stochastic(adjacency);
    SparseMatrix upper, lower; // upper: users x items, lower: items x users
    detail::split_bipartite_blocks(p, n_users, upper, lower);

    const RandomWalkTrace trace = walk(p, x0, 2 * k + 1);
    const double lhs = l1_distance(trace.steps[2 * k].values, trace.steps[2 * k + 1].values);

    DenseMatrix xu(n_users, 1), xi(adjacency.n_rows - n_users, 1);
    for (std::size_t i = 0; i < xu.n_rows; ++i) xu.values[i] = x0.values[i];
    for (std::size_t i = 0; i < xi.n_rows; ++i) xi.values[i] = x0.values[n_users + i];

    const DenseMatrix r_xi = spmm(upper, xi);   // R x_i
    const DenseMatrix rt_xu = spmm(lower, xu);  // R^T x_u
    double err_norm = 0.0;
    for (std::size_t i = 0; i < xu.n_rows; ++i) err_norm += std::abs(r_xi.values[i] - xu.values[i]);
    for (std::size_t i = 0; i < xi.n_rows; ++i) err_norm += std::abs(rt_xu.values[i] - xi.values[i]);

    const double v_norm = detail::max_col_sum_of_power(upper, lower, k); // V = R R^T blocks
    const double t_norm = detail::max_col_sum_of_power(lower, upper, k); // T = R^T R blocks
    const double bound = std::max(v_norm, t_norm) * err_norm;
    if (lhs > bound + 1e-12)
        throw Error("oscillation_bound: inequality violated, lhs=" + std::to_string(lhs) +
                    " bound=" + std::to_string(bound));
    return {lhs, bound};
}

/// Unweighted 0/1 side graphs: users adjacent when they share an item (the
/// pattern of R R^T, self-loops included), and dually for items.
inline std::pair<SparseMatrix, SparseMatrix> side_graphs(const BipartiteGraph& g) {
    if (g.edges.empty()) throw EmptyGraph("side_graphs: graph has no edges");
    std::vector<Triple> r_triples;
    r_triples.reserve(g.edges.size());
    for (const auto& [u, i] : g.edges) r_triples.emplace_back(u, i, 1.0);
    const SparseMatrix r = csr_from_coo(std::move(r_triples), g.n_users, g.n_items);
    const SparseMatrix rt = transpose(r);
    SparseMatrix user_side = spgemm(r, rt);
    SparseMatrix item_side = spgemm(rt, r);
    for (double& v : user_side.values) v = 1.0;
    for (double& v : item_side.values) v = 1.0;
    return {std::move(user_side), std::move(item_side)};
}

} // namespace chprec
