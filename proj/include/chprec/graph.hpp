#pragma once

#include "chprec/errors.hpp"
#include "chprec/rng.hpp"
#include "chprec/sparse.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace chprec {

/// User-item interaction graph. Edges are (user, item) pairs with dense
/// internal indices; kept sorted and unique.
struct BipartiteGraph {
    std::size_t n_users = 0;
    std::size_t n_items = 0;
    std::vector<std::pair<index_t, index_t>> edges;

    std::size_t n_nodes() const { return n_users + n_items; }
};

/// The fixed propagation matrix (direct + cross-hop + self links) together
/// with the provenance that produced it.
struct PropagationOperator {
    SparseMatrix matrix;
    double epsilon = 0.0;
    bool includes_identity = false;
    double drop_ratio = 0.0;
};

/// N x N symmetric 0/1 block adjacency [[0, R], [R^T, 0]] with users first.
inline SparseMatrix build_adjacency(const BipartiteGraph& g) {
    if (g.edges.empty()) throw EmptyGraph("build_adjacency: graph has no edges");
    const std::size_t n = g.n_nodes();
    std::vector<Triple> triples;
    triples.reserve(2 * g.edges.size());
    for (const auto& [u, i] : g.edges) {
        if (u >= g.n_users || i >= g.n_items)
            throw IndexOutOfRange("build_adjacency: edge (" + std::to_string(u) + ", " +
                                  std::to_string(i) + ") out of range");
        const index_t item_node = static_cast<index_t>(g.n_users + i);
        triples.emplace_back(u, item_node, 1.0);
        triples.emplace_back(item_node, u, 1.0);
    }
    return csr_from_coo(std::move(triples), n, n);
}

/// D^{-1/2} A D^{-1/2} with D = diag(row sums). Zero-degree rows keep zero
/// scale (0^{-1/2} treated as 0).
inline SparseMatrix sym_normalize(const SparseMatrix& a) {
    if (a.n_rows != a.n_cols) throw DimensionMismatch("sym_normalize: matrix not square");
    for (double v : a.values)
        if (v < 0.0) throw NegativeEntry("sym_normalize: negative entry");
    std::vector<double> d = row_sums(a);
    for (double& x : d) x = (x > 0.0) ? 1.0 / std::sqrt(x) : 0.0;
    return scale_cols(scale_rows(a, d), d);
}

/// High-pass filtered cross-hop Laplacian: C = A^2, normalized by C's row
/// sums, entries kept only when strictly greater than epsilon. The diagonal
/// of C (node degree) participates like any other entry. keep_diagonal=false
/// zeroes it before normalization (ablation hook).
inline SparseMatrix cross_hop_matrix(const SparseMatrix& a, double epsilon, bool keep_diagonal = true) {
    if (epsilon < 0.0) throw NegativeEpsilon("cross_hop_matrix: epsilon must be >= 0");
    SparseMatrix c = spgemm(a, a);
    if (!keep_diagonal) {
        for (std::size_t r = 0; r < c.n_rows; ++r)
            for (std::size_t k = c.row_offsets[r]; k < c.row_offsets[r + 1]; ++k)
                if (c.col_indices[k] == r) c.values[k] = 0.0;
        c = drop_stored_zeros(c);
    }
    SparseMatrix lc = sym_normalize(c);
    for (double& v : lc.values)
        if (!(v > epsilon)) v = 0.0;
    return drop_stored_zeros(lc);
}

/// L + L_c + I, overlapping entries summed.
inline PropagationOperator propagation_operator(const SparseMatrix& l, const SparseMatrix& l_c,
                                                double epsilon = 0.0) {
    if (l.n_rows != l.n_cols || l_c.n_rows != l_c.n_cols || l.n_rows != l_c.n_rows)
        throw DimensionMismatch("propagation_operator: operands must be square and equally sized");
    PropagationOperator op;
    op.matrix = sparse_add(sparse_add(l, l_c), identity_matrix(l.n_rows));
    op.epsilon = epsilon;
    op.includes_identity = true;
    op.drop_ratio = 0.0;
    return op;
}

/// Adjacency -> L, C -> filtered L_c -> L + L_c + I in one step.
inline PropagationOperator build_propagation(const BipartiteGraph& g, double epsilon,
                                             bool keep_diagonal = true) {
    const SparseMatrix a = build_adjacency(g);
    const SparseMatrix l = sym_normalize(a);
    const SparseMatrix lc = cross_hop_matrix(a, epsilon, keep_diagonal);
    return propagation_operator(l, lc, epsilon);
}

/// Removes floor(ratio * m) of the m off-diagonal stored entries uniformly at
/// random. Self entries always survive and nothing is renormalized.
inline PropagationOperator drop_edges(const PropagationOperator& p, double ratio, std::uint64_t seed) {
    if (ratio < 0.0 || ratio >= 1.0) throw RatioOutOfRange("drop_edges: ratio must be in [0, 1)");
    const SparseMatrix& m = p.matrix;
    std::vector<std::size_t> off_diag;
    off_diag.reserve(m.nnz());
    for (std::size_t r = 0; r < m.n_rows; ++r)
        for (std::size_t k = m.row_offsets[r]; k < m.row_offsets[r + 1]; ++k)
            if (m.col_indices[k] != r) off_diag.push_back(k);

    const std::size_t n_drop = static_cast<std::size_t>(ratio * static_cast<double>(off_diag.size()));
    std::vector<char> dropped(m.nnz(), 0);
    Rng rng = make_rng(seed);
    // partial Fisher-Yates: the first n_drop slots are the dropped sample
    for (std::size_t i = 0; i < n_drop; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(uniform_index(rng, off_diag.size() - i));
        std::swap(off_diag[i], off_diag[j]);
        dropped[off_diag[i]] = 1;
    }

    PropagationOperator out;
    out.epsilon = p.epsilon;
    out.includes_identity = p.includes_identity;
    out.drop_ratio = ratio;
    out.matrix.n_rows = m.n_rows;
    out.matrix.n_cols = m.n_cols;
    out.matrix.row_offsets.assign(m.n_rows + 1, 0);
    out.matrix.col_indices.reserve(m.nnz() - n_drop);
    out.matrix.values.reserve(m.nnz() - n_drop);
    for (std::size_t r = 0; r < m.n_rows; ++r) {
        for (std::size_t k = m.row_offsets[r]; k < m.row_offsets[r + 1]; ++k) {
            if (!dropped[k]) {
                out.matrix.col_indices.push_back(m.col_indices[k]);
                out.matrix.values.push_back(m.values[k]);
            }
        }
        out.matrix.row_offsets[r + 1] = out.matrix.values.size();
    }
    return out;
}

/// Grid search for the filter threshold: minimizes |ratio - 1| where ratio is
/// the larger of (cross edges, direct edges) over the smaller. Ties go to the
/// larger epsilon, which yields the cheaper operator.
inline double select_epsilon(const SparseMatrix& a, const std::vector<double>& candidate_grid) {
    if (candidate_grid.empty()) throw EmptyGrid("select_epsilon: empty candidate grid");
    const double n_direct = static_cast<double>(a.nnz());
    double best_eps = 0.0;
    double best_score = std::numeric_limits<double>::infinity();
    bool have_best = false;
    for (double eps : candidate_grid) {
        if (eps < 0.0) throw NegativeEpsilon("select_epsilon: negative grid value");
        const double n_cross = static_cast<double>(cross_hop_matrix(a, eps).nnz());
        double ratio;
        if (n_cross == 0.0 || n_direct == 0.0)
            ratio = std::numeric_limits<double>::infinity();
        else
            ratio = std::max(n_cross, n_direct) / std::min(n_cross, n_direct);
        const double score = std::isinf(ratio) ? ratio : std::abs(ratio - 1.0);
        if (!have_best || score < best_score || (score == best_score && eps > best_eps)) {
            best_eps = eps;
            best_score = score;
            have_best = true;
        }
    }
    return best_eps;
}

/// Text export: header "N nnz epsilon drop_ratio", then one "row col value"
/// triple per line.
inline void export_operator(const PropagationOperator& p, std::ostream& os) {
    os << p.matrix.n_rows << ' ' << p.matrix.nnz() << ' ';
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g %.17g\n", p.epsilon, p.drop_ratio);
    os << buf;
    for (std::size_t r = 0; r < p.matrix.n_rows; ++r) {
        auto cols = p.matrix.row_cols(r);
        auto vals = p.matrix.row_vals(r);
        for (std::size_t k = 0; k < cols.size(); ++k) {
            std::snprintf(buf, sizeof buf, "%zu %u %.17g\n", r, cols[k], vals[k]);
            os << buf;
        }
    }
}

inline void export_operator(const PropagationOperator& p, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw Error("export_operator: cannot open " + path);
    export_operator(p, os);
}

} // namespace chprec
