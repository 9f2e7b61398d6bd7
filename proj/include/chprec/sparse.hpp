#pragma once

#include "chprec/errors.hpp"
#include "chprec/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <tuple>
#include <vector>

namespace chprec {

using index_t = std::uint32_t;

/// One COO entry: (row, col, value).
using Triple = std::tuple<index_t, index_t, double>;

/// Compressed sparse row matrix, canonical form: row_offsets non-decreasing,
/// column indices strictly increasing within each row, values finite.
/// Immutable after construction; safe to share across threads read-only.
struct SparseMatrix {
    std::size_t n_rows = 0;
    std::size_t n_cols = 0;
    std::vector<std::size_t> row_offsets; // length n_rows + 1
    std::vector<index_t> col_indices;
    std::vector<double> values;           // same length as col_indices

    std::size_t nnz() const { return values.size(); }

    std::span<const index_t> row_cols(std::size_t r) const {
        return {col_indices.data() + row_offsets[r], row_offsets[r + 1] - row_offsets[r]};
    }
    std::span<const double> row_vals(std::size_t r) const {
        return {values.data() + row_offsets[r], row_offsets[r + 1] - row_offsets[r]};
    }

    /// Stored value at (r, c), or 0 when the entry is structurally absent.
    double value_at(std::size_t r, std::size_t c) const {
        auto cols = row_cols(r);
        auto it = std::lower_bound(cols.begin(), cols.end(), static_cast<index_t>(c));
        if (it == cols.end() || *it != c) return 0.0;
        return values[row_offsets[r] + static_cast<std::size_t>(it - cols.begin())];
    }
};

/// Row-major dense matrix of doubles.
struct DenseMatrix {
    std::size_t n_rows = 0;
    std::size_t n_cols = 0;
    std::vector<double> values;

    DenseMatrix() = default;
    DenseMatrix(std::size_t r, std::size_t c, double fill = 0.0)
        : n_rows(r), n_cols(c), values(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return values[r * n_cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values[r * n_cols + c]; }

    std::span<double> row(std::size_t r) { return {values.data() + r * n_cols, n_cols}; }
    std::span<const double> row(std::size_t r) const { return {values.data() + r * n_cols, n_cols}; }
};

/// Builds a canonical CSR matrix from COO triples. Duplicate (row, col)
/// entries are summed.
inline SparseMatrix csr_from_coo(std::vector<Triple> triples, std::size_t n_rows, std::size_t n_cols) {
    for (const auto& [r, c, v] : triples) {
        if (r >= n_rows || c >= n_cols)
            throw IndexOutOfRange("csr_from_coo: entry (" + std::to_string(r) + ", " + std::to_string(c) +
                                  ") outside " + std::to_string(n_rows) + "x" + std::to_string(n_cols));
        if (!std::isfinite(v))
            throw NonFiniteValue("csr_from_coo: non-finite value at (" + std::to_string(r) + ", " +
                                 std::to_string(c) + ")");
    }
    std::sort(triples.begin(), triples.end(), [](const Triple& a, const Triple& b) {
        if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) < std::get<0>(b);
        return std::get<1>(a) < std::get<1>(b);
    });

    SparseMatrix m;
    m.n_rows = n_rows;
    m.n_cols = n_cols;
    m.row_offsets.assign(n_rows + 1, 0);
    m.col_indices.reserve(triples.size());
    m.values.reserve(triples.size());
    std::size_t i = 0;
    for (std::size_t r = 0; r < n_rows; ++r) {
        while (i < triples.size() && std::get<0>(triples[i]) == r) {
            const index_t c = std::get<1>(triples[i]);
            double v = std::get<2>(triples[i]);
            ++i;
            while (i < triples.size() && std::get<0>(triples[i]) == r && std::get<1>(triples[i]) == c) {
                v += std::get<2>(triples[i]);
                ++i;
            }
            m.col_indices.push_back(c);
            m.values.push_back(v);
        }
        m.row_offsets[r + 1] = m.values.size();
    }
    return m;
}

/// Extracts the stored entries back out as (row, col, value) triples in
/// row-major, column order.
inline std::vector<Triple> csr_to_coo(const SparseMatrix& a) {
    std::vector<Triple> out;
    out.reserve(a.nnz());
    for (std::size_t r = 0; r < a.n_rows; ++r) {
        auto cols = a.row_cols(r);
        auto vals = a.row_vals(r);
        for (std::size_t k = 0; k < cols.size(); ++k)
            out.emplace_back(static_cast<index_t>(r), cols[k], vals[k]);
    }
    return out;
}

inline SparseMatrix identity_matrix(std::size_t n) {
    SparseMatrix m;
    m.n_rows = m.n_cols = n;
    m.row_offsets.resize(n + 1);
    m.col_indices.resize(n);
    m.values.assign(n, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        m.row_offsets[i] = i;
        m.col_indices[i] = static_cast<index_t>(i);
    }
    m.row_offsets[n] = n;
    return m;
}

/// Sparse-dense product A * X. Summation runs row-major in column-index
/// order; rows are partitioned across workers, so the result is bitwise
/// identical for any worker count.
inline DenseMatrix spmm(const SparseMatrix& a, const DenseMatrix& x) {
    if (a.n_cols != x.n_rows)
        throw DimensionMismatch("spmm: " + std::to_string(a.n_rows) + "x" + std::to_string(a.n_cols) +
                                " times " + std::to_string(x.n_rows) + "x" + std::to_string(x.n_cols));
    DenseMatrix out(a.n_rows, x.n_cols);
    parallel_for(a.n_rows, [&](std::size_t begin, std::size_t end) {
        for (std::size_t r = begin; r < end; ++r) {
            double* dst = out.values.data() + r * out.n_cols;
            auto cols = a.row_cols(r);
            auto vals = a.row_vals(r);
            for (std::size_t k = 0; k < cols.size(); ++k) {
                const double v = vals[k];
                const double* src = x.values.data() + static_cast<std::size_t>(cols[k]) * x.n_cols;
                for (std::size_t c = 0; c < x.n_cols; ++c) dst[c] += v * src[c];
            }
        }
    });
    return out;
}

/// Per-row sums of stored values.
inline std::vector<double> row_sums(const SparseMatrix& a) {
    std::vector<double> sums(a.n_rows, 0.0);
    for (std::size_t r = 0; r < a.n_rows; ++r) {
        double s = 0.0;
        for (double v : a.row_vals(r)) s += v;
        sums[r] = s;
    }
    return sums;
}

/// Per-column sums of stored values.
inline std::vector<double> col_sums(const SparseMatrix& a) {
    std::vector<double> sums(a.n_cols, 0.0);
    for (std::size_t k = 0; k < a.nnz(); ++k) sums[a.col_indices[k]] += a.values[k];
    return sums;
}

/// Transposed copy in canonical CSR form.
inline SparseMatrix transpose(const SparseMatrix& a) {
    SparseMatrix t;
    t.n_rows = a.n_cols;
    t.n_cols = a.n_rows;
    t.row_offsets.assign(t.n_rows + 1, 0);
    for (std::size_t k = 0; k < a.nnz(); ++k) ++t.row_offsets[a.col_indices[k] + 1];
    for (std::size_t r = 0; r < t.n_rows; ++r) t.row_offsets[r + 1] += t.row_offsets[r];
    t.col_indices.resize(a.nnz());
    t.values.resize(a.nnz());
    std::vector<std::size_t> cursor(t.row_offsets.begin(), t.row_offsets.end() - 1);
    for (std::size_t r = 0; r < a.n_rows; ++r) {
        auto cols = a.row_cols(r);
        auto vals = a.row_vals(r);
        for (std::size_t k = 0; k < cols.size(); ++k) {
            const std::size_t pos = cursor[cols[k]]++;
            t.col_indices[pos] = static_cast<index_t>(r);
            t.values[pos] = vals[k];
        }
    }
    return t;
}

/// Entrywise sum of equally shaped sparse matrices (merge of sorted rows).
inline SparseMatrix sparse_add(const SparseMatrix& a, const SparseMatrix& b) {
    if (a.n_rows != b.n_rows || a.n_cols != b.n_cols)
        throw DimensionMismatch("sparse_add: shape mismatch");
    SparseMatrix out;
    out.n_rows = a.n_rows;
    out.n_cols = a.n_cols;
    out.row_offsets.assign(a.n_rows + 1, 0);
    out.col_indices.reserve(a.nnz() + b.nnz());
    out.values.reserve(a.nnz() + b.nnz());
    for (std::size_t r = 0; r < a.n_rows; ++r) {
        auto ac = a.row_cols(r); auto av = a.row_vals(r);
        auto bc = b.row_cols(r); auto bv = b.row_vals(r);
        std::size_t i = 0, j = 0;
        while (i < ac.size() || j < bc.size()) {
            if (j == bc.size() || (i < ac.size() && ac[i] < bc[j])) {
                out.col_indices.push_back(ac[i]); out.values.push_back(av[i]); ++i;
            } else if (i == ac.size() || bc[j] < ac[i]) {
                out.col_indices.push_back(bc[j]); out.values.push_back(bv[j]); ++j;
            } else {
                out.col_indices.push_back(ac[i]); out.values.push_back(av[i] + bv[j]); ++i; ++j;
            }
        }
        out.row_offsets[r + 1] = out.values.size();
    }
    return out;
}

/// Sparse-sparse product A * B with a dense per-row accumulator. Output rows
/// are emitted in sorted column order (canonical form).
inline SparseMatrix spgemm(const SparseMatrix& a, const SparseMatrix& b) {
    if (a.n_cols != b.n_rows)
        throw DimensionMismatch("spgemm: inner dimensions differ");
    SparseMatrix out;
    out.n_rows = a.n_rows;
    out.n_cols = b.n_cols;
    out.row_offsets.assign(a.n_rows + 1, 0);

    std::vector<double> acc(b.n_cols, 0.0);
    std::vector<std::size_t> mark(b.n_cols, SIZE_MAX); // row stamp per column
    std::vector<index_t> touched;
    for (std::size_t r = 0; r < a.n_rows; ++r) {
        touched.clear();
        auto ac = a.row_cols(r);
        auto av = a.row_vals(r);
        for (std::size_t k = 0; k < ac.size(); ++k) {
            const double v = av[k];
            const std::size_t mid = ac[k];
            auto bc = b.row_cols(mid);
            auto bv = b.row_vals(mid);
            for (std::size_t j = 0; j < bc.size(); ++j) {
                if (mark[bc[j]] != r) {
                    mark[bc[j]] = r;
                    acc[bc[j]] = 0.0;
                    touched.push_back(bc[j]);
                }
                acc[bc[j]] += v * bv[j];
            }
        }
        std::sort(touched.begin(), touched.end());
        for (index_t c : touched) {
            out.col_indices.push_back(c);
            out.values.push_back(acc[c]);
        }
        out.row_offsets[r + 1] = out.values.size();
    }
    return out;
}

/// Copy with row i scaled by scale[i].
inline SparseMatrix scale_rows(const SparseMatrix& a, const std::vector<double>& scale) {
    SparseMatrix out = a;
    for (std::size_t r = 0; r < a.n_rows; ++r)
        for (std::size_t k = a.row_offsets[r]; k < a.row_offsets[r + 1]; ++k)
            out.values[k] = a.values[k] * scale[r];
    return out;
}

/// Copy with column j scaled by scale[j].
inline SparseMatrix scale_cols(const SparseMatrix& a, const std::vector<double>& scale) {
    SparseMatrix out = a;
    for (std::size_t k = 0; k < a.nnz(); ++k) out.values[k] = a.values[k] * scale[a.col_indices[k]];
    return out;
}

/// Copy without stored zeros (e.g. after filtering writes exact 0.0).
inline SparseMatrix drop_stored_zeros(const SparseMatrix& a) {
    SparseMatrix out;
    out.n_rows = a.n_rows;
    out.n_cols = a.n_cols;
    out.row_offsets.assign(a.n_rows + 1, 0);
    for (std::size_t r = 0; r < a.n_rows; ++r) {
        auto cols = a.row_cols(r);
        auto vals = a.row_vals(r);
        for (std::size_t k = 0; k < cols.size(); ++k) {
            if (vals[k] != 0.0) {
                out.col_indices.push_back(cols[k]);
                out.values.push_back(vals[k]);
            }
        }
        out.row_offsets[r + 1] = out.values.size();
    }
    return out;
}

} // namespace chprec
