#pragma once

#include "chprec/errors.hpp"
#include "chprec/graph.hpp"
#include "chprec/parallel.hpp"
#include "chprec/sparse.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace chprec {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Trainable state: initial embeddings for all N = n_users + n_items nodes
/// plus one locality weight vector per propagation layer (empty for the
/// baselines, which have no locality-adaptive layers).
struct ModelParams {
    DenseMatrix embeddings;                      // N x d
    std::vector<std::vector<double>> la_weights; // L vectors of length N
};

/// Everything the forward pass produced: the embedding matrix after each
/// layer, the combined final embeddings, and the sigmoid locality factors
/// actually applied per layer.
struct ForwardTrace {
    std::vector<DenseMatrix> per_layer; // E^(0) .. E^(L)
    DenseMatrix final;
    std::vector<std::vector<double>> alphas;
};

/// Elementwise sigmoid of a locality weight vector.
inline std::vector<double> la_alpha(const std::vector<double>& w) {
    std::vector<double> a(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) a[i] = sigmoid(w[i]);
    return a;
}

namespace detail {

inline DenseMatrix scale_embedding_rows(const DenseMatrix& e, const std::vector<double>& factor) {
    DenseMatrix out = e;
    for (std::size_t r = 0; r < e.n_rows; ++r) {
        const double f = factor[r];
        double* row = out.values.data() + r * e.n_cols;
        for (std::size_t c = 0; c < e.n_cols; ++c) row[c] *= f;
    }
    return out;
}

inline DenseMatrix layer_mean(const std::vector<DenseMatrix>& layers) {
    DenseMatrix out(layers[0].n_rows, layers[0].n_cols);
    const double w = 1.0 / static_cast<double>(layers.size());
    for (const DenseMatrix& e : layers)
        for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += w * e.values[i];
    return out;
}

} // namespace detail

/// DGCF forward pass: E^(l) = P (diag(alpha^(l)) E^(l-1)) for l = 1..L with
/// alpha^(l) = sigmoid(w_LA^(l)). The locality scaling happens before the
/// operator, so the self link carries the scaled embedding too. The final
/// embedding is the mean of E^(0)..E^(L), or E^(L) alone when
/// final_layer_only is set (the depth-sweep protocol).
inline ForwardTrace dgcf_forward(const ModelParams& params, const PropagationOperator& p,
                                 std::size_t n_layers, bool final_layer_only = false) {
    const std::size_t n = params.embeddings.n_rows;
    if (p.matrix.n_rows != n || p.matrix.n_cols != n)
        throw DimensionMismatch("dgcf_forward: operator is " + std::to_string(p.matrix.n_rows) +
                                "x" + std::to_string(p.matrix.n_cols) + ", embeddings have " +
                                std::to_string(n) + " rows");
    if (params.la_weights.size() != n_layers)
        throw LayerCountMismatch("dgcf_forward: " + std::to_string(params.la_weights.size()) +
                                 " locality vectors for " + std::to_string(n_layers) + " layers");

    ForwardTrace trace;
    trace.per_layer.reserve(n_layers + 1);
    trace.per_layer.push_back(params.embeddings);
    trace.alphas.reserve(n_layers);
    for (std::size_t l = 0; l < n_layers; ++l) {
        if (params.la_weights[l].size() != n)
            throw DimensionMismatch("dgcf_forward: locality vector " + std::to_string(l) +
                                    " has wrong length");
        trace.alphas.push_back(la_alpha(params.la_weights[l]));
        DenseMatrix scaled = detail::scale_embedding_rows(trace.per_layer.back(), trace.alphas.back());
        trace.per_layer.push_back(spmm(p.matrix, scaled));
    }
    trace.final = final_layer_only ? trace.per_layer.back() : detail::layer_mean(trace.per_layer);
    return trace;
}

/// LightGCN forward pass: E^(l) = L_hat E^(l-1) over the self-loop-free
/// normalized adjacency, final = mean over layers 0..L.
inline ForwardTrace lightgcn_forward(const ModelParams& params, const SparseMatrix& l_hat,
                                     std::size_t n_layers, bool final_layer_only = false) {
    const std::size_t n = params.embeddings.n_rows;
    if (l_hat.n_rows != n || l_hat.n_cols != n)
        throw DimensionMismatch("lightgcn_forward: operator/embedding size mismatch");
    ForwardTrace trace;
    trace.per_layer.reserve(n_layers + 1);
    trace.per_layer.push_back(params.embeddings);
    for (std::size_t l = 0; l < n_layers; ++l)
        trace.per_layer.push_back(spmm(l_hat, trace.per_layer.back()));
    trace.final = final_layer_only ? trace.per_layer.back() : detail::layer_mean(trace.per_layer);
    return trace;
}

/// Matrix-factorization baseline: no propagation at all.
inline ForwardTrace mf_forward(const ModelParams& params) {
    ForwardTrace trace;
    trace.per_layer.push_back(params.embeddings);
    trace.final = params.embeddings;
    return trace;
}

/// Predicted preference: inner product of the final user and item rows.
/// Item rows live at offset n_users.
inline double score(const DenseMatrix& final, std::size_t n_users, std::size_t user,
                    std::size_t item) {
    const std::size_t item_row = n_users + item;
    if (user >= n_users || item_row >= final.n_rows)
        throw IndexOutOfRange("score: user " + std::to_string(user) + " / item " +
                              std::to_string(item) + " out of range");
    auto u = final.row(user);
    auto i = final.row(item_row);
    double s = 0.0;
    for (std::size_t c = 0; c < final.n_cols; ++c) s += u[c] * i[c];
    return s;
}

/// Top-K items for a user by score, skipping `exclude` (sorted item indices,
/// typically the training interactions). Ties break toward the smaller item
/// index, so rankings are deterministic.
inline std::vector<index_t> rank_items(const DenseMatrix& final, std::size_t n_users,
                                       std::size_t n_items, std::size_t user,
                                       const std::vector<index_t>& exclude, std::size_t k) {
    if (user >= n_users || n_users + n_items > final.n_rows)
        throw IndexOutOfRange("rank_items: index out of range");
    auto u = final.row(user);
    std::vector<std::pair<double, index_t>> scored;
    scored.reserve(n_items);
    for (index_t i = 0; i < n_items; ++i) {
        if (std::binary_search(exclude.begin(), exclude.end(), i)) continue;
        auto row = final.row(n_users + i);
        double s = 0.0;
        for (std::size_t c = 0; c < final.n_cols; ++c) s += u[c] * row[c];
        scored.emplace_back(s, i);
    }
    const std::size_t top = std::min(k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + top, scored.end(),
                      [](const auto& a, const auto& b) {
                          if (a.first != b.first) return a.first > b.first;
                          return a.second < b.second;
                      });
    std::vector<index_t> out;
    out.reserve(top);
    for (std::size_t i = 0; i < top; ++i) out.push_back(scored[i].second);
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic "DGCF", version byte, u32 little-endian counts
// (n_users, n_items, d, L), embeddings row-major as f64 LE, then each
// locality vector as f64 LE. Round-trips bit-exactly.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline double get_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

} // namespace detail

struct Checkpoint {
    std::uint32_t n_users = 0;
    std::uint32_t n_items = 0;
    ModelParams params;
};

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("save_checkpoint: cannot open " + path);
    os.write("DGCF", 4);
    os.put(1); // version
    const auto& e = ckpt.params.embeddings;
    detail::put_u32(os, ckpt.n_users);
    detail::put_u32(os, ckpt.n_items);
    detail::put_u32(os, static_cast<std::uint32_t>(e.n_cols));
    detail::put_u32(os, static_cast<std::uint32_t>(ckpt.params.la_weights.size()));
    for (double v : e.values) detail::put_f64(os, v);
    for (const auto& w : ckpt.params.la_weights)
        for (double v : w) detail::put_f64(os, v);
    if (!os) throw Error("save_checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("load_checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "DGCF", 4) != 0)
        throw FormatError("load_checkpoint: bad magic in " + path);
    const int version = is.get();
    if (version != 1) throw FormatError("load_checkpoint: unsupported version");
    Checkpoint ckpt;
    ckpt.n_users = detail::get_u32(is);
    ckpt.n_items = detail::get_u32(is);
    const std::uint32_t dim = detail::get_u32(is);
    const std::uint32_t layers = detail::get_u32(is);
    const std::size_t n = static_cast<std::size_t>(ckpt.n_users) + ckpt.n_items;
    ckpt.params.embeddings = DenseMatrix(n, dim);
    for (double& v : ckpt.params.embeddings.values) v = detail::get_f64(is);
    ckpt.params.la_weights.assign(layers, std::vector<double>(n));
    for (auto& w : ckpt.params.la_weights)
        for (double& v : w) v = detail::get_f64(is);
    if (!is) throw FormatError("load_checkpoint: truncated file " + path);
    return ckpt;
}

} // namespace chprec
