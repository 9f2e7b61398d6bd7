#pragma once

#include "chprec/data.hpp"
#include "chprec/errors.hpp"
#include "chprec/eval.hpp"
#include "chprec/graph.hpp"
#include "chprec/model.hpp"
#include "chprec/rng.hpp"
#include "chprec/sparse.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>
#include <tuple>
#include <vector>

namespace chprec {

enum class ModelKind { Dgcf, Lightgcn, Mf };

inline ModelKind model_kind_from_string(const std::string& s) {
    if (s == "dgcf") return ModelKind::Dgcf;
    if (s == "lightgcn") return ModelKind::Lightgcn;
    if (s == "mf") return ModelKind::Mf;
    throw ConfigError("unknown model '" + s + "' (expected dgcf, lightgcn or mf)");
}

inline const char* to_string(ModelKind m) {
    switch (m) {
        case ModelKind::Dgcf: return "dgcf";
        case ModelKind::Lightgcn: return "lightgcn";
        default: return "mf";
    }
}

struct TrainConfig {
    std::size_t dim = 64;
    std::size_t layers = 3;
    double lr = 1e-3;
    double lambda = 0.01;
    double epsilon = 0.0;    // cross-hop filter threshold
    double drop_ratio = 0.0; // edges dropped per training epoch
    std::size_t batch_size = 1024;
    std::size_t max_epochs = 500;
    std::size_t patience = 5;
    std::uint64_t seed = 1;
    std::size_t k_eval = 20;
    ModelKind model = ModelKind::Dgcf;
    bool final_layer_only = false;

    void validate() const {
        if (dim < 1) throw ConfigError("dim must be >= 1");
        if (lr <= 0.0) throw ConfigError("lr must be > 0");
        if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
        if (epsilon < 0.0) throw ConfigError("epsilon must be >= 0");
        if (drop_ratio < 0.0 || drop_ratio >= 1.0) throw ConfigError("drop-ratio must be in [0, 1)");
        if (batch_size < 1) throw ConfigError("batch-size must be >= 1");
        if (patience < 1) throw ConfigError("patience must be >= 1");
        if (k_eval < 1) throw ConfigError("k must be >= 1");
        if (model == ModelKind::Mf && layers != 0)
            throw ConfigError("mf model takes no propagation layers");
    }
};

/// One BPR sample: user, a training item of that user, and an item the user
/// never interacted with in training.
struct TrainBatch {
    std::vector<std::tuple<index_t, index_t, index_t>> triples; // (u, i_pos, j_neg)
};

/// Gradients mirroring ModelParams.
struct GradientSet {
    DenseMatrix d_embeddings;
    std::vector<std::vector<double>> d_la;
};

inline double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

/// Squared L2 norm of every trainable parameter (embeddings and locality
/// weights together).
inline double param_sq_norm(const ModelParams& params) {
    double s = 0.0;
    for (double v : params.embeddings.values) s += v * v;
    for (const auto& w : params.la_weights)
        for (double v : w) s += v * v;
    return s;
}

/// BPR loss over the batch: sum of softplus(-(score(u,i) - score(u,j)))
/// plus lambda * ||Theta||^2 over all parameters. The softplus form keeps
/// -log(sigmoid(m)) finite for any finite margin.
inline double bpr_loss(const ModelParams& params, const ForwardTrace& trace, const TrainBatch& batch,
                       double lambda, std::size_t n_users) {
    double loss = 0.0;
    for (const auto& [u, i, j] : batch.triples) {
        const double margin =
            score(trace.final, n_users, u, i) - score(trace.final, n_users, u, j);
        loss += softplus(-margin);
    }
    return loss + lambda * param_sq_norm(params);
}

namespace detail {

/// Reverse-mode sweep shared by every model kind. `op` and `op_t` may be
/// null for the pure matrix-factorization path (n_layers = 0). `with_la`
/// switches the locality scaling (and its gradients) on.
struct BackwardResult {
    GradientSet grads;
    double loss = 0.0;
};

inline BackwardResult backward_sweep(const ModelParams& params, const SparseMatrix* op,
                                     const SparseMatrix* op_t, bool with_la, std::size_t n_layers,
                                     const TrainBatch& batch, double lambda, std::size_t n_users,
                                     bool final_layer_only) {
    const std::size_t n = params.embeddings.n_rows;
    const std::size_t d = params.embeddings.n_cols;

    // forward, retaining every layer
    std::vector<DenseMatrix> layers;
    std::vector<std::vector<double>> alphas;
    layers.reserve(n_layers + 1);
    layers.push_back(params.embeddings);
    for (std::size_t l = 0; l < n_layers; ++l) {
        if (with_la) {
            alphas.push_back(la_alpha(params.la_weights[l]));
            layers.push_back(spmm(*op, scale_embedding_rows(layers.back(), alphas.back())));
        } else {
            layers.push_back(spmm(*op, layers.back()));
        }
    }
    DenseMatrix final = final_layer_only ? layers.back() : layer_mean(layers);

    // loss and gradient w.r.t. the final embeddings
    BackwardResult result;
    DenseMatrix g_final(n, d);
    for (const auto& [u, i, j] : batch.triples) {
        const double* fu = final.values.data() + static_cast<std::size_t>(u) * d;
        const double* fi = final.values.data() + (n_users + static_cast<std::size_t>(i)) * d;
        const double* fj = final.values.data() + (n_users + static_cast<std::size_t>(j)) * d;
        double margin = 0.0;
        for (std::size_t c = 0; c < d; ++c) margin += fu[c] * (fi[c] - fj[c]);
        result.loss += softplus(-margin);
        const double coeff = -sigmoid(-margin); // d softplus(-m) / d m
        double* gu = g_final.values.data() + static_cast<std::size_t>(u) * d;
        double* gi = g_final.values.data() + (n_users + static_cast<std::size_t>(i)) * d;
        double* gj = g_final.values.data() + (n_users + static_cast<std::size_t>(j)) * d;
        for (std::size_t c = 0; c < d; ++c) {
            gu[c] += coeff * (fi[c] - fj[c]);
            gi[c] += coeff * fu[c];
            gj[c] -= coeff * fu[c];
        }
    }
    result.loss += lambda * param_sq_norm(params);

    const double mean_w = 1.0 / static_cast<double>(n_layers + 1);
    if (!final_layer_only)
        for (double& v : g_final.values) v *= mean_w;

    // reverse sweep: g_e tracks the gradient w.r.t. E^(l)
    result.grads.d_la.assign(with_la ? n_layers : 0, std::vector<double>());
    DenseMatrix g_e = g_final; // at l = L
    for (std::size_t l = n_layers; l >= 1; --l) {
        DenseMatrix g_tilde = spmm(*op_t, g_e); // through E^(l) = P * Etilde^(l-1)
        if (with_la) {
            const std::vector<double>& alpha = alphas[l - 1];
            const DenseMatrix& prev = layers[l - 1];
            std::vector<double> d_w(n, 0.0);
            for (std::size_t r = 0; r < n; ++r) {
                const double* gt = g_tilde.values.data() + r * d;
                const double* pv = prev.values.data() + r * d;
                double dot = 0.0;
                for (std::size_t c = 0; c < d; ++c) dot += gt[c] * pv[c];
                d_w[r] = dot * alpha[r] * (1.0 - alpha[r]); // chain through sigmoid
            }
            for (std::size_t r = 0; r < n; ++r) {
                const double a = alpha[r];
                double* gt = g_tilde.values.data() + r * d;
                for (std::size_t c = 0; c < d; ++c) gt[c] *= a;
            }
            result.grads.d_la[l - 1] = std::move(d_w);
        }
        g_e = std::move(g_tilde);
        if (!final_layer_only)
            for (std::size_t idx = 0; idx < g_e.values.size(); ++idx)
                g_e.values[idx] += g_final.values[idx];
    }

    result.grads.d_embeddings = std::move(g_e);
    for (std::size_t idx = 0; idx < result.grads.d_embeddings.values.size(); ++idx)
        result.grads.d_embeddings.values[idx] += 2.0 * lambda * params.embeddings.values[idx];
    if (with_la)
        for (std::size_t l = 0; l < n_layers; ++l)
            for (std::size_t r = 0; r < n; ++r)
                result.grads.d_la[l][r] += 2.0 * lambda * params.la_weights[l][r];

    for (double v : result.grads.d_embeddings.values)
        if (!std::isfinite(v)) throw NonFiniteGradient("backward: non-finite embedding gradient");
    for (const auto& w : result.grads.d_la)
        for (double v : w)
            if (!std::isfinite(v)) throw NonFiniteGradient("backward: non-finite locality gradient");
    return result;
}

} // namespace detail

/// Exact gradients of bpr_loss w.r.t. the initial embeddings and every
/// locality weight vector, back-propagated through layer averaging, the
/// sparse operator and the sigmoid locality scaling.
inline GradientSet backward(const ModelParams& params, const PropagationOperator& p,
                            const TrainBatch& batch, double lambda, const TrainConfig& config,
                            std::size_t n_users) {
    const bool with_la = config.model == ModelKind::Dgcf && config.layers > 0;
    if (config.model == ModelKind::Mf || config.layers == 0) {
        return detail::backward_sweep(params, nullptr, nullptr, false, 0, batch, lambda, n_users,
                                      false)
            .grads;
    }
    const SparseMatrix pt = transpose(p.matrix);
    return detail::backward_sweep(params, &p.matrix, &pt, with_la, config.layers, batch, lambda,
                                  n_users, config.final_layer_only)
        .grads;
}

/// First and second moment estimates for Adam.
struct AdamState {
    DenseMatrix m_emb, v_emb;
    std::vector<std::vector<double>> m_la, v_la;

    static AdamState like(const ModelParams& params) {
        AdamState s;
        s.m_emb = DenseMatrix(params.embeddings.n_rows, params.embeddings.n_cols);
        s.v_emb = DenseMatrix(params.embeddings.n_rows, params.embeddings.n_cols);
        for (const auto& w : params.la_weights) {
            s.m_la.emplace_back(w.size(), 0.0);
            s.v_la.emplace_back(w.size(), 0.0);
        }
        return s;
    }
};

namespace detail {

inline void adam_update_span(double* theta, double* m, double* v, const double* g, std::size_t n,
                             double lr, std::size_t t) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        theta[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
}

} // namespace detail

/// One Adam step (beta1 = 0.9, beta2 = 0.999, eps = 1e-8) with bias
/// correction; t counts steps from 1.
inline void adam_step(ModelParams& params, const GradientSet& grads, AdamState& state, double lr,
                      std::size_t t) {
    detail::adam_update_span(params.embeddings.values.data(), state.m_emb.values.data(),
                             state.v_emb.values.data(), grads.d_embeddings.values.data(),
                             params.embeddings.values.size(), lr, t);
    for (std::size_t l = 0; l < grads.d_la.size(); ++l)
        detail::adam_update_span(params.la_weights[l].data(), state.m_la[l].data(),
                                 state.v_la[l].data(), grads.d_la[l].data(),
                                 grads.d_la[l].size(), lr, t);
}

/// Per-user training-item index used by the negative sampler.
struct SamplerIndex {
    std::size_t n_items = 0;
    std::vector<std::pair<index_t, index_t>> edges;
    std::vector<std::vector<index_t>> user_items; // sorted

    SamplerIndex() = default;
    SamplerIndex(const std::vector<std::pair<index_t, index_t>>& train_edges, std::size_t n_users,
                 std::size_t items)
        : n_items(items), edges(train_edges), user_items(items_by_user(train_edges, n_users)) {}
};

/// Draws batch_size uniform positive edges and pairs each with a rejection-
/// sampled item outside the user's training set.
inline TrainBatch sample_batch(const SamplerIndex& index, std::size_t batch_size, Rng& rng) {
    TrainBatch batch;
    batch.triples.reserve(batch_size);
    for (std::size_t k = 0; k < batch_size; ++k) {
        const auto& [u, pos] = index.edges[uniform_index(rng, index.edges.size())];
        const auto& owned = index.user_items[u];
        if (owned.size() >= index.n_items)
            throw UserSaturated("sample_batch: user " + std::to_string(u) +
                                " interacts with every item");
        index_t neg;
        do {
            neg = static_cast<index_t>(uniform_index(rng, index.n_items));
        } while (std::binary_search(owned.begin(), owned.end(), neg));
        batch.triples.emplace_back(u, pos, neg);
    }
    return batch;
}

inline TrainBatch sample_batch(const std::vector<std::pair<index_t, index_t>>& train_edges,
                               std::size_t n_users, std::size_t n_items, std::size_t batch_size,
                               Rng& rng) {
    return sample_batch(SamplerIndex(train_edges, n_users, n_items), batch_size, rng);
}

struct EpochLog {
    std::size_t epoch = 0;
    double loss = 0.0;
    double val_recall = 0.0;
    double val_ndcg = 0.0;
    double seconds = 0.0;
    bool best = false;
};

struct TrainResult {
    Checkpoint best;
    double best_val_recall = 0.0;
    std::vector<EpochLog> log;
};

/// Xavier-uniform embeddings (limit sqrt(6 / (N + d))) and zero locality
/// weights, giving every node the sigmoid's neutral alpha = 0.5.
inline ModelParams init_params(std::size_t n_nodes, const TrainConfig& config, Rng& rng) {
    ModelParams params;
    params.embeddings = DenseMatrix(n_nodes, config.dim);
    const double limit =
        std::sqrt(6.0 / static_cast<double>(n_nodes + config.dim));
    for (double& v : params.embeddings.values) v = uniform_symmetric(rng, limit);
    if (config.model == ModelKind::Dgcf)
        params.la_weights.assign(config.layers, std::vector<double>(n_nodes, 0.0));
    return params;
}

namespace detail {

inline ForwardTrace run_forward(const ModelParams& params, const PropagationOperator& op,
                                const TrainConfig& config) {
    switch (config.model) {
        case ModelKind::Dgcf:
            return dgcf_forward(params, op, config.layers, config.final_layer_only);
        case ModelKind::Lightgcn:
            return lightgcn_forward(params, op.matrix, config.layers, config.final_layer_only);
        default:
            return mf_forward(params);
    }
}

} // namespace detail

/// The fixed operator each model propagates over: L + L_c + I for DGCF, the
/// self-loop-free normalized adjacency for LightGCN, identity for MF.
inline PropagationOperator build_model_operator(const BipartiteGraph& g, const TrainConfig& config) {
    switch (config.model) {
        case ModelKind::Dgcf:
            return build_propagation(g, config.epsilon);
        case ModelKind::Lightgcn: {
            PropagationOperator op;
            op.matrix = sym_normalize(build_adjacency(g));
            return op;
        }
        default: {
            PropagationOperator op;
            op.matrix = identity_matrix(g.n_nodes());
            return op;
        }
    }
}

/// Full training loop: one positive triple per training interaction per
/// epoch, drop-edge resampled each epoch, mini-batch Adam, validation
/// Recall@K after every epoch, early stop after `patience` consecutive
/// non-improving validations. The initial parameters set the baseline, so a
/// run that never improves returns them.
inline TrainResult train(const DatasetSplits& splits, const TrainConfig& config) {
    config.validate();
    const BipartiteGraph& g = splits.graph;
    const std::size_t n_users = g.n_users;
    const std::size_t n_items = g.n_items;

    Rng rng = make_rng(config.seed);
    ModelParams params = init_params(g.n_nodes(), config, rng);
    AdamState adam = AdamState::like(params);
    const PropagationOperator op = build_model_operator(g, config);
    const SamplerIndex sampler(g.edges, n_users, n_items);
    const auto train_items = items_by_user(g.edges, n_users);
    const auto val_items = items_by_user(splits.val_edges, n_users);
    const bool with_la = config.model == ModelKind::Dgcf && config.layers > 0;

    const auto validate = [&](const ModelParams& snapshot) {
        const ForwardTrace trace = detail::run_forward(snapshot, op, config);
        const EvalReport report =
            recall_ndcg(trace.final, n_users, n_items, train_items, val_items, config.k_eval);
        return std::pair<double, double>{report.recall_at_k, report.ndcg_at_k};
    };

    TrainResult result;
    result.best.n_users = static_cast<std::uint32_t>(n_users);
    result.best.n_items = static_cast<std::uint32_t>(n_items);
    result.best.params = params;
    const auto [recall0, ndcg0] = validate(params);
    result.best_val_recall = recall0;
    result.log.push_back({0, std::numeric_limits<double>::quiet_NaN(), recall0, ndcg0, 0.0, true});

    const std::size_t interactions = g.edges.size();
    const std::size_t n_batches = (interactions + config.batch_size - 1) / config.batch_size;
    std::size_t adam_t = 0;
    std::size_t bad_streak = 0;
    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        const auto t_start = std::chrono::steady_clock::now();

        PropagationOperator epoch_op =
            config.drop_ratio > 0.0 ? drop_edges(op, config.drop_ratio, mix_seed(config.seed) + epoch)
                                    : op;
        const SparseMatrix epoch_op_t =
            (config.model == ModelKind::Mf || config.layers == 0) ? SparseMatrix{}
                                                                  : transpose(epoch_op.matrix);

        double interaction_loss = 0.0;
        std::size_t remaining = interactions;
        for (std::size_t b = 0; b < n_batches; ++b) {
            const std::size_t take = std::min(config.batch_size, remaining);
            remaining -= take;
            TrainBatch batch = sample_batch(sampler, take, rng);
            detail::BackwardResult back = detail::backward_sweep(
                params, &epoch_op.matrix, &epoch_op_t, with_la,
                (config.model == ModelKind::Mf) ? 0 : config.layers, batch, config.lambda, n_users,
                config.final_layer_only);
            interaction_loss += back.loss - config.lambda * param_sq_norm(params);
            adam_step(params, back.grads, adam, config.lr, ++adam_t);
        }
        const double epoch_loss = interaction_loss + config.lambda * param_sq_norm(params);

        const auto [val_recall, val_ndcg] = validate(params);
        const bool improved = val_recall > result.best_val_recall;
        if (improved) {
            result.best.params = params;
            result.best_val_recall = val_recall;
            bad_streak = 0;
        } else {
            ++bad_streak;
        }
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        result.log.push_back({epoch, epoch_loss, val_recall, val_ndcg, seconds, improved});
        if (bad_streak >= config.patience) break;
    }
    return result;
}

/// Training log as CSV (one line per epoch).
inline void write_training_log(const std::vector<EpochLog>& log, std::ostream& os) {
    os << "epoch,loss,val_recall,val_ndcg,epoch_seconds,best_flag\n";
    char buf[160];
    for (const auto& e : log) {
        std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.3f,%d\n", e.epoch, e.loss, e.val_recall,
                      e.val_ndcg, e.seconds, e.best ? 1 : 0);
        os << buf;
    }
}

} // namespace chprec
