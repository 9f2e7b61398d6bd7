#include "chprec/training.hpp"

#include "test_util.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

using namespace chprec;

namespace {

ModelParams random_params(Rng& rng, std::size_t n, std::size_t d, std::size_t layers) {
    ModelParams p;
    p.embeddings = DenseMatrix(n, d);
    for (double& v : p.embeddings.values) v = 2.0 * uniform_real(rng) - 1.0;
    p.la_weights.assign(layers, std::vector<double>(n));
    for (auto& w : p.la_weights)
        for (double& v : w) v = uniform_real(rng) - 0.5;
    return p;
}

double loss_of(const ModelParams& params, const PropagationOperator& op, const TrainConfig& config,
               const TrainBatch& batch, std::size_t n_users) {
    ForwardTrace trace;
    switch (config.model) {
        case ModelKind::Dgcf:
            trace = dgcf_forward(params, op, config.layers, config.final_layer_only);
            break;
        case ModelKind::Lightgcn:
            trace = lightgcn_forward(params, op.matrix, config.layers, config.final_layer_only);
            break;
        default:
            trace = mf_forward(params);
    }
    return bpr_loss(params, trace, batch, config.lambda, n_users);
}

/// Central finite differences over every coordinate of params.
void check_gradients(const ModelParams& params, const PropagationOperator& op,
                     const TrainConfig& config, const TrainBatch& batch, std::size_t n_users,
                     double max_rel_err) {
    const GradientSet grads = backward(params, op, batch, config.lambda, config, n_users);
    const double h = 1e-6;
    auto relative_error = [](double analytic, double numeric) {
        const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
        return std::abs(analytic - numeric) / denom;
    };

    ModelParams probe = params;
    for (std::size_t i = 0; i < probe.embeddings.values.size(); ++i) {
        const double saved = probe.embeddings.values[i];
        probe.embeddings.values[i] = saved + h;
        const double up = loss_of(probe, op, config, batch, n_users);
        probe.embeddings.values[i] = saved - h;
        const double down = loss_of(probe, op, config, batch, n_users);
        probe.embeddings.values[i] = saved;
        const double numeric = (up - down) / (2.0 * h);
        REQUIRE(relative_error(grads.d_embeddings.values[i], numeric) < max_rel_err);
    }
    for (std::size_t l = 0; l < grads.d_la.size(); ++l) {
        for (std::size_t i = 0; i < grads.d_la[l].size(); ++i) {
            const double saved = probe.la_weights[l][i];
            probe.la_weights[l][i] = saved + h;
            const double up = loss_of(probe, op, config, batch, n_users);
            probe.la_weights[l][i] = saved - h;
            const double down = loss_of(probe, op, config, batch, n_users);
            probe.la_weights[l][i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            REQUIRE(relative_error(grads.d_la[l][i], numeric) < max_rel_err);
        }
    }
}

DatasetSplits tiny_splits() {
    // 3 users x 4 items, enough edges that every node has signal
    DatasetSplits s;
    s.graph.n_users = 3;
    s.graph.n_items = 4;
    s.graph.edges = {{0, 0}, {0, 1}, {1, 1}, {1, 2}, {2, 2}, {2, 3}};
    s.val_edges = {{0, 2}, {1, 3}};
    s.test_edges = {{0, 3}, {2, 0}};
    return s;
}

} // namespace

TEST_CASE("bpr_loss") {
    Rng rng = make_rng(1);
    SECTION("equal scores give |batch| log 2 plus the regularizer") {
        ModelParams params;
        params.embeddings = DenseMatrix(3, 2, 0.5); // all rows identical -> margins 0
        const TrainBatch batch{{{0, 0, 1}, {0, 1, 0}}};
        const ForwardTrace trace = mf_forward(params);
        const double expected = 2.0 * std::log(2.0) + 0.01 * param_sq_norm(params);
        REQUIRE(bpr_loss(params, trace, batch, 0.01, 1) == Catch::Approx(expected).epsilon(1e-12));
    }
    SECTION("large margins drive the interaction loss to zero") {
        ModelParams params;
        params.embeddings = DenseMatrix(3, 1);
        params.embeddings.values = {100.0, 100.0, -100.0}; // u*i = 1e4, u*j = -1e4
        const TrainBatch batch{{{0, 0, 1}}};
        REQUIRE(bpr_loss(params, mf_forward(params), batch, 0.0, 1) == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("unit margin evaluates softplus(-1)") {
        ModelParams params;
        params.embeddings = DenseMatrix(3, 1);
        params.embeddings.values = {1.0, 1.0, 0.0}; // margin = 1
        const TrainBatch batch{{{0, 0, 1}}};
        REQUIRE(bpr_loss(params, mf_forward(params), batch, 0.0, 1) ==
                Catch::Approx(0.313262).margin(5e-7));
    }
    SECTION("numerically stable at extreme margins") {
        ModelParams params;
        params.embeddings = DenseMatrix(3, 1);
        params.embeddings.values = {100.0, -100.0, 100.0}; // margin = -2e4
        const TrainBatch batch{{{0, 0, 1}}};
        const double loss = bpr_loss(params, mf_forward(params), batch, 0.0, 1);
        REQUIRE(std::isfinite(loss));
        REQUIRE(loss == Catch::Approx(20000.0).epsilon(1e-9));
    }
}

TEST_CASE("backward") {
    SECTION("empty batch leaves only the regularizer gradient") {
        Rng rng = make_rng(2);
        const BipartiteGraph g = testutil::three_edge_graph();
        const PropagationOperator op = build_propagation(g, 0.0);
        const ModelParams params = random_params(rng, g.n_nodes(), 3, 2);
        TrainConfig config;
        config.layers = 2;
        config.lambda = 0.37;
        const GradientSet grads = backward(params, op, TrainBatch{}, config.lambda, config, g.n_users);
        for (std::size_t i = 0; i < params.embeddings.values.size(); ++i)
            REQUIRE(grads.d_embeddings.values[i] == 2.0 * 0.37 * params.embeddings.values[i]);
        for (std::size_t l = 0; l < 2; ++l)
            for (std::size_t i = 0; i < grads.d_la[l].size(); ++i)
                REQUIRE(grads.d_la[l][i] == 2.0 * 0.37 * params.la_weights[l][i]);
    }
    SECTION("lambda 0 and empty batch zero the locality gradient") {
        Rng rng = make_rng(3);
        const BipartiteGraph g = testutil::three_edge_graph();
        const PropagationOperator op = build_propagation(g, 0.0);
        const ModelParams params = random_params(rng, g.n_nodes(), 2, 2);
        TrainConfig config;
        config.layers = 2;
        const GradientSet grads = backward(params, op, TrainBatch{}, 0.0, config, g.n_users);
        for (const auto& w : grads.d_la)
            for (double v : w) REQUIRE(v == 0.0);
    }
    SECTION("matrix-factorization gradient matches the hand derivation") {
        Rng rng = make_rng(4);
        ModelParams params = random_params(rng, 4, 3, 0);
        TrainConfig config;
        config.model = ModelKind::Mf;
        config.layers = 0;
        const double lambda = 0.05;
        const TrainBatch batch{{{0, 0, 2}}}; // u=0, i=item0 (row 1), j=item2 (row 3)
        PropagationOperator unused;
        unused.matrix = identity_matrix(4);
        const GradientSet grads = backward(params, unused, batch, lambda, config, 1);

        auto row = [&](std::size_t r) { return params.embeddings.row(r); };
        double margin = 0.0;
        for (std::size_t c = 0; c < 3; ++c) margin += row(0)[c] * (row(1)[c] - row(3)[c]);
        const double s = sigmoid(-margin);
        for (std::size_t c = 0; c < 3; ++c) {
            const double expected = -s * (row(1)[c] - row(3)[c]) + 2.0 * lambda * row(0)[c];
            REQUIRE(grads.d_embeddings(0, c) == Catch::Approx(expected).margin(1e-12));
        }
    }
    SECTION("finite differences confirm the full gradient on random tiny instances") {
        Rng rng = make_rng(5);
        int done = 0;
        while (done < 25) {
            const std::size_t n_users = 2 + uniform_index(rng, 2);
            const std::size_t n_items = 2 + uniform_index(rng, 2);
            BipartiteGraph g = testutil::random_bipartite(rng, n_users, n_items, 0.6);
            if (g.n_nodes() > 6) continue;
            const std::size_t layers = uniform_index(rng, 3); // 0..2
            TrainConfig config;
            config.layers = layers;
            config.lambda = uniform_index(rng, 2) == 0 ? 0.0 : 0.02;
            config.final_layer_only = uniform_index(rng, 2) == 1;
            const bool with_cross = uniform_index(rng, 2) == 1;
            config.model = ModelKind::Dgcf;
            const PropagationOperator op =
                with_cross ? build_propagation(g, 0.0) : [&] {
                    PropagationOperator p;
                    p.matrix = sparse_add(sym_normalize(build_adjacency(g)),
                                          identity_matrix(g.n_nodes()));
                    p.includes_identity = true;
                    return p;
                }();
            const ModelParams params = random_params(rng, g.n_nodes(), 1 + uniform_index(rng, 3), layers);
            TrainBatch batch;
            for (int t = 0; t < 3; ++t) {
                const auto& [u, i] = g.edges[uniform_index(rng, g.edges.size())];
                index_t j = static_cast<index_t>(uniform_index(rng, n_items));
                bool owned = false;
                for (const auto& [eu, ei] : g.edges) owned = owned || (eu == u && ei == j);
                if (owned) continue;
                batch.triples.emplace_back(u, i, j);
            }
            check_gradients(params, op, config, batch, n_users, 1e-4);
            ++done;
        }
    }
    SECTION("drop-edge operators (asymmetric) still differentiate exactly") {
        Rng rng = make_rng(6);
        BipartiteGraph g = testutil::random_bipartite(rng, 3, 3, 0.6);
        const PropagationOperator op = drop_edges(build_propagation(g, 0.0), 0.3, 99);
        TrainConfig config;
        config.layers = 2;
        config.lambda = 0.01;
        const ModelParams params = random_params(rng, g.n_nodes(), 2, 2);
        TrainBatch batch{{{0, 0, 2}, {1, 1, 0}}};
        check_gradients(params, op, config, batch, 3, 1e-4);
    }
}

TEST_CASE("adam_step") {
    SECTION("zero gradient leaves parameters unchanged") {
        ModelParams params;
        params.embeddings = DenseMatrix(2, 2, 0.7);
        AdamState state = AdamState::like(params);
        GradientSet grads;
        grads.d_embeddings = DenseMatrix(2, 2, 0.0);
        adam_step(params, grads, state, 0.1, 1);
        for (double v : params.embeddings.values) REQUIRE(v == 0.7);
    }
    SECTION("first step with unit gradient moves by about -lr") {
        ModelParams params;
        params.embeddings = DenseMatrix(1, 1, 2.0);
        AdamState state = AdamState::like(params);
        GradientSet grads;
        grads.d_embeddings = DenseMatrix(1, 1, 1.0);
        adam_step(params, grads, state, 1e-3, 1);
        REQUIRE(params.embeddings.values[0] == Catch::Approx(2.0 - 1e-3).margin(1e-9));
    }
    SECTION("constant gradient drives per-step delta toward lr") {
        ModelParams params;
        params.embeddings = DenseMatrix(1, 1, 0.0);
        AdamState state = AdamState::like(params);
        GradientSet grads;
        grads.d_embeddings = DenseMatrix(1, 1, 3.0);
        double prev = params.embeddings.values[0];
        double delta = 0.0;
        for (std::size_t t = 1; t <= 500; ++t) {
            adam_step(params, grads, state, 1e-2, t);
            delta = prev - params.embeddings.values[0];
            prev = params.embeddings.values[0];
        }
        REQUIRE(delta == Catch::Approx(1e-2).epsilon(0.05));
    }
    SECTION("moments decay toward zero once the gradient stops") {
        ModelParams params;
        params.embeddings = DenseMatrix(1, 1, 0.0);
        AdamState state = AdamState::like(params);
        GradientSet pulse;
        pulse.d_embeddings = DenseMatrix(1, 1, 1.0);
        adam_step(params, pulse, state, 1e-3, 1);
        const double m1 = state.m_emb.values[0];
        GradientSet zero;
        zero.d_embeddings = DenseMatrix(1, 1, 0.0);
        for (std::size_t t = 2; t <= 50; ++t) adam_step(params, zero, state, 1e-3, t);
        REQUIRE(std::abs(state.m_emb.values[0]) < std::abs(m1) * 0.01);
    }
}

TEST_CASE("sample_batch") {
    SECTION("forced negative when only one other item exists") {
        const std::vector<std::pair<index_t, index_t>> edges = {{0, 0}};
        Rng rng = make_rng(7);
        const TrainBatch batch = sample_batch(edges, 1, 2, 10, rng);
        REQUIRE(batch.triples.size() == 10);
        for (const auto& [u, i, j] : batch.triples) {
            REQUIRE(u == 0);
            REQUIRE(i == 0);
            REQUIRE(j == 1);
        }
    }
    SECTION("batch size is honored exactly") {
        const auto s = tiny_splits();
        Rng rng = make_rng(8);
        const SamplerIndex index(s.graph.edges, s.graph.n_users, s.graph.n_items);
        REQUIRE(sample_batch(index, 17, rng).triples.size() == 17);
    }
    SECTION("positive draws are uniform over edges (3-sigma check)") {
        const std::vector<std::pair<index_t, index_t>> edges = {{0, 0}, {1, 1}, {2, 2}};
        const SamplerIndex index(edges, 3, 4);
        Rng rng = make_rng(9);
        const std::size_t draws = 100000;
        std::vector<std::size_t> counts(3, 0);
        const TrainBatch batch = sample_batch(index, draws, rng);
        for (const auto& [u, i, j] : batch.triples) ++counts[u];
        const double expected = static_cast<double>(draws) / 3.0;
        const double sigma = std::sqrt(static_cast<double>(draws) * (1.0 / 3.0) * (2.0 / 3.0));
        for (std::size_t c : counts)
            REQUIRE(std::abs(static_cast<double>(c) - expected) < 3.0 * sigma);
    }
    SECTION("negatives never collide with the user's training items") {
        const auto s = tiny_splits();
        const SamplerIndex index(s.graph.edges, s.graph.n_users, s.graph.n_items);
        const auto train_items = items_by_user(s.graph.edges, s.graph.n_users);
        Rng rng = make_rng(10);
        const TrainBatch batch = sample_batch(index, 500, rng);
        for (const auto& [u, i, j] : batch.triples) {
            REQUIRE(std::binary_search(train_items[u].begin(), train_items[u].end(), i));
            REQUIRE_FALSE(std::binary_search(train_items[u].begin(), train_items[u].end(), j));
        }
    }
    SECTION("saturated user throws") {
        const std::vector<std::pair<index_t, index_t>> edges = {{0, 0}, {0, 1}};
        Rng rng = make_rng(11);
        REQUIRE_THROWS_AS(sample_batch(edges, 1, 2, 5, rng), UserSaturated);
    }
}

TEST_CASE("one descent step on a fixed batch lowers the loss") {
    Rng rng = make_rng(12);
    const auto s = tiny_splits();
    const PropagationOperator op = build_propagation(s.graph, 0.0);
    TrainConfig config;
    config.layers = 2;
    config.lambda = 0.01;
    ModelParams params = random_params(rng, s.graph.n_nodes(), 3, 2);
    TrainBatch batch{{{0, 0, 3}, {1, 2, 0}, {2, 3, 1}}};

    const double before = loss_of(params, op, config, batch, s.graph.n_users);
    const GradientSet grads = backward(params, op, batch, config.lambda, config, s.graph.n_users);
    const double step = 1e-4;
    for (std::size_t i = 0; i < params.embeddings.values.size(); ++i)
        params.embeddings.values[i] -= step * grads.d_embeddings.values[i];
    for (std::size_t l = 0; l < params.la_weights.size(); ++l)
        for (std::size_t i = 0; i < params.la_weights[l].size(); ++i)
            params.la_weights[l][i] -= step * grads.d_la[l][i];
    const double after = loss_of(params, op, config, batch, s.graph.n_users);
    REQUIRE(after < before);
}

TEST_CASE("train") {
    SECTION("negligible learning rate with patience 1 stops after one epoch") {
        const auto s = tiny_splits();
        TrainConfig config;
        config.dim = 4;
        config.layers = 1;
        config.lr = 1e-300; // frozen for all practical purposes (lr must be > 0)
        config.lambda = 0.0;
        config.patience = 1;
        config.max_epochs = 50;
        config.batch_size = 4;
        config.seed = 3;
        config.k_eval = 2;
        const TrainResult result = train(s, config);
        REQUIRE(result.log.size() == 2); // epoch 0 baseline + 1 non-improving epoch

        Rng rng = make_rng(config.seed);
        const ModelParams fresh = init_params(s.graph.n_nodes(), config, rng);
        REQUIRE(result.best.params.embeddings.values == fresh.embeddings.values);
    }
    SECTION("identical seeds give identical logs and checkpoints") {
        const auto s = tiny_splits();
        TrainConfig config;
        config.dim = 4;
        config.layers = 2;
        config.lr = 0.05;
        config.lambda = 0.001;
        config.drop_ratio = 0.2;
        config.patience = 3;
        config.max_epochs = 8;
        config.batch_size = 3;
        config.seed = 77;
        config.k_eval = 2;
        const TrainResult a = train(s, config);
        const TrainResult b = train(s, config);
        REQUIRE(a.log.size() == b.log.size());
        for (std::size_t e = 0; e < a.log.size(); ++e) {
            if (e > 0) REQUIRE(a.log[e].loss == b.log[e].loss); // epoch 0 logs loss = nan
            REQUIRE(a.log[e].val_recall == b.log[e].val_recall);
            REQUIRE(a.log[e].val_ndcg == b.log[e].val_ndcg);
            REQUIRE(a.log[e].best == b.log[e].best);
        }
        REQUIRE(a.best.params.embeddings.values == b.best.params.embeddings.values);
        REQUIRE(a.best.params.la_weights == b.best.params.la_weights);
    }
    SECTION("training improves validation recall on a learnable toy problem") {
        // two user blocks with disjoint item tastes
        DatasetSplits s;
        s.graph.n_users = 6;
        s.graph.n_items = 8;
        for (index_t u = 0; u < 3; ++u)
            for (index_t i = 0; i < 4; ++i)
                if ((u + i) % 3 != 0) s.graph.edges.emplace_back(u, i);
        for (index_t u = 3; u < 6; ++u)
            for (index_t i = 4; i < 8; ++i)
                if ((u + i) % 3 != 0) s.graph.edges.emplace_back(u, i);
        std::sort(s.graph.edges.begin(), s.graph.edges.end());
        s.val_edges = {{0, 0}, {1, 1}, {3, 4}, {4, 7}};
        for (const auto& e : s.val_edges)
            s.graph.edges.erase(std::remove(s.graph.edges.begin(), s.graph.edges.end(), e),
                                s.graph.edges.end());
        s.test_edges = {};
        TrainConfig config;
        config.dim = 8;
        config.layers = 1;
        config.lr = 0.05;
        config.lambda = 1e-4;
        config.patience = 10;
        config.max_epochs = 60;
        config.batch_size = 8;
        config.seed = 5;
        config.k_eval = 3;
        const TrainResult result = train(s, config);
        REQUIRE(result.best_val_recall > result.log.front().val_recall);
        REQUIRE(result.best_val_recall > 0.4);
    }
}
