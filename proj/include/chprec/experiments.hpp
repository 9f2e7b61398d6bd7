#pragma once

#include "chprec/data.hpp"
#include "chprec/eval.hpp"
#include "chprec/training.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <vector>

namespace chprec {

struct DepthResult {
    std::size_t depth = 0;
    double mean_test_recall = 0.0;
    std::vector<double> per_seed_recall;
};

/// Depth sweep with final-layer-only scoring: trains `repeats` seeds per
/// depth, averages test Recall@K, and reports the successive differences
/// Recall(L+1) - Recall(L). The mean absolute delta is the run's oscillation
/// amplitude.
struct LayerSweepResult {
    std::vector<DepthResult> depths;
    std::vector<double> deltas; // deltas[i] = recall(depths[i+1]) - recall(depths[i])
    double mean_abs_delta = 0.0;
};

inline LayerSweepResult layer_difference_experiment(const DatasetSplits& splits,
                                                    const TrainConfig& base_config,
                                                    const std::vector<std::size_t>& depths,
                                                    std::size_t repeats) {
    LayerSweepResult result;
    const auto train_items = items_by_user(splits.graph.edges, splits.graph.n_users);
    const auto test_items = items_by_user(splits.test_edges, splits.graph.n_users);
    for (std::size_t depth : depths) {
        DepthResult dr;
        dr.depth = depth;
        for (std::size_t r = 0; r < repeats; ++r) {
            TrainConfig config = base_config;
            config.layers = depth;
            config.final_layer_only = true;
            config.seed = mix_seed(base_config.seed + 0x5eed * r);
            const TrainResult trained = train(splits, config);
            const PropagationOperator op = build_model_operator(splits.graph, config);
            const ForwardTrace trace = [&] {
                switch (config.model) {
                    case ModelKind::Dgcf:
                        return dgcf_forward(trained.best.params, op, config.layers, true);
                    case ModelKind::Lightgcn:
                        return lightgcn_forward(trained.best.params, op.matrix, config.layers, true);
                    default:
                        return mf_forward(trained.best.params);
                }
            }();
            const EvalReport report = recall_ndcg(trace.final, splits.graph.n_users,
                                                  splits.graph.n_items, train_items, test_items,
                                                  config.k_eval);
            dr.per_seed_recall.push_back(report.recall_at_k);
            dr.mean_test_recall += report.recall_at_k;
        }
        dr.mean_test_recall /= static_cast<double>(repeats);
        result.depths.push_back(std::move(dr));
    }
    for (std::size_t i = 0; i + 1 < result.depths.size(); ++i)
        result.deltas.push_back(result.depths[i + 1].mean_test_recall -
                                result.depths[i].mean_test_recall);
    for (double d : result.deltas) result.mean_abs_delta += std::abs(d);
    if (!result.deltas.empty())
        result.mean_abs_delta /= static_cast<double>(result.deltas.size());
    return result;
}

inline void write_layer_sweep_csv(const LayerSweepResult& result, const char* model_name,
                                  std::ostream& os) {
    os << "model,depth,mean_test_recall,delta_from_prev,abs_delta\n";
    char buf[160];
    for (std::size_t i = 0; i < result.depths.size(); ++i) {
        const auto& d = result.depths[i];
        if (i == 0)
            std::snprintf(buf, sizeof buf, "%s,%zu,%.9g,,\n", model_name, d.depth,
                          d.mean_test_recall);
        else
            std::snprintf(buf, sizeof buf, "%s,%zu,%.9g,%.9g,%.9g\n", model_name, d.depth,
                          d.mean_test_recall, result.deltas[i - 1], std::abs(result.deltas[i - 1]));
        os << buf;
    }
}

} // namespace chprec
