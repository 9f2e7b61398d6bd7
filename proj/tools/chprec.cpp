// chprec command-line interface: dataset preparation, training, evaluation
// and the random-walk oscillation laboratory.

#include "chprec/cli.hpp"
#include "chprec/data.hpp"
#include "chprec/errors.hpp"
#include "chprec/eval.hpp"
#include "chprec/experiments.hpp"
#include "chprec/graph.hpp"
#include "chprec/model.hpp"
#include "chprec/oscillation.hpp"
#include "chprec/training.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace chprec;

namespace {

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

/// Expands `--config file` into the file's `key = value` lines as
/// `--key=value` tokens, inserted right after the subcommand. Explicit flags
/// come later in argv and therefore override file values (all options take
/// the last occurrence).
std::vector<std::string> expand_config_args(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    std::size_t config_at = 0;
    std::string config_path;
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            config_at = i;
            config_path = args[i + 1];
            args.erase(args.begin() + i, args.begin() + i + 2);
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            config_at = i;
            config_path = args[i].substr(9);
            args.erase(args.begin() + i);
            break;
        }
    }
    if (config_path.empty()) return args;
    if (args.size() < 2 || args[1].rfind("-", 0) == 0)
        throw ConfigError("--config requires a subcommand");

    std::ifstream is(config_path);
    if (!is) throw ConfigError("cannot open config file " + config_path);
    std::vector<std::string> expanded;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
        expanded.push_back("--" + key + "=" + value);
    }
    (void)config_at;
    args.insert(args.begin() + 2, expanded.begin(), expanded.end());
    return args;
}

struct CommonOptions {
    std::string dataset;
    std::string out_dir = "out";
    std::string splits_path;
    std::string config_file; // consumed by expand_config_args, listed for --help
    TrainConfig config;
    std::string model_name = "dgcf";

    CLI::Option* layers_opt = nullptr;
    CLI::Option* dim_opt = nullptr;
    CLI::Option* lr_opt = nullptr;
    CLI::Option* lambda_opt = nullptr;
    CLI::Option* epsilon_opt = nullptr;
    CLI::Option* drop_opt = nullptr;
};

CLI::Option* last_wins(CLI::Option* opt) {
    return opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
}

void add_common_options(CLI::App* cmd, CommonOptions& o, bool with_splits = true) {
    last_wins(cmd->add_option("--config", o.config_file,
                              "read options from a key = value file (flags override)"));
    last_wins(cmd->add_option(
        "--dataset", o.dataset,
        "dataset preset for default hyperparameters (ml100k, ml1m, amazon, gowalla)"));
    last_wins(cmd->add_option("--out-dir", o.out_dir, "directory for outputs and the run manifest"));
    if (with_splits)
        last_wins(cmd->add_option("--splits", o.splits_path, "processed splits file"))->required();
    o.layers_opt = last_wins(cmd->add_option("--layers", o.config.layers, "propagation layers"));
    o.dim_opt = last_wins(cmd->add_option("--dim", o.config.dim, "embedding dimension"));
    o.lr_opt = last_wins(cmd->add_option("--lr", o.config.lr, "Adam learning rate"));
    o.lambda_opt = last_wins(cmd->add_option("--lambda", o.config.lambda, "L2 regularization factor"));
    o.epsilon_opt =
        last_wins(cmd->add_option("--epsilon", o.config.epsilon, "cross-hop filter threshold"));
    o.drop_opt =
        last_wins(cmd->add_option("--drop-ratio", o.config.drop_ratio, "drop-edge ratio per epoch"));
    last_wins(cmd->add_option("--batch-size", o.config.batch_size, "BPR triples per Adam step"));
    last_wins(cmd->add_option("--epochs", o.config.max_epochs, "epoch cap"));
    last_wins(cmd->add_option("--patience", o.config.patience,
                              "non-improving validations before stopping"));
    last_wins(cmd->add_option("--seed", o.config.seed, "master RNG seed"));
    last_wins(cmd->add_option("--k", o.config.k_eval, "K for Recall@K / NDCG@K"));
    cmd->add_flag("--final-layer-only", o.config.final_layer_only,
                  "score with the last layer's embeddings instead of the layer mean");
    last_wins(cmd->add_option("--model", o.model_name, "dgcf, lightgcn or mf")
                  ->check(CLI::IsMember({"dgcf", "lightgcn", "mf"})));
}

/// Dataset presets fill in whatever the user left unset.
void apply_preset(CommonOptions& o) {
    if (o.dataset.empty()) return;
    const auto it = dataset_presets().find(o.dataset);
    if (it == dataset_presets().end())
        throw ConfigError("unknown dataset '" + o.dataset + "'");
    const DatasetPreset& p = it->second;
    if (o.layers_opt && o.layers_opt->count() == 0) o.config.layers = p.layers;
    if (o.dim_opt && o.dim_opt->count() == 0) o.config.dim = p.dim;
    if (o.lr_opt && o.lr_opt->count() == 0) o.config.lr = p.lr;
    if (o.lambda_opt && o.lambda_opt->count() == 0) o.config.lambda = p.lambda;
    if (o.epsilon_opt && o.epsilon_opt->count() == 0) o.config.epsilon = p.epsilon;
    if (o.drop_opt && o.drop_opt->count() == 0) o.config.drop_ratio = p.drop_ratio;
}

void finalize_config(CommonOptions& o) {
    apply_preset(o);
    o.config.model = model_kind_from_string(o.model_name);
    if (o.config.model == ModelKind::Mf) o.config.layers = 0;
    o.config.validate();
}

RunManifest make_manifest(const std::string& command, const CommonOptions& o) {
    RunManifest m;
    m.command = command;
    m.seed = o.config.seed;
    m.config = {
        {"model", o.model_name},
        {"layers", std::to_string(o.config.layers)},
        {"dim", std::to_string(o.config.dim)},
        {"lr", format_double(o.config.lr)},
        {"lambda", format_double(o.config.lambda)},
        {"epsilon", format_double(o.config.epsilon)},
        {"drop-ratio", format_double(o.config.drop_ratio)},
        {"batch-size", std::to_string(o.config.batch_size)},
        {"epochs", std::to_string(o.config.max_epochs)},
        {"patience", std::to_string(o.config.patience)},
        {"k", std::to_string(o.config.k_eval)},
        {"final-layer-only", o.config.final_layer_only ? "1" : "0"},
    };
    if (!o.dataset.empty()) m.config.emplace_back("dataset", o.dataset);
    if (!o.splits_path.empty()) m.paths.emplace_back("splits", o.splits_path);
    m.paths.emplace_back("out-dir", o.out_dir);
    return m;
}

std::ofstream open_output(const fs::path& path) {
    std::ofstream os(path);
    if (!os) throw Error("cannot open output file " + path.string());
    return os;
}

ForwardTrace forward_for(const ModelParams& params, const PropagationOperator& op,
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

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

int cmd_prepare_data(const std::string& input, const std::string& format_name, double threshold,
                     std::size_t core, CommonOptions& o) {
    RatingsFormat format = RatingsFormat::TabSeparated;
    if (format_name == "ml1m" || format_name == "double-colon")
        format = RatingsFormat::DoubleColonSeparated;
    else if (format_name != "tsv" && format_name != "tab")
        throw ConfigError("unknown ratings format '" + format_name + "'");

    const auto raws = load_ratings(input, format);
    std::cout << "loaded " << raws.size() << " interactions from " << input << "\n";
    const PreprocessResult pre = preprocess(raws, threshold, core);
    std::cout << "kept " << pre.graph.edges.size() << " interactions over " << pre.graph.n_users
              << " users and " << pre.graph.n_items << " items\n";
    const DatasetSplits splits = split(pre, {0.7, 0.1, 0.2}, o.config.seed);
    std::cout << "split into " << splits.graph.edges.size() << " train / " << splits.val_edges.size()
              << " val / " << splits.test_edges.size() << " test\n";
    if (!splits.degenerate_users.empty())
        std::cout << "warning: " << splits.degenerate_users.size()
                  << " users lost every training interaction in the split\n";

    fs::create_directories(o.out_dir);
    const fs::path out = fs::path(o.out_dir) / "splits.txt";
    save_splits(splits, out.string());
    std::cout << "wrote " << out.string() << "\n";

    RunManifest manifest = make_manifest("prepare-data", o);
    manifest.config.emplace_back("rating-threshold", format_double(threshold));
    manifest.config.emplace_back("core", std::to_string(core));
    manifest.config.emplace_back("format", format_name);
    manifest.paths.emplace_back("input", input);
    manifest.write((fs::path(o.out_dir) / "manifest.txt").string());
    return 0;
}

int cmd_train(CommonOptions& o) {
    const DatasetSplits splits = load_splits(o.splits_path);
    const TrainResult result = train(splits, o.config);

    fs::create_directories(o.out_dir);
    save_checkpoint(result.best, (fs::path(o.out_dir) / "checkpoint.bin").string());
    auto log = open_output(fs::path(o.out_dir) / "training_log.csv");
    write_training_log(result.log, log);
    make_manifest("train", o).write((fs::path(o.out_dir) / "manifest.txt").string());

    std::cout << "best validation Recall@" << o.config.k_eval << " = " << result.best_val_recall
              << " after " << result.log.size() - 1 << " epochs\n";
    std::cout << "wrote " << (fs::path(o.out_dir) / "checkpoint.bin").string() << "\n";
    return 0;
}

int cmd_evaluate(const std::string& checkpoint_path, std::size_t density_group_count,
                 bool use_val, CommonOptions& o) {
    const DatasetSplits splits = load_splits(o.splits_path);
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    if (ckpt.n_users != splits.graph.n_users || ckpt.n_items != splits.graph.n_items)
        throw FormatError("checkpoint and splits disagree on the node counts");
    // DGCF checkpoints carry their layer count as locality vectors; the
    // baselines rely on --layers because they store none.
    if (o.config.model == ModelKind::Dgcf) o.config.layers = ckpt.params.la_weights.size();

    const PropagationOperator op = build_model_operator(splits.graph, o.config);
    const ForwardTrace trace = forward_for(ckpt.params, op, o.config);
    const auto train_items = items_by_user(splits.graph.edges, splits.graph.n_users);
    const auto eval_edges = use_val ? splits.val_edges : splits.test_edges;
    const auto target_items = items_by_user(eval_edges, splits.graph.n_users);
    EvalReport report = recall_ndcg(trace.final, splits.graph.n_users, splits.graph.n_items,
                                    train_items, target_items, o.config.k_eval);

    fs::create_directories(o.out_dir);
    {
        auto os = open_output(fs::path(o.out_dir) / "metrics.csv");
        char buf[160];
        os << "metric,k,value\n";
        std::snprintf(buf, sizeof buf, "recall,%zu,%.9g\nndcg,%zu,%.9g\n", o.config.k_eval,
                      report.recall_at_k, o.config.k_eval, report.ndcg_at_k);
        os << buf;
    }
    {
        auto os = open_output(fs::path(o.out_dir) / "per_user.csv");
        os << "user,recall,ndcg\n";
        char buf[96];
        for (const auto& m : report.per_user) {
            std::snprintf(buf, sizeof buf, "%u,%.9g,%.9g\n", m.user, m.recall, m.ndcg);
            os << buf;
        }
    }
    if (density_group_count > 0) {
        std::vector<std::size_t> train_counts(splits.graph.n_users, 0);
        for (const auto& [u, i] : splits.graph.edges) ++train_counts[u];
        report.groups = density_groups(report.per_user, train_counts, density_group_count);
        auto os = open_output(fs::path(o.out_dir) / "groups.csv");
        os << "boundary,n_users,recall,ndcg\n";
        char buf[96];
        for (const auto& g : *report.groups) {
            std::snprintf(buf, sizeof buf, "<%zu,%zu,%.9g,%.9g\n", g.boundary, g.n_users, g.recall,
                          g.ndcg);
            os << buf;
        }
    }
    RunManifest manifest = make_manifest("evaluate", o);
    manifest.paths.emplace_back("checkpoint", checkpoint_path);
    manifest.config.emplace_back("eval-split", use_val ? "val" : "test");
    manifest.config.emplace_back("density-groups", std::to_string(density_group_count));
    manifest.write((fs::path(o.out_dir) / "manifest.txt").string());

    std::cout << "Recall@" << o.config.k_eval << " = " << report.recall_at_k << ", NDCG@"
              << o.config.k_eval << " = " << report.ndcg_at_k << " over " << report.per_user.size()
              << " users\n";
    return 0;
}

int cmd_analyze_oscillation(const std::string& graph_name, std::size_t max_steps, double tol,
                            std::size_t bound_k, bool augment, CommonOptions& o) {
    SparseMatrix adjacency;
    std::size_t n_users = 0;
    if (!o.splits_path.empty()) {
        const DatasetSplits splits = load_splits(o.splits_path);
        adjacency = build_adjacency(splits.graph);
        n_users = splits.graph.n_users;
    } else if (graph_name == "k11") {
        adjacency = csr_from_coo({{0, 1, 1.0}, {1, 0, 1.0}}, 2, 2);
        n_users = 1;
    } else if (graph_name == "three-edge") {
        BipartiteGraph g;
        g.n_users = 2;
        g.n_items = 2;
        g.edges = {{0, 0}, {0, 1}, {1, 1}};
        adjacency = build_adjacency(g);
        n_users = 2;
    } else if (graph_name == "star") {
        BipartiteGraph g;
        g.n_users = 1;
        g.n_items = 3;
        g.edges = {{0, 0}, {0, 1}, {0, 2}};
        adjacency = build_adjacency(g);
        n_users = 1;
    } else {
        throw ConfigError("unknown graph '" + graph_name + "' (expected k11, three-edge or star)");
    }

    if (augment) {
        SparseMatrix c = spgemm(adjacency, adjacency);
        for (double& v : c.values) v = 1.0;
        adjacency = sparse_add(adjacency, c);
    }

    DistributionVector x0;
    x0.values.assign(adjacency.n_rows, 0.0);
    x0.values[0] = 1.0;

    const RandomWalkTrace trace = detect_oscillation(adjacency, x0, max_steps, tol);
    fs::create_directories(o.out_dir);
    {
        auto os = open_output(fs::path(o.out_dir) / "oscillation.csv");
        os << "step,parity,dist_to_even_limit,dist_to_odd_limit\n";
        char buf[96];
        for (std::size_t t = 0; t < trace.steps.size(); ++t) {
            std::snprintf(buf, sizeof buf, "%zu,%s,%.9g,%.9g\n", t, t % 2 == 0 ? "even" : "odd",
                          l1_distance(trace.steps[t].values, trace.even_limit->values),
                          l1_distance(trace.steps[t].values, trace.odd_limit->values));
            os << buf;
        }
    }
    {
        auto os = open_output(fs::path(o.out_dir) / "bound_report.txt");
        os << "oscillating = " << (trace.oscillating ? "yes" : "no") << '\n';
        os << "amplitude = " << format_double(trace.amplitude) << '\n';
        if (!augment) {
            bool bipartite = true;
            double lhs = 0.0, bound = 0.0;
            try {
                std::tie(lhs, bound) = oscillation_bound(adjacency, x0, bound_k, n_users);
            } catch (const NotBipartite&) {
                bipartite = false;
            }
            if (bipartite) {
                os << "bound_k = " << bound_k << '\n';
                os << "lhs = " << format_double(lhs) << '\n';
                os << "bound = " << format_double(bound) << '\n';
                os << "holds = " << (lhs <= bound + 1e-12 ? "yes" : "no") << '\n';
            } else {
                os << "bound skipped: graph is not bipartite\n";
            }
        } else {
            os << "bound skipped: augmented graph is not bipartite\n";
        }
    }
    RunManifest manifest = make_manifest("analyze-oscillation", o);
    manifest.config.emplace_back("graph", o.splits_path.empty() ? graph_name : "dataset");
    manifest.config.emplace_back("max-steps", std::to_string(max_steps));
    manifest.config.emplace_back("tol", format_double(tol));
    manifest.config.emplace_back("bound-k", std::to_string(bound_k));
    manifest.config.emplace_back("augment", augment ? "1" : "0");
    manifest.write((fs::path(o.out_dir) / "manifest.txt").string());

    std::cout << (trace.oscillating ? "oscillating" : "not oscillating") << ", amplitude "
              << trace.amplitude << " after " << trace.steps.size() - 1 << " steps\n";
    return 0;
}

int cmd_layer_sweep(const std::string& depths_csv, std::size_t repeats,
                    const std::string& models_csv, CommonOptions& o) {
    std::vector<std::size_t> depths;
    {
        std::istringstream is(depths_csv);
        std::string tok;
        while (std::getline(is, tok, ',')) depths.push_back(std::stoul(tok));
    }
    if (depths.empty()) throw ConfigError("layer-sweep: no depths given");
    for (std::size_t i = 1; i < depths.size(); ++i)
        if (depths[i] <= depths[i - 1]) throw ConfigError("layer-sweep: depths must be ascending");

    const DatasetSplits splits = load_splits(o.splits_path);
    fs::create_directories(o.out_dir);
    auto os = open_output(fs::path(o.out_dir) / "layer_sweep.csv");
    os << "model,depth,mean_test_recall,delta_from_prev,abs_delta\n";

    std::istringstream models(models_csv);
    std::string model_name;
    while (std::getline(models, model_name, ',')) {
        TrainConfig config = o.config;
        config.model = model_kind_from_string(model_name);
        const LayerSweepResult result = layer_difference_experiment(splits, config, depths, repeats);
        char buf[160];
        for (std::size_t i = 0; i < result.depths.size(); ++i) {
            const auto& d = result.depths[i];
            if (i == 0)
                std::snprintf(buf, sizeof buf, "%s,%zu,%.9g,,\n", model_name.c_str(), d.depth,
                              d.mean_test_recall);
            else
                std::snprintf(buf, sizeof buf, "%s,%zu,%.9g,%.9g,%.9g\n", model_name.c_str(),
                              d.depth, d.mean_test_recall, result.deltas[i - 1],
                              std::abs(result.deltas[i - 1]));
            os << buf;
        }
        std::cout << model_name << ": mean |delta| = " << result.mean_abs_delta << "\n";
    }
    RunManifest manifest = make_manifest("layer-sweep", o);
    manifest.config.emplace_back("depths", depths_csv);
    manifest.config.emplace_back("repeats", std::to_string(repeats));
    manifest.config.emplace_back("models", models_csv);
    manifest.write((fs::path(o.out_dir) / "manifest.txt").string());
    return 0;
}

int cmd_export_patterns(const std::string& checkpoint_path, std::size_t window, std::size_t row0,
                        std::size_t col0, CommonOptions& o) {
    const DatasetSplits splits = load_splits(o.splits_path);
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    if (ckpt.params.la_weights.empty())
        throw LayerCountMismatch("export-patterns: checkpoint has no locality layers");

    const SparseMatrix a = build_adjacency(splits.graph);
    const SparseMatrix direct_plus_cross =
        sparse_add(sym_normalize(a), cross_hop_matrix(a, o.config.epsilon));
    const auto windows = propagation_patterns(ckpt.params, direct_plus_cross, row0, col0, window);

    fs::create_directories(o.out_dir);
    PropagationOperator op = build_propagation(splits.graph, o.config.epsilon);
    export_operator(op, (fs::path(o.out_dir) / "operator.txt").string());
    for (std::size_t l = 0; l < windows.size(); ++l) {
        auto os = open_output(fs::path(o.out_dir) / ("pattern_layer" + std::to_string(l + 1) + ".csv"));
        char buf[48];
        for (std::size_t r = 0; r < window; ++r) {
            for (std::size_t c = 0; c < window; ++c) {
                std::snprintf(buf, sizeof buf, "%.9g%c", windows[l](r, c), c + 1 == window ? '\n' : ',');
                os << buf;
            }
        }
    }
    RunManifest manifest = make_manifest("export-patterns", o);
    manifest.paths.emplace_back("checkpoint", checkpoint_path);
    manifest.config.emplace_back("window", std::to_string(window));
    manifest.config.emplace_back("row0", std::to_string(row0));
    manifest.config.emplace_back("col0", std::to_string(col0));
    manifest.write((fs::path(o.out_dir) / "manifest.txt").string());
    std::cout << "wrote " << windows.size() << " pattern windows and operator.txt\n";
    return 0;
}

int cmd_select_epsilon(const std::string& grid_csv, std::size_t time_epochs, CommonOptions& o) {
    std::vector<double> grid;
    {
        std::istringstream is(grid_csv);
        std::string tok;
        while (std::getline(is, tok, ',')) grid.push_back(std::stod(tok));
    }
    const DatasetSplits splits = load_splits(o.splits_path);
    const SparseMatrix a = build_adjacency(splits.graph);
    const double chosen = select_epsilon(a, grid);

    fs::create_directories(o.out_dir);
    auto os = open_output(fs::path(o.out_dir) / "epsilon_report.csv");
    os << "epsilon,n_cross,n_direct,ratio,selected\n";
    const double n_direct = static_cast<double>(a.nnz());
    for (double eps : grid) {
        const double n_cross = static_cast<double>(cross_hop_matrix(a, eps).nnz());
        const double ratio = (n_cross == 0.0) ? std::numeric_limits<double>::infinity()
                                              : std::max(n_cross, n_direct) / std::min(n_cross, n_direct);
        char buf[128];
        std::snprintf(buf, sizeof buf, "%.9g,%.0f,%.0f,%.9g,%d\n", eps, n_cross, n_direct, ratio,
                      eps == chosen ? 1 : 0);
        os << buf;
        if (time_epochs > 0) {
            TrainConfig config = o.config;
            config.epsilon = eps;
            config.max_epochs = time_epochs;
            config.patience = time_epochs + 1; // never stop early while timing
            const auto t0 = std::chrono::steady_clock::now();
            train(splits, config);
            const double secs =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() /
                static_cast<double>(time_epochs);
            std::cout << "epsilon " << eps << ": " << secs << " s/epoch\n";
        }
    }
    RunManifest manifest = make_manifest("select-epsilon", o);
    manifest.config.emplace_back("grid", grid_csv);
    manifest.config.emplace_back("time-epochs", std::to_string(time_epochs));
    manifest.write((fs::path(o.out_dir) / "manifest.txt").string());
    std::cout << "selected epsilon = " << chosen << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"chprec: graph collaborative filtering with cross-hop propagation"};
    app.require_subcommand(1);

    // prepare-data
    auto* prep = app.add_subcommand("prepare-data", "load, filter, split and save a ratings file");
    CommonOptions prep_opts;
    std::string input, format_name = "tsv";
    double rating_threshold = 1.0;
    std::size_t core = 1;
    add_common_options(prep, prep_opts, false);
    last_wins(prep->add_option("--input", input, "raw ratings file"))->required();
    auto* format_opt = last_wins(prep->add_option("--format", format_name, "tsv or ml1m (:: separated)"));
    auto* threshold_opt = last_wins(
        prep->add_option("--rating-threshold", rating_threshold, "keep ratings >= this value"));
    auto* core_opt = last_wins(prep->add_option("--core", core, "k-core filter on users and items"));

    // train
    auto* train_cmd = app.add_subcommand("train", "train a model and keep the best checkpoint");
    CommonOptions train_opts;
    add_common_options(train_cmd, train_opts);

    // evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "compute Recall@K / NDCG@K for a checkpoint");
    CommonOptions eval_opts;
    std::string checkpoint_path;
    std::size_t density_count = 0;
    bool use_val = false;
    add_common_options(eval_cmd, eval_opts);
    last_wins(eval_cmd->add_option("--checkpoint", checkpoint_path, "trained checkpoint"))->required();
    last_wins(eval_cmd->add_option("--density-groups", density_count, "emit per-density-group metrics (0 = off)"));
    eval_cmd->add_flag("--val", use_val, "evaluate on the validation split instead of test");

    // analyze-oscillation
    auto* osc_cmd = app.add_subcommand("analyze-oscillation",
                                       "random-walk parity analysis on a synthetic or dataset graph");
    CommonOptions osc_opts;
    std::string graph_name = "k11";
    std::size_t max_steps = 100000, bound_k = 3;
    double tol = 1e-10;
    bool augment = false;
    last_wins(osc_cmd->add_option("--config", osc_opts.config_file, "key = value option file"));
    last_wins(osc_cmd->add_option("--splits", osc_opts.splits_path, "dataset splits (overrides --graph)"));
    last_wins(osc_cmd->add_option("--graph", graph_name, "synthetic graph: k11, three-edge or star"));
    last_wins(osc_cmd->add_option("--max-steps", max_steps, "walk step cap"));
    last_wins(osc_cmd->add_option("--tol", tol, "convergence tolerance"));
    last_wins(osc_cmd->add_option("--bound-k", bound_k, "k for the even/odd gap bound"));
    osc_cmd->add_flag("--augment", augment, "add the cross-hop pattern before walking");
    last_wins(osc_cmd->add_option("--out-dir", osc_opts.out_dir, "output directory"));
    last_wins(osc_cmd->add_option("--seed", osc_opts.config.seed, "unused, recorded in the manifest"));

    // layer-sweep
    auto* sweep_cmd = app.add_subcommand("layer-sweep",
                                         "depth sweep with final-layer-only scoring");
    CommonOptions sweep_opts;
    std::string depths_csv = "1,2,3,4,5,6", models_csv = "dgcf,lightgcn";
    std::size_t repeats = 3;
    add_common_options(sweep_cmd, sweep_opts);
    last_wins(sweep_cmd->add_option("--depths", depths_csv, "ascending comma-separated depths"));
    last_wins(sweep_cmd->add_option("--repeats", repeats, "seeds per depth"));
    last_wins(sweep_cmd->add_option("--models", models_csv, "comma-separated model list"));

    // export-patterns
    auto* patterns_cmd = app.add_subcommand("export-patterns",
                                            "per-layer propagation pattern windows");
    CommonOptions patterns_opts;
    std::string patterns_checkpoint;
    std::size_t window = 30, row0 = 0, col0 = 0;
    add_common_options(patterns_cmd, patterns_opts);
    last_wins(patterns_cmd->add_option("--checkpoint", patterns_checkpoint, "trained checkpoint"))->required();
    last_wins(patterns_cmd->add_option("--window", window, "window edge length"));
    last_wins(patterns_cmd->add_option("--row0", row0, "window top row"));
    last_wins(patterns_cmd->add_option("--col0", col0, "window left column"));

    // select-epsilon
    auto* eps_cmd = app.add_subcommand("select-epsilon", "grid report for the filter threshold");
    CommonOptions eps_opts;
    std::string grid_csv = "0.1,0.01,0.006,0.001,0.0005";
    std::size_t time_epochs = 0;
    add_common_options(eps_cmd, eps_opts);
    last_wins(eps_cmd->add_option("--grid", grid_csv, "comma-separated epsilon candidates"));
    last_wins(eps_cmd->add_option("--time-epochs", time_epochs,
                        "also train this many epochs per candidate and report s/epoch"));

    try {
        std::vector<std::string> args = expand_config_args(argc, argv);
        // CLI11's vector overload expects the arguments reversed, program
        // name excluded
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        reversed.pop_back();
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }

    try {
        if (prep->parsed()) {
            apply_preset(prep_opts);
            if (!prep_opts.dataset.empty()) {
                const auto& p = dataset_presets().at(prep_opts.dataset);
                if (threshold_opt->count() == 0) rating_threshold = p.rating_threshold;
                if (core_opt->count() == 0) core = p.core;
                if (format_opt->count() == 0)
                    format_name = p.format == RatingsFormat::TabSeparated ? "tsv" : "ml1m";
            }
            return cmd_prepare_data(input, format_name, rating_threshold, core, prep_opts);
        }
        if (train_cmd->parsed()) {
            finalize_config(train_opts);
            return cmd_train(train_opts);
        }
        if (eval_cmd->parsed()) {
            finalize_config(eval_opts);
            return cmd_evaluate(checkpoint_path, density_count, use_val, eval_opts);
        }
        if (osc_cmd->parsed()) {
            return cmd_analyze_oscillation(graph_name, max_steps, tol, bound_k, augment, osc_opts);
        }
        if (sweep_cmd->parsed()) {
            finalize_config(sweep_opts);
            return cmd_layer_sweep(depths_csv, repeats, models_csv, sweep_opts);
        }
        if (patterns_cmd->parsed()) {
            finalize_config(patterns_opts);
            return cmd_export_patterns(patterns_checkpoint, window, row0, col0, patterns_opts);
        }
        if (eps_cmd->parsed()) {
            finalize_config(eps_opts);
            return cmd_select_epsilon(grid_csv, time_epochs, eps_opts);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
