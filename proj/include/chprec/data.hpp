#pragma once

#include "chprec/errors.hpp"
#include "chprec/graph.hpp"
#include "chprec/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace chprec {

/// One rating line as it appears in the source file, before any filtering.
struct RawInteraction {
    std::string user_token;
    std::string item_token;
    double rating = 0.0;
    std::int64_t timestamp = 0;
};

enum class RatingsFormat { TabSeparated, DoubleColonSeparated };

/// Train/val/test partition over densely reindexed ids. graph holds the
/// training edges only; the index maps translate internal ids back to the
/// source tokens (empty maps mean the ids were already dense integers).
struct DatasetSplits {
    BipartiteGraph graph; // train edges
    std::vector<std::pair<index_t, index_t>> val_edges;
    std::vector<std::pair<index_t, index_t>> test_edges;
    std::vector<std::string> user_tokens; // internal -> external
    std::vector<std::string> item_tokens;
    std::vector<index_t> degenerate_users; // lost every training edge in the split
};

namespace detail {

inline std::vector<std::string> split_fields(const std::string& line, RatingsFormat format) {
    std::vector<std::string> fields;
    if (format == RatingsFormat::TabSeparated) {
        std::size_t start = 0;
        while (start <= line.size()) {
            const std::size_t tab = line.find('\t', start);
            if (tab == std::string::npos) {
                fields.push_back(line.substr(start));
                break;
            }
            fields.push_back(line.substr(start, tab - start));
            start = tab + 1;
        }
    } else {
        std::size_t start = 0;
        while (start <= line.size()) {
            const std::size_t sep = line.find("::", start);
            if (sep == std::string::npos) {
                fields.push_back(line.substr(start));
                break;
            }
            fields.push_back(line.substr(start, sep - start));
            start = sep + 2;
        }
    }
    return fields;
}

} // namespace detail

/// Parses a MovieLens-style ratings file: one interaction per line, either
/// tab-separated (ML100K) or ::-separated (ML1M) fields
/// user, item, rating, timestamp.
inline std::vector<RawInteraction> load_ratings(const std::string& path, RatingsFormat format) {
    std::ifstream is(path);
    if (!is) throw Error("load_ratings: cannot open " + path);
    std::vector<RawInteraction> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = detail::split_fields(line, format);
        if (fields.size() != 4)
            throw ParseError("load_ratings: line " + std::to_string(line_no) + ": expected 4 fields, got " +
                             std::to_string(fields.size()));
        RawInteraction r;
        r.user_token = fields[0];
        r.item_token = fields[1];
        try {
            std::size_t used = 0;
            r.rating = std::stod(fields[2], &used);
            if (used != fields[2].size()) throw std::invalid_argument("trailing junk");
            r.timestamp = std::stoll(fields[3], &used);
            if (used != fields[3].size()) throw std::invalid_argument("trailing junk");
        } catch (const std::exception&) {
            throw ParseError("load_ratings: line " + std::to_string(line_no) + ": malformed numeric field");
        }
        if (r.user_token.empty() || r.item_token.empty())
            throw ParseError("load_ratings: line " + std::to_string(line_no) + ": empty id token");
        out.push_back(std::move(r));
    }
    if (out.empty()) throw EmptyFile("load_ratings: no interactions in " + path);
    return out;
}

struct PreprocessResult {
    BipartiteGraph graph; // every kept edge
    std::vector<std::string> user_tokens;
    std::vector<std::string> item_tokens;
};

/// Drops interactions rated below rating_threshold, then peels users and
/// items with fewer than `core` remaining interactions until the k-core
/// fixed point, then reindexes the survivors densely (tokens sorted, numeric
/// tokens numerically).
inline PreprocessResult preprocess(const std::vector<RawInteraction>& raws, double rating_threshold,
                                   std::size_t core) {
    if (core < 1) throw Error("preprocess: core must be >= 1");

    std::vector<std::pair<std::string, std::string>> edges;
    for (const auto& r : raws)
        if (r.rating >= rating_threshold) edges.emplace_back(r.user_token, r.item_token);
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

    bool changed = true;
    while (changed && !edges.empty()) {
        std::unordered_map<std::string, std::size_t> u_count, i_count;
        for (const auto& [u, i] : edges) {
            ++u_count[u];
            ++i_count[i];
        }
        const std::size_t before = edges.size();
        edges.erase(std::remove_if(edges.begin(), edges.end(),
                                   [&](const auto& e) {
                                       return u_count[e.first] < core || i_count[e.second] < core;
                                   }),
                    edges.end());
        changed = edges.size() != before;
    }
    if (edges.empty()) throw EmptyAfterFilter("preprocess: no interactions survive the filters");

    auto token_less = [](const std::string& a, const std::string& b) {
        const bool na = !a.empty() && a.find_first_not_of("0123456789") == std::string::npos;
        const bool nb = !b.empty() && b.find_first_not_of("0123456789") == std::string::npos;
        if (na && nb) {
            if (a.size() != b.size()) return a.size() < b.size();
            return a < b;
        }
        if (na != nb) return na; // numeric tokens sort first
        return a < b;
    };

    std::vector<std::string> users, items;
    for (const auto& [u, i] : edges) {
        users.push_back(u);
        items.push_back(i);
    }
    std::sort(users.begin(), users.end(), token_less);
    users.erase(std::unique(users.begin(), users.end()), users.end());
    std::sort(items.begin(), items.end(), token_less);
    items.erase(std::unique(items.begin(), items.end()), items.end());

    std::unordered_map<std::string, index_t> u_index, i_index;
    for (index_t k = 0; k < users.size(); ++k) u_index[users[k]] = k;
    for (index_t k = 0; k < items.size(); ++k) i_index[items[k]] = k;

    PreprocessResult result;
    result.graph.n_users = users.size();
    result.graph.n_items = items.size();
    result.graph.edges.reserve(edges.size());
    for (const auto& [u, i] : edges) result.graph.edges.emplace_back(u_index[u], i_index[i]);
    std::sort(result.graph.edges.begin(), result.graph.edges.end());
    result.user_tokens = std::move(users);
    result.item_tokens = std::move(items);
    return result;
}

/// Seeded uniform partition of the kept edges into train/val/test by the
/// given fractions. Users that lose every training edge are listed in
/// degenerate_users (a warning, not an error).
inline DatasetSplits split(const PreprocessResult& pre,
                           std::array<double, 3> fractions = {0.7, 0.1, 0.2},
                           std::uint64_t seed = 0) {
    const double total = fractions[0] + fractions[1] + fractions[2];
    if (std::abs(total - 1.0) > 1e-9) throw Error("split: fractions must sum to 1");

    std::vector<std::pair<index_t, index_t>> edges = pre.graph.edges;
    Rng rng = make_rng(seed);
    shuffle(edges, rng);

    const std::size_t m = edges.size();
    // tiny epsilon keeps boundaries exact when f * m is an integer in spirit
    // but not in floating point (0.7 + 0.1 = 0.7999...)
    const std::size_t n_train =
        static_cast<std::size_t>(std::floor(fractions[0] * static_cast<double>(m) + 1e-9));
    const std::size_t n_train_val = static_cast<std::size_t>(
        std::floor((fractions[0] + fractions[1]) * static_cast<double>(m) + 1e-9));

    DatasetSplits s;
    s.graph.n_users = pre.graph.n_users;
    s.graph.n_items = pre.graph.n_items;
    s.graph.edges.assign(edges.begin(), edges.begin() + n_train);
    s.val_edges.assign(edges.begin() + n_train, edges.begin() + n_train_val);
    s.test_edges.assign(edges.begin() + n_train_val, edges.end());
    std::sort(s.graph.edges.begin(), s.graph.edges.end());
    std::sort(s.val_edges.begin(), s.val_edges.end());
    std::sort(s.test_edges.begin(), s.test_edges.end());
    s.user_tokens = pre.user_tokens;
    s.item_tokens = pre.item_tokens;

    std::vector<char> has_train(s.graph.n_users, 0), appears(s.graph.n_users, 0);
    for (const auto& [u, i] : s.graph.edges) has_train[u] = 1;
    for (const auto& [u, i] : s.val_edges) appears[u] = 1;
    for (const auto& [u, i] : s.test_edges) appears[u] = 1;
    for (index_t u = 0; u < s.graph.n_users; ++u)
        if (!has_train[u] && appears[u]) s.degenerate_users.push_back(u);
    return s;
}

/// Plain-text split file: header "n_users n_items", then #train, #val and
/// #test sections of "u i" lines.
inline void save_splits(const DatasetSplits& s, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw Error("save_splits: cannot open " + path);
    os << s.graph.n_users << ' ' << s.graph.n_items << '\n';
    const std::pair<const char*, const std::vector<std::pair<index_t, index_t>>*> sections[] = {
        {"#train", &s.graph.edges}, {"#val", &s.val_edges}, {"#test", &s.test_edges}};
    for (const auto& [name, edges] : sections) {
        os << name << '\n';
        for (const auto& [u, i] : *edges) os << u << ' ' << i << '\n';
    }
    if (!os) throw Error("save_splits: write failed for " + path);
}

inline DatasetSplits load_splits(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error("load_splits: cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw FormatError("load_splits: empty file " + path);
    std::istringstream header(line);
    std::size_t n_users = 0, n_items = 0;
    if (!(header >> n_users >> n_items) || n_users == 0 || n_items == 0)
        throw FormatError("load_splits: bad header in " + path);

    DatasetSplits s;
    s.graph.n_users = n_users;
    s.graph.n_items = n_items;
    std::vector<std::pair<index_t, index_t>>* current = nullptr;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line == "#train") { current = &s.graph.edges; continue; }
        if (line == "#val") { current = &s.val_edges; continue; }
        if (line == "#test") { current = &s.test_edges; continue; }
        if (current == nullptr)
            throw FormatError("load_splits: line " + std::to_string(line_no) + ": edge before any section");
        std::istringstream fields(line);
        std::size_t u = 0, i = 0;
        if (!(fields >> u >> i))
            throw FormatError("load_splits: line " + std::to_string(line_no) + ": expected 'u i'");
        if (u >= n_users || i >= n_items)
            throw FormatError("load_splits: line " + std::to_string(line_no) + ": id outside header range");
        current->emplace_back(static_cast<index_t>(u), static_cast<index_t>(i));
    }
    if (s.graph.edges.empty()) throw FormatError("load_splits: no training edges in " + path);
    std::sort(s.graph.edges.begin(), s.graph.edges.end());
    std::sort(s.val_edges.begin(), s.val_edges.end());
    std::sort(s.test_edges.begin(), s.test_edges.end());
    return s;
}

/// Per-user sorted item lists for an edge set (evaluation input shape).
inline std::vector<std::vector<index_t>> items_by_user(
    const std::vector<std::pair<index_t, index_t>>& edges, std::size_t n_users) {
    std::vector<std::vector<index_t>> by_user(n_users);
    for (const auto& [u, i] : edges) by_user[u].push_back(i);
    for (auto& v : by_user) std::sort(v.begin(), v.end());
    return by_user;
}

/// Training-interaction count per node (users first, then items).
inline std::vector<std::size_t> node_degrees(const BipartiteGraph& g) {
    std::vector<std::size_t> deg(g.n_nodes(), 0);
    for (const auto& [u, i] : g.edges) {
        ++deg[u];
        ++deg[g.n_users + i];
    }
    return deg;
}

} // namespace chprec
