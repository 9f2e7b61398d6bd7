#include "chprec/data.hpp"

#include "test_util.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace chprec;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
    const auto path = std::filesystem::temp_directory_path() / name;
    std::ofstream os(path);
    os << content;
    return path.string();
}

std::vector<RawInteraction> raws_from_edges(const std::vector<std::pair<int, int>>& edges,
                                            double rating = 5.0) {
    std::vector<RawInteraction> raws;
    for (const auto& [u, i] : edges)
        raws.push_back({std::to_string(u), std::to_string(i), rating, 0});
    return raws;
}

} // namespace

TEST_CASE("load_ratings") {
    SECTION("tab-separated MovieLens line") {
        const auto path = write_temp("chprec_tsv.txt", "196\t242\t3\t881250949\n");
        const auto raws = load_ratings(path, RatingsFormat::TabSeparated);
        REQUIRE(raws.size() == 1);
        REQUIRE(raws[0].user_token == "196");
        REQUIRE(raws[0].item_token == "242");
        REQUIRE(raws[0].rating == 3.0);
        REQUIRE(raws[0].timestamp == 881250949);
    }
    SECTION("double-colon-separated ML1M line") {
        const auto path = write_temp("chprec_ml1m.txt", "1::1193::5::978300760\n");
        const auto raws = load_ratings(path, RatingsFormat::DoubleColonSeparated);
        REQUIRE(raws.size() == 1);
        REQUIRE(raws[0].user_token == "1");
        REQUIRE(raws[0].item_token == "1193");
        REQUIRE(raws[0].rating == 5.0);
        REQUIRE(raws[0].timestamp == 978300760);
    }
    SECTION("malformed line reports its number") {
        const auto path = write_temp("chprec_bad.txt", "1\t2\t3\t4\n5\t6\tseven\t8\n");
        try {
            load_ratings(path, RatingsFormat::TabSeparated);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            REQUIRE(std::string(e.what()).find("line 2") != std::string::npos);
        }
    }
    SECTION("wrong field count reports its line") {
        const auto path = write_temp("chprec_fields.txt", "1\t2\t3\n");
        REQUIRE_THROWS_AS(load_ratings(path, RatingsFormat::TabSeparated), ParseError);
    }
    SECTION("empty file throws") {
        const auto path = write_temp("chprec_empty.txt", "");
        REQUIRE_THROWS_AS(load_ratings(path, RatingsFormat::TabSeparated), EmptyFile);
    }
}

TEST_CASE("preprocess") {
    SECTION("graph already satisfying the core constraint is unchanged") {
        // 2x2 complete: every node has 2 interactions
        const auto raws = raws_from_edges({{7, 3}, {7, 4}, {9, 3}, {9, 4}});
        const PreprocessResult pre = preprocess(raws, 1.0, 2);
        REQUIRE(pre.graph.n_users == 2);
        REQUIRE(pre.graph.n_items == 2);
        REQUIRE(pre.graph.edges.size() == 4);
        REQUIRE(pre.user_tokens == std::vector<std::string>{"7", "9"});
        REQUIRE(pre.item_tokens == std::vector<std::string>{"3", "4"});
    }
    SECTION("star with degree-1 leaves cascades to empty under core 2") {
        std::vector<std::pair<int, int>> edges;
        for (int leaf = 0; leaf < 10; ++leaf) edges.emplace_back(leaf, 0); // item 0 is the hub
        REQUIRE_THROWS_AS(preprocess(raws_from_edges(edges), 1.0, 2), EmptyAfterFilter);
    }
    SECTION("rating threshold drops low ratings before the core filter") {
        std::vector<RawInteraction> raws = raws_from_edges({{1, 1}, {1, 2}, {2, 1}, {2, 2}}, 5.0);
        raws.push_back({"1", "3", 2.0, 0});
        const PreprocessResult pre = preprocess(raws, 4.0, 1);
        REQUIRE(pre.graph.n_items == 2); // item 3 carried only a rating-2 edge
    }
    SECTION("duplicate interactions collapse to one edge") {
        const auto raws = raws_from_edges({{1, 1}, {1, 1}, {2, 2}, {1, 2}, {2, 1}});
        const PreprocessResult pre = preprocess(raws, 1.0, 1);
        REQUIRE(pre.graph.edges.size() == 4);
    }
    SECTION("k-core fixed point holds on random inputs") {
        Rng rng = make_rng(13);
        for (int trial = 0; trial < 10; ++trial) {
            std::vector<std::pair<int, int>> edges;
            for (int k = 0; k < 60; ++k)
                edges.emplace_back(static_cast<int>(uniform_index(rng, 10)),
                                   static_cast<int>(uniform_index(rng, 10)));
            const std::size_t core = 2 + uniform_index(rng, 2);
            PreprocessResult pre;
            try {
                pre = preprocess(raws_from_edges(edges), 1.0, core);
            } catch (const EmptyAfterFilter&) {
                continue;
            }
            const auto degrees = node_degrees(pre.graph);
            for (std::size_t nd : degrees) REQUIRE(nd >= core);
            // reindexing is dense and bijective
            REQUIRE(pre.user_tokens.size() == pre.graph.n_users);
            REQUIRE(pre.item_tokens.size() == pre.graph.n_items);
        }
    }
    SECTION("numeric tokens reindex in numeric order") {
        const auto raws = raws_from_edges({{10, 5}, {2, 5}, {2, 19}, {10, 19}});
        const PreprocessResult pre = preprocess(raws, 1.0, 1);
        REQUIRE(pre.user_tokens == std::vector<std::string>{"2", "10"});
        REQUIRE(pre.item_tokens == std::vector<std::string>{"5", "19"});
    }
}

TEST_CASE("split") {
    PreprocessResult pre;
    pre.graph.n_users = 5;
    pre.graph.n_items = 4;
    for (index_t u = 0; u < 5; ++u)
        for (index_t i = 0; i < 2; ++i) pre.graph.edges.emplace_back(u, i);
    // 10 edges total
    SECTION("sizes follow the floor rule: (7, 1, 2) for ten edges") {
        const DatasetSplits s = split(pre, {0.7, 0.1, 0.2}, 123);
        REQUIRE(s.graph.edges.size() == 7);
        REQUIRE(s.val_edges.size() == 1);
        REQUIRE(s.test_edges.size() == 2);
    }
    SECTION("same seed reproduces the same partition") {
        const DatasetSplits a = split(pre, {0.7, 0.1, 0.2}, 9);
        const DatasetSplits b = split(pre, {0.7, 0.1, 0.2}, 9);
        REQUIRE(a.graph.edges == b.graph.edges);
        REQUIRE(a.val_edges == b.val_edges);
        REQUIRE(a.test_edges == b.test_edges);
    }
    SECTION("partitions are disjoint and conserve every edge") {
        Rng rng = make_rng(15);
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const DatasetSplits s = split(pre, {0.7, 0.1, 0.2}, seed);
            std::vector<std::pair<index_t, index_t>> all = s.graph.edges;
            all.insert(all.end(), s.val_edges.begin(), s.val_edges.end());
            all.insert(all.end(), s.test_edges.begin(), s.test_edges.end());
            std::sort(all.begin(), all.end());
            REQUIRE(std::adjacent_find(all.begin(), all.end()) == all.end());
            REQUIRE(all == pre.graph.edges);
        }
    }
    SECTION("users losing all training edges are reported, not fatal") {
        PreprocessResult tiny;
        tiny.graph.n_users = 2;
        tiny.graph.n_items = 2;
        tiny.graph.edges = {{0, 0}, {0, 1}, {1, 0}};
        bool saw_warning = false;
        for (std::uint64_t seed = 0; seed < 40 && !saw_warning; ++seed) {
            const DatasetSplits s = split(tiny, {0.34, 0.33, 0.33}, seed);
            saw_warning = !s.degenerate_users.empty();
        }
        REQUIRE(saw_warning);
    }
    SECTION("fractions must sum to 1") {
        REQUIRE_THROWS_AS(split(pre, {0.5, 0.1, 0.1}, 0), Error);
    }
}

TEST_CASE("save_splits / load_splits") {
    DatasetSplits s;
    s.graph.n_users = 3;
    s.graph.n_items = 4;
    s.graph.edges = {{0, 0}, {1, 2}, {2, 3}};
    s.val_edges = {{0, 1}};
    s.test_edges = {{1, 3}, {2, 0}};
    const auto path = (std::filesystem::temp_directory_path() / "chprec_splits.txt").string();

    SECTION("round trip is structurally identical") {
        save_splits(s, path);
        const DatasetSplits loaded = load_splits(path);
        REQUIRE(loaded.graph.n_users == 3);
        REQUIRE(loaded.graph.n_items == 4);
        REQUIRE(loaded.graph.edges == s.graph.edges);
        REQUIRE(loaded.val_edges == s.val_edges);
        REQUIRE(loaded.test_edges == s.test_edges);
    }
    SECTION("empty val section is allowed") {
        s.val_edges.clear();
        save_splits(s, path);
        const DatasetSplits loaded = load_splits(path);
        REQUIRE(loaded.val_edges.empty());
        REQUIRE(loaded.test_edges == s.test_edges);
    }
    SECTION("ids outside the header range are rejected") {
        const auto bad = write_temp("chprec_bad_splits.txt", "2 2\n#train\n0 0\n5 1\n#val\n#test\n");
        REQUIRE_THROWS_AS(load_splits(bad), FormatError);
    }
    SECTION("missing header is rejected") {
        const auto bad = write_temp("chprec_noheader.txt", "#train\n0 0\n");
        REQUIRE_THROWS_AS(load_splits(bad), FormatError);
    }
    std::filesystem::remove(path);
}

TEST_CASE("full pipeline conserves interactions") {
    Rng rng = make_rng(17);
    std::vector<std::pair<int, int>> edges;
    for (int k = 0; k < 200; ++k)
        edges.emplace_back(static_cast<int>(uniform_index(rng, 20)),
                           static_cast<int>(uniform_index(rng, 15)));
    const auto raws = raws_from_edges(edges);
    const PreprocessResult pre = preprocess(raws, 1.0, 2);
    const DatasetSplits s = split(pre, {0.7, 0.1, 0.2}, 1);
    REQUIRE(s.graph.edges.size() + s.val_edges.size() + s.test_edges.size() ==
            pre.graph.edges.size());
}
