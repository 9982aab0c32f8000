#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "patentscape/codegraph.hpp"

using namespace patentscape;
using namespace patentscape::codegraph;
using corpus::CodeFamily;
using corpus::PatentRecord;
using patentscape::detail::Rng;

namespace {

PatentRecord with_codes(std::string id, std::vector<std::string> cpc) {
    PatentRecord r;
    r.id = std::move(id);
    r.abstract = "x";
    r.cpc = std::move(cpc);
    return r;
}

double cosine(std::span<const double> a, std::span<const double> b) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / (std::sqrt(na) * std::sqrt(nb) + 1e-12);
}

CooccurrenceGraph random_graph(Rng& rng, std::size_t max_nodes = 12) {
    const std::size_t n = 1 + rng.index(max_nodes);
    std::vector<PatentRecord> patents;
    const std::size_t rows = 1 + rng.index(3 * n);
    for (std::size_t i = 0; i < rows; ++i) {
        std::vector<std::string> codes;
        std::set<std::string> used;
        const std::size_t k = 1 + rng.index(4);
        for (std::size_t j = 0; j < k; ++j) {
            std::string c = "n" + std::to_string(rng.index(n));
            if (used.insert(c).second) codes.push_back(c);
        }
        patents.push_back(with_codes("p" + std::to_string(i), codes));
    }
    return build_graph(patents, CodeFamily::cpc);
}

}  // namespace

TEST_CASE("build_graph forms a triangle from one three-code patent") {
    auto g = build_graph({with_codes("p", {"a", "b", "c"})}, CodeFamily::cpc);
    REQUIRE(g.node_count() == 3);
    CHECK(g.edge_count() == 3);
    for (auto [x, y] : {std::pair{"a", "b"}, {"a", "c"}, {"b", "c"}})
        CHECK(g.weight(*g.find(x), *g.find(y)) == 1);
}

TEST_CASE("build_graph keeps solitary codes as isolated nodes") {
    auto g = build_graph({with_codes("p", {"only"})}, CodeFamily::cpc);
    REQUIRE(g.node_count() == 1);
    CHECK(g.edge_count() == 0);
    CHECK(g.adjacency[0].empty());
}

TEST_CASE("build_graph weights equal brute-force pair counting") {
    Rng rng(17);
    std::vector<PatentRecord> patents;
    std::vector<std::string> pool;
    for (int i = 0; i < 10; ++i) pool.push_back("c" + std::to_string(i));
    for (int i = 0; i < 20; ++i) {
        std::vector<std::string> codes;
        std::set<std::string> used;
        std::size_t k = 1 + rng.index(5);
        for (std::size_t j = 0; j < k; ++j) {
            const std::string& c = pool[rng.index(pool.size())];
            if (used.insert(c).second) codes.push_back(c);
        }
        patents.push_back(with_codes("p" + std::to_string(i), codes));
    }
    auto g = build_graph(patents, CodeFamily::cpc);

    std::map<std::pair<std::string, std::string>, std::uint32_t> expected;
    for (const auto& p : patents) {
        for (std::size_t i = 0; i < p.cpc.size(); ++i)
            for (std::size_t j = i + 1; j < p.cpc.size(); ++j) {
                auto key = std::minmax(p.cpc[i], p.cpc[j]);
                ++expected[key];
            }
    }
    std::size_t edges_seen = 0;
    for (const auto& [pair, w] : expected) {
        CHECK(g.weight(*g.find(pair.first), *g.find(pair.second)) == w);
        ++edges_seen;
    }
    CHECK(g.edge_count() == edges_seen);

    // symmetry and the total-weight identity: sum of edge weights equals
    // sum over patents of C(k_i, 2)
    std::size_t total_weight = 0;
    for (std::uint32_t a = 0; a < g.node_count(); ++a)
        for (auto [b, w] : g.adjacency[a]) {
            CHECK(g.weight(b, a) == w);
            total_weight += w;
        }
    total_weight /= 2;
    std::size_t expected_total = 0;
    for (const auto& p : patents) expected_total += p.cpc.size() * (p.cpc.size() - 1) / 2;
    CHECK(total_weight == expected_total);
}

TEST_CASE("diffuse on an isolated root yields a single-node tree") {
    auto g = build_graph({with_codes("p", {"solo"})}, CodeFamily::cpc);
    Rng rng(1);
    auto tree = diffuse(g, std::uint32_t(0), 40, rng);
    CHECK(tree.size() == 1);
    CHECK(tree.nodes[0] == 0);
}

TEST_CASE("diffuse exhausts a small component") {
    auto g = build_graph({with_codes("p", {"a", "b", "c", "d", "e"})}, CodeFamily::cpc);
    Rng rng(2);
    auto tree = diffuse(g, *g.find("a"), 40, rng);
    CHECK(tree.size() == 5);
    std::set<std::uint32_t> nodes(tree.nodes.begin(), tree.nodes.end());
    CHECK(nodes.size() == 5);
}

TEST_CASE("diffuse on a path graph attaches along the only reachable order") {
    // a-b-c from two two-code patents
    auto g = build_graph({with_codes("p1", {"a", "b"}), with_codes("p2", {"b", "c"})},
                         CodeFamily::cpc);
    Rng rng(3);
    auto tree = diffuse(g, *g.find("a"), 3, rng);
    REQUIRE(tree.size() == 3);
    CHECK(tree.nodes[0] == *g.find("a"));
    CHECK(tree.nodes[1] == *g.find("b"));
    CHECK(tree.nodes[2] == *g.find("c"));
    CHECK(tree.parent[1] == 0);  // b attached to a
    CHECK(tree.parent[2] == 1);  // c attached to b
}

TEST_CASE("diffuse rejects a missing root") {
    auto g = build_graph({with_codes("p", {"a"})}, CodeFamily::cpc);
    Rng rng(4);
    CHECK_THROWS_AS(diffuse(g, "nope", 5, rng), DataError);
}

TEST_CASE("weighted diffusion follows edge weights") {
    // root r with neighbors heavy (weight 50) and light (weight 1)
    std::vector<PatentRecord> patents;
    for (int i = 0; i < 50; ++i)
        patents.push_back(with_codes("h" + std::to_string(i), {"r", "heavy"}));
    patents.push_back(with_codes("l", {"r", "light"}));
    auto g = build_graph(patents, CodeFamily::cpc);
    const auto root = *g.find("r");
    const auto heavy = *g.find("heavy");

    int heavy_first_weighted = 0, heavy_first_uniform = 0;
    for (int trial = 0; trial < 200; ++trial) {
        Rng rng_w(trial);
        heavy_first_weighted += diffuse(g, root, 2, rng_w, true).nodes[1] == heavy;
        Rng rng_u(trial);
        heavy_first_uniform += diffuse(g, root, 2, rng_u, false).nodes[1] == heavy;
    }
    CHECK(heavy_first_weighted > 190);  // ~50/51 odds per draw
    CHECK(heavy_first_uniform > 60);    // ~1/2 odds per draw
    CHECK(heavy_first_uniform < 140);
}

TEST_CASE("euler_sequence base cases") {
    DiffusionTree single;
    single.nodes = {7};
    single.parent = {0};
    CHECK(euler_sequence(single) == TraversalSequence{7});

    DiffusionTree edge;
    edge.nodes = {4, 9};
    edge.parent = {0, 0};
    CHECK(euler_sequence(edge) == TraversalSequence{4, 9, 4});

    DiffusionTree star;  // root 0 with leaves 1, 2, 3
    star.nodes = {10, 11, 12, 13};
    star.parent = {0, 0, 0, 0};
    CHECK(euler_sequence(star) == TraversalSequence{10, 11, 10, 12, 10, 13, 10});
}

TEST_CASE("euler length law and double edge coverage on random trees") {
    Rng rng(55);
    for (int trial = 0; trial < 1000; ++trial) {
        auto g = random_graph(rng);
        const std::uint32_t root = static_cast<std::uint32_t>(rng.index(g.node_count()));
        auto tree = diffuse(g, root, 1 + rng.index(40), rng);
        auto seq = euler_sequence(tree);
        REQUIRE(seq.size() == 2 * (tree.size() - 1) + 1);
        REQUIRE(seq.front() == tree.nodes[0]);
        REQUIRE(seq.back() == tree.nodes[0]);

        std::map<std::pair<std::uint32_t, std::uint32_t>, int> directed;
        for (std::size_t i = 0; i + 1 < seq.size(); ++i) ++directed[{seq[i], seq[i + 1]}];
        // each tree edge is traversed exactly once per direction
        REQUIRE(directed.size() == 2 * (tree.size() - 1));
        for (const auto& [edge, count] : directed) REQUIRE(count == 1);
    }
}

TEST_CASE("generate_corpus yields diffusions_per_node sequences per node") {
    auto g = build_graph({with_codes("p1", {"a", "b", "c"}), with_codes("p2", {"d", "e"}),
                          with_codes("p3", {"f", "g"})},
                         CodeFamily::cpc);
    REQUIRE(g.node_count() == 7);
    auto corpus = generate_corpus(g, 10, 40, 123);
    CHECK(corpus.size() == 70);
}

TEST_CASE("generate_corpus on an all-isolated graph yields singletons") {
    auto g = build_graph({with_codes("p1", {"a"}), with_codes("p2", {"b"})}, CodeFamily::cpc);
    auto corpus = generate_corpus(g, 3, 40, 5);
    REQUIRE(corpus.size() == 6);
    for (const auto& seq : corpus) CHECK(seq.size() == 1);
}

TEST_CASE("generate_corpus is deterministic and worker-count independent") {
    Rng rng(66);
    auto g = random_graph(rng, 20);
    auto a = generate_corpus(g, 5, 10, 42, 1);
    auto b = generate_corpus(g, 5, 10, 42, 1);
    auto c = generate_corpus(g, 5, 10, 42, 2);
    CHECK(a == b);
    CHECK(a == c);
}

TEST_CASE("diff2vec training separates two cliques") {
    // two disjoint five-cliques built from patents with many shared codes
    std::vector<PatentRecord> patents;
    for (int copy = 0; copy < 4; ++copy) {
        patents.push_back(with_codes("p" + std::to_string(copy),
                                     {"a0", "a1", "a2", "a3", "a4"}));
        patents.push_back(with_codes("q" + std::to_string(copy),
                                     {"b0", "b1", "b2", "b3", "b4"}));
    }
    auto g = build_graph(patents, CodeFamily::cpc);
    auto sequences = generate_corpus(g, 10, 20, 9);
    embed::SkipGramConfig cfg;
    cfg.dimension = 16;
    cfg.window = 4;
    cfg.epochs = 8;
    cfg.seed = 9;
    auto table = train_skipgram(sequences, g, cfg);

    double intra = 0, inter = 0;
    int intra_n = 0, inter_n = 0;
    for (std::size_t i = 0; i < 10; ++i) {
        for (std::size_t j = i + 1; j < 10; ++j) {
            const double sim = cosine(table.row(i), table.row(j));
            const bool same = (g.nodes[i][0] == g.nodes[j][0]);
            (same ? intra : inter) += sim;
            (same ? intra_n : inter_n) += 1;
        }
    }
    CHECK(intra / intra_n > inter / inter_n);
}

TEST_CASE("embed_codes averages known vectors and falls back to zero") {
    CodeEmbeddingTable table;
    table.dimension = 3;
    table.keys = {"x", "y"};
    table.data = {1.0, 2.0, 3.0, 5.0, 6.0, 7.0};
    table.rebuild_index();

    CHECK(embed_codes({"x"}, table) == std::vector<double>{1.0, 2.0, 3.0});
    CHECK(embed_codes({"x", "y"}, table) == std::vector<double>{3.0, 4.0, 5.0});
    CHECK(embed_codes({"x", "unknown"}, table) == std::vector<double>{1.0, 2.0, 3.0});
    CHECK(embed_codes({"nope", "nada"}, table) == std::vector<double>{0.0, 0.0, 0.0});
}

TEST_CASE("graph files round trip including isolated nodes") {
    auto g = build_graph({with_codes("p1", {"a", "b"}), with_codes("p2", {"a", "b"}),
                          with_codes("p3", {"lonely"})},
                         CodeFamily::cpc);
    auto path = (std::filesystem::temp_directory_path() / "ps_graph.tsv").string();
    write_graph(path, g);
    auto loaded = read_graph(path, CodeFamily::cpc);
    REQUIRE(loaded.node_count() == 3);
    CHECK(loaded.weight(*loaded.find("a"), *loaded.find("b")) == 2);
    CHECK(loaded.adjacency[*loaded.find("lonely")].empty());
}
