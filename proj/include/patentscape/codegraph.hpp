#pragma once

// Technology-code co-occurrence graphs and their diffusion embeddings:
// every unordered pair of codes appearing in one patent adds an edge
// weight, random diffusion trees grown from each node are flattened by
// Euler tours into sequences, and skip-gram over those sequences yields
// one vector per code.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "patentscape/corpus.hpp"
#include "patentscape/detail/parallel.hpp"
#include "patentscape/detail/text.hpp"
#include "patentscape/detail/rng.hpp"
#include "patentscape/error.hpp"
#include "patentscape/skipgram.hpp"

namespace patentscape::codegraph {

using CodeEmbeddingTable = embed::EmbeddingTable;

struct CooccurrenceGraph {
    corpus::CodeFamily family = corpus::CodeFamily::cpc;
    std::vector<std::string> nodes;                         // index -> code, first-appearance order
    std::unordered_map<std::string, std::uint32_t> index;   // code -> index
    std::vector<std::vector<std::pair<std::uint32_t, std::uint32_t>>> adjacency;  // (neighbor, weight)

    std::size_t node_count() const { return nodes.size(); }

    std::size_t edge_count() const {
        std::size_t degree_sum = 0;
        for (const auto& nbrs : adjacency) degree_sum += nbrs.size();
        return degree_sum / 2;
    }

    std::optional<std::uint32_t> find(const std::string& code) const {
        auto it = index.find(code);
        if (it == index.end()) return std::nullopt;
        return it->second;
    }

    std::uint32_t weight(std::uint32_t a, std::uint32_t b) const {
        for (auto [nbr, w] : adjacency[a]) {
            if (nbr == b) return w;
        }
        return 0;
    }
};

// One edge increment per unordered pair of distinct codes within a patent.
// Codes occurring alone still become (isolated) nodes.
inline CooccurrenceGraph build_graph(const std::vector<corpus::PatentRecord>& patents,
                                     corpus::CodeFamily family) {
    CooccurrenceGraph g;
    g.family = family;
    auto node_id = [&g](const std::string& code) {
        auto [it, inserted] = g.index.emplace(code, static_cast<std::uint32_t>(g.nodes.size()));
        if (inserted) g.nodes.push_back(code);
        return it->second;
    };
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> weights;
    for (const auto& p : patents) {
        const auto& codes = p.codes(family);
        std::vector<std::uint32_t> ids;
        ids.reserve(codes.size());
        for (const auto& c : codes) ids.push_back(node_id(c));
        for (std::size_t i = 0; i < ids.size(); ++i) {
            for (std::size_t j = i + 1; j < ids.size(); ++j) {
                auto key = std::minmax(ids[i], ids[j]);
                ++weights[{key.first, key.second}];
            }
        }
    }
    g.adjacency.resize(g.nodes.size());
    for (const auto& [edge, w] : weights) {
        g.adjacency[edge.first].emplace_back(edge.second, w);
        g.adjacency[edge.second].emplace_back(edge.first, w);
    }
    for (auto& nbrs : g.adjacency) std::sort(nbrs.begin(), nbrs.end());
    return g;
}

struct DiffusionTree {
    std::vector<std::uint32_t> nodes;    // graph node ids in insertion order; nodes[0] is the root
    std::vector<std::uint32_t> parent;   // parent[i] = position (in `nodes`) of node i's parent; parent[0] = 0

    std::size_t size() const { return nodes.size(); }
};

namespace graph_detail {

// Size of the root's connected component, capped at `cap` (the diffusion
// only needs to know whether the component is smaller than the target).
inline std::size_t component_size_capped(const CooccurrenceGraph& g, std::uint32_t root,
                                         std::size_t cap) {
    std::unordered_set<std::uint32_t> seen{root};
    std::queue<std::uint32_t> frontier;
    frontier.push(root);
    while (!frontier.empty() && seen.size() < cap) {
        std::uint32_t u = frontier.front();
        frontier.pop();
        for (auto [nbr, w] : g.adjacency[u]) {
            (void)w;
            if (seen.size() >= cap) break;
            if (seen.insert(nbr).second) frontier.push(nbr);
        }
    }
    return seen.size();
}

}  // namespace graph_detail

// Grows a random diffusion tree: starting from the root, repeatedly pick a
// uniformly random node already in the tree, then a random graph neighbor
// of it, and attach the neighbor if it is new. Stops at `size` nodes or
// when the root's component is exhausted. Neighbor choice is uniform by
// default; with `weighted` it is proportional to the edge weight.
inline DiffusionTree diffuse(const CooccurrenceGraph& g, std::uint32_t root, std::size_t size,
                             detail::Rng& rng, bool weighted = false) {
    if (root >= g.node_count()) throw DataError("diffusion root is not a graph node");
    if (size < 1) throw DataError("diffusion size must be >= 1");
    const std::size_t target = graph_detail::component_size_capped(g, root, size);

    DiffusionTree tree;
    tree.nodes.push_back(root);
    tree.parent.push_back(0);
    std::unordered_set<std::uint32_t> in_tree{root};
    while (tree.nodes.size() < target) {
        const std::size_t pick = rng.index(tree.nodes.size());
        const auto& nbrs = g.adjacency[tree.nodes[pick]];
        if (nbrs.empty()) continue;
        std::uint32_t candidate;
        if (weighted) {
            std::uint64_t total = 0;
            for (auto [nbr, w] : nbrs) total += w;
            std::uint64_t roll = rng.below(total);
            std::size_t idx = 0;
            while (roll >= nbrs[idx].second) roll -= nbrs[idx++].second;
            candidate = nbrs[idx].first;
        } else {
            candidate = nbrs[rng.index(nbrs.size())].first;
        }
        if (in_tree.insert(candidate).second) {
            tree.nodes.push_back(candidate);
            tree.parent.push_back(static_cast<std::uint32_t>(pick));
        }
    }
    return tree;
}

inline DiffusionTree diffuse(const CooccurrenceGraph& g, const std::string& root_code,
                             std::size_t size, detail::Rng& rng, bool weighted = false) {
    auto root = g.find(root_code);
    if (!root) throw DataError("diffusion root '" + root_code + "' is not a graph node");
    return diffuse(g, *root, size, rng, weighted);
}

using TraversalSequence = std::vector<std::uint32_t>;  // graph node ids

// Depth-first circuit over the tree with every edge traversed once down
// and once up; children are visited in insertion order. The result has
// length 2*(|tree| - 1) + 1 and starts and ends at the root.
inline TraversalSequence euler_sequence(const DiffusionTree& tree) {
    const std::size_t n = tree.size();
    std::vector<std::vector<std::uint32_t>> children(n);
    for (std::uint32_t i = 1; i < n; ++i) children[tree.parent[i]].push_back(i);

    TraversalSequence seq;
    seq.reserve(2 * (n - 1) + 1);
    // explicit stack of (tree position, next child slot)
    std::vector<std::pair<std::uint32_t, std::size_t>> stack{{0, 0}};
    seq.push_back(tree.nodes[0]);
    while (!stack.empty()) {
        auto& [pos, next_child] = stack.back();
        if (next_child < children[pos].size()) {
            std::uint32_t child = children[pos][next_child++];
            seq.push_back(tree.nodes[child]);
            stack.emplace_back(child, 0);
        } else {
            stack.pop_back();
            if (!stack.empty()) seq.push_back(tree.nodes[stack.back().first]);
        }
    }
    return seq;
}

// `diffusions_per_node` sequences per graph node, each from an
// independently seeded diffusion, in (node, run) order. Safe to
// parallelize: every sequence's RNG depends only on (seed, node, run).
inline std::vector<TraversalSequence> generate_corpus(const CooccurrenceGraph& g,
                                                      std::size_t diffusions_per_node,
                                                      std::size_t size, std::uint64_t seed,
                                                      std::size_t workers = 1,
                                                      bool weighted = false) {
    const std::size_t n = g.node_count();
    std::vector<TraversalSequence> corpus(n * diffusions_per_node);
    detail::parallel_chunks(n, workers, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t node = begin; node < end; ++node) {
            for (std::size_t run = 0; run < diffusions_per_node; ++run) {
                detail::Rng rng(detail::derive_seed(seed, node, run));
                DiffusionTree tree =
                    diffuse(g, static_cast<std::uint32_t>(node), size, rng, weighted);
                corpus[node * diffusions_per_node + run] = euler_sequence(tree);
            }
        }
    });
    return corpus;
}

inline CodeEmbeddingTable train_skipgram(const std::vector<TraversalSequence>& sequences,
                                         const CooccurrenceGraph& g,
                                         const embed::SkipGramConfig& cfg) {
    CodeEmbeddingTable table;
    table.dimension = cfg.dimension;
    table.keys = g.nodes;
    table.data = embed::train_skipgram_ids(sequences, g.node_count(), cfg);
    table.rebuild_index();
    return table;
}

// Elementwise mean of the vectors of the codes present in the table.
// Unknown codes are skipped; with no known code the result is the zero
// vector.
inline std::vector<double> embed_codes(const std::vector<std::string>& codes,
                                       const CodeEmbeddingTable& table) {
    std::vector<double> out(table.dimension, 0.0);
    std::size_t found = 0;
    for (const auto& code : codes) {
        if (auto idx = table.find(code)) {
            auto row = table.row(*idx);
            for (std::size_t d = 0; d < table.dimension; ++d) out[d] += row[d];
            ++found;
        }
    }
    if (found > 0) {
        for (auto& x : out) x /= static_cast<double>(found);
    }
    return out;
}

// Edge-list export: one "code_a<TAB>code_b<TAB>weight" line per edge with
// code_a < code_b lexicographically; isolated nodes are written as a bare
// single-field line so the node set round-trips.
inline void write_graph(const std::string& path, const CooccurrenceGraph& g) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write graph file: " + path);
    std::vector<std::pair<std::string, std::string>> edges;
    for (std::uint32_t a = 0; a < g.node_count(); ++a) {
        for (auto [b, w] : g.adjacency[a]) {
            if (a < b) {
                auto names = std::minmax(g.nodes[a], g.nodes[b]);
                edges.emplace_back(names.first, names.second);
            }
        }
    }
    std::sort(edges.begin(), edges.end());
    for (const auto& [a, b] : edges) out << a << '\t' << b << '\t' << g.weight(*g.find(a), *g.find(b)) << '\n';
    std::vector<std::string> isolated;
    for (std::uint32_t i = 0; i < g.node_count(); ++i) {
        if (g.adjacency[i].empty()) isolated.push_back(g.nodes[i]);
    }
    std::sort(isolated.begin(), isolated.end());
    for (const auto& node : isolated) out << node << '\n';
}

inline CooccurrenceGraph read_graph(const std::string& path, corpus::CodeFamily family) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open graph file: " + path);
    CooccurrenceGraph g;
    g.family = family;
    auto node_id = [&g](const std::string& code) {
        auto [it, inserted] = g.index.emplace(code, static_cast<std::uint32_t>(g.nodes.size()));
        if (inserted) {
            g.nodes.push_back(code);
            g.adjacency.emplace_back();
        }
        return it->second;
    };
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = patentscape::detail::split_on(line, '\t');
        if (fields.size() == 1) {
            node_id(fields[0]);
            continue;
        }
        if (fields.size() != 3)
            throw DataError("graph file " + path + " line " + std::to_string(line_no) +
                            ": expected 1 or 3 fields");
        std::uint32_t a = node_id(fields[0]);
        std::uint32_t b = node_id(fields[1]);
        std::uint32_t w = 0;
        try {
            w = static_cast<std::uint32_t>(std::stoul(fields[2]));
        } catch (const std::exception&) {
            throw DataError("graph file " + path + " line " + std::to_string(line_no) +
                            ": bad weight '" + fields[2] + "'");
        }
        g.adjacency[a].emplace_back(b, w);
        g.adjacency[b].emplace_back(a, w);
    }
    for (auto& nbrs : g.adjacency) std::sort(nbrs.begin(), nbrs.end());
    return g;
}

}  // namespace patentscape::codegraph
