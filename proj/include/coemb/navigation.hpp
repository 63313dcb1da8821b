#pragma once

#include "evaluation.hpp"
#include "parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <string>
#include <vector>

namespace coemb {

struct Edge {
    std::size_t to = 0;
    double weight = 0.0;

    friend bool operator==(const Edge&, const Edge&) = default;
};

// Undirected weighted k-nearest-neighbour graph. Adjacency lists are sorted by
// neighbour id.
struct NeighbourGraph {
    std::size_t k = 0;
    std::optional<std::size_t> block; // subspace the distances were measured in
    std::vector<std::string> node_ids;
    std::vector<std::vector<Edge>> adjacency;

    std::size_t size() const { return adjacency.size(); }

    std::optional<double> weight(std::size_t u, std::size_t v) const {
        const auto& adj = adjacency.at(u);
        auto it = std::lower_bound(adj.begin(), adj.end(), v,
                                   [](const Edge& e, std::size_t id) { return e.to < id; });
        if (it == adj.end() || it->to != v) return std::nullopt;
        return it->weight;
    }
};

namespace detail {

inline Matrix restrict_to_block(const Matrix& rows, const EmbeddingConfig& config,
                                std::optional<std::size_t> block) {
    if (!block) return rows;
    config.check_attribute(*block);
    return rows.middleCols(config.block_start(*block), config.width());
}

} // namespace detail

// Each node links to its k nearest other nodes (ties to the lower id); the
// edge set is the union of both directions, weighted by Euclidean distance.
inline NeighbourGraph build_knn_graph(const Matrix& points, std::size_t k,
                                      std::vector<std::string> ids = {}, std::size_t threads = 1) {
    const auto count = static_cast<std::size_t>(points.rows());
    if (k < 1) throw UsageError("k must be >= 1");
    if (k >= count)
        throw UsageError("k must be smaller than the number of nodes (" + std::to_string(count) + ")");
    if (ids.empty())
        for (std::size_t i = 0; i < count; ++i) ids.push_back(std::to_string(i));
    if (ids.size() != count) throw UsageError("one id per node required");

    std::vector<std::vector<std::size_t>> nearest(count);
    parallel_for(count, threads, [&](std::size_t u) {
        std::vector<std::pair<double, std::size_t>> cand;
        cand.reserve(count - 1);
        for (std::size_t v = 0; v < count; ++v)
            if (v != u)
                cand.emplace_back((points.row(static_cast<Eigen::Index>(u)) -
                                   points.row(static_cast<Eigen::Index>(v))).squaredNorm(), v);
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
        for (std::size_t r = 0; r < k; ++r) nearest[u].push_back(cand[r].second);
    });

    std::vector<std::map<std::size_t, double>> sym(count);
    for (std::size_t u = 0; u < count; ++u)
        for (std::size_t v : nearest[u]) {
            const double w = (points.row(static_cast<Eigen::Index>(u)) -
                              points.row(static_cast<Eigen::Index>(v))).norm();
            sym[u][v] = w;
            sym[v][u] = w;
        }
    NeighbourGraph g;
    g.k = k;
    g.node_ids = std::move(ids);
    g.adjacency.resize(count);
    for (std::size_t u = 0; u < count; ++u)
        for (auto [v, w] : sym[u]) g.adjacency[u].push_back({v, w});
    return g;
}

// Graph over the normalized embeddings of an index, optionally measured in a
// single subspace block.
inline NeighbourGraph build_knn_graph(const RetrievalIndex& index, std::size_t k,
                                      std::optional<std::size_t> block = std::nullopt,
                                      std::size_t threads = 1) {
    NeighbourGraph g = build_knn_graph(detail::restrict_to_block(index.embeddings, index.config, block),
                                       k, index.item_ids, threads);
    g.block = block;
    return g;
}

struct TransitionPath {
    std::vector<std::size_t> nodes;
    std::vector<std::string> item_ids;
    std::vector<double> hop_weights;
    double total_cost = 0.0;
    // Hop with the largest weight (earliest on ties); empty for a single node.
    std::optional<std::size_t> max_edge_index;
};

inline std::optional<std::size_t> largest_hop(const std::vector<double>& hops) {
    if (hops.empty()) return std::nullopt;
    return static_cast<std::size_t>(std::max_element(hops.begin(), hops.end()) - hops.begin());
}

// Dijkstra. Among equal-cost shortest paths the lexicographically smallest
// node sequence is returned. Throws NoPathError if target is unreachable.
inline TransitionPath shortest_path(const NeighbourGraph& g, std::size_t source, std::size_t target) {
    const std::size_t n = g.size();
    if (source >= n || target >= n) throw UsageError("path endpoint not in graph");
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(n, inf);
    std::vector<char> done(n, 0);
    using Entry = std::pair<double, std::size_t>;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
    dist[source] = 0.0;
    heap.emplace(0.0, source);
    while (!heap.empty()) {
        auto [d, u] = heap.top();
        heap.pop();
        if (done[u]) continue;
        done[u] = 1;
        for (const Edge& e : g.adjacency[u]) {
            const double nd = d + e.weight;
            if (nd < dist[e.to]) {
                dist[e.to] = nd;
                heap.emplace(nd, e.to);
            }
        }
    }
    if (dist[target] == inf)
        throw NoPathError("no path from \"" + g.node_ids[source] + "\" to \"" + g.node_ids[target] + "\"");

    // Tight edges (dist[u] + w == dist[v]) form the shortest-path subgraph.
    // Walk it from the source, always taking the smallest id that can still
    // reach the target without revisiting a node. Zero-weight edges make the
    // subgraph cyclic, hence the fixed-point reachability.
    auto tight = [&](std::size_t u, const Edge& e) { return dist[u] + e.weight == dist[e.to]; };
    std::vector<char> visited(n, 0);
    auto reachability = [&] {
        std::vector<char> reaches(n, 0);
        reaches[target] = 1;
        for (bool changed = true; changed;) {
            changed = false;
            for (std::size_t u = 0; u < n; ++u) {
                if (reaches[u] || visited[u] || dist[u] == inf) continue;
                for (const Edge& e : g.adjacency[u])
                    if (reaches[e.to] && tight(u, e)) {
                        reaches[u] = 1;
                        changed = true;
                        break;
                    }
            }
        }
        return reaches;
    };

    TransitionPath path;
    std::size_t u = source;
    path.nodes.push_back(u);
    visited[u] = 1;
    while (u != target) {
        const auto reaches = reachability();
        const Edge* next = nullptr;
        for (const Edge& e : g.adjacency[u])
            if (reaches[e.to] && tight(u, e)) {
                next = &e;
                break;
            }
        if (!next) throw NoPathError("shortest-path reconstruction failed");
        path.hop_weights.push_back(next->weight);
        u = next->to;
        visited[u] = 1;
        path.nodes.push_back(u);
    }
    for (std::size_t v : path.nodes) path.item_ids.push_back(g.node_ids[v]);
    for (double w : path.hop_weights) path.total_cost += w;
    path.max_edge_index = largest_hop(path.hop_weights);
    return path;
}

// Empirical center of the index entries exhibiting a term: mean of their
// normalized embeddings, re-normalized per subspace.
inline Vector empirical_center(const RetrievalIndex& index, const Term& term) {
    return build_term_query(index, term);
}

inline std::size_t nearest_entry(const RetrievalIndex& index, const Vector& center,
                                 std::optional<std::size_t> block) {
    const auto dist = distances_to(index.embeddings, center, index.config, block);
    return rank_by_distance(dist).front();
}

struct Destination {
    enum class Kind { item, center } kind = Kind::item;
    std::size_t node = 0;
    Term term;

    static Destination item(std::size_t node) { return {Kind::item, node, {}}; }
    static Destination center_of(const Term& t) { return {Kind::center, 0, t}; }
};

// Shortest transition from a gallery entry to another entry or to the entry
// nearest an empirical category/term center.
inline TransitionPath transition(const RetrievalIndex& index, const NeighbourGraph& graph,
                                 std::size_t source, const Destination& dest) {
    if (graph.size() != index.size()) throw UsageError("graph does not match index");
    std::size_t target = dest.node;
    if (dest.kind == Destination::Kind::center) {
        const Vector center = empirical_center(index, dest.term);
        const auto block = dest.term.block() ? dest.term.block() : graph.block;
        target = nearest_entry(index, center, block);
    }
    return shortest_path(graph, source, target);
}

struct RankedEntry {
    std::size_t entry = 0;
    std::string item_id;
    double distance = 0.0;
};

// Rows sorted by ascending Euclidean distance to `center`, ties to the lower
// row.
inline std::vector<std::pair<std::size_t, double>> rank_by_center_distance(const Matrix& rows,
                                                                           const Vector& center) {
    std::vector<std::pair<std::size_t, double>> out;
    for (Eigen::Index r = 0; r < rows.rows(); ++r)
        out.emplace_back(static_cast<std::size_t>(r), (rows.row(r).transpose() - center).norm());
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
    return out;
}

// Members of category y ordered from most typical (closest to the empirical
// category center) to least typical.
inline std::vector<RankedEntry> typicality_ranking(const RetrievalIndex& index, std::size_t category,
                                                   std::optional<std::size_t> block = std::nullopt) {
    std::vector<std::size_t> members;
    for (std::size_t r = 0; r < index.size(); ++r)
        if (index.categories[r] == category) members.push_back(r);
    if (members.empty()) throw DataError("category has no member in the index");
    const Vector center = empirical_center(index, Term::category_of(category));
    Matrix rows(static_cast<Eigen::Index>(members.size()), index.embeddings.cols());
    for (std::size_t m = 0; m < members.size(); ++m)
        rows.row(static_cast<Eigen::Index>(m)) = index.embeddings.row(static_cast<Eigen::Index>(members[m]));
    const auto ranked = rank_by_center_distance(detail::restrict_to_block(rows, index.config, block),
                                                block ? Vector(center.segment(index.config.block_start(*block),
                                                                              index.config.width()))
                                                      : center);
    std::vector<RankedEntry> out;
    for (auto [m, d] : ranked) out.push_back({members[m], index.item_ids[members[m]], d});
    return out;
}

} // namespace coemb
