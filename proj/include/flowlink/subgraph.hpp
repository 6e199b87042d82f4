#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <unordered_map>
#include <utility>
#include <vector>

#include "flowlink/errors.hpp"
#include "flowlink/graph.hpp"

namespace flowlink {

using LocalId = std::uint32_t;

struct LocalEdge {
    LocalId a = 0;
    LocalId b = 0;

    friend bool operator==(const LocalEdge&, const LocalEdge&) = default;
    friend auto operator<=>(const LocalEdge&, const LocalEdge&) = default;
};

// h-hop neighbourhood of a target pair. Local id 0 is the first target,
// local id 1 the second; edges[0] is the candidate (0, 1).
struct EnclosingSubgraph {
    int dim = 0;
    int h = 1;
    std::vector<double> local_coords;      // row-major, dim per local node
    std::vector<NodeId> local_to_global;
    std::vector<int> hop;                  // hop distance to the target pair
    std::vector<LocalEdge> edges;
    LocalId target_i = 0;
    LocalId target_j = 1;
    bool candidate_was_real = false;

    std::size_t num_nodes() const noexcept { return local_to_global.size(); }
    const double* coord(LocalId n) const { return local_coords.data() + static_cast<std::size_t>(n) * dim; }
    double* coord(LocalId n) { return local_coords.data() + static_cast<std::size_t>(n) * dim; }
};

// Multi-source BFS from {u, v} up to depth h over the adjacency without the
// pair (u, v). Node order: u, v, then ascending (hop, global id).
inline EnclosingSubgraph extract_enclosing_subgraph(const SpatialGraph& g, NodeId u, NodeId v, int h) {
    g.check_node(u);
    g.check_node(v);
    if (u == v) throw ValidationError("target pair must have distinct endpoints");
    if (h < 1) throw DomainError("hop count must be >= 1");

    auto excluded = [&](NodeId a, NodeId b) { return (a == u && b == v) || (a == v && b == u); };

    std::unordered_map<NodeId, int> dist;
    dist.emplace(u, 0);
    dist.emplace(v, 0);
    std::vector<NodeId> frontier{u, v};
    for (int depth = 1; depth <= h && !frontier.empty(); ++depth) {
        std::vector<NodeId> next;
        for (NodeId x : frontier) {
            for (NodeId y : g.neighbors(x)) {
                if (excluded(x, y)) continue;
                if (dist.emplace(y, depth).second) next.push_back(y);
            }
        }
        frontier = std::move(next);
    }

    std::vector<std::pair<int, NodeId>> rest;
    rest.reserve(dist.size());
    for (const auto& [node, d] : dist)
        if (node != u && node != v) rest.emplace_back(d, node);
    std::sort(rest.begin(), rest.end());

    EnclosingSubgraph sub;
    sub.dim = g.dim();
    sub.h = h;
    sub.local_to_global.reserve(dist.size());
    sub.local_to_global.push_back(u);
    sub.local_to_global.push_back(v);
    sub.hop = {0, 0};
    for (const auto& [d, node] : rest) {
        sub.local_to_global.push_back(node);
        sub.hop.push_back(d);
    }
    std::unordered_map<NodeId, LocalId> to_local;
    to_local.reserve(sub.local_to_global.size());
    for (LocalId i = 0; i < sub.local_to_global.size(); ++i) to_local.emplace(sub.local_to_global[i], i);

    sub.local_coords.reserve(sub.local_to_global.size() * g.dim());
    for (NodeId n : sub.local_to_global) {
        auto c = g.coord(n);
        sub.local_coords.insert(sub.local_coords.end(), c.begin(), c.end());
    }

    std::vector<LocalEdge> induced;
    for (LocalId a = 0; a < sub.local_to_global.size(); ++a) {
        const NodeId ga = sub.local_to_global[a];
        for (NodeId gb : g.neighbors(ga)) {
            if (excluded(ga, gb)) continue;
            auto it = to_local.find(gb);
            if (it == to_local.end() || it->second <= a) continue;
            induced.push_back({a, it->second});
        }
    }
    std::sort(induced.begin(), induced.end());
    sub.edges.reserve(induced.size() + 1);
    sub.edges.push_back({0, 1});
    sub.edges.insert(sub.edges.end(), induced.begin(), induced.end());
    sub.candidate_was_real = g.has_edge(u, v);
    return sub;
}

}  // namespace flowlink
