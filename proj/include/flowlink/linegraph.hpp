#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "flowlink/errors.hpp"
#include "flowlink/subgraph.hpp"

namespace flowlink {

inline constexpr int kNumLabels = 4;

// Line-graph node: one oriented subgraph edge.
struct VNode {
    LocalId tail = 0;
    LocalId head = 0;
    std::array<double, 3> embedding{};  // head - tail; unused components are 0
    int label = 3;
};

struct VectorLineGraph {
    int dim = 0;
    std::vector<VNode> vnodes;
    std::vector<std::vector<std::uint32_t>> vadj;  // sorted rows
    std::uint32_t target_vnode = 0;
    std::vector<std::uint32_t> incident_i;  // vnodes touching the first target (includes target)
    std::vector<std::uint32_t> incident_j;

    std::size_t size() const noexcept { return vnodes.size(); }
    std::size_t num_vedges() const {
        std::size_t deg = 0;
        for (const auto& row : vadj) deg += row.size();
        return deg / 2;
    }
};

inline std::array<double, kNumLabels> encode_label(int label) {
    if (label < 0 || label >= kNumLabels) throw DomainError("label out of range: " + std::to_string(label));
    std::array<double, kNumLabels> out{};
    out[static_cast<std::size_t>(label)] = 1.0;
    return out;
}

// 0 = target, 1 = touches the first target, 2 = touches the second target,
// 3 = everything else. An edge touching both targets gets 1.
inline void assign_labels(VectorLineGraph& vlg, const EnclosingSubgraph& sub) {
    for (std::uint32_t k = 0; k < vlg.size(); ++k) {
        VNode& n = vlg.vnodes[k];
        const bool at_i = n.tail == sub.target_i || n.head == sub.target_i;
        const bool at_j = n.tail == sub.target_j || n.head == sub.target_j;
        if (k == vlg.target_vnode) n.label = 0;
        else if (at_i) n.label = 1;
        else if (at_j) n.label = 2;
        else n.label = 3;
    }
}

// Orientation: the target points from the first to the second target; every
// other edge points away from the target pair (smaller hop distance is the
// tail, ties broken by smaller global id).
inline VectorLineGraph build_line_graph(const EnclosingSubgraph& sub) {
    VectorLineGraph vlg;
    vlg.dim = sub.dim;
    const std::size_t m = sub.edges.size();
    vlg.vnodes.resize(m);
    for (std::size_t k = 0; k < m; ++k) {
        const LocalEdge& e = sub.edges[k];
        const bool is_target = (e.a == sub.target_i && e.b == sub.target_j) || (e.a == sub.target_j && e.b == sub.target_i);
        VNode& n = vlg.vnodes[k];
        if (is_target) {
            vlg.target_vnode = static_cast<std::uint32_t>(k);
            n.tail = sub.target_i;
            n.head = sub.target_j;
        } else {
            const int ha = sub.hop[e.a], hb = sub.hop[e.b];
            const bool a_first = ha != hb ? ha < hb : sub.local_to_global[e.a] < sub.local_to_global[e.b];
            n.tail = a_first ? e.a : e.b;
            n.head = a_first ? e.b : e.a;
        }
        const double* t = sub.coord(n.tail);
        const double* h = sub.coord(n.head);
        for (int c = 0; c < sub.dim; ++c) n.embedding[c] = h[c] - t[c];
    }

    // Line-graph adjacency via shared endpoints.
    std::vector<std::vector<std::uint32_t>> by_node(sub.num_nodes());
    for (std::uint32_t k = 0; k < m; ++k) {
        by_node[sub.edges[k].a].push_back(k);
        by_node[sub.edges[k].b].push_back(k);
    }
    vlg.vadj.assign(m, {});
    for (const auto& list : by_node) {
        for (std::size_t x = 0; x < list.size(); ++x) {
            for (std::size_t y = 0; y < list.size(); ++y) {
                if (x != y) vlg.vadj[list[x]].push_back(list[y]);
            }
        }
    }
    for (auto& row : vlg.vadj) {
        std::sort(row.begin(), row.end());
        row.erase(std::unique(row.begin(), row.end()), row.end());
    }

    vlg.incident_i = by_node[sub.target_i];
    vlg.incident_j = by_node[sub.target_j];
    std::sort(vlg.incident_i.begin(), vlg.incident_i.end());
    std::sort(vlg.incident_j.begin(), vlg.incident_j.end());
    assign_labels(vlg, sub);
    return vlg;
}

// Debug dump; tail/head are reported as global ids.
inline nlohmann::ordered_json to_json(const VectorLineGraph& vlg, const EnclosingSubgraph& sub) {
    nlohmann::ordered_json j;
    j["target_vnode"] = vlg.target_vnode;
    auto& nodes = j["vnodes"] = nlohmann::ordered_json::array();
    for (const VNode& n : vlg.vnodes) {
        nodes.push_back({{"tail", sub.local_to_global[n.tail]},
                         {"head", sub.local_to_global[n.head]},
                         {"embedding", std::vector<double>(n.embedding.begin(), n.embedding.begin() + vlg.dim)},
                         {"label", n.label}});
    }
    auto& pairs = j["vadj"] = nlohmann::ordered_json::array();
    for (std::uint32_t a = 0; a < vlg.size(); ++a)
        for (std::uint32_t b : vlg.vadj[a])
            if (a < b) pairs.push_back({a, b});
    return j;
}

}  // namespace flowlink
