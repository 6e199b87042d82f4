#include <gtest/gtest.h>

#include <map>
#include <set>
#include <vector>

#include "fixtures.hpp"
#include "oracles.hpp"

using namespace flowlink;

namespace {

struct Arc {
    NodeId tail, head;
    friend auto operator<=>(const Arc&, const Arc&) = default;
};

Arc global_arc(const VectorLineGraph& vlg, const EnclosingSubgraph& sub, std::size_t k) {
    return {sub.local_to_global[vlg.vnodes[k].tail], sub.local_to_global[vlg.vnodes[k].head]};
}

std::size_t find_arc(const VectorLineGraph& vlg, const EnclosingSubgraph& sub, Arc a) {
    for (std::size_t k = 0; k < vlg.size(); ++k)
        if (global_arc(vlg, sub, k) == a) return k;
    return vlg.size();
}

}  // namespace

TEST(LineGraph, TriangleIsTriangle) {
    const auto g = build_graph(2, {0, 0, 1, 0, 0, 1}, std::vector<Edge>{{0, 1}, {1, 2}, {0, 2}});
    const auto sub = extract_enclosing_subgraph(g, 0, 1, 1);
    const auto vlg = build_line_graph(sub);
    EXPECT_EQ(vlg.size(), 3u);
    EXPECT_EQ(vlg.num_vedges(), 3u);
    const auto t = find_arc(vlg, sub, {0, 1});
    const auto e02 = find_arc(vlg, sub, {0, 2});
    const auto e12 = find_arc(vlg, sub, {1, 2});
    ASSERT_LT(t, 3u);
    ASSERT_LT(e02, 3u);
    ASSERT_LT(e12, 3u);
    EXPECT_EQ(vlg.vnodes[t].label, 0);
    EXPECT_EQ(vlg.vnodes[e02].label, 1);
    EXPECT_EQ(vlg.vnodes[e12].label, 2);
}

TEST(LineGraph, PathExample) {
    const auto g = build_graph(2, {0, 0, 1, 0, 2, 0, 3, 0}, std::vector<Edge>{{0, 1}, {1, 2}, {2, 3}});
    const auto sub = extract_enclosing_subgraph(g, 1, 2, 1);
    const auto vlg = build_line_graph(sub);
    ASSERT_EQ(vlg.size(), 3u);
    const auto a = find_arc(vlg, sub, {1, 0});
    const auto t = find_arc(vlg, sub, {1, 2});
    const auto b = find_arc(vlg, sub, {2, 3});
    ASSERT_LT(a, 3u);
    ASSERT_LT(t, 3u);
    ASSERT_LT(b, 3u);
    EXPECT_EQ(vlg.target_vnode, t);
    EXPECT_EQ(vlg.vnodes[a].label, 1);
    EXPECT_EQ(vlg.vnodes[t].label, 0);
    EXPECT_EQ(vlg.vnodes[b].label, 2);
    EXPECT_EQ(vlg.num_vedges(), 2u);
    EXPECT_EQ(vlg.vadj[t], (std::vector<std::uint32_t>{std::min<std::uint32_t>(a, b), std::max<std::uint32_t>(a, b)}));
    EXPECT_EQ(vlg.vnodes[a].embedding[0], -1.0);
    EXPECT_EQ(vlg.vnodes[b].embedding[0], 1.0);
}

TEST(LineGraph, StarPointsAwayFromCenter) {
    const auto g = build_graph(2, {0, 0, 1, 0, -1, 0, 0, 1, 0, -1},
                               std::vector<Edge>{{0, 1}, {0, 2}, {0, 3}, {0, 4}});
    const auto sub = extract_enclosing_subgraph(g, 0, 1, 1);
    const auto vlg = build_line_graph(sub);
    for (std::size_t k = 0; k < vlg.size(); ++k) EXPECT_EQ(sub.local_to_global[vlg.vnodes[k].tail], 0u);
    EXPECT_EQ(vlg.incident_i.size(), 4u);
    EXPECT_EQ(vlg.incident_j.size(), 1u);
}

TEST(LineGraph, PathCounts) {
    for (NodeId n = 3; n <= 10; ++n) {
        std::vector<double> coords;
        std::vector<Edge> edges;
        for (NodeId i = 0; i < n; ++i) {
            coords.push_back(i);
            coords.push_back(0.0);
            if (i + 1 < n) edges.push_back({i, i + 1});
        }
        const auto g = build_graph(2, coords, edges);
        const auto sub = extract_enclosing_subgraph(g, 0, 1, static_cast<int>(n));
        const auto vlg = build_line_graph(sub);
        EXPECT_EQ(vlg.size(), n - 1) << n;
        EXPECT_EQ(vlg.num_vedges(), n - 2) << n;
    }
}

TEST(LineGraph, TwoHopLabelCategories) {
    // Two-hop neighbourhood with branches at both targets.
    const auto g = build_graph(2, {0, 0, 1, 0, -1, 1, -1, -1, 2, 1, 2, -1, -2, 1, 3, 1, 3, -1},
                               std::vector<Edge>{{0, 1}, {0, 2}, {0, 3}, {1, 4}, {1, 5}, {2, 6}, {4, 7}, {5, 8}});
    const auto sub = extract_enclosing_subgraph(g, 0, 1, 2);
    const auto vlg = build_line_graph(sub);
    std::map<int, int> counts;
    for (const auto& v : vlg.vnodes) ++counts[v.label];
    EXPECT_EQ(counts, (std::map<int, int>{{0, 1}, {1, 2}, {2, 2}, {3, 3}}));
}

TEST(LineGraph, EncodeLabel) {
    EXPECT_EQ(encode_label(0), (std::array<double, 4>{1, 0, 0, 0}));
    EXPECT_EQ(encode_label(3), (std::array<double, 4>{0, 0, 0, 1}));
    for (int l = 0; l < 4; ++l) {
        const auto e = encode_label(l);
        EXPECT_EQ(e[0] + e[1] + e[2] + e[3], 1.0);
    }
    EXPECT_THROW(encode_label(4), DomainError);
    EXPECT_THROW(encode_label(-1), DomainError);
}

TEST(LineGraph, RandomSubgraphsMatchOracles) {
    Rng rng(99);
    for (int t = 0; t < 50; ++t) {
        const int h = 1 + static_cast<int>(uniform_index(rng, 2));
        const auto s = fixtures::random_line_graph(rng, 2 + static_cast<int>(uniform_index(rng, 2)), 2, 60, h);
        const auto& vlg = s.vlg;
        const auto& sub = s.sub;
        ASSERT_EQ(vlg.size(), sub.edges.size());

        std::vector<flowlink::Edge> edges(s.graph.edges().begin(), s.graph.edges().end());
        const auto want = oracle::oriented_edges(edges, s.u, s.v, h);
        std::set<oracle::GlobalArc> got;
        for (std::size_t k = 0; k < vlg.size(); ++k) {
            const auto a = global_arc(vlg, sub, k);
            got.insert({a.tail, a.head});
        }
        ASSERT_EQ(got, want);

        ASSERT_EQ(vlg.vadj, oracle::line_graph_adjacency(sub.edges));
        std::size_t deg = 0;
        int zeros = 0;
        for (std::size_t k = 0; k < vlg.size(); ++k) {
            const auto& n = vlg.vnodes[k];
            deg += vlg.vadj[k].size();
            zeros += n.label == 0;
            for (int c = 0; c < sub.dim; ++c) ASSERT_EQ(n.embedding[c] + (sub.coord(n.tail)[c] - sub.coord(n.head)[c]), 0.0);
            const bool at_i = n.tail == 0 || n.head == 0;
            const bool at_j = n.tail == 1 || n.head == 1;
            const int expected = k == vlg.target_vnode ? 0 : at_i ? 1 : at_j ? 2 : 3;
            ASSERT_EQ(n.label, expected);
            ASSERT_EQ(std::binary_search(vlg.incident_i.begin(), vlg.incident_i.end(), k), at_i);
            ASSERT_EQ(std::binary_search(vlg.incident_j.begin(), vlg.incident_j.end(), k), at_j);
        }
        ASSERT_EQ(zeros, 1);
        ASSERT_EQ(deg, 2 * vlg.num_vedges());
        ASSERT_EQ(global_arc(vlg, sub, vlg.target_vnode).tail, s.u);
    }
}

TEST(LineGraph, IntegerTranslationLeavesEmbeddingsBitwiseEqual) {
    Rng rng(5);
    for (int t = 0; t < 50; ++t) {
        auto s = fixtures::random_line_graph(rng, 3, 3, 40, 1, true);
        auto shifted = s.sub;
        const std::vector<double> shift{static_cast<double>(uniform_index(rng, 2001)) - 1000.0, 17.0, -3.0};
        translate_subgraph(shifted, shift);
        const auto moved = build_line_graph(shifted);
        for (std::size_t k = 0; k < s.vlg.size(); ++k) ASSERT_EQ(moved.vnodes[k].embedding, s.vlg.vnodes[k].embedding);
    }
}

TEST(LineGraph, JsonDumpUsesGlobalIds) {
    const auto g = build_graph(2, {0, 0, 1, 0, 2, 0, 3, 0}, std::vector<Edge>{{0, 1}, {1, 2}, {2, 3}});
    const auto sub = extract_enclosing_subgraph(g, 1, 2, 1);
    const auto j = to_json(build_line_graph(sub), sub);
    const auto& t = j["vnodes"][j["target_vnode"].get<std::size_t>()];
    EXPECT_EQ(t["tail"], 1);
    EXPECT_EQ(t["head"], 2);
    EXPECT_EQ(j["vadj"].size(), 2u);
}
