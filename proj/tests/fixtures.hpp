#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "flowlink/flowlink.hpp"

namespace fixtures {

using namespace flowlink;

// Random geometric graph: each node links to nearby nodes with probability p.
// Integer coordinates when `integral` is set.
inline SpatialGraph random_graph(std::size_t n, int dim, std::uint64_t seed, double p = 0.5, bool integral = false) {
    Rng rng(seed);
    const double side = std::cbrt(static_cast<double>(n)) * 2.0;
    std::vector<double> coords;
    for (std::size_t i = 0; i < n * static_cast<std::size_t>(dim); ++i) {
        const double x = uniform_real(rng, 0.0, side);
        coords.push_back(integral ? std::floor(x * 4.0) : x);
    }
    auto dist2 = [&](std::size_t a, std::size_t b) {
        double d = 0.0;
        for (int k = 0; k < dim; ++k) {
            const double t = coords[a * dim + k] - coords[b * dim + k];
            d += t * t;
        }
        return d;
    };
    const double r2 = integral ? 64.0 : 4.0;
    std::vector<Edge> edges;
    for (NodeId a = 0; a < n; ++a)
        for (NodeId b = a + 1; b < n; ++b)
            if (dist2(a, b) <= r2 && uniform01(rng) < p) edges.push_back({a, b});
    return build_graph(dim, std::move(coords), edges);
}

struct RandomSample {
    SpatialGraph graph;
    NodeId u = 0, v = 1;
    EnclosingSubgraph sub;
    VectorLineGraph vlg;
};

// A line graph with between lo and hi vnodes taken from a small random graph.
inline RandomSample random_line_graph(Rng& rng, int dim, std::size_t lo, std::size_t hi, int h = 1,
                                      bool integral = false) {
    while (true) {
        const std::size_t n = 6 + uniform_index(rng, 14);
        RandomSample s{random_graph(n, dim, rng(), 0.6, integral), 0, 1, {}, {}};
        s.u = static_cast<NodeId>(uniform_index(rng, n));
        s.v = static_cast<NodeId>(uniform_index(rng, n - 1));
        if (s.v >= s.u) ++s.v;
        s.sub = extract_enclosing_subgraph(s.graph, s.u, s.v, h);
        s.vlg = build_line_graph(s.sub);
        if (s.vlg.size() >= lo && s.vlg.size() <= hi) return s;
    }
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("flowlink_" + tag + "_" + std::to_string(std::hash<std::string>{}(tag + std::to_string(::getpid()))));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    std::filesystem::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << text;
}

}  // namespace fixtures
