#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "flowlink/errors.hpp"

namespace flowlink {

using NodeId = std::uint32_t;

// Undirected edge in canonical orientation (u < v).
struct Edge {
    NodeId u = 0;
    NodeId v = 0;

    friend bool operator==(const Edge&, const Edge&) = default;
    friend auto operator<=>(const Edge&, const Edge&) = default;
};

inline Edge canonical(NodeId a, NodeId b) { return a < b ? Edge{a, b} : Edge{b, a}; }

inline std::uint64_t edge_key(NodeId a, NodeId b) {
    const Edge e = canonical(a, b);
    return (static_cast<std::uint64_t>(e.u) << 32) | e.v;
}

// Immutable undirected spatial graph with CSR adjacency. Coordinates are
// stored row-major, `dim` values per node.
class SpatialGraph {
public:
    SpatialGraph() = default;

    int dim() const noexcept { return dim_; }
    std::size_t num_nodes() const noexcept { return offsets_.empty() ? 0 : offsets_.size() - 1; }
    std::size_t num_edges() const noexcept { return edges_.size(); }

    std::span<const double> coord(NodeId n) const {
        return {coords_.data() + static_cast<std::size_t>(n) * dim_, static_cast<std::size_t>(dim_)};
    }
    const std::vector<double>& coords() const noexcept { return coords_; }
    const std::vector<Edge>& edges() const noexcept { return edges_; }
    const std::vector<std::size_t>& offsets() const noexcept { return offsets_; }

    std::span<const NodeId> neighbors(NodeId n) const {
        return {columns_.data() + offsets_[n], offsets_[n + 1] - offsets_[n]};
    }
    std::size_t degree(NodeId n) const { return offsets_[n + 1] - offsets_[n]; }

    void check_node(NodeId n) const {
        if (n >= num_nodes()) {
            throw StructuralError("node id " + std::to_string(n) + " out of range (num_nodes = " +
                                  std::to_string(num_nodes()) + ")");
        }
    }

    // Binary search in the sorted CSR row of the lower-degree endpoint.
    bool has_edge(NodeId u, NodeId v) const {
        if (degree(u) > degree(v)) std::swap(u, v);
        auto row = neighbors(u);
        return std::binary_search(row.begin(), row.end(), v);
    }

    double distance_squared(NodeId a, NodeId b) const {
        double acc = 0.0;
        for (int k = 0; k < dim_; ++k) {
            const double d = coords_[static_cast<std::size_t>(a) * dim_ + k] -
                             coords_[static_cast<std::size_t>(b) * dim_ + k];
            acc += d * d;
        }
        return acc;
    }
    double distance(NodeId a, NodeId b) const { return std::sqrt(distance_squared(a, b)); }

    friend SpatialGraph build_graph(int dim, std::vector<double> coords, std::span<const Edge> edges);

private:
    int dim_ = 0;
    std::vector<double> coords_;
    std::vector<Edge> edges_;
    std::vector<std::size_t> offsets_;
    std::vector<NodeId> columns_;
};

// Builds a graph from a flat coordinate table and an edge list. Edges are
// canonicalized and deduplicated; self-loops and out-of-range ids throw.
inline SpatialGraph build_graph(int dim, std::vector<double> coords, std::span<const Edge> edges) {
    if (dim != 2 && dim != 3) throw ValidationError("d_spatial must be 2 or 3, got " + std::to_string(dim));
    if (coords.size() % static_cast<std::size_t>(dim) != 0) {
        throw ValidationError("coordinate table size is not a multiple of d_spatial");
    }
    const std::size_t n = coords.size() / dim;
    if (n > std::numeric_limits<NodeId>::max()) throw ValidationError("too many nodes");
    for (std::size_t i = 0; i < coords.size(); ++i) {
        if (!std::isfinite(coords[i])) {
            throw ValidationError("non-finite coordinate at node " + std::to_string(i / dim));
        }
    }

    SpatialGraph g;
    g.dim_ = dim;
    g.coords_ = std::move(coords);
    g.edges_.reserve(edges.size());
    for (const Edge& e : edges) {
        if (e.u >= n || e.v >= n) {
            throw StructuralError("edge (" + std::to_string(e.u) + "," + std::to_string(e.v) +
                                  ") references a node outside [0, " + std::to_string(n) + ")");
        }
        if (e.u == e.v) {
            throw ValidationError("self-loop (" + std::to_string(e.u) + "," + std::to_string(e.v) + ")");
        }
        g.edges_.push_back(canonical(e.u, e.v));
    }
    std::sort(g.edges_.begin(), g.edges_.end());
    g.edges_.erase(std::unique(g.edges_.begin(), g.edges_.end()), g.edges_.end());

    g.offsets_.assign(n + 1, 0);
    for (const Edge& e : g.edges_) {
        ++g.offsets_[e.u + 1];
        ++g.offsets_[e.v + 1];
    }
    for (std::size_t i = 0; i < n; ++i) g.offsets_[i + 1] += g.offsets_[i];
    g.columns_.resize(g.offsets_[n]);
    std::vector<std::size_t> cursor(g.offsets_.begin(), g.offsets_.end() - 1);
    // Edges are sorted by (u, v), so rows fill in ascending order for the
    // u-side; the v-side rows need an explicit sort.
    for (const Edge& e : g.edges_) {
        g.columns_[cursor[e.u]++] = e.v;
        g.columns_[cursor[e.v]++] = e.u;
    }
    for (std::size_t i = 0; i < n; ++i) {
        std::sort(g.columns_.begin() + static_cast<std::ptrdiff_t>(g.offsets_[i]),
                  g.columns_.begin() + static_cast<std::ptrdiff_t>(g.offsets_[i + 1]));
    }
    return g;
}

inline SpatialGraph build_graph(int dim, std::vector<double> coords, const std::vector<Edge>& edges) {
    return build_graph(dim, std::move(coords), std::span<const Edge>(edges));
}

inline bool edge_exists(const SpatialGraph& g, NodeId u, NodeId v) {
    g.check_node(u);
    g.check_node(v);
    if (u == v) throw ValidationError("self pair (" + std::to_string(u) + "," + std::to_string(v) + ")");
    return g.has_edge(u, v);
}

struct EdgeLengthStats {
    double mean = 0.0;
    double std = 0.0;  // population form
};

inline EdgeLengthStats edge_length_stats(const SpatialGraph& g) {
    if (g.num_edges() == 0) throw DomainError("edge length statistics need at least one edge");
    const auto m = static_cast<double>(g.num_edges());
    double sum = 0.0;
    for (const Edge& e : g.edges()) sum += g.distance(e.u, e.v);
    const double mean = sum / m;
    double ss = 0.0;
    for (const Edge& e : g.edges()) {
        const double d = g.distance(e.u, e.v) - mean;
        ss += d * d;
    }
    return {mean, std::sqrt(ss / m)};
}

// Uniform grid over node coordinates. Every node sits in exactly one cell.
class SpatialIndex {
public:
    using Cell = std::array<std::int64_t, 3>;

    SpatialIndex(const SpatialGraph& g, double cell_size) : cell_size_(cell_size), dim_(g.dim()) {
        if (!(cell_size > 0.0) || !std::isfinite(cell_size)) {
            throw DomainError("spatial index cell size must be positive and finite");
        }
        for (NodeId n = 0; n < g.num_nodes(); ++n) {
            const Cell c = cell_of(g.coord(n));
            grid_[c].push_back(n);
            for (int k = 0; k < 3; ++k) {
                min_[k] = n == 0 ? c[k] : std::min(min_[k], c[k]);
                max_[k] = n == 0 ? c[k] : std::max(max_[k], c[k]);
            }
        }
    }

    double cell_size() const noexcept { return cell_size_; }
    std::size_t num_cells() const noexcept { return grid_.size(); }

    Cell cell_of(std::span<const double> p) const {
        Cell c{0, 0, 0};
        for (int k = 0; k < dim_; ++k) c[k] = static_cast<std::int64_t>(std::floor(p[k] / cell_size_));
        return c;
    }

    const std::vector<NodeId>* bucket(const Cell& c) const {
        auto it = grid_.find(c);
        return it == grid_.end() ? nullptr : &it->second;
    }

    // Occupied cells lie within [min_cell, max_cell] per axis.
    const Cell& min_cell() const noexcept { return min_; }
    const Cell& max_cell() const noexcept { return max_; }

    template <typename F>
    void for_each_bucket(F&& f) const {
        for (const auto& [cell, nodes] : grid_) f(nodes);
    }

private:
    struct CellHash {
        std::size_t operator()(const Cell& c) const noexcept {
            std::uint64_t h = 0;
            for (auto v : c) h = (h ^ static_cast<std::uint64_t>(v)) * 0x100000001b3ULL + 0x9e3779b97f4a7c15ULL;
            return static_cast<std::size_t>(h ^ (h >> 29));
        }
    };

    double cell_size_;
    int dim_;
    Cell min_{0, 0, 0}, max_{0, 0, 0};
    std::unordered_map<Cell, std::vector<NodeId>, CellHash> grid_;
};

// Nodes with squared distance <= r^2 from `center`, center excluded, ascending ids.
inline std::vector<NodeId> radius_query(const SpatialIndex& idx, const SpatialGraph& g, NodeId center, double r) {
    g.check_node(center);
    if (!(r > 0.0)) throw DomainError("radius must be positive");
    const auto p = g.coord(center);
    const int dim = g.dim();
    SpatialIndex::Cell lo{0, 0, 0}, hi{0, 0, 0};
    for (int k = 0; k < dim; ++k) {
        const double a = std::floor((p[k] - r) / idx.cell_size());
        const double b = std::floor((p[k] + r) / idx.cell_size());
        lo[k] = a < static_cast<double>(idx.min_cell()[k]) ? idx.min_cell()[k] : static_cast<std::int64_t>(a);
        hi[k] = b > static_cast<double>(idx.max_cell()[k]) ? idx.max_cell()[k] : static_cast<std::int64_t>(b);
        if (lo[k] > hi[k]) return {};
    }
    const double r2 = r * r;
    std::vector<NodeId> out;
    auto scan = [&](const std::vector<NodeId>& bucket) {
        for (NodeId n : bucket)
            if (n != center && g.distance_squared(center, n) <= r2) out.push_back(n);
    };
    double range_cells = 1.0;
    for (int k = 0; k < 3; ++k) range_cells *= static_cast<double>(hi[k] - lo[k] + 1);
    if (range_cells > static_cast<double>(idx.num_cells())) {
        idx.for_each_bucket(scan);
    } else {
        SpatialIndex::Cell c{0, 0, 0};
        for (c[0] = lo[0]; c[0] <= hi[0]; ++c[0])
            for (c[1] = lo[1]; c[1] <= hi[1]; ++c[1])
                for (c[2] = lo[2]; c[2] <= hi[2]; ++c[2])
                    if (const auto* b = idx.bucket(c)) scan(*b);
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace flowlink
