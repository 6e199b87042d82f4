#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "json.hpp"

#include "flowlink/errors.hpp"
#include "flowlink/graph.hpp"
#include "flowlink/random.hpp"

namespace flowlink {

enum class Split : std::uint8_t { train, val, test };

inline std::string_view to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

inline Split parse_split(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw ValidationError("unknown split '" + std::string(s) + "'");
}

struct LinkSample {
    NodeId u = 0;
    NodeId v = 0;
    int label = 0;  // 1 = real edge, 0 = sampled
    Split split = Split::train;

    friend bool operator==(const LinkSample&, const LinkSample&) = default;
};

struct DatasetSplit {
    std::shared_ptr<const SpatialGraph> graph;
    std::vector<LinkSample> samples;
    std::uint64_t seed = 0;
    double delta = 0.0;
    EdgeLengthStats stats;

    std::vector<LinkSample> select(Split s) const {
        std::vector<LinkSample> out;
        for (const auto& x : samples)
            if (x.split == s) out.push_back(x);
        return out;
    }
};

// Distance threshold for spatially plausible negatives: mean + 2 std of edge lengths.
inline double negative_sampling_threshold(const EdgeLengthStats& s) { return s.mean + 2.0 * s.std; }

// ---------------------------------------------------------------------------
// Negative sampling

inline std::vector<LinkSample> sample_negative_links(const SpatialGraph& g, std::size_t count, std::uint64_t seed,
                                                     std::optional<double> delta_override = std::nullopt) {
    if (count == 0) throw DomainError("negative sample count must be >= 1");
    if (g.num_nodes() < 2) throw SamplingError("graph has fewer than two nodes", 0);
    const double delta = delta_override ? *delta_override : negative_sampling_threshold(edge_length_stats(g));
    if (!(delta > 0.0)) throw SamplingError("distance threshold is not positive", 0);

    const SpatialIndex index(g, delta);
    Rng rng(seed);
    std::unordered_set<std::uint64_t> seen;
    std::vector<LinkSample> out;
    out.reserve(count);
    const std::size_t budget = 100 * count;
    std::vector<NodeId> candidates;
    for (std::size_t attempt = 0; attempt < budget && out.size() < count; ++attempt) {
        const auto u = static_cast<NodeId>(uniform_index(rng, g.num_nodes()));
        candidates.clear();
        for (NodeId v : radius_query(index, g, u, delta))
            if (!g.has_edge(u, v)) candidates.push_back(v);
        if (candidates.empty()) continue;
        const NodeId v = candidates[uniform_index(rng, candidates.size())];
        if (!seen.insert(edge_key(u, v)).second) continue;
        const Edge e = canonical(u, v);
        out.push_back({e.u, e.v, 0, Split::train});
    }
    if (out.size() < count) {
        throw SamplingError("negative sampling retry budget exhausted: requested " + std::to_string(count),
                            out.size());
    }
    return out;
}

// Per-class shuffled 80/10/10 assignment. Positives are all edges of g.
inline DatasetSplit split_links(std::shared_ptr<const SpatialGraph> g, std::vector<LinkSample> negatives,
                                std::uint64_t seed) {
    DatasetSplit ds;
    ds.graph = g;
    ds.seed = seed;
    ds.stats = edge_length_stats(*g);
    ds.delta = negative_sampling_threshold(ds.stats);

    std::vector<LinkSample> positives;
    positives.reserve(g->num_edges());
    for (const Edge& e : g->edges()) positives.push_back({e.u, e.v, 1, Split::train});
    for (auto& s : negatives) s.label = 0;

    Rng rng(seed);
    auto assign = [&](std::vector<LinkSample>& cls) {
        shuffle(cls.begin(), cls.end(), rng);
        const std::size_t n = cls.size();
        const std::size_t n_val = n / 10;
        const std::size_t n_test = n / 10;
        const std::size_t n_train = n - n_val - n_test;
        for (std::size_t i = 0; i < n; ++i) {
            cls[i].split = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
        }
    };
    assign(positives);
    assign(negatives);
    ds.samples = std::move(positives);
    ds.samples.insert(ds.samples.end(), negatives.begin(), negatives.end());
    return ds;
}

inline DatasetSplit split_links(const SpatialGraph& g, std::vector<LinkSample> negatives, std::uint64_t seed) {
    return split_links(std::make_shared<const SpatialGraph>(g), std::move(negatives), seed);
}

// Full preparation: as many negatives as edges, sampled once, then split.
inline DatasetSplit prepare_dataset(std::shared_ptr<const SpatialGraph> g, std::uint64_t seed,
                                    std::optional<double> delta_override = std::nullopt) {
    auto negatives = sample_negative_links(*g, g->num_edges(), derive_seed(seed, "negatives"), delta_override);
    DatasetSplit ds = split_links(g, std::move(negatives), derive_seed(seed, "split"));
    ds.seed = seed;
    if (delta_override) ds.delta = *delta_override;
    return ds;
}

inline DatasetSplit prepare_dataset(const SpatialGraph& g, std::uint64_t seed,
                                    std::optional<double> delta_override = std::nullopt) {
    return prepare_dataset(std::make_shared<const SpatialGraph>(g), seed, delta_override);
}

// ---------------------------------------------------------------------------
// Synthetic networks

enum class NetworkKind { vessel_tree, road_grid };

inline NetworkKind parse_network_kind(std::string_view s) {
    if (s == "vessel" || s == "vessel-like-tree") return NetworkKind::vessel_tree;
    if (s == "road" || s == "road-like-grid") return NetworkKind::road_grid;
    throw ValidationError("unknown network kind '" + std::string(s) + "'");
}

namespace detail {

struct DisjointSet {
    std::vector<std::size_t> parent;
    explicit DisjointSet(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    std::size_t find(std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    }
    bool unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return false;
        parent[a] = b;
        return true;
    }
};

inline std::array<double, 3> normalized(std::array<double, 3> v) {
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (n == 0.0) return {1.0, 0.0, 0.0};
    return {v[0] / n, v[1] / n, v[2] / n};
}

// Branching growth inside a cube: chains extend with persistent direction,
// degree-2 nodes occasionally sprout a side branch. Node density is about
// one per unit volume so that spatially close, unconnected pairs exist.
inline SpatialGraph vessel_tree(std::size_t n, Rng& rng) {
    const double side = std::cbrt(static_cast<double>(n));
    std::vector<std::array<double, 3>> pos, dir;
    std::vector<int> degree;
    std::vector<Edge> edges;
    std::vector<NodeId> active;
    pos.push_back({uniform_real(rng, 0, side), uniform_real(rng, 0, side), uniform_real(rng, 0, side)});
    dir.push_back(normalized({standard_normal(rng), standard_normal(rng), standard_normal(rng)}));
    degree.push_back(0);
    active.push_back(0);

    while (pos.size() < n) {
        const std::size_t slot = uniform_index(rng, active.size());
        const NodeId parent = active[slot];
        if (degree[parent] >= 3) {
            active[slot] = active.back();
            active.pop_back();
            continue;
        }
        const double wobble = degree[parent] >= 2 ? 1.5 : 0.35;
        std::array<double, 3> d = dir[parent];
        for (auto& c : d) c += wobble * standard_normal(rng);
        d = normalized(d);
        const double step = std::clamp(1.0 + 0.15 * standard_normal(rng), 0.6, 1.4);
        std::array<double, 3> p{};
        for (int k = 0; k < 3; ++k) {
            p[k] = pos[parent][k] + step * d[k];
            if (p[k] < 0.0 || p[k] > side) {
                d[k] = -d[k];
                p[k] = pos[parent][k] + step * d[k];
            }
        }
        const auto child = static_cast<NodeId>(pos.size());
        pos.push_back(p);
        dir.push_back(d);
        degree.push_back(1);
        ++degree[parent];
        edges.push_back(canonical(parent, child));
        active.push_back(child);
    }

    std::vector<double> coords;
    coords.reserve(n * 3);
    for (const auto& p : pos) coords.insert(coords.end(), p.begin(), p.end());
    SpatialGraph tree = build_graph(3, coords, edges);

    // Loop-closing edges: 10% of n, between close nodes that are not yet adjacent.
    const std::size_t loops = n / 10;
    const double reach = edge_length_stats(tree).mean;
    const SpatialIndex index(tree, reach);
    std::unordered_set<std::uint64_t> present;
    for (const Edge& e : edges) present.insert(edge_key(e.u, e.v));
    std::size_t added = 0;
    for (std::size_t attempt = 0; attempt < 100 * loops && added < loops; ++attempt) {
        const auto a = static_cast<NodeId>(uniform_index(rng, n));
        if (degree[a] >= 3) continue;
        NodeId best = a;
        double best_d = reach * reach;
        for (NodeId b : radius_query(index, tree, a, reach)) {
            if (degree[b] >= 3 || present.count(edge_key(a, b))) continue;
            const double d2 = tree.distance_squared(a, b);
            if (d2 < best_d) {
                best_d = d2;
                best = b;
            }
        }
        if (best == a) continue;
        present.insert(edge_key(a, best));
        edges.push_back(canonical(a, best));
        ++degree[a];
        ++degree[best];
        ++added;
    }
    return build_graph(3, std::move(coords), edges);
}

// Jittered unit lattice; a random spanning tree is kept and each remaining
// lattice edge survives with probability 0.6.
inline SpatialGraph road_grid(std::size_t n, Rng& rng) {
    const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
    std::vector<double> coords;
    coords.reserve(n * 2);
    for (std::size_t i = 0; i < n; ++i) {
        coords.push_back(static_cast<double>(i % cols) + uniform_real(rng, -0.3, 0.3));
        coords.push_back(static_cast<double>(i / cols) + uniform_real(rng, -0.3, 0.3));
    }
    std::vector<Edge> lattice;
    for (std::size_t i = 0; i < n; ++i) {
        if ((i % cols) + 1 < cols && i + 1 < n) lattice.push_back({static_cast<NodeId>(i), static_cast<NodeId>(i + 1)});
        if (i + cols < n) lattice.push_back({static_cast<NodeId>(i), static_cast<NodeId>(i + cols)});
    }
    shuffle(lattice.begin(), lattice.end(), rng);
    DisjointSet dsu(n);
    std::vector<Edge> kept;
    std::vector<Edge> extra;
    for (const Edge& e : lattice) (dsu.unite(e.u, e.v) ? kept : extra).push_back(e);
    for (const Edge& e : extra)
        if (uniform01(rng) < 0.4) kept.push_back(e);
    return build_graph(2, std::move(coords), kept);
}

}  // namespace detail

inline SpatialGraph generate_synthetic_network(NetworkKind kind, std::size_t num_nodes, std::uint64_t seed) {
    if (num_nodes < 10) throw DomainError("synthetic networks need at least 10 nodes");
    Rng rng(seed);
    return kind == NetworkKind::vessel_tree ? detail::vessel_tree(num_nodes, rng) : detail::road_grid(num_nodes, rng);
}

inline bool is_connected(const SpatialGraph& g) {
    if (g.num_nodes() == 0) return true;
    std::vector<char> seen(g.num_nodes(), 0);
    std::vector<NodeId> stack{0};
    seen[0] = 1;
    std::size_t count = 1;
    while (!stack.empty()) {
        const NodeId x = stack.back();
        stack.pop_back();
        for (NodeId y : g.neighbors(x)) {
            if (!seen[y]) {
                seen[y] = 1;
                ++count;
                stack.push_back(y);
            }
        }
    }
    return count == g.num_nodes();
}

// ---------------------------------------------------------------------------
// CSV files

namespace csv {

// Shortest representation that parses back to the same double.
inline std::string format_double(double x) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        std::string_view f = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
        while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
        while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
        out.push_back(f);
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

template <typename T>
T parse_number(std::string_view field, std::size_t line) {
    T value{};
    auto res = std::from_chars(field.data(), field.data() + field.size(), value);
    if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
        throw ParseError("malformed number '" + std::string(field) + "'", line);
    }
    return value;
}

inline std::ifstream open_in(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw IoError("cannot open " + p.string());
    return in;
}

inline std::ofstream open_out(const std::filesystem::path& p) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot write " + p.string());
    return out;
}

}  // namespace csv

inline SpatialGraph load_graph_csv(const std::filesystem::path& nodes_path, const std::filesystem::path& edges_path) {
    auto nin = csv::open_in(nodes_path);
    std::string line;
    std::size_t lineno = 1;
    if (!std::getline(nin, line)) throw ParseError("missing header in " + nodes_path.string(), 1);
    const auto header = csv::split_fields(line);
    if (header.size() < 3 || header[0] != "id") throw ParseError("expected header id,x,y[,z]", 1);
    const int dim = static_cast<int>(header.size()) - 1;
    std::vector<double> coords;
    std::size_t next_id = 0;
    while (std::getline(nin, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto f = csv::split_fields(line);
        if (f.size() != header.size()) {
            throw ValidationError("dimension mismatch at line " + std::to_string(lineno) + ": expected " +
                                  std::to_string(header.size()) + " fields, got " + std::to_string(f.size()));
        }
        const auto id = csv::parse_number<std::uint64_t>(f[0], lineno);
        if (id != next_id) throw ParseError("node ids must be dense and ascending", lineno);
        ++next_id;
        for (int k = 0; k < dim; ++k) coords.push_back(csv::parse_number<double>(f[k + 1], lineno));
    }
    if (next_id == 0) throw ValidationError("empty graph: " + nodes_path.string() + " has no nodes");

    auto ein = csv::open_in(edges_path);
    lineno = 1;
    if (!std::getline(ein, line)) throw ParseError("missing header in " + edges_path.string(), 1);
    const auto eh = csv::split_fields(line);
    if (eh.size() != 2 || eh[0] != "u" || eh[1] != "v") throw ParseError("expected header u,v", 1);
    std::vector<Edge> edges;
    while (std::getline(ein, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto f = csv::split_fields(line);
        if (f.size() != 2) throw ParseError("expected two fields", lineno);
        edges.push_back({csv::parse_number<NodeId>(f[0], lineno), csv::parse_number<NodeId>(f[1], lineno)});
    }
    return build_graph(dim, std::move(coords), edges);
}

inline void save_graph_csv(const SpatialGraph& g, const std::filesystem::path& nodes_path,
                           const std::filesystem::path& edges_path) {
    auto nout = csv::open_out(nodes_path);
    nout << (g.dim() == 3 ? "id,x,y,z\n" : "id,x,y\n");
    for (NodeId n = 0; n < g.num_nodes(); ++n) {
        nout << n;
        for (double c : g.coord(n)) nout << ',' << csv::format_double(c);
        nout << '\n';
    }
    auto eout = csv::open_out(edges_path);
    eout << "u,v\n";
    for (const Edge& e : g.edges()) eout << e.u << ',' << e.v << '\n';
    if (!nout || !eout) throw IoError("failed writing graph files");
}

inline void save_samples_csv(const std::vector<LinkSample>& samples, const std::filesystem::path& path) {
    auto out = csv::open_out(path);
    out << "u,v,label,split\n";
    for (const auto& s : samples) out << s.u << ',' << s.v << ',' << s.label << ',' << to_string(s.split) << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

inline std::vector<LinkSample> load_samples_csv(const std::filesystem::path& path) {
    auto in = csv::open_in(path);
    std::string line;
    std::size_t lineno = 1;
    if (!std::getline(in, line)) throw ParseError("missing header", 1);
    std::vector<LinkSample> out;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto f = csv::split_fields(line);
        if (f.size() != 4) throw ParseError("expected u,v,label,split", lineno);
        LinkSample s;
        s.u = csv::parse_number<NodeId>(f[0], lineno);
        s.v = csv::parse_number<NodeId>(f[1], lineno);
        s.label = csv::parse_number<int>(f[2], lineno);
        if (s.label != 0 && s.label != 1) throw ParseError("label must be 0 or 1", lineno);
        s.split = parse_split(f[3]);
        out.push_back(s);
    }
    return out;
}

inline nlohmann::ordered_json split_metadata(const DatasetSplit& ds) {
    nlohmann::ordered_json meta;
    meta["seed"] = ds.seed;
    meta["delta"] = ds.delta;
    meta["mean"] = ds.stats.mean;
    meta["std"] = ds.stats.std;
    meta["d_spatial"] = ds.graph->dim();
    meta["num_nodes"] = ds.graph->num_nodes();
    meta["num_edges"] = ds.graph->num_edges();
    std::size_t counts[2][3] = {};
    for (const auto& s : ds.samples) ++counts[s.label][static_cast<int>(s.split)];
    for (int label : {1, 0}) {
        auto& c = meta[label ? "positives" : "negatives"];
        c["train"] = counts[label][0];
        c["val"] = counts[label][1];
        c["test"] = counts[label][2];
        c["total"] = counts[label][0] + counts[label][1] + counts[label][2];
    }
    return meta;
}

// Writes nodes.csv, edges.csv, splits.csv and meta.json into `dir`.
inline void save_dataset(const DatasetSplit& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_graph_csv(*ds.graph, dir / "nodes.csv", dir / "edges.csv");
    save_samples_csv(ds.samples, dir / "splits.csv");
    auto out = csv::open_out(dir / "meta.json");
    out << split_metadata(ds).dump(2) << '\n';
}

inline DatasetSplit load_dataset(const std::filesystem::path& dir) {
    DatasetSplit ds;
    ds.graph = std::make_shared<const SpatialGraph>(load_graph_csv(dir / "nodes.csv", dir / "edges.csv"));
    ds.samples = load_samples_csv(dir / "splits.csv");
    for (const auto& s : ds.samples) {
        ds.graph->check_node(s.u);
        ds.graph->check_node(s.v);
    }
    auto in = csv::open_in(dir / "meta.json");
    nlohmann::json meta;
    try {
        in >> meta;
        ds.seed = meta.at("seed").get<std::uint64_t>();
        ds.delta = meta.at("delta").get<double>();
        ds.stats = {meta.at("mean").get<double>(), meta.at("std").get<double>()};
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed meta.json: ") + e.what());
    }
    return ds;
}

}  // namespace flowlink
