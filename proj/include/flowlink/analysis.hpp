#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "flowlink/errors.hpp"
#include "flowlink/graph.hpp"
#include "flowlink/linegraph.hpp"
#include "flowlink/model.hpp"
#include "flowlink/random.hpp"
#include "flowlink/subgraph.hpp"

namespace flowlink {

// ---------------------------------------------------------------------------
// Invariance harness

enum class InvarianceMode { translate, rotate };

inline InvarianceMode parse_invariance_mode(std::string_view s) {
    if (s == "translate") return InvarianceMode::translate;
    if (s == "rotate") return InvarianceMode::rotate;
    throw ConfigError("unknown invariance mode '" + std::string(s) + "' (expected translate or rotate)");
}

struct InvarianceSeries {
    std::string axis;            // "x", "y", "z"; "shift" for translations
    std::vector<double> values;  // probability per angle / shift
    double std = 0.0;            // population standard deviation
};

struct InvarianceReport {
    InvarianceMode mode = InvarianceMode::translate;
    NodeId u = 0, v = 0;
    double baseline_logit = 0.0;
    double baseline_probability = 0.0;
    std::vector<InvarianceSeries> series;
    double max_abs_logit_diff = 0.0;
};

inline double population_std(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    // Shifted by the first value so a constant series gives exactly 0.
    const double k = xs.front();
    double mean = 0.0;
    for (double x : xs) mean += x - k;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - k - mean) * (x - k - mean);
    return std::sqrt(var / static_cast<double>(xs.size()));
}

// Rotation by `degrees` about one coordinate axis (0 = x, 1 = y, 2 = z).
// In 2D only the z axis applies.
inline std::array<std::array<double, 3>, 3> axis_rotation(int axis, double degrees) {
    const double a = degrees * 3.14159265358979323846 / 180.0;
    const double c = std::cos(a), s = std::sin(a);
    switch (axis) {
        case 0: return {{{1, 0, 0}, {0, c, -s}, {0, s, c}}};
        case 1: return {{{c, 0, s}, {0, 1, 0}, {-s, 0, c}}};
        default: return {{{c, -s, 0}, {s, c, 0}, {0, 0, 1}}};
    }
}

inline void rotate_subgraph(EnclosingSubgraph& sub, int axis, double degrees) {
    const auto r = axis_rotation(axis, degrees);
    const auto d = static_cast<std::size_t>(sub.dim);
    for (LocalId n = 0; n < sub.num_nodes(); ++n) {
        double* p = sub.coord(n);
        std::array<double, 3> x{};
        for (std::size_t k = 0; k < d; ++k) x[k] = p[k];
        for (std::size_t i = 0; i < d; ++i) {
            double acc = 0.0;
            for (std::size_t k = 0; k < 3; ++k) acc += r[i][k] * x[k];
            p[i] = acc;
        }
    }
}

inline void translate_subgraph(EnclosingSubgraph& sub, std::span<const double> shift) {
    const auto d = static_cast<std::size_t>(sub.dim);
    for (LocalId n = 0; n < sub.num_nodes(); ++n) {
        double* p = sub.coord(n);
        for (std::size_t k = 0; k < d; ++k) p[k] += shift[k];
    }
}

// translate: `num_shifts` seeded integer shifts in [-1000, 1000]^d, compared
// by exact logit equality. rotate: 0..359 degrees per axis.
inline InvarianceReport invariance_harness(const GavModel& model, const SpatialGraph& g, NodeId u, NodeId v,
                                           InvarianceMode mode, std::uint64_t seed = 0, int num_shifts = 100) {
    const EnclosingSubgraph base = extract_enclosing_subgraph(g, u, v, model.config().h);
    InvarianceReport rep;
    rep.mode = mode;
    rep.u = u;
    rep.v = v;
    rep.baseline_logit = model.logit(build_line_graph(base));
    rep.baseline_probability = ad::sigmoid(rep.baseline_logit);

    auto score = [&](const EnclosingSubgraph& sub) {
        const double z = model.logit(build_line_graph(sub));
        rep.max_abs_logit_diff = std::max(rep.max_abs_logit_diff, std::abs(z - rep.baseline_logit));
        return ad::sigmoid(z);
    };

    if (mode == InvarianceMode::translate) {
        InvarianceSeries ser{"shift", {}, 0.0};
        Rng rng(derive_seed(seed, "translate"));
        std::vector<double> shift(static_cast<std::size_t>(g.dim()));
        for (int i = 0; i < num_shifts; ++i) {
            for (auto& x : shift) x = static_cast<double>(uniform_index(rng, 2001)) - 1000.0;
            EnclosingSubgraph sub = base;
            translate_subgraph(sub, shift);
            ser.values.push_back(score(sub));
        }
        ser.std = population_std(ser.values);
        rep.series.push_back(std::move(ser));
        return rep;
    }

    const std::vector<int> axes = g.dim() == 2 ? std::vector<int>{2} : std::vector<int>{0, 1, 2};
    for (int axis : axes) {
        InvarianceSeries ser{std::string(1, "xyz"[axis]), {}, 0.0};
        for (int deg = 0; deg < 360; ++deg) {
            EnclosingSubgraph sub = base;
            rotate_subgraph(sub, axis, deg);
            ser.values.push_back(score(sub));
        }
        ser.std = population_std(ser.values);
        rep.series.push_back(std::move(ser));
    }
    return rep;
}

inline nlohmann::ordered_json to_json(const InvarianceReport& r) {
    nlohmann::ordered_json j;
    j["mode"] = r.mode == InvarianceMode::translate ? "translate" : "rotate";
    j["u"] = r.u;
    j["v"] = r.v;
    j["baseline_logit"] = r.baseline_logit;
    j["baseline_prob"] = r.baseline_probability;
    j["max_abs_logit_diff"] = r.max_abs_logit_diff;
    auto& ser = j["series"] = nlohmann::ordered_json::array();
    for (const auto& s : r.series) ser.push_back({{"axis", s.axis}, {"std", s.std}, {"values", s.values}});
    return j;
}

// ---------------------------------------------------------------------------
// Interpretability

// Edge direction after applying the sign of its refined vector: a negative
// scale swaps tail and head.
struct OrientedEdge {
    NodeId tail = 0;
    NodeId head = 0;
    double magnitude = 0.0;
    int label = 3;
};

inline OrientedEdge orient(const EdgeScalar& e) {
    if (e.scale < 0.0) return {e.head, e.tail, std::abs(e.s), e.label};
    return {e.tail, e.head, std::abs(e.s), e.label};
}

inline nlohmann::ordered_json explain_json(const PredictionRecord& r) {
    nlohmann::ordered_json j;
    j["u"] = r.u;
    j["v"] = r.v;
    j["label"] = r.label;
    j["prob"] = r.probability;
    j["logit"] = r.logit;
    if (std::isnan(r.angle_degrees)) j["angle_deg"] = nullptr;
    else j["angle_deg"] = r.angle_degrees;
    auto& edges = j["edges"] = nlohmann::ordered_json::array();
    for (const auto& e : r.edges) {
        const OrientedEdge o = orient(e);
        edges.push_back({{"tail", o.tail}, {"head", o.head}, {"s", e.s}, {"magnitude", o.magnitude}, {"label", e.label}});
    }
    return j;
}

inline void interpretability_export(const std::vector<PredictionRecord>& records, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& r : records) out << explain_json(r).dump() << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Sink / source consistency

enum class FlowRole { source, sink, mixed, undefined };

// Role of `node` from the oriented non-target edges touching it.
inline FlowRole flow_role(const PredictionRecord& r, NodeId node) {
    int away = 0, toward = 0;
    for (const auto& e : r.edges) {
        if (e.label == 0) continue;
        const OrientedEdge o = orient(e);
        if (o.tail == node) ++away;
        else if (o.head == node) ++toward;
    }
    if (away + toward == 0) return FlowRole::undefined;
    if (toward == 0) return FlowRole::source;
    if (away == 0) return FlowRole::sink;
    return FlowRole::mixed;
}

enum class Consistency { consistent, inconsistent, undefined };

inline Consistency sample_consistency(const PredictionRecord& r) {
    const FlowRole a = flow_role(r, r.u);
    const FlowRole b = flow_role(r, r.v);
    if (a == FlowRole::undefined || b == FlowRole::undefined) return Consistency::undefined;
    if (a == FlowRole::mixed || b == FlowRole::mixed) return Consistency::inconsistent;
    return Consistency::consistent;
}

struct ConsistencyStats {
    std::size_t consistent = 0;
    std::size_t inconsistent = 0;
    std::size_t undefined = 0;
    double percentage = 0.0;  // consistent / (consistent + inconsistent) * 100
};

inline ConsistencyStats sink_source_consistency(const std::vector<PredictionRecord>& records) {
    ConsistencyStats st;
    for (const auto& r : records) {
        switch (sample_consistency(r)) {
            case Consistency::consistent: ++st.consistent; break;
            case Consistency::inconsistent: ++st.inconsistent; break;
            case Consistency::undefined: ++st.undefined; break;
        }
    }
    const std::size_t defined = st.consistent + st.inconsistent;
    st.percentage = defined ? 100.0 * static_cast<double>(st.consistent) / static_cast<double>(defined) : 0.0;
    return st;
}

inline nlohmann::ordered_json to_json(const ConsistencyStats& s) {
    return {{"consistent", s.consistent},
            {"inconsistent", s.inconsistent},
            {"undefined", s.undefined},
            {"percentage", s.percentage},
            {"definition",
             "a target is a source if every oriented non-target edge at it points away, a sink if every one points "
             "toward it; a sample is consistent when both targets are sinks or sources"}};
}

// ---------------------------------------------------------------------------
// Certainty statistics

struct CertaintyStats {
    std::optional<double> certain_mean_abs_s;    // prob > 0.9 or < 0.1
    std::optional<double> uncertain_mean_abs_s;  // 0.4 < prob < 0.6
    std::size_t certain_samples = 0;
    std::size_t uncertain_samples = 0;
};

inline CertaintyStats certainty_stats(const std::vector<PredictionRecord>& records) {
    double sum_c = 0.0, sum_u = 0.0;
    std::size_t n_c = 0, n_u = 0;
    CertaintyStats st;
    for (const auto& r : records) {
        const double p = r.probability;
        const bool certain = p > 0.9 || p < 0.1;
        const bool uncertain = p > 0.4 && p < 0.6;
        if (!certain && !uncertain) continue;
        (certain ? st.certain_samples : st.uncertain_samples)++;
        for (const auto& e : r.edges) {
            if (certain) sum_c += std::abs(e.s), ++n_c;
            else sum_u += std::abs(e.s), ++n_u;
        }
    }
    if (n_c) st.certain_mean_abs_s = sum_c / static_cast<double>(n_c);
    if (n_u) st.uncertain_mean_abs_s = sum_u / static_cast<double>(n_u);
    return st;
}

inline nlohmann::ordered_json to_json(const CertaintyStats& s) {
    auto opt = [](const std::optional<double>& x) { return x ? nlohmann::ordered_json(*x) : nlohmann::ordered_json(); };
    return {{"certain_mean_abs_s", opt(s.certain_mean_abs_s)},
            {"certain_samples", s.certain_samples},
            {"uncertain_mean_abs_s", opt(s.uncertain_mean_abs_s)},
            {"uncertain_samples", s.uncertain_samples}};
}

// ---------------------------------------------------------------------------
// Toy bifurcation

// Planar formation with unit edges: target n_i = (0,0) -> n_j = (1,0), an
// upstream edge n_j - (2,0) and two branches at n_i spanning psi degrees,
// symmetric about the negative x axis.
inline SpatialGraph toy_bifurcation_graph(double psi_degrees, int dim) {
    if (!(psi_degrees >= 0.0 && psi_degrees <= 360.0)) throw DomainError("bifurcation angle must be in [0, 360]");
    const double half = psi_degrees * 3.14159265358979323846 / 360.0;
    const std::array<std::array<double, 2>, 5> xy{{{0.0, 0.0},
                                                   {1.0, 0.0},
                                                   {2.0, 0.0},
                                                   {-std::cos(half), std::sin(half)},
                                                   {-std::cos(half), -std::sin(half)}}};
    std::vector<double> coords;
    for (const auto& p : xy) {
        coords.push_back(p[0]);
        coords.push_back(p[1]);
        if (dim == 3) coords.push_back(0.0);
    }
    const std::vector<Edge> edges{{0, 1}, {1, 2}, {0, 3}, {0, 4}};
    return build_graph(dim, std::move(coords), edges);
}

inline PredictionRecord toy_bifurcation(double psi_degrees, const GavModel& model) {
    return predict(toy_bifurcation_graph(psi_degrees, model.config().d_spatial), 0, 1, model);
}

}  // namespace flowlink
