#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "flowlink/autodiff.hpp"
#include "flowlink/errors.hpp"
#include "flowlink/graph.hpp"
#include "flowlink/linegraph.hpp"
#include "flowlink/params.hpp"
#include "flowlink/random.hpp"
#include "flowlink/subgraph.hpp"

namespace flowlink {

enum class LayerKind { gav, edgeconv, gat, sage, gcn };

inline std::string_view to_string(LayerKind k) {
    switch (k) {
        case LayerKind::gav: return "gav";
        case LayerKind::edgeconv: return "edgeconv";
        case LayerKind::gat: return "gat";
        case LayerKind::sage: return "sage";
        case LayerKind::gcn: return "gcn";
    }
    return "?";
}

inline LayerKind parse_layer_kind(std::string_view s) {
    for (auto k : {LayerKind::gav, LayerKind::edgeconv, LayerKind::gat, LayerKind::sage, LayerKind::gcn})
        if (s == to_string(k)) return k;
    throw ConfigError("unknown layer kind '" + std::string(s) + "'");
}

struct GavConfig {
    int d_spatial = 3;
    int d_message = 32;
    int heads = 4;
    int phi2_hidden = 64;
    int readout_hidden = 128;
    int h = 1;
    int k = 1;
    double leaky_slope = 0.01;
    LayerKind layer = LayerKind::gav;
    int ablation_hidden = 32;
    bool include_target_in_incident = true;

    void validate() const {
        if (d_spatial != 2 && d_spatial != 3) throw ConfigError("d_spatial must be 2 or 3");
        if (d_message < 1 || heads < 1 || phi2_hidden < 1 || readout_hidden < 1 || h < 1 || k < 1 ||
            ablation_hidden < 1) {
            throw ConfigError("model dimensions, h and k must be positive");
        }
        if (d_message % heads != 0) {
            throw ConfigError("d_message (" + std::to_string(d_message) + ") is not divisible by heads (" +
                              std::to_string(heads) + ")");
        }
        if (!(leaky_slope >= 0.0)) throw ConfigError("leaky_slope must be non-negative");
    }

    int feature_width() const { return d_spatial + kNumLabels; }
};

inline nlohmann::ordered_json to_json(const GavConfig& c) {
    return {{"d_spatial", c.d_spatial},       {"d_message", c.d_message},
            {"heads", c.heads},               {"phi2_hidden", c.phi2_hidden},
            {"readout_hidden", c.readout_hidden}, {"h", c.h},
            {"k", c.k},                       {"leaky_slope", c.leaky_slope},
            {"layer", to_string(c.layer)},    {"ablation_hidden", c.ablation_hidden},
            {"include_target_in_incident", c.include_target_in_incident}};
}

inline GavConfig gav_config_from_json(const nlohmann::json& j) {
    GavConfig c;
    c.d_spatial = j.at("d_spatial").get<int>();
    c.d_message = j.at("d_message").get<int>();
    c.heads = j.at("heads").get<int>();
    c.phi2_hidden = j.at("phi2_hidden").get<int>();
    c.readout_hidden = j.at("readout_hidden").get<int>();
    c.h = j.at("h").get<int>();
    c.k = j.at("k").get<int>();
    c.leaky_slope = j.at("leaky_slope").get<double>();
    c.layer = parse_layer_kind(j.at("layer").get<std::string>());
    c.ablation_hidden = j.at("ablation_hidden").get<int>();
    c.include_target_in_incident = j.at("include_target_in_incident").get<bool>();
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Parameter blocks. Weights are out x in, biases 1 x out.

namespace detail {

inline void add_linear(ParamSet& ps, const std::string& name, std::size_t in, std::size_t out, double slope, Rng& rng,
                       bool xavier = false, bool bias = true) {
    ps.add(name + ".weight", xavier ? xavier_uniform(out, in, rng) : kaiming_uniform(out, in, slope, rng));
    if (bias) ps.add(name + ".bias", Matrix(1, out));
}

inline void add_mlp(ParamSet& ps, const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
                    double slope, Rng& rng) {
    add_linear(ps, name + ".0", in, hidden, slope, rng);
    add_linear(ps, name + ".1", hidden, out, slope, rng);
}

inline std::string iteration_prefix(int it) { return "mp" + std::to_string(it); }

}  // namespace detail

inline ad::Var dense(ad::Tape& t, ad::Var x, const std::string& name) {
    return ad::linear(t, x, t.param(name + ".weight"), t.param(name + ".bias"));
}

// Two-layer perceptron with leaky ReLU on the hidden layer.
inline ad::Var mlp(ad::Tape& t, ad::Var x, const std::string& name, double slope) {
    return dense(t, ad::leaky_relu(t, dense(t, x, name + ".0"), slope), name + ".1");
}

// Multi-head attention with learned Q/K/V/output projections. Query row r
// attends over the key/value rows listed for it in `nb`.
inline ad::Var multi_head_attention(ad::Tape& t, ad::Var queries, ad::Var keys, ad::Var values, ad::Neighborhoods nb,
                                    const std::string& name, int heads) {
    const std::size_t d = t.value(queries).cols;
    if (heads < 1 || d % static_cast<std::size_t>(heads) != 0) {
        throw ConfigError("attention width " + std::to_string(d) + " is not divisible by " + std::to_string(heads) +
                          " heads");
    }
    if (t.value(keys).rows == 0) throw DomainError("attention over an empty key set");
    ad::Var q = dense(t, queries, name + ".q");
    ad::Var k = dense(t, keys, name + ".k");
    ad::Var v = dense(t, values, name + ".v");
    ad::Var o = ad::attention(t, q, k, v, std::move(nb), heads);
    return dense(t, o, name + ".out");
}

// Single query over all m key/value rows.
inline ad::Var multi_head_attention(ad::Tape& t, ad::Var query, ad::Var keys, ad::Var values, const std::string& name,
                                    int heads) {
    const std::size_t m = t.value(keys).rows;
    if (m == 0) throw DomainError("attention over an empty key set");
    if (t.value(values).rows != m) throw DomainError("keys and values differ in length");
    ad::Neighborhoods nb;
    for (std::uint32_t j = 0; j < m; ++j) nb.index.push_back(j);
    nb.offsets.push_back(static_cast<std::uint32_t>(m));
    return multi_head_attention(t, query, keys, values, std::move(nb), name, heads);
}

inline void add_attention_params(ParamSet& ps, const std::string& name, std::size_t d, Rng& rng) {
    for (const char* part : {".q", ".k", ".v", ".out"}) detail::add_linear(ps, name + part, d, d, 0.0, rng, true);
}

// Neighbourhood {i} U N(i) for each vnode, self first.
inline ad::Neighborhoods closed_neighborhoods(const VectorLineGraph& vlg) {
    ad::Neighborhoods nb;
    for (std::uint32_t i = 0; i < vlg.size(); ++i) {
        nb.index.push_back(i);
        nb.index.insert(nb.index.end(), vlg.vadj[i].begin(), vlg.vadj[i].end());
        nb.offsets.push_back(static_cast<std::uint32_t>(nb.index.size()));
    }
    return nb;
}

inline Matrix label_block(const VectorLineGraph& vlg) {
    Matrix L(vlg.size(), kNumLabels);
    for (std::size_t i = 0; i < vlg.size(); ++i) {
        const auto oh = encode_label(vlg.vnodes[i].label);
        std::copy(oh.begin(), oh.end(), L.row(i));
    }
    return L;
}

inline Matrix embedding_block(const VectorLineGraph& vlg) {
    Matrix E(vlg.size(), static_cast<std::size_t>(vlg.dim));
    for (std::size_t i = 0; i < vlg.size(); ++i)
        for (int c = 0; c < vlg.dim; ++c) E(i, c) = vlg.vnodes[i].embedding[c];
    return E;
}

struct GavLayerOutput {
    ad::Var refined;  // n x d_spatial
    ad::Var scalars;  // n x 1, in (-1, 1)
};

// One GAV message-passing step. Every vnode is updated from the same input
// embeddings: q = phi1(e_i || label_i), keys = values = phi1 over {i} U N(i),
// s = tanh(phi2(attn + q)), refined = s * e_i.
inline GavLayerOutput gav_layer(ad::Tape& t, const VectorLineGraph& vlg, ad::Var embeddings, ad::Var labels,
                                const std::string& prefix, const GavConfig& cfg) {
    ad::Var features = ad::concat_cols(t, embeddings, labels);
    ad::Var projected = ad::leaky_relu(t, dense(t, features, prefix + ".phi1"), cfg.leaky_slope);
    ad::Var mixed = multi_head_attention(t, projected, projected, projected, closed_neighborhoods(vlg),
                                         prefix + ".attn", cfg.heads);
    ad::Var s = ad::tanh(t, mlp(t, ad::add(t, mixed, projected), prefix + ".phi2", cfg.leaky_slope));
    return {ad::scale_rows(t, s, embeddings), s};
}

// ---------------------------------------------------------------------------
// Ablation layers; each maps (e_i || label_i) features to d_spatial outputs.

namespace detail {

// Pairs (i, j) for j in N(i), or {i} U N(i) when `closed`.
struct PairList {
    std::vector<std::uint32_t> first, second, offsets{0};
};

inline PairList neighbor_pairs(const VectorLineGraph& vlg, bool closed) {
    PairList p;
    for (std::uint32_t i = 0; i < vlg.size(); ++i) {
        if (closed) {
            p.first.push_back(i);
            p.second.push_back(i);
        }
        for (auto j : vlg.vadj[i]) {
            p.first.push_back(i);
            p.second.push_back(j);
        }
        p.offsets.push_back(static_cast<std::uint32_t>(p.first.size()));
    }
    return p;
}

}  // namespace detail

inline ad::Var ablation_layer(ad::Tape& t, LayerKind kind, const VectorLineGraph& vlg, ad::Var features,
                              const std::string& prefix, const GavConfig& cfg) {
    const double slope = cfg.leaky_slope;
    const std::size_t n = vlg.size();
    switch (kind) {
        case LayerKind::edgeconv: {
            // mean over neighbours of phi(x_i || x_j - x_i); an isolated vnode
            // uses itself as its only neighbour.
            detail::PairList p;
            for (std::uint32_t i = 0; i < n; ++i) {
                if (vlg.vadj[i].empty()) {
                    p.first.push_back(i);
                    p.second.push_back(i);
                }
                for (auto j : vlg.vadj[i]) {
                    p.first.push_back(i);
                    p.second.push_back(j);
                }
                p.offsets.push_back(static_cast<std::uint32_t>(p.first.size()));
            }
            ad::Var xi = ad::gather_rows(t, features, p.first);
            ad::Var xj = ad::gather_rows(t, features, p.second);
            ad::Var msg = mlp(t, ad::concat_cols(t, xi, ad::sub(t, xj, xi)), prefix + ".phi", slope);
            ad::RowGroups g;
            for (std::size_t i = 0; i < n; ++i) {
                const double w = 1.0 / static_cast<double>(p.offsets[i + 1] - p.offsets[i]);
                for (auto k = p.offsets[i]; k < p.offsets[i + 1]; ++k) g.add(k, w);
                g.close();
            }
            return ad::weighted_row_sum(t, msg, std::move(g));
        }
        case LayerKind::gat: {
            // alpha_ij = softmax_j(a . leaky(W_s x_i + W_n x_j)) over {i} U N(i).
            auto p = detail::neighbor_pairs(vlg, true);
            ad::Var hs = ad::linear(t, features, t.param(prefix + ".att_self.weight"));
            ad::Var hn = ad::linear(t, features, t.param(prefix + ".att_nbr.weight"));
            ad::Var e = ad::leaky_relu(t, ad::add(t, ad::gather_rows(t, hs, p.first), ad::gather_rows(t, hn, p.second)),
                                       0.2);
            ad::Var score = ad::linear(t, e, t.param(prefix + ".att_vec.weight"));
            ad::Var alpha = ad::segment_softmax(t, score, p.offsets);
            ad::Var msg = ad::gather_rows(t, mlp(t, features, prefix + ".phi", slope), p.second);
            return ad::segment_weighted_sum(t, alpha, msg, p.offsets);
        }
        case LayerKind::sage: {
            ad::RowGroups g;
            for (std::uint32_t i = 0; i < n; ++i) {
                const auto& nbrs = vlg.vadj[i];
                for (auto j : nbrs) g.add(j, 1.0 / static_cast<double>(nbrs.size()));
                g.close();
            }
            ad::Var mean = ad::weighted_row_sum(t, features, std::move(g));
            return ad::add(t, mlp(t, features, prefix + ".phi_self", slope), mlp(t, mean, prefix + ".phi_nbr", slope));
        }
        case LayerKind::gcn: {
            // Degrees include the self loop.
            ad::RowGroups g;
            for (std::uint32_t i = 0; i < n; ++i) {
                const double di = static_cast<double>(vlg.vadj[i].size() + 1);
                g.add(i, 1.0 / di);
                for (auto j : vlg.vadj[i]) g.add(j, 1.0 / std::sqrt(di * static_cast<double>(vlg.vadj[j].size() + 1)));
                g.close();
            }
            return mlp(t, ad::weighted_row_sum(t, features, std::move(g)), prefix + ".phi", slope);
        }
        case LayerKind::gav: break;
    }
    throw ConfigError("ablation_layer called with the GAV layer kind");
}

// ---------------------------------------------------------------------------
// Model

struct ForwardResult {
    ad::Var logit;
    ad::Var refined;               // final embeddings, n x d_spatial
    std::vector<ad::Var> scalars;  // per iteration (GAV layer only)
    ad::Var mean_i;                // 1 x d_spatial
    ad::Var mean_j;
};

class GavModel {
public:
    GavModel() = default;

    static GavModel create(const GavConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        GavModel m;
        m.config_ = cfg;
        Rng rng(seed);
        const auto feat = static_cast<std::size_t>(cfg.feature_width());
        const auto ds = static_cast<std::size_t>(cfg.d_spatial);
        const auto hid = static_cast<std::size_t>(cfg.ablation_hidden);
        const double slope = cfg.leaky_slope;
        for (int it = 0; it < cfg.k; ++it) {
            const std::string p = detail::iteration_prefix(it);
            switch (cfg.layer) {
                case LayerKind::gav: {
                    const auto dm = static_cast<std::size_t>(cfg.d_message);
                    detail::add_linear(m.params_, p + ".phi1", feat, dm, slope, rng);
                    add_attention_params(m.params_, p + ".attn", dm, rng);
                    detail::add_mlp(m.params_, p + ".phi2", dm, static_cast<std::size_t>(cfg.phi2_hidden), 1, slope, rng);
                    break;
                }
                case LayerKind::edgeconv:
                    detail::add_mlp(m.params_, p + ".phi", 2 * feat, hid, ds, slope, rng);
                    break;
                case LayerKind::gat:
                    detail::add_linear(m.params_, p + ".att_self", feat, hid, slope, rng, true, false);
                    detail::add_linear(m.params_, p + ".att_nbr", feat, hid, slope, rng, true, false);
                    detail::add_linear(m.params_, p + ".att_vec", hid, 1, slope, rng, true, false);
                    detail::add_mlp(m.params_, p + ".phi", feat, hid, ds, slope, rng);
                    break;
                case LayerKind::sage:
                    detail::add_mlp(m.params_, p + ".phi_self", feat, hid, ds, slope, rng);
                    detail::add_mlp(m.params_, p + ".phi_nbr", feat, hid, ds, slope, rng);
                    break;
                case LayerKind::gcn:
                    detail::add_mlp(m.params_, p + ".phi", feat, hid, ds, slope, rng);
                    break;
            }
        }
        detail::add_mlp(m.params_, "readout.phi3", 2 * ds, static_cast<std::size_t>(cfg.readout_hidden), 1, slope, rng);
        return m;
    }

    const GavConfig& config() const noexcept { return config_; }
    ParamSet& params() noexcept { return params_; }
    const ParamSet& params() const noexcept { return params_; }
    std::size_t param_count() const { return params_.scalar_count(); }

    // k rounds of message passing; labels are re-attached every round.
    ForwardResult forward(ad::Tape& t, const VectorLineGraph& vlg) const {
        if (vlg.dim != config_.d_spatial) {
            throw ValidationError("line graph has d_spatial " + std::to_string(vlg.dim) + ", model expects " +
                                  std::to_string(config_.d_spatial));
        }
        ForwardResult r;
        ad::Var labels = t.constant(label_block(vlg));
        ad::Var emb = t.constant(embedding_block(vlg));
        for (int it = 0; it < config_.k; ++it) {
            const std::string p = detail::iteration_prefix(it);
            if (config_.layer == LayerKind::gav) {
                auto out = gav_layer(t, vlg, emb, labels, p, config_);
                emb = out.refined;
                r.scalars.push_back(out.scalars);
            } else {
                emb = ablation_layer(t, config_.layer, vlg, ad::concat_cols(t, emb, labels), p, config_);
            }
        }
        r.refined = emb;
        readout(t, vlg, r);
        return r;
    }

    // mean over incident_i || mean over incident_j -> phi3 -> logit.
    void readout(ad::Tape& t, const VectorLineGraph& vlg, ForwardResult& r) const {
        const auto set_i = incident_set(vlg, vlg.incident_i);
        const auto set_j = incident_set(vlg, vlg.incident_j);
        r.mean_i = ad::mean_rows(t, r.refined, set_i);
        r.mean_j = ad::mean_rows(t, r.refined, set_j);
        r.logit = mlp(t, ad::concat_cols(t, r.mean_i, r.mean_j), "readout.phi3", config_.leaky_slope);
    }

    double logit(const VectorLineGraph& vlg) const {
        ad::Tape t(&params_);
        return t.scalar(forward(t, vlg).logit);
    }

private:
    std::vector<std::uint32_t> incident_set(const VectorLineGraph& vlg, const std::vector<std::uint32_t>& full) const {
        if (config_.include_target_in_incident) return full;
        std::vector<std::uint32_t> out;
        for (auto x : full)
            if (x != vlg.target_vnode) out.push_back(x);
        // A target node without other edges falls back to the target vnode.
        if (out.empty()) out.push_back(vlg.target_vnode);
        return out;
    }

    GavConfig config_;
    ParamSet params_;
};

// Angle in degrees between two vectors; NaN when either is the zero vector.
inline double angle_degrees(std::span<const double> a, std::span<const double> b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        dot += a[k] * b[k];
        na += a[k] * a[k];
        nb += b[k] * b[k];
    }
    if (na == 0.0 || nb == 0.0) return std::numeric_limits<double>::quiet_NaN();
    const double c = std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
    return std::acos(c) * 180.0 / 3.14159265358979323846;
}

// ---------------------------------------------------------------------------
// Prediction

struct EdgeScalar {
    NodeId tail = 0;  // global ids, orientation before the GAV update
    NodeId head = 0;
    double s = 0.0;      // last iteration
    double scale = 0.0;  // product of s over all iterations: refined = scale * raw
    int label = 3;
};

struct PredictionRecord {
    NodeId u = 0;
    NodeId v = 0;
    int label = -1;  // -1 when unknown
    double probability = 0.5;
    double logit = 0.0;
    double angle_degrees = 0.0;
    std::vector<EdgeScalar> edges;  // last message-passing iteration
};

inline PredictionRecord predict_line_graph(const GavModel& model, const EnclosingSubgraph& sub,
                                           const VectorLineGraph& vlg) {
    ad::Tape t(&model.params());
    ForwardResult r = model.forward(t, vlg);
    PredictionRecord rec;
    rec.u = sub.local_to_global[sub.target_i];
    rec.v = sub.local_to_global[sub.target_j];
    rec.logit = t.scalar(r.logit);
    rec.probability = ad::sigmoid(rec.logit);
    rec.angle_degrees = angle_degrees(t.value(r.mean_i).data, t.value(r.mean_j).data);
    if (!r.scalars.empty()) {
        const Matrix& s = t.value(r.scalars.back());
        for (std::size_t i = 0; i < vlg.size(); ++i) {
            const VNode& n = vlg.vnodes[i];
            double scale = 1.0;
            for (auto v : r.scalars) scale *= t.value(v).data[i];
            rec.edges.push_back({sub.local_to_global[n.tail], sub.local_to_global[n.head], s.data[i], scale, n.label});
        }
    }
    return rec;
}

// Subgraph -> line graph -> message passing -> readout for the pair (u, v),
// with u as the first target.
inline PredictionRecord predict(const SpatialGraph& g, NodeId u, NodeId v, const GavModel& model) {
    if (g.dim() != model.config().d_spatial) {
        throw ValidationError("graph has d_spatial " + std::to_string(g.dim()) + ", model expects " +
                              std::to_string(model.config().d_spatial));
    }
    const EnclosingSubgraph sub = extract_enclosing_subgraph(g, u, v, model.config().h);
    return predict_line_graph(model, sub, build_line_graph(sub));
}

}  // namespace flowlink
