#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "flowlink/autodiff.hpp"
#include "flowlink/dataset.hpp"
#include "flowlink/errors.hpp"
#include "flowlink/linegraph.hpp"
#include "flowlink/metrics.hpp"
#include "flowlink/model.hpp"
#include "flowlink/parallel.hpp"
#include "flowlink/params.hpp"
#include "flowlink/random.hpp"
#include "flowlink/subgraph.hpp"

namespace flowlink {

struct TrainConfig {
    double lr = 1e-3;
    std::size_t batch_size = 32;
    int max_epochs = 20;
    std::int64_t max_steps = 0;  // 0 = no step limit
    int patience = 5;            // evaluations without validation AUC improvement
    std::int64_t eval_every = 2000;
    std::uint64_t seed = 0;
    unsigned threads = 0;  // 0 = all cores; never changes results

    void validate() const {
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (patience < 1) throw ConfigError("patience must be >= 1");
        if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
        if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
        if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    }
    unsigned worker_count() const { return threads == 0 ? default_threads() : threads; }
};

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
    return {{"lr", c.lr},
            {"batch_size", c.batch_size},
            {"max_epochs", c.max_epochs},
            {"max_steps", c.max_steps},
            {"patience", c.patience},
            {"eval_every", c.eval_every},
            {"seed", c.seed}};
}

struct PreparedSample {
    LinkSample sample;
    EnclosingSubgraph sub;
    VectorLineGraph vlg;
};

inline std::vector<PreparedSample> prepare_samples(const SpatialGraph& g, const std::vector<LinkSample>& samples, int h,
                                                   unsigned threads = 1) {
    std::vector<PreparedSample> out(samples.size());
    parallel_for(samples.size(), threads, [&](std::size_t i) {
        out[i].sample = samples[i];
        out[i].sub = extract_enclosing_subgraph(g, samples[i].u, samples[i].v, h);
        out[i].vlg = build_line_graph(out[i].sub);
    });
    return out;
}

inline std::vector<PredictionRecord> evaluate(const GavModel& model, const std::vector<PreparedSample>& samples,
                                              unsigned threads = 1) {
    std::vector<PredictionRecord> out(samples.size());
    parallel_for(samples.size(), threads, [&](std::size_t i) {
        out[i] = predict_line_graph(model, samples[i].sub, samples[i].vlg);
        out[i].label = samples[i].sample.label;
    });
    return out;
}

struct ScoreSplit {
    std::vector<double> pos, neg;
};

inline ScoreSplit split_scores(const std::vector<PredictionRecord>& records) {
    ScoreSplit s;
    for (const auto& r : records) (r.label == 1 ? s.pos : s.neg).push_back(r.logit);
    return s;
}

inline double records_auc(const std::vector<PredictionRecord>& records) {
    auto s = split_scores(records);
    return auc(s.pos, s.neg);
}

struct LinkMetrics {
    double auc = 0.0;
    std::optional<double> hits100, hits50, hits20;  // absent when the pool is smaller than k
    std::size_t pool_size = 0;
};

// Scores are logits: AUC and Hits@k only depend on the ordering.
inline LinkMetrics compute_metrics(const std::vector<PredictionRecord>& records, std::uint64_t pool_seed,
                                   std::size_t max_pool = 100000) {
    auto s = split_scores(records);
    LinkMetrics m;
    m.auc = auc(s.pos, s.neg);
    const auto pool = negative_pool(s.neg, max_pool, pool_seed);
    m.pool_size = pool.size();
    auto hk = [&](std::size_t k) -> std::optional<double> {
        if (k > pool.size()) return std::nullopt;
        return hits_at_k(s.pos, pool, k);
    };
    m.hits100 = hk(100);
    m.hits50 = hk(50);
    m.hits20 = hk(20);
    return m;
}

inline void save_predictions_csv(const std::vector<PredictionRecord>& records, const std::filesystem::path& path) {
    auto out = csv::open_out(path);
    out << "u,v,label,prob,logit,angle_deg\n";
    for (const auto& r : records) {
        out << r.u << ',' << r.v << ',' << r.label << ',' << csv::format_double(r.probability) << ','
            << csv::format_double(r.logit) << ',' << (std::isnan(r.angle_degrees) ? "nan" : csv::format_double(r.angle_degrees))
            << '\n';
    }
    if (!out) throw IoError("failed writing " + path.string());
}

// Reads u,v,label,prob,logit,angle_deg rows; edges are not stored.
inline std::vector<PredictionRecord> load_predictions_csv(const std::filesystem::path& path) {
    auto in = csv::open_in(path);
    std::string line;
    std::size_t lineno = 1;
    if (!std::getline(in, line)) throw ParseError("missing header", 1);
    std::vector<PredictionRecord> out;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto f = csv::split_fields(line);
        if (f.size() != 6) throw ParseError("expected u,v,label,prob,logit,angle_deg", lineno);
        PredictionRecord r;
        r.u = csv::parse_number<NodeId>(f[0], lineno);
        r.v = csv::parse_number<NodeId>(f[1], lineno);
        r.label = csv::parse_number<int>(f[2], lineno);
        if (r.label != 0 && r.label != 1) throw ParseError("label must be 0 or 1", lineno);
        r.probability = csv::parse_number<double>(f[3], lineno);
        r.logit = csv::parse_number<double>(f[4], lineno);
        r.angle_degrees = f[5] == "nan" ? std::numeric_limits<double>::quiet_NaN() : csv::parse_number<double>(f[5], lineno);
        out.push_back(std::move(r));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training

struct HistoryEntry {
    std::int64_t step = 0;
    std::int64_t epoch = 0;
    double train_loss = 0.0;  // mean batch loss since the previous evaluation
    double val_auc = 0.0;
};

struct TrainState {
    GavModel model;
    AdamState opt;
    std::int64_t step = 0;
    GavModel best;
    double best_val_auc = -1.0;
    std::int64_t best_step = 0;
    int evals_without_improvement = 0;
    bool stopped_early = false;
    std::vector<HistoryEntry> history;
};

inline TrainState init_train_state(const GavConfig& cfg, const TrainConfig& tc) {
    TrainState st;
    st.model = GavModel::create(cfg, derive_seed(tc.seed, "init"));
    st.opt = AdamState::for_params(st.model.params(), tc.lr);
    st.best = st.model;
    return st;
}

// Mean BCE over the batch; gradients of the mean are added into ps grads.
inline double accumulate_batch_gradients(GavModel& model, const std::vector<PreparedSample>& data,
                                         const std::vector<std::size_t>& batch, unsigned threads) {
    const double inv = 1.0 / static_cast<double>(batch.size());
    std::vector<GradBuffer> grads(batch.size());
    std::vector<double> losses(batch.size());
    const GavModel& cmodel = model;
    parallel_for(batch.size(), threads, [&](std::size_t b) {
        const PreparedSample& s = data[batch[b]];
        ad::Tape t(&cmodel.params());
        ForwardResult r = cmodel.forward(t, s.vlg);
        ad::Var loss = ad::bce_with_logits(t, r.logit, s.sample.label);
        losses[b] = t.scalar(loss);
        grads[b] = make_grad_buffer(cmodel.params());
        t.backward(loss, &grads[b], inv);
    });
    ParamSet& ps = model.params();
    double total = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        total += losses[b];
        for (std::size_t i = 0; i < ps.size(); ++i) {
            auto& dst = ps[i].grad.data;
            const auto& src = grads[b][i].data;
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
        }
    }
    return total * inv;
}

// Mini-batch Adam on shuffled training samples with early stopping on
// validation AUC. The epoch permutation is derived from (seed, epoch), so a
// run resumed at any step replays the same data order.
inline TrainState train(const std::vector<PreparedSample>& train_set, const std::vector<PreparedSample>& val_set,
                        const GavConfig& cfg, const TrainConfig& tc, std::optional<TrainState> resume = std::nullopt,
                        const std::function<void(const HistoryEntry&)>& on_eval = {}) {
    cfg.validate();
    tc.validate();
    if (train_set.empty()) throw ConfigError("training split is empty");
    if (val_set.empty()) throw ConfigError("validation split is empty");
    bool has_pos = false, has_neg = false;
    for (const auto& s : val_set) (s.sample.label ? has_pos : has_neg) = true;
    if (!has_pos || !has_neg) throw ConfigError("validation split needs both classes");

    TrainState st = resume ? std::move(*resume) : init_train_state(cfg, tc);
    st.opt.lr = tc.lr;
    const unsigned threads = tc.worker_count();
    const auto n = static_cast<std::int64_t>(train_set.size());
    const auto bs = static_cast<std::int64_t>(tc.batch_size);
    const std::int64_t batches_per_epoch = (n + bs - 1) / bs;
    const std::int64_t step_limit =
        std::min<std::int64_t>(tc.max_steps > 0 ? tc.max_steps : std::numeric_limits<std::int64_t>::max(),
                               batches_per_epoch * tc.max_epochs);

    double loss_sum = 0.0;
    std::int64_t loss_count = 0;
    std::int64_t cached_epoch = -1;
    std::vector<std::size_t> order(train_set.size());

    auto run_eval = [&] {
        HistoryEntry h;
        h.step = st.step;
        h.epoch = (st.step - 1) / batches_per_epoch;
        h.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
        h.val_auc = records_auc(evaluate(st.model, val_set, threads));
        st.history.push_back(h);
        loss_sum = 0.0;
        loss_count = 0;
        if (h.val_auc > st.best_val_auc) {
            st.best_val_auc = h.val_auc;
            st.best_step = st.step;
            st.best = st.model;
            st.evals_without_improvement = 0;
        } else {
            ++st.evals_without_improvement;
        }
        if (on_eval) on_eval(h);
    };

    while (st.step < step_limit && !st.stopped_early) {
        const std::int64_t epoch = st.step / batches_per_epoch;
        if (epoch != cached_epoch) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            Rng rng(derive_seed(tc.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
            shuffle(order.begin(), order.end(), rng);
            cached_epoch = epoch;
        }
        const std::int64_t first = (st.step % batches_per_epoch) * bs;
        const std::int64_t last = std::min(first + bs, n);
        std::vector<std::size_t> batch(order.begin() + first, order.begin() + last);

        loss_sum += accumulate_batch_gradients(st.model, train_set, batch, threads);
        ++loss_count;
        adam_step(st.model.params(), st.opt);
        ++st.step;

        if (st.step % tc.eval_every == 0) {
            run_eval();
            if (st.evals_without_improvement >= tc.patience) st.stopped_early = true;
        }
    }
    if (loss_count > 0 || st.history.empty()) run_eval();
    return st;
}

// ---------------------------------------------------------------------------
// Checkpoints: <dir>/model.ckpt + model.json hold the best parameters;
// <dir>/state.ckpt + state.json hold the latest parameters, Adam moments and
// loop counters for resuming.

inline void write_json(const std::filesystem::path& p, const nlohmann::ordered_json& j) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot write " + p.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("failed writing " + p.string());
}

inline nlohmann::json read_json(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw IoError("cannot open " + p.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("malformed JSON in " + p.string() + ": " + e.what());
    }
}

inline void save_model(const GavModel& model, const std::filesystem::path& dir, const nlohmann::ordered_json& extra = {}) {
    write_tensors(dir / "model.ckpt", export_tensors(model.params()));
    nlohmann::ordered_json manifest;
    manifest["format"] = "flowlink-checkpoint-1";
    manifest["config"] = to_json(model.config());
    manifest["param_count"] = model.param_count();
    for (auto it = extra.begin(); it != extra.end(); ++it) manifest[it.key()] = it.value();
    write_json(dir / "model.json", manifest);
}

inline GavModel load_model(const std::filesystem::path& dir) {
    const auto manifest = read_json(dir / "model.json");
    GavConfig cfg;
    try {
        cfg = gav_config_from_json(manifest.at("config"));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed checkpoint manifest: ") + e.what());
    }
    GavModel m = GavModel::create(cfg, 0);
    import_tensors(read_tensors(dir / "model.ckpt"), m.params());
    return m;
}

inline void save_train_state(const TrainState& st, const TrainConfig& tc, const std::filesystem::path& dir) {
    nlohmann::ordered_json extra;
    extra["seed"] = tc.seed;
    extra["step"] = st.best_step;
    extra["val_auc"] = st.best_val_auc;
    save_model(st.best, dir, extra);

    write_tensors(dir / "state.ckpt", export_tensors(st.model.params(), &st.opt));
    nlohmann::ordered_json s;
    s["format"] = "flowlink-train-state-1";
    s["config"] = to_json(st.model.config());
    s["train"] = to_json(tc);
    s["step"] = st.step;
    s["adam_t"] = st.opt.t;
    s["best_val_auc"] = st.best_val_auc;
    s["best_step"] = st.best_step;
    s["evals_without_improvement"] = st.evals_without_improvement;
    s["stopped_early"] = st.stopped_early;
    auto& hist = s["history"] = nlohmann::ordered_json::array();
    for (const auto& h : st.history) {
        hist.push_back({{"step", h.step}, {"epoch", h.epoch}, {"train_loss", h.train_loss}, {"val_auc", h.val_auc}});
    }
    write_json(dir / "state.json", s);
}

inline TrainState load_train_state(const std::filesystem::path& dir, double lr) {
    const auto s = read_json(dir / "state.json");
    TrainState st;
    try {
        const GavConfig cfg = gav_config_from_json(s.at("config"));
        st.model = GavModel::create(cfg, 0);
        st.opt = AdamState::for_params(st.model.params(), lr);
        import_tensors(read_tensors(dir / "state.ckpt"), st.model.params(), &st.opt);
        st.opt.t = s.at("adam_t").get<std::int64_t>();
        st.step = s.at("step").get<std::int64_t>();
        st.best_val_auc = s.at("best_val_auc").get<double>();
        st.best_step = s.at("best_step").get<std::int64_t>();
        st.evals_without_improvement = s.at("evals_without_improvement").get<int>();
        st.stopped_early = s.at("stopped_early").get<bool>();
        for (const auto& h : s.at("history")) {
            st.history.push_back({h.at("step").get<std::int64_t>(), h.at("epoch").get<std::int64_t>(),
                                  h.at("train_loss").get<double>(), h.at("val_auc").get<double>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed training state: ") + e.what());
    }
    st.best = load_model(dir);
    return st;
}

inline nlohmann::ordered_json metrics_json(const LinkMetrics& m, const GavModel& model, const TrainConfig& tc) {
    nlohmann::ordered_json j;
    j["auc"] = m.auc;
    auto opt = [](const std::optional<double>& x) { return x ? nlohmann::ordered_json(*x) : nlohmann::ordered_json(); };
    j["hits@100"] = opt(m.hits100);
    j["hits@50"] = opt(m.hits50);
    j["hits@20"] = opt(m.hits20);
    j["negative_pool"] = m.pool_size;
    j["param_count"] = model.param_count();
    j["seed"] = tc.seed;
    j["config"] = {{"model", to_json(model.config())}, {"train", to_json(tc)}};
    return j;
}

}  // namespace flowlink
