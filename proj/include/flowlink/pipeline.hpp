#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "json.hpp"

#include "flowlink/config.hpp"
#include "flowlink/dataset.hpp"
#include "flowlink/model.hpp"
#include "flowlink/train.hpp"

namespace flowlink {

struct PreparedSplits {
    std::vector<PreparedSample> train, val, test;
};

inline PreparedSplits prepare_splits(const DatasetSplit& ds, int h, unsigned threads) {
    return {prepare_samples(*ds.graph, ds.select(Split::train), h, threads),
            prepare_samples(*ds.graph, ds.select(Split::val), h, threads),
            prepare_samples(*ds.graph, ds.select(Split::test), h, threads)};
}

inline std::uint64_t pool_seed(const DatasetSplit& ds) { return derive_seed(ds.seed, "pool"); }

struct RunResult {
    TrainState state;
    LinkMetrics test;
    nlohmann::ordered_json metrics;
};

// Trains on a prepared dataset and writes, into out_dir: model.ckpt/json (best
// validation checkpoint), state.ckpt/json (resumable), metrics.json (test
// split, best checkpoint) and predictions.csv.
inline RunResult run_training(const DatasetSplit& ds, RunConfig rc, const std::filesystem::path& out_dir, bool resume,
                              const std::function<void(const HistoryEntry&)>& on_eval = {}) {
    rc.model.d_spatial = ds.graph->dim();
    rc.model.validate();
    rc.train.validate();
    const unsigned threads = rc.train.worker_count();
    const PreparedSplits data = prepare_splits(ds, rc.model.h, threads);

    std::optional<TrainState> prior;
    if (resume && std::filesystem::exists(out_dir / "state.json")) {
        prior = load_train_state(out_dir, rc.train.lr);
        if (to_json(prior->model.config()) != to_json(rc.model)) {
            throw ConfigError("checkpoint in " + out_dir.string() + " was trained with a different model config");
        }
    }

    RunResult res;
    res.state = train(data.train, data.val, rc.model, rc.train, std::move(prior), on_eval);
    save_train_state(res.state, rc.train, out_dir);

    const auto records = evaluate(res.state.best, data.test, threads);
    res.test = compute_metrics(records, pool_seed(ds));
    res.metrics = metrics_json(res.test, res.state.best, rc.train);
    res.metrics["best_val_auc"] = res.state.best_val_auc;
    res.metrics["best_step"] = res.state.best_step;
    res.metrics["steps"] = res.state.step;
    write_json(out_dir / "metrics.json", res.metrics);
    save_predictions_csv(records, out_dir / "predictions.csv");
    return res;
}

}  // namespace flowlink
