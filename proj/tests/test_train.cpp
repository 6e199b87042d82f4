#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "fixtures.hpp"

using namespace flowlink;

namespace {

GavConfig tiny_model(int dim) {
    GavConfig c;
    c.d_spatial = dim;
    c.d_message = 8;
    c.heads = 2;
    c.phi2_hidden = 8;
    c.readout_hidden = 8;
    return c;
}

struct SmallData {
    DatasetSplit ds;
    PreparedSplits prepared;
};

SmallData small_data() {
    SmallData d{prepare_dataset(generate_synthetic_network(NetworkKind::vessel_tree, 200, 3), 3), {}};
    d.prepared = prepare_splits(d.ds, 1, 2);
    return d;
}

void expect_same_params(const GavModel& a, const GavModel& b) {
    ASSERT_EQ(a.params().size(), b.params().size());
    for (std::size_t i = 0; i < a.params().size(); ++i) EXPECT_EQ(a.params()[i].value, b.params()[i].value) << i;
}

}  // namespace

TEST(Train, OverfitsOnePositiveAndOneNegative) {
    const auto g = build_graph(2, {0, 0, 1, 0, 2, 0, 2, 1, 0, 1}, std::vector<Edge>{{0, 1}, {1, 2}, {2, 3}, {0, 4}});
    const auto data = prepare_samples(g, {{1, 2, 1, Split::train}, {1, 4, 0, Split::train}}, 1);
    TrainConfig tc;
    tc.lr = 1e-2;
    tc.batch_size = 2;
    tc.max_epochs = 200;
    tc.eval_every = 200;
    tc.threads = 1;
    const auto st = train(data, data, tiny_model(2), tc);
    EXPECT_EQ(st.step, 200);
    GavModel model = st.model;
    std::vector<std::size_t> both{0, 1};
    const double loss = accumulate_batch_gradients(model, data, both, 1);
    EXPECT_LT(loss, 0.05);
    EXPECT_DOUBLE_EQ(st.history.back().val_auc, 1.0);
}

TEST(Train, LossDecreasesAndBestMatchesHistory) {
    const auto d = small_data();
    TrainConfig tc;
    tc.lr = 3e-3;
    tc.batch_size = 16;
    tc.max_epochs = 4;
    tc.eval_every = 5;
    tc.patience = 100;
    tc.threads = 2;
    const auto st = train(d.prepared.train, d.prepared.val, tiny_model(3), tc);
    ASSERT_GE(st.history.size(), 3u);
    const auto best = std::max_element(st.history.begin(), st.history.end(),
                                       [](const HistoryEntry& a, const HistoryEntry& b) { return a.val_auc < b.val_auc; });
    EXPECT_DOUBLE_EQ(st.best_val_auc, best->val_auc);
    EXPECT_EQ(st.best_step, best->step);
    EXPECT_DOUBLE_EQ(records_auc(evaluate(st.best, d.prepared.val)), st.best_val_auc);
    EXPECT_LT(st.history.back().train_loss, st.history.front().train_loss);
    for (std::size_t i = 1; i < st.history.size(); ++i) EXPECT_GT(st.history[i].step, st.history[i - 1].step);
}

TEST(Train, ThreadCountDoesNotChangeResults) {
    const auto d = small_data();
    TrainConfig tc;
    tc.max_steps = 12;
    tc.batch_size = 8;
    tc.eval_every = 6;
    tc.threads = 1;
    const auto a = train(d.prepared.train, d.prepared.val, tiny_model(3), tc);
    tc.threads = 4;
    const auto b = train(d.prepared.train, d.prepared.val, tiny_model(3), tc);
    expect_same_params(a.model, b.model);
    EXPECT_EQ(a.history.back().val_auc, b.history.back().val_auc);
}

TEST(Train, ResumeReplaysTheSameRun) {
    const auto d = small_data();
    fixtures::TempDir dir("resume");
    TrainConfig tc;
    tc.max_steps = 10;
    tc.batch_size = 8;
    tc.eval_every = 5;
    tc.threads = 2;
    const auto full = train(d.prepared.train, d.prepared.val, tiny_model(3), tc);

    TrainConfig half = tc;
    half.max_steps = 5;
    const auto first = train(d.prepared.train, d.prepared.val, tiny_model(3), half);
    save_train_state(first, half, dir.path);
    auto loaded = load_train_state(dir.path, tc.lr);
    EXPECT_EQ(loaded.step, 5);
    expect_same_params(loaded.model, first.model);
    expect_same_params(loaded.best, first.best);
    const auto resumed = train(d.prepared.train, d.prepared.val, tiny_model(3), tc, std::move(loaded));

    EXPECT_EQ(resumed.step, full.step);
    expect_same_params(resumed.model, full.model);
    expect_same_params(resumed.best, full.best);
    ASSERT_EQ(resumed.history.size(), full.history.size());
    for (std::size_t i = 0; i < full.history.size(); ++i) {
        EXPECT_EQ(resumed.history[i].val_auc, full.history[i].val_auc);
        EXPECT_EQ(resumed.history[i].train_loss, full.history[i].train_loss);
    }
}

TEST(Train, EarlyStoppingHonoursPatience) {
    const auto d = small_data();
    TrainConfig tc;
    tc.lr = 1e-9;  // validation AUC cannot improve
    tc.batch_size = 4;
    tc.max_epochs = 50;
    tc.eval_every = 1;
    tc.patience = 3;
    const auto st = train(d.prepared.train, d.prepared.val, tiny_model(3), tc);
    EXPECT_TRUE(st.stopped_early);
    EXPECT_LE(st.history.size(), 12u);
    EXPECT_EQ(st.evals_without_improvement, 3);
}

TEST(Train, Errors) {
    const auto d = small_data();
    TrainConfig tc;
    EXPECT_THROW(train({}, d.prepared.val, tiny_model(3), tc), ConfigError);
    EXPECT_THROW(train(d.prepared.train, {}, tiny_model(3), tc), ConfigError);
    std::vector<PreparedSample> only_pos;
    for (const auto& s : d.prepared.val)
        if (s.sample.label == 1) only_pos.push_back(s);
    EXPECT_THROW(train(d.prepared.train, only_pos, tiny_model(3), tc), ConfigError);
    tc.batch_size = 0;
    EXPECT_THROW(tc.validate(), ConfigError);
}

TEST(Checkpoint, ModelRoundTripPreservesPredictions) {
    fixtures::TempDir dir("ckpt");
    const auto model = GavModel::create(GavConfig{}, 4);
    save_model(model, dir.path);
    const auto back = load_model(dir.path);
    expect_same_params(model, back);
    const auto g = generate_synthetic_network(NetworkKind::vessel_tree, 60, 1);
    EXPECT_EQ(predict(g, 0, 1, model).logit, predict(g, 0, 1, back).logit);
    EXPECT_THROW(load_model(dir.path / "missing"), IoError);
    fixtures::write_text(dir.path / "bad" / "model.json", "{not json");
    EXPECT_THROW(load_model(dir.path / "bad"), ValidationError);
}

TEST(Predictions, CsvRoundTrip) {
    fixtures::TempDir dir("pred");
    std::vector<PredictionRecord> recs(3);
    recs[0] = {1, 2, 1, 0.75, 1.0986122886681098, 12.5, {}};
    recs[1] = {3, 9, 0, 0.125, -1.9459101090932196, std::nan(""), {}};
    recs[2] = {4, 5, 0, 0.5, 0.0, 180.0, {}};
    save_predictions_csv(recs, dir.path / "p.csv");
    const auto back = load_predictions_csv(dir.path / "p.csv");
    ASSERT_EQ(back.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(back[i].u, recs[i].u);
        EXPECT_EQ(back[i].v, recs[i].v);
        EXPECT_EQ(back[i].label, recs[i].label);
        EXPECT_EQ(back[i].logit, recs[i].logit);
        EXPECT_EQ(back[i].probability, recs[i].probability);
    }
    EXPECT_TRUE(std::isnan(back[1].angle_degrees));
}

TEST(Pipeline, RunWritesArtifactsDeterministically) {
    const auto d = small_data();
    fixtures::TempDir a("run_a"), b("run_b");
    RunConfig rc;
    rc.model = tiny_model(3);
    rc.train.max_steps = 6;
    rc.train.batch_size = 8;
    rc.train.eval_every = 3;
    rc.train.seed = 5;
    const auto ra = run_training(d.ds, rc, a.path, false);
    rc.train.threads = 1;
    run_training(d.ds, rc, b.path, false);
    for (const char* f : {"metrics.json", "model.ckpt", "model.json", "state.ckpt", "predictions.csv"})
        EXPECT_EQ(fixtures::slurp(a.path / f), fixtures::slurp(b.path / f)) << f;
    EXPECT_EQ(ra.metrics["steps"], 6);
    EXPECT_EQ(ra.metrics["param_count"].get<std::size_t>(), ra.state.best.param_count());

    rc.model.d_message = 16;
    EXPECT_THROW(run_training(d.ds, rc, a.path, true), ConfigError);
}
