#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "fixtures.hpp"

using namespace flowlink;

namespace {

PredictionRecord record(NodeId u, NodeId v, std::vector<EdgeScalar> edges, double prob = 0.5) {
    PredictionRecord r;
    r.u = u;
    r.v = v;
    r.probability = prob;
    r.edges = std::move(edges);
    return r;
}

EdgeScalar edge(NodeId tail, NodeId head, double s, int label) { return {tail, head, s, s, label}; }

}  // namespace

TEST(Orient, FlipsOnNegativeScale) {
    const auto keep = orient({3, 7, 0.4, 0.4, 1});
    EXPECT_EQ(keep.tail, 3u);
    EXPECT_EQ(keep.head, 7u);
    EXPECT_DOUBLE_EQ(keep.magnitude, 0.4);
    const auto flip = orient({3, 7, -0.25, -0.25, 2});
    EXPECT_EQ(flip.tail, 7u);
    EXPECT_EQ(flip.head, 3u);
    EXPECT_DOUBLE_EQ(flip.magnitude, 0.25);
    // Two negative iterations cancel: the orientation follows the product.
    const auto twice = orient({3, 7, -0.5, 0.3, 3});
    EXPECT_EQ(twice.tail, 3u);
    EXPECT_DOUBLE_EQ(twice.magnitude, 0.5);
}

TEST(Consistency, HandBuiltRecords) {
    // u = 0 with branches 2, 3; v = 1 with branch 4. Target edge is ignored.
    const auto both_sources = record(0, 1, {edge(0, 1, -0.9, 0), edge(0, 2, 0.5, 1), edge(0, 3, 0.2, 1), edge(1, 4, 0.7, 2)});
    EXPECT_EQ(flow_role(both_sources, 0), FlowRole::source);
    EXPECT_EQ(flow_role(both_sources, 1), FlowRole::source);
    EXPECT_EQ(sample_consistency(both_sources), Consistency::consistent);

    const auto sink_and_source = record(0, 1, {edge(0, 1, 0.9, 0), edge(0, 2, -0.5, 1), edge(0, 3, -0.2, 1), edge(1, 4, 0.7, 2)});
    EXPECT_EQ(flow_role(sink_and_source, 0), FlowRole::sink);
    EXPECT_EQ(sample_consistency(sink_and_source), Consistency::consistent);

    const auto mixed = record(0, 1, {edge(0, 1, 0.9, 0), edge(0, 2, 0.5, 1), edge(0, 3, -0.2, 1), edge(1, 4, 0.7, 2)});
    EXPECT_EQ(flow_role(mixed, 0), FlowRole::mixed);
    EXPECT_EQ(sample_consistency(mixed), Consistency::inconsistent);

    const auto lonely = record(0, 1, {edge(0, 1, 0.9, 0), edge(0, 2, 0.5, 1), edge(2, 5, 0.5, 3)});
    EXPECT_EQ(flow_role(lonely, 1), FlowRole::undefined);
    EXPECT_EQ(sample_consistency(lonely), Consistency::undefined);

    const auto st = sink_source_consistency({both_sources, sink_and_source, mixed, lonely});
    EXPECT_EQ(st.consistent, 2u);
    EXPECT_EQ(st.inconsistent, 1u);
    EXPECT_EQ(st.undefined, 1u);
    EXPECT_NEAR(st.percentage, 200.0 / 3.0, 1e-12);
    EXPECT_DOUBLE_EQ(sink_source_consistency({lonely}).percentage, 0.0);
}

TEST(Certainty, BucketsAndMeans) {
    const std::vector<PredictionRecord> recs{
        record(0, 1, {edge(0, 1, 0.8, 0), edge(0, 2, -0.6, 1)}, 0.95),
        record(0, 1, {edge(0, 1, 0.2, 0)}, 0.05),
        record(0, 1, {edge(0, 1, 0.1, 0), edge(1, 2, -0.3, 2)}, 0.5),
        record(0, 1, {edge(0, 1, 0.9, 0)}, 0.75),
        record(0, 1, {edge(0, 1, 0.9, 0)}, 0.9),
    };
    const auto st = certainty_stats(recs);
    EXPECT_EQ(st.certain_samples, 2u);
    EXPECT_EQ(st.uncertain_samples, 1u);
    ASSERT_TRUE(st.certain_mean_abs_s);
    ASSERT_TRUE(st.uncertain_mean_abs_s);
    EXPECT_NEAR(*st.certain_mean_abs_s, (0.8 + 0.6 + 0.2) / 3.0, 1e-15);
    EXPECT_NEAR(*st.uncertain_mean_abs_s, 0.2, 1e-15);
    const auto none = certainty_stats({recs[3]});
    EXPECT_FALSE(none.certain_mean_abs_s);
    EXPECT_TRUE(to_json(none)["certain_mean_abs_s"].is_null());
}

TEST(Invariance, IntegerTranslationsAreExact) {
    const auto g = fixtures::random_graph(200, 3, 31, 0.5, true);
    const auto model = GavModel::create(GavConfig{}, 2);
    int checked = 0;
    for (const Edge& e : g.edges()) {
        if (++checked > 5) break;
        const auto rep = invariance_harness(model, g, e.u, e.v, InvarianceMode::translate, 1, 20);
        ASSERT_EQ(rep.series.size(), 1u);
        EXPECT_EQ(rep.series[0].values.size(), 20u);
        EXPECT_EQ(rep.series[0].std, 0.0);
        EXPECT_EQ(rep.max_abs_logit_diff, 0.0);
    }
}

TEST(Invariance, RotationSeriesShape) {
    const auto g3 = fixtures::random_graph(100, 3, 32);
    const auto m3 = GavModel::create(GavConfig{}, 3);
    const auto e = g3.edges()[0];
    const auto rep = invariance_harness(m3, g3, e.u, e.v, InvarianceMode::rotate);
    ASSERT_EQ(rep.series.size(), 3u);
    for (const auto& s : rep.series) {
        EXPECT_EQ(s.values.size(), 360u);
        EXPECT_EQ(s.values[0], rep.baseline_probability);
        EXPECT_GE(s.std, 0.0);
    }
    EXPECT_EQ(rep.series[2].axis, "z");

    GavConfig c2;
    c2.d_spatial = 2;
    const auto g2 = fixtures::random_graph(100, 2, 33);
    const auto rep2 = invariance_harness(GavModel::create(c2, 3), g2, g2.edges()[0].u, g2.edges()[0].v,
                                         InvarianceMode::rotate);
    ASSERT_EQ(rep2.series.size(), 1u);
    EXPECT_EQ(rep2.series[0].axis, "z");
    const auto j = to_json(rep2);
    EXPECT_EQ(j["mode"], "rotate");
    EXPECT_THROW(parse_invariance_mode("scale"), ConfigError);
}

TEST(Invariance, RotationMatrixIsOrthonormal) {
    for (int axis = 0; axis < 3; ++axis)
        for (double deg : {0.0, 37.0, 90.0, 211.0}) {
            const auto r = axis_rotation(axis, deg);
            for (int i = 0; i < 3; ++i)
                for (int k = 0; k < 3; ++k) {
                    double dot = 0.0;
                    for (int c = 0; c < 3; ++c) dot += r[i][c] * r[k][c];
                    EXPECT_NEAR(dot, i == k ? 1.0 : 0.0, 1e-15);
                }
        }
}

TEST(Toy, GeometryAndDeterminism) {
    for (double psi : {0.0, 30.0, 90.0, 180.0}) {
        const auto g = toy_bifurcation_graph(psi, 2);
        EXPECT_EQ(g.num_edges(), 4u);
        double dot = 0.0;
        for (int k = 0; k < 2; ++k) dot += g.coord(3)[k] * g.coord(4)[k];
        EXPECT_NEAR(std::acos(std::clamp(dot, -1.0, 1.0)) * 180.0 / 3.14159265358979323846, psi, 1e-6);
        EXPECT_NEAR(std::hypot(g.coord(3)[0], g.coord(3)[1]), 1.0, 1e-15);
    }
    EXPECT_THROW(toy_bifurcation_graph(-1.0, 2), DomainError);
    EXPECT_THROW(toy_bifurcation_graph(400.0, 3), DomainError);

    const auto model = GavModel::create(GavConfig{}, 6);
    const auto a = toy_bifurcation(60.0, model);
    const auto b = toy_bifurcation(60.0, model);
    EXPECT_EQ(a.logit, b.logit);
    EXPECT_GT(a.probability, 0.0);
    EXPECT_LT(a.probability, 1.0);
    EXPECT_EQ(a.edges.size(), 4u);
}

TEST(Explain, JsonlExport) {
    fixtures::TempDir dir("explain");
    auto r = record(0, 1, {edge(0, 1, 0.9, 0), edge(0, 2, -0.5, 1)}, 0.7);
    r.angle_degrees = std::nan("");
    interpretability_export({r, r}, dir.path / "x.jsonl");
    const auto text = fixtures::slurp(dir.path / "x.jsonl");
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
    const auto j = nlohmann::json::parse(text.substr(0, text.find('\n')));
    EXPECT_TRUE(j["angle_deg"].is_null());
    EXPECT_EQ(j["edges"][1]["tail"], 2);
    EXPECT_EQ(j["edges"][1]["head"], 0);
    EXPECT_DOUBLE_EQ(j["edges"][1]["magnitude"].get<double>(), 0.5);
}
