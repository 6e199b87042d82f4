#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "oracles.hpp"

using namespace flowlink;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Matrix m(r, c);
    for (auto& x : m.data) x = uniform_real(rng, lo, hi);
    return m;
}

// Reduces any matrix to a scalar with fixed random weights so every output
// element contributes a distinct gradient.
ad::Var reduce(ad::Tape& t, ad::Var x, std::uint64_t seed) {
    const Matrix& X = t.value(x);
    Rng rng(seed);
    Matrix w = random_matrix(X.rows, X.cols, rng);
    Matrix y(1, 1);
    for (std::size_t k = 0; k < X.size(); ++k) y.data[0] += w.data[k] * X.data[k];
    return t.push(std::move(y), [x, w](ad::Tape& t, const Matrix& G) {
        Matrix& dx = t.grad(x);
        for (std::size_t k = 0; k < dx.size(); ++k) dx.data[k] += G.data[0] * w.data[k];
    });
}

using Build = std::function<ad::Var(ad::Tape&)>;

double check_op(ParamSet& ps, const Build& build) {
    return grad_check(ps, [&](const ParamSet& p, GradBuffer* g) {
        ad::Tape t(&p);
        ad::Var out = reduce(t, build(t), 77);
        if (g) t.backward(out, g);
        return t.scalar(out);
    });
}

constexpr double kTol = 1e-6;

}  // namespace

TEST(Autodiff, DenseOpGradients) {
    Rng rng(1);
    ParamSet ps;
    ps.add("x", random_matrix(5, 4, rng));
    ps.add("y", random_matrix(5, 4, rng));
    ps.add("w", random_matrix(3, 4, rng));
    ps.add("b", random_matrix(1, 3, rng));
    ps.add("s", random_matrix(5, 1, rng));

    EXPECT_LT(check_op(ps, [](ad::Tape& t) { return ad::linear(t, t.param("x"), t.param("w"), t.param("b")); }), kTol);
    EXPECT_LT(check_op(ps, [](ad::Tape& t) { return ad::linear(t, t.param("x"), t.param("w")); }), kTol);
    EXPECT_LT(check_op(ps, [](ad::Tape& t) { return ad::leaky_relu(t, t.param("x"), 0.01); }), kTol);
    EXPECT_LT(check_op(ps, [](ad::Tape& t) { return ad::tanh(t, t.param("x")); }), kTol);
    EXPECT_LT(check_op(ps, [](ad::Tape& t) { return ad::sigmoid(t, t.param("x")); }), kTol);
    EXPECT_LT(check_op(ps, [](ad::Tape& t) { return ad::add(t, t.param("x"), t.param("y")); }), kTol);
    EXPECT_LT(check_op(ps, [](ad::Tape& t) { return ad::sub(t, t.param("x"), t.param("y")); }), kTol);
    EXPECT_LT(check_op(ps, [](ad::Tape& t) { return ad::concat_cols(t, t.param("x"), t.param("s")); }), kTol);
    EXPECT_LT(check_op(ps, [](ad::Tape& t) { return ad::scale_rows(t, t.param("s"), t.param("x")); }), kTol);
    EXPECT_LT(check_op(ps, [](ad::Tape& t) { return ad::gather_rows(t, t.param("x"), {4, 0, 0, 2}); }), kTol);
    EXPECT_LT(check_op(ps, [](ad::Tape& t) {
                  const std::vector<std::uint32_t> rows{1, 3, 4};
                  return ad::mean_rows(t, t.param("x"), rows);
              }),
              kTol);
    EXPECT_LT(check_op(ps, [](ad::Tape& t) {
                  ad::RowGroups g;
                  g.add(0, 0.5);
                  g.add(2, -1.5);
                  g.close();
                  g.close();
                  g.add(4, 2.0);
                  g.add(4, 1.0);
                  g.close();
                  return ad::weighted_row_sum(t, t.param("x"), g);
              }),
              kTol);
}

TEST(Autodiff, SegmentOpGradients) {
    Rng rng(2);
    ParamSet ps;
    ps.add("scores", random_matrix(7, 1, rng, -3, 3));
    ps.add("values", random_matrix(7, 3, rng));
    const std::vector<std::uint32_t> offsets{0, 2, 3, 7};
    EXPECT_LT(check_op(ps, [&](ad::Tape& t) { return ad::segment_softmax(t, t.param("scores"), offsets); }), kTol);
    EXPECT_LT(check_op(ps, [&](ad::Tape& t) {
                  ad::Var a = ad::segment_softmax(t, t.param("scores"), offsets);
                  return ad::segment_weighted_sum(t, a, t.param("values"), offsets);
              }),
              kTol);

    ad::Tape t(&ps);
    const Matrix& a = t.value(ad::segment_softmax(t, t.param("scores"), offsets));
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
        double sum = 0.0;
        for (auto k = offsets[s]; k < offsets[s + 1]; ++k) sum += a.data[k];
        EXPECT_NEAR(sum, 1.0, 1e-15);
    }
}

TEST(Autodiff, AttentionGradientsAndWeights) {
    Rng rng(3);
    ParamSet ps;
    ps.add("q", random_matrix(4, 8, rng));
    ps.add("k", random_matrix(6, 8, rng));
    ps.add("v", random_matrix(6, 8, rng));
    ad::Neighborhoods nb;
    nb.index = {0, 1, 2, 3, 3, 4, 5, 0, 5, 1, 2};
    nb.offsets = {0, 3, 4, 7, 11};
    for (int heads : {1, 2, 4}) {
        EXPECT_LT(check_op(ps, [&](ad::Tape& t) { return ad::attention(t, t.param("q"), t.param("k"), t.param("v"), nb, heads); }),
                  kTol)
            << heads << " heads";
    }

    Matrix out;
    std::vector<double> w;
    ad::attention_forward(ps.at("q").value, ps.at("k").value, ps.at("v").value, nb, 2, out, w);
    for (std::size_t q = 0; q < nb.queries(); ++q) {
        const std::size_t m = nb.offsets[q + 1] - nb.offsets[q];
        for (int h = 0; h < 2; ++h) {
            double sum = 0.0;
            for (std::size_t s = 0; s < m; ++s) sum += w[nb.offsets[q] * 2 + h * m + s];
            EXPECT_NEAR(sum, 1.0, 1e-14);
        }
    }

    ad::Tape t(&ps);
    EXPECT_THROW(ad::attention(t, t.param("q"), t.param("k"), t.param("v"), nb, 3), ConfigError);
    ad::Neighborhoods empty;
    empty.index = {0};
    empty.offsets = {0, 1, 1, 1, 1};
    EXPECT_THROW(ad::attention(t, t.param("q"), t.param("k"), t.param("v"), empty, 2), DomainError);
}

TEST(Autodiff, SingleKeyAttentionReturnsValue) {
    Rng rng(4);
    Matrix q = random_matrix(1, 8, rng), k = random_matrix(1, 8, rng), v = random_matrix(1, 8, rng);
    ad::Neighborhoods nb;
    nb.index = {0};
    nb.offsets = {0, 1};
    Matrix out;
    std::vector<double> w;
    ad::attention_forward(q, k, v, nb, 4, out, w);
    for (std::size_t c = 0; c < 8; ++c) EXPECT_DOUBLE_EQ(out.data[c], v.data[c]);
}

TEST(Autodiff, BceMatchesNaiveAndIsStable) {
    for (double z : {-6.0, -1.0, -0.1, 0.0, 0.3, 2.0, 7.5})
        for (int y : {0, 1}) EXPECT_NEAR(ad::bce_with_logits(z, y), oracle::bce(z, y), 1e-12);
    EXPECT_DOUBLE_EQ(ad::bce_with_logits(1000.0, 0), 1000.0);
    EXPECT_DOUBLE_EQ(ad::bce_with_logits(-1000.0, 1), 1000.0);
    EXPECT_DOUBLE_EQ(ad::bce_with_logits(1000.0, 1), 0.0);
    EXPECT_TRUE(std::isfinite(ad::bce_with_logits(-1e300, 0)));
    EXPECT_DOUBLE_EQ(ad::sigmoid(-800.0), 0.0);
    EXPECT_DOUBLE_EQ(ad::sigmoid(800.0), 1.0);
    EXPECT_THROW(ad::bce_with_logits(0.0, 2), DomainError);

    ParamSet ps;
    ps.add("z", Matrix(1, 1, 0.7));
    for (int y : {0, 1}) {
        const double err = grad_check(ps, [y](const ParamSet& p, GradBuffer* g) {
            ad::Tape t(&p);
            ad::Var l = ad::bce_with_logits(t, t.param("z"), y);
            if (g) t.backward(l, g);
            return t.scalar(l);
        });
        EXPECT_LT(err, kTol);
    }
}

TEST(Autodiff, ShapeErrors) {
    ad::Tape t;
    ad::Var a = t.constant(Matrix(2, 3));
    ad::Var b = t.constant(Matrix(3, 2));
    EXPECT_THROW(ad::add(t, a, b), DomainError);
    EXPECT_THROW(ad::linear(t, a, b), DomainError);
    EXPECT_THROW(ad::gather_rows(t, a, {5}), DomainError);
    EXPECT_THROW(t.backward(a, nullptr), DomainError);
    EXPECT_THROW(t.param(0), ConfigError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    ParamSet ps;
    ps.add("w", Matrix(1, 3, std::vector<double>{1.0, -2.0, 0.5}));
    ps[0].grad = Matrix(1, 3, std::vector<double>{0.3, -4.0, 0.0});
    AdamState st = AdamState::for_params(ps, 0.01);
    adam_step(ps, st);
    EXPECT_NEAR(ps[0].value.data[0], 1.0 - 0.01, 1e-9);
    EXPECT_NEAR(ps[0].value.data[1], -2.0 + 0.01, 1e-9);
    EXPECT_DOUBLE_EQ(ps[0].value.data[2], 0.5);
    EXPECT_EQ(st.t, 1);
    for (double g : ps[0].grad.data) EXPECT_EQ(g, 0.0);
}

TEST(Adam, MinimizesQuadratic) {
    ParamSet ps;
    ps.add("w", Matrix(1, 2, std::vector<double>{3.0, -5.0}));
    AdamState st = AdamState::for_params(ps, 0.05);
    for (int i = 0; i < 3000; ++i) {
        for (std::size_t k = 0; k < 2; ++k) ps[0].grad.data[k] = 2.0 * (ps[0].value.data[k] - 1.0);
        adam_step(ps, st);
    }
    EXPECT_NEAR(ps[0].value.data[0], 1.0, 1e-3);
    EXPECT_NEAR(ps[0].value.data[1], 1.0, 1e-3);
}

TEST(Tensors, RoundTripWithOptimizerState) {
    fixtures::TempDir dir("tensors");
    Rng rng(6);
    ParamSet ps;
    ps.add("a.weight", random_matrix(3, 4, rng));
    ps.add("a.bias", random_matrix(1, 3, rng));
    AdamState st = AdamState::for_params(ps);
    ps[0].grad = random_matrix(3, 4, rng);
    adam_step(ps, st);
    write_tensors(dir.path / "x.ckpt", export_tensors(ps, &st));

    ParamSet other;
    other.add("a.weight", Matrix(3, 4));
    other.add("a.bias", Matrix(1, 3));
    AdamState st2 = AdamState::for_params(other);
    import_tensors(read_tensors(dir.path / "x.ckpt"), other, &st2);
    EXPECT_EQ(other[0].value, ps[0].value);
    EXPECT_EQ(other[1].value, ps[1].value);
    EXPECT_EQ(st2.m[0], st.m[0]);
    EXPECT_EQ(st2.v[0], st.v[0]);

    ParamSet wrong;
    wrong.add("a.weight", Matrix(4, 4));
    EXPECT_THROW(import_tensors(read_tensors(dir.path / "x.ckpt"), wrong), ValidationError);
    fixtures::write_text(dir.path / "junk.ckpt", "not a tensor file");
    EXPECT_THROW(read_tensors(dir.path / "junk.ckpt"), IoError);
    EXPECT_THROW(read_tensors(dir.path / "absent.ckpt"), IoError);
}

TEST(GradCheck, DetectsWrongGradient) {
    ParamSet ps;
    ps.add("x", Matrix(1, 1, 2.0));
    const double err = grad_check(ps, [](const ParamSet& p, GradBuffer* g) {
        const double x = p[0].value.data[0];
        if (g) (*g)[0].data[0] = 3.0 * x;  // true derivative is 2x
        return x * x;
    });
    EXPECT_GT(err, 0.1);
}
