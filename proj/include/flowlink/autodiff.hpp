#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "flowlink/errors.hpp"
#include "flowlink/params.hpp"

// Reverse-mode differentiation over small dense matrices. A Tape records
// each operation with a closure that propagates the output gradient to its
// inputs; backward() walks the tape in reverse creation order.
namespace flowlink::ad {

struct Var {
    std::uint32_t id = 0;
};

class Tape {
public:
    using Backward = std::function<void(Tape&, const Matrix& out_grad)>;

    explicit Tape(const ParamSet* params = nullptr) : params_(params) {}

    Var constant(Matrix value) { return push(std::move(value), nullptr); }

    // One node per parameter; the value is referenced, not copied.
    Var param(std::size_t index) {
        if (!params_) throw ConfigError("tape has no parameter set");
        auto it = param_nodes_.find(index);
        if (it != param_nodes_.end()) return it->second;
        Node n;
        n.ref = &(*params_)[index].value;
        n.param_index = static_cast<std::int64_t>(index);
        nodes_.push_back(std::move(n));
        Var v{static_cast<std::uint32_t>(nodes_.size() - 1)};
        param_nodes_.emplace(index, v);
        return v;
    }
    Var param(const std::string& name) { return param(params_->index_of(name)); }

    Var push(Matrix value, Backward backward) {
        Node n;
        n.own = std::move(value);
        n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return {static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    const Matrix& value(Var v) const {
        const Node& n = nodes_[v.id];
        return n.ref ? *n.ref : n.own;
    }
    double scalar(Var v) const { return value(v).data.at(0); }

    // Gradient accumulator for v, allocated on first use.
    Matrix& grad(Var v) {
        Node& n = nodes_[v.id];
        if (n.grad.empty()) {
            const Matrix& val = value(v);
            n.grad = Matrix(val.rows, val.cols);
        }
        return n.grad;
    }
    bool has_grad(Var v) const { return !nodes_[v.id].grad.empty(); }

    // Seeds d(out)/d(out) = seed and propagates; parameter gradients are added
    // into `grads` (aligned with the ParamSet).
    void backward(Var out, GradBuffer* grads, double seed = 1.0) {
        if (value(out).size() != 1) throw DomainError("backward() needs a scalar output");
        grad(out).data[0] += seed;
        for (std::int64_t i = out.id; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (n.grad.empty()) continue;
            if (n.backward) n.backward(*this, n.grad);
            if (n.param_index >= 0 && grads) {
                Matrix& dst = (*grads)[static_cast<std::size_t>(n.param_index)];
                for (std::size_t k = 0; k < dst.size(); ++k) dst.data[k] += n.grad.data[k];
            }
        }
    }

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Matrix own;
        const Matrix* ref = nullptr;
        Matrix grad;
        Backward backward;
        std::int64_t param_index = -1;
    };

    const ParamSet* params_;
    std::vector<Node> nodes_;
    std::unordered_map<std::size_t, Var> param_nodes_;
};

// ---------------------------------------------------------------------------
// Dense ops

// Y = X W^T + b, X: n x a, W: o x a, b: 1 x o (optional).
inline Var linear(Tape& t, Var x, Var w, const Var* b = nullptr) {
    const Matrix& X = t.value(x);
    const Matrix& W = t.value(w);
    if (X.cols != W.cols) {
        throw DomainError("linear: input width " + std::to_string(X.cols) + " does not match weight width " +
                          std::to_string(W.cols));
    }
    if (b && (t.value(*b).rows != 1 || t.value(*b).cols != W.rows)) throw DomainError("linear: bias shape mismatch");
    Matrix Y(X.rows, W.rows);
    for (std::size_t r = 0; r < X.rows; ++r) {
        const double* xr = X.row(r);
        double* yr = Y.row(r);
        for (std::size_t o = 0; o < W.rows; ++o) {
            const double* wr = W.row(o);
            double acc = b ? t.value(*b).data[o] : 0.0;
            for (std::size_t k = 0; k < X.cols; ++k) acc += xr[k] * wr[k];
            yr[o] = acc;
        }
    }
    const bool has_bias = b != nullptr;
    const Var bias = has_bias ? *b : Var{};
    return t.push(std::move(Y), [x, w, bias, has_bias](Tape& t, const Matrix& G) {
        const Matrix& X = t.value(x);
        const Matrix& W = t.value(w);
        Matrix& dX = t.grad(x);
        Matrix& dW = t.grad(w);
        for (std::size_t r = 0; r < X.rows; ++r) {
            const double* xr = X.row(r);
            const double* gr = G.row(r);
            double* dxr = dX.row(r);
            for (std::size_t o = 0; o < W.rows; ++o) {
                const double g = gr[o];
                if (g == 0.0) continue;
                const double* wr = W.row(o);
                double* dwr = dW.row(o);
                for (std::size_t k = 0; k < X.cols; ++k) {
                    dxr[k] += g * wr[k];
                    dwr[k] += g * xr[k];
                }
            }
        }
        if (has_bias) {
            Matrix& dB = t.grad(bias);
            for (std::size_t r = 0; r < G.rows; ++r)
                for (std::size_t o = 0; o < G.cols; ++o) dB.data[o] += G(r, o);
        }
    });
}

inline Var linear(Tape& t, Var x, Var w, Var b) { return linear(t, x, w, &b); }

namespace detail {

template <typename F, typename D>
Var elementwise(Tape& t, Var x, F f, D df) {
    const Matrix& X = t.value(x);
    Matrix Y(X.rows, X.cols);
    for (std::size_t k = 0; k < X.size(); ++k) Y.data[k] = f(X.data[k]);
    return t.push(std::move(Y), [x, df](Tape& t, const Matrix& G) {
        const Matrix& X = t.value(x);
        Matrix& dX = t.grad(x);
        for (std::size_t k = 0; k < X.size(); ++k) dX.data[k] += G.data[k] * df(X.data[k]);
    });
}

}  // namespace detail

inline Var leaky_relu(Tape& t, Var x, double slope = 0.01) {
    return detail::elementwise(
        t, x, [slope](double v) { return v > 0.0 ? v : slope * v; },
        [slope](double v) { return v > 0.0 ? 1.0 : slope; });
}

inline Var tanh(Tape& t, Var x) {
    return detail::elementwise(
        t, x, [](double v) { return std::tanh(v); },
        [](double v) {
            const double th = std::tanh(v);
            return 1.0 - th * th;
        });
}

inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

inline Var sigmoid(Tape& t, Var x) {
    return detail::elementwise(
        t, x, [](double v) { return sigmoid(v); },
        [](double v) {
            const double s = sigmoid(v);
            return s * (1.0 - s);
        });
}

inline Var add(Tape& t, Var a, Var b) {
    const Matrix& A = t.value(a);
    const Matrix& B = t.value(b);
    if (!A.same_shape(B)) throw DomainError("add: shape mismatch");
    Matrix Y = A;
    for (std::size_t k = 0; k < Y.size(); ++k) Y.data[k] += B.data[k];
    return t.push(std::move(Y), [a, b](Tape& t, const Matrix& G) {
        Matrix& dA = t.grad(a);
        for (std::size_t k = 0; k < G.size(); ++k) dA.data[k] += G.data[k];
        Matrix& dB = t.grad(b);
        for (std::size_t k = 0; k < G.size(); ++k) dB.data[k] += G.data[k];
    });
}

inline Var sub(Tape& t, Var a, Var b) {
    const Matrix& A = t.value(a);
    const Matrix& B = t.value(b);
    if (!A.same_shape(B)) throw DomainError("sub: shape mismatch");
    Matrix Y = A;
    for (std::size_t k = 0; k < Y.size(); ++k) Y.data[k] -= B.data[k];
    return t.push(std::move(Y), [a, b](Tape& t, const Matrix& G) {
        Matrix& dA = t.grad(a);
        for (std::size_t k = 0; k < G.size(); ++k) dA.data[k] += G.data[k];
        Matrix& dB = t.grad(b);
        for (std::size_t k = 0; k < G.size(); ++k) dB.data[k] -= G.data[k];
    });
}

inline Var concat_cols(Tape& t, Var a, Var b) {
    const Matrix& A = t.value(a);
    const Matrix& B = t.value(b);
    if (A.rows != B.rows) throw DomainError("concat_cols: row count mismatch");
    Matrix Y(A.rows, A.cols + B.cols);
    for (std::size_t r = 0; r < A.rows; ++r) {
        std::copy(A.row(r), A.row(r) + A.cols, Y.row(r));
        std::copy(B.row(r), B.row(r) + B.cols, Y.row(r) + A.cols);
    }
    const std::size_t ac = A.cols;
    return t.push(std::move(Y), [a, b, ac](Tape& t, const Matrix& G) {
        Matrix& dA = t.grad(a);
        Matrix& dB = t.grad(b);
        for (std::size_t r = 0; r < G.rows; ++r) {
            for (std::size_t c = 0; c < ac; ++c) dA(r, c) += G(r, c);
            for (std::size_t c = ac; c < G.cols; ++c) dB(r, c - ac) += G(r, c);
        }
    });
}

inline Var gather_rows(Tape& t, Var x, std::vector<std::uint32_t> index) {
    const Matrix& X = t.value(x);
    Matrix Y(index.size(), X.cols);
    for (std::size_t r = 0; r < index.size(); ++r) {
        if (index[r] >= X.rows) throw DomainError("gather_rows: index out of range");
        std::copy(X.row(index[r]), X.row(index[r]) + X.cols, Y.row(r));
    }
    return t.push(std::move(Y), [x, index = std::move(index)](Tape& t, const Matrix& G) {
        Matrix& dX = t.grad(x);
        for (std::size_t r = 0; r < index.size(); ++r)
            for (std::size_t c = 0; c < G.cols; ++c) dX(index[r], c) += G(r, c);
    });
}

// Sparse row aggregation: Y[r] = sum_k weights[k] * X[index[k]] for k in
// [offsets[r], offsets[r+1]).
struct RowGroups {
    std::vector<std::uint32_t> offsets{0};
    std::vector<std::uint32_t> index;
    std::vector<double> weights;

    std::size_t groups() const noexcept { return offsets.size() - 1; }
    void add(std::uint32_t row, double w = 1.0) {
        index.push_back(row);
        weights.push_back(w);
    }
    void close() { offsets.push_back(static_cast<std::uint32_t>(index.size())); }
};

inline Var weighted_row_sum(Tape& t, Var x, RowGroups groups) {
    const Matrix& X = t.value(x);
    Matrix Y(groups.groups(), X.cols);
    for (std::size_t r = 0; r < groups.groups(); ++r) {
        double* yr = Y.row(r);
        for (std::uint32_t k = groups.offsets[r]; k < groups.offsets[r + 1]; ++k) {
            if (groups.index[k] >= X.rows) throw DomainError("weighted_row_sum: index out of range");
            const double* xr = X.row(groups.index[k]);
            for (std::size_t c = 0; c < X.cols; ++c) yr[c] += groups.weights[k] * xr[c];
        }
    }
    return t.push(std::move(Y), [x, groups = std::move(groups)](Tape& t, const Matrix& G) {
        Matrix& dX = t.grad(x);
        for (std::size_t r = 0; r < groups.groups(); ++r) {
            for (std::uint32_t k = groups.offsets[r]; k < groups.offsets[r + 1]; ++k) {
                double* dxr = dX.row(groups.index[k]);
                for (std::size_t c = 0; c < G.cols; ++c) dxr[c] += groups.weights[k] * G(r, c);
            }
        }
    });
}

inline Var mean_rows(Tape& t, Var x, std::span<const std::uint32_t> rows) {
    if (rows.empty()) throw DomainError("mean over an empty row set");
    RowGroups g;
    const double w = 1.0 / static_cast<double>(rows.size());
    for (auto r : rows) g.add(r, w);
    g.close();
    return weighted_row_sum(t, x, std::move(g));
}

// Y[r] = s[r] * E[r]; s is n x 1.
inline Var scale_rows(Tape& t, Var s, Var e) {
    const Matrix& S = t.value(s);
    const Matrix& E = t.value(e);
    if (S.cols != 1 || S.rows != E.rows) throw DomainError("scale_rows: shape mismatch");
    Matrix Y(E.rows, E.cols);
    for (std::size_t r = 0; r < E.rows; ++r)
        for (std::size_t c = 0; c < E.cols; ++c) Y(r, c) = S.data[r] * E(r, c);
    return t.push(std::move(Y), [s, e](Tape& t, const Matrix& G) {
        const Matrix& S = t.value(s);
        const Matrix& E = t.value(e);
        Matrix& dS = t.grad(s);
        Matrix& dE = t.grad(e);
        for (std::size_t r = 0; r < E.rows; ++r) {
            for (std::size_t c = 0; c < E.cols; ++c) {
                dS.data[r] += G(r, c) * E(r, c);
                dE(r, c) += G(r, c) * S.data[r];
            }
        }
    });
}

// Softmax of a p x 1 score column within each group [offsets[r], offsets[r+1]).
inline Var segment_softmax(Tape& t, Var scores, std::vector<std::uint32_t> offsets) {
    const Matrix& S = t.value(scores);
    if (S.cols != 1 || offsets.back() != S.rows) throw DomainError("segment_softmax: shape mismatch");
    Matrix A(S.rows, 1);
    for (std::size_t r = 0; r + 1 < offsets.size(); ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (auto k = offsets[r]; k < offsets[r + 1]; ++k) mx = std::max(mx, S.data[k]);
        double z = 0.0;
        for (auto k = offsets[r]; k < offsets[r + 1]; ++k) z += (A.data[k] = std::exp(S.data[k] - mx));
        for (auto k = offsets[r]; k < offsets[r + 1]; ++k) A.data[k] /= z;
    }
    Matrix saved = A;
    return t.push(std::move(A), [scores, saved = std::move(saved), offsets = std::move(offsets)](Tape& t,
                                                                                                  const Matrix& G) {
        Matrix& dS = t.grad(scores);
        for (std::size_t r = 0; r + 1 < offsets.size(); ++r) {
            double dot = 0.0;
            for (auto k = offsets[r]; k < offsets[r + 1]; ++k) dot += saved.data[k] * G.data[k];
            for (auto k = offsets[r]; k < offsets[r + 1]; ++k) dS.data[k] += saved.data[k] * (G.data[k] - dot);
        }
    });
}

// Y[r] = sum_{k in group r} alpha[k] * V[k]; alpha is p x 1, V is p x c.
inline Var segment_weighted_sum(Tape& t, Var alpha, Var values, std::vector<std::uint32_t> offsets) {
    const Matrix& A = t.value(alpha);
    const Matrix& V = t.value(values);
    if (A.cols != 1 || A.rows != V.rows || offsets.back() != V.rows) {
        throw DomainError("segment_weighted_sum: shape mismatch");
    }
    Matrix Y(offsets.size() - 1, V.cols);
    for (std::size_t r = 0; r + 1 < offsets.size(); ++r)
        for (auto k = offsets[r]; k < offsets[r + 1]; ++k)
            for (std::size_t c = 0; c < V.cols; ++c) Y(r, c) += A.data[k] * V(k, c);
    return t.push(std::move(Y), [alpha, values, offsets = std::move(offsets)](Tape& t, const Matrix& G) {
        const Matrix& A = t.value(alpha);
        const Matrix& V = t.value(values);
        Matrix& dA = t.grad(alpha);
        Matrix& dV = t.grad(values);
        for (std::size_t r = 0; r + 1 < offsets.size(); ++r) {
            for (auto k = offsets[r]; k < offsets[r + 1]; ++k) {
                for (std::size_t c = 0; c < V.cols; ++c) {
                    dA.data[k] += G(r, c) * V(k, c);
                    dV(k, c) += G(r, c) * A.data[k];
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Scaled dot-product attention core (projections excluded). Query row r
// attends over key/value rows index[offsets[r] .. offsets[r+1]) per head.

struct Neighborhoods {
    std::vector<std::uint32_t> offsets{0};
    std::vector<std::uint32_t> index;

    std::size_t queries() const noexcept { return offsets.size() - 1; }
};

// Attention weights laid out [query][head][slot] following `nb`.
inline void attention_forward(const Matrix& Q, const Matrix& K, const Matrix& V, const Neighborhoods& nb, int heads,
                              Matrix& out, std::vector<double>& weights) {
    const std::size_t d = Q.cols;
    const std::size_t dh = d / static_cast<std::size_t>(heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    out = Matrix(nb.queries(), V.cols);
    weights.assign(nb.index.size() * static_cast<std::size_t>(heads), 0.0);
    std::vector<double> scores;
    for (std::size_t q = 0; q < nb.queries(); ++q) {
        const std::uint32_t begin = nb.offsets[q], end = nb.offsets[q + 1];
        const std::size_t m = end - begin;
        for (int h = 0; h < heads; ++h) {
            const std::size_t c0 = static_cast<std::size_t>(h) * dh;
            scores.assign(m, 0.0);
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t s = 0; s < m; ++s) {
                const double* kr = K.row(nb.index[begin + s]);
                double acc = 0.0;
                for (std::size_t c = 0; c < dh; ++c) acc += Q(q, c0 + c) * kr[c0 + c];
                scores[s] = acc * scale;
                mx = std::max(mx, scores[s]);
            }
            double z = 0.0;
            for (auto& x : scores) z += (x = std::exp(x - mx));
            double* w = weights.data() + static_cast<std::size_t>(begin) * heads + static_cast<std::size_t>(h) * m;
            for (std::size_t s = 0; s < m; ++s) {
                w[s] = scores[s] / z;
                const double* vr = V.row(nb.index[begin + s]);
                for (std::size_t c = 0; c < dh; ++c) out(q, c0 + c) += w[s] * vr[c0 + c];
            }
        }
    }
}

inline Var attention(Tape& t, Var q, Var k, Var v, Neighborhoods nb, int heads) {
    const Matrix& Q = t.value(q);
    const Matrix& K = t.value(k);
    const Matrix& V = t.value(v);
    if (heads < 1 || Q.cols % static_cast<std::size_t>(heads) != 0) {
        throw ConfigError("attention width " + std::to_string(Q.cols) + " is not divisible by " +
                          std::to_string(heads) + " heads");
    }
    if (K.cols != Q.cols || V.cols != Q.cols || K.rows != V.rows || nb.queries() != Q.rows) {
        throw DomainError("attention: shape mismatch");
    }
    for (std::size_t r = 0; r < nb.queries(); ++r)
        if (nb.offsets[r + 1] == nb.offsets[r]) throw DomainError("attention over an empty key set");
    for (auto i : nb.index)
        if (i >= K.rows) throw DomainError("attention: key index out of range");

    Matrix out;
    std::vector<double> weights;
    attention_forward(Q, K, V, nb, heads, out, weights);
    return t.push(std::move(out), [q, k, v, nb = std::move(nb), heads, weights = std::move(weights)](
                                      Tape& t, const Matrix& G) {
        const Matrix& Q = t.value(q);
        const Matrix& K = t.value(k);
        const Matrix& V = t.value(v);
        Matrix& dQ = t.grad(q);
        Matrix& dK = t.grad(k);
        Matrix& dV = t.grad(v);
        const std::size_t dh = Q.cols / static_cast<std::size_t>(heads);
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        std::vector<double> dw;
        for (std::size_t r = 0; r < nb.queries(); ++r) {
            const std::uint32_t begin = nb.offsets[r], end = nb.offsets[r + 1];
            const std::size_t m = end - begin;
            for (int h = 0; h < heads; ++h) {
                const std::size_t c0 = static_cast<std::size_t>(h) * dh;
                const double* w = weights.data() + static_cast<std::size_t>(begin) * heads + static_cast<std::size_t>(h) * m;
                dw.assign(m, 0.0);
                double dot = 0.0;
                for (std::size_t s = 0; s < m; ++s) {
                    const std::uint32_t j = nb.index[begin + s];
                    for (std::size_t c = 0; c < dh; ++c) {
                        dw[s] += G(r, c0 + c) * V(j, c0 + c);
                        dV(j, c0 + c) += w[s] * G(r, c0 + c);
                    }
                    dot += w[s] * dw[s];
                }
                for (std::size_t s = 0; s < m; ++s) {
                    const std::uint32_t j = nb.index[begin + s];
                    const double ds = w[s] * (dw[s] - dot) * scale;
                    for (std::size_t c = 0; c < dh; ++c) {
                        dQ(r, c0 + c) += ds * K(j, c0 + c);
                        dK(j, c0 + c) += ds * Q(r, c0 + c);
                    }
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Loss

inline double bce_with_logits(double z, int y) {
    if (y != 0 && y != 1) throw DomainError("label must be 0 or 1");
    return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

inline Var bce_with_logits(Tape& t, Var z, int y) {
    const Matrix& Z = t.value(z);
    if (Z.size() != 1) throw DomainError("bce_with_logits expects a single logit");
    Matrix L(1, 1, bce_with_logits(Z.data[0], y));
    return t.push(std::move(L), [z, y](Tape& t, const Matrix& G) {
        t.grad(z).data[0] += G.data[0] * (sigmoid(t.value(z).data[0]) - y);
    });
}

}  // namespace flowlink::ad
