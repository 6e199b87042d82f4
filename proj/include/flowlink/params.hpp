#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "flowlink/errors.hpp"
#include "flowlink/random.hpp"

namespace flowlink {

// Dense row-major matrix of doubles. Vectors are 1 x n.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
    Matrix(std::size_t r, std::size_t c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
        if (data.size() != r * c) throw DomainError("matrix data size does not match shape");
    }

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    double* row(std::size_t r) { return data.data() + r * cols; }
    const double* row(std::size_t r) const { return data.data() + r * cols; }
    std::size_t size() const noexcept { return data.size(); }
    bool empty() const noexcept { return data.empty(); }
    bool same_shape(const Matrix& o) const noexcept { return rows == o.rows && cols == o.cols; }

    friend bool operator==(const Matrix&, const Matrix&) = default;
};

struct ParamTensor {
    std::string name;
    Matrix value;
    Matrix grad;
};

class ParamSet {
public:
    std::size_t add(std::string name, Matrix value) {
        if (index_.count(name)) throw ConfigError("duplicate parameter name " + name);
        index_.emplace(name, tensors_.size());
        Matrix grad(value.rows, value.cols);
        tensors_.push_back({std::move(name), std::move(value), std::move(grad)});
        return tensors_.size() - 1;
    }

    std::size_t size() const noexcept { return tensors_.size(); }
    ParamTensor& operator[](std::size_t i) { return tensors_[i]; }
    const ParamTensor& operator[](std::size_t i) const { return tensors_[i]; }

    std::size_t index_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter " + name);
        return it->second;
    }
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    ParamTensor& at(const std::string& name) { return tensors_[index_of(name)]; }
    const ParamTensor& at(const std::string& name) const { return tensors_[index_of(name)]; }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& t : tensors_) n += t.value.size();
        return n;
    }

    void zero_grad() {
        for (auto& t : tensors_) std::fill(t.grad.data.begin(), t.grad.data.end(), 0.0);
    }

    auto begin() { return tensors_.begin(); }
    auto end() { return tensors_.end(); }
    auto begin() const { return tensors_.begin(); }
    auto end() const { return tensors_.end(); }

private:
    std::vector<ParamTensor> tensors_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Gradient storage aligned with a ParamSet, for per-sample accumulation.
using GradBuffer = std::vector<Matrix>;

inline GradBuffer make_grad_buffer(const ParamSet& ps) {
    GradBuffer g;
    g.reserve(ps.size());
    for (const auto& t : ps) g.emplace_back(t.value.rows, t.value.cols);
    return g;
}

inline void add_into(GradBuffer& dst, const GradBuffer& src) {
    for (std::size_t i = 0; i < dst.size(); ++i)
        for (std::size_t k = 0; k < dst[i].size(); ++k) dst[i].data[k] += src[i].data[k];
}

// ---------------------------------------------------------------------------
// Initialization

// Uniform in +-sqrt(6 / (fan_in * (1 + slope^2))); weight shape is out x in.
inline Matrix kaiming_uniform(std::size_t out, std::size_t in, double slope, Rng& rng) {
    const double bound = std::sqrt(6.0 / (static_cast<double>(in) * (1.0 + slope * slope)));
    Matrix w(out, in);
    for (auto& x : w.data) x = uniform_real(rng, -bound, bound);
    return w;
}

inline Matrix xavier_uniform(std::size_t out, std::size_t in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    Matrix w(out, in);
    for (auto& x : w.data) x = uniform_real(rng, -bound, bound);
    return w;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t t = 0;
    std::vector<Matrix> m;
    std::vector<Matrix> v;

    static AdamState for_params(const ParamSet& ps, double lr = 1e-3) {
        AdamState s;
        s.lr = lr;
        s.m = make_grad_buffer(ps);
        s.v = make_grad_buffer(ps);
        return s;
    }
};

// Bias-corrected Adam update from ParamSet grads; grads are zeroed afterwards.
inline void adam_step(ParamSet& ps, AdamState& st) {
    if (st.m.size() != ps.size()) throw ConfigError("optimizer state does not match parameters");
    ++st.t;
    const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
    const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
    for (std::size_t i = 0; i < ps.size(); ++i) {
        auto& p = ps[i];
        auto& m = st.m[i].data;
        auto& v = st.v[i].data;
        for (std::size_t k = 0; k < p.value.size(); ++k) {
            const double g = p.grad.data[k];
            m[k] = st.beta1 * m[k] + (1.0 - st.beta1) * g;
            v[k] = st.beta2 * v[k] + (1.0 - st.beta2) * g * g;
            const double mhat = m[k] / c1;
            const double vhat = v[k] / c2;
            p.value.data[k] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
        }
    }
    ps.zero_grad();
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

// `loss(params, grads)` returns the scalar loss; when `grads` is non-null it
// must also fill analytic gradients. Each scalar parameter is perturbed by
// +-step. Relative error is |a - n| / max(|a|, |n|, floor).
inline double grad_check(ParamSet& ps, const std::function<double(const ParamSet&, GradBuffer*)>& loss,
                         double step = 1e-5, double floor = 1e-6) {
    GradBuffer analytic = make_grad_buffer(ps);
    loss(ps, &analytic);
    double worst = 0.0;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        auto& values = ps[i].value.data;
        for (std::size_t k = 0; k < values.size(); ++k) {
            const double saved = values[k];
            values[k] = saved + step;
            const double up = loss(ps, nullptr);
            values[k] = saved - step;
            const double down = loss(ps, nullptr);
            values[k] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic[i].data[k];
            const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Tensor container: magic, count, then per tensor
// {u32 name length, name, u64 rows, u64 cols, rows*cols little-endian f64}.

namespace detail {

inline constexpr char kTensorMagic[8] = {'F', 'L', 'T', 'E', 'N', 'S', '0', '1'};

template <typename T>
void write_le(std::ostream& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
    unsigned char bytes[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw IoError("truncated tensor file");
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
}

}  // namespace detail

using NamedTensors = std::vector<std::pair<std::string, Matrix>>;

inline void write_tensors(const std::filesystem::path& path, const NamedTensors& tensors) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(detail::kTensorMagic, sizeof detail::kTensorMagic);
    detail::write_le<std::uint64_t>(out, tensors.size());
    for (const auto& [name, m] : tensors) {
        detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_le<std::uint64_t>(out, m.rows);
        detail::write_le<std::uint64_t>(out, m.cols);
        for (double x : m.data) detail::write_le<double>(out, x);
    }
    if (!out) throw IoError("failed writing " + path.string());
}

inline NamedTensors read_tensors(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, detail::kTensorMagic, 8) != 0) {
        throw IoError(path.string() + " is not a tensor file");
    }
    const auto count = detail::read_le<std::uint64_t>(in);
    NamedTensors out;
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto len = detail::read_le<std::uint32_t>(in);
        std::string name(len, '\0');
        if (!in.read(name.data(), len)) throw IoError("truncated tensor file");
        const auto rows = detail::read_le<std::uint64_t>(in);
        const auto cols = detail::read_le<std::uint64_t>(in);
        Matrix m(rows, cols);
        for (auto& x : m.data) x = detail::read_le<double>(in);
        out.emplace_back(std::move(name), std::move(m));
    }
    return out;
}

// Parameters plus (optionally) Adam moments under "adam.m/<name>", "adam.v/<name>".
inline NamedTensors export_tensors(const ParamSet& ps, const AdamState* opt = nullptr) {
    NamedTensors out;
    for (const auto& t : ps) out.emplace_back(t.name, t.value);
    if (opt) {
        for (std::size_t i = 0; i < ps.size(); ++i) out.emplace_back("adam.m/" + ps[i].name, opt->m[i]);
        for (std::size_t i = 0; i < ps.size(); ++i) out.emplace_back("adam.v/" + ps[i].name, opt->v[i]);
    }
    return out;
}

inline void import_tensors(const NamedTensors& tensors, ParamSet& ps, AdamState* opt = nullptr) {
    std::unordered_map<std::string, const Matrix*> byname;
    for (const auto& [name, m] : tensors) byname.emplace(name, &m);
    auto fetch = [&](const std::string& name, const Matrix& like) -> const Matrix& {
        auto it = byname.find(name);
        if (it == byname.end()) throw ValidationError("checkpoint is missing tensor " + name);
        if (!it->second->same_shape(like)) throw ValidationError("checkpoint tensor " + name + " has the wrong shape");
        return *it->second;
    };
    for (auto& t : ps) t.value = fetch(t.name, t.value);
    if (opt) {
        *opt = AdamState::for_params(ps, opt->lr);
        for (std::size_t i = 0; i < ps.size(); ++i) {
            opt->m[i] = fetch("adam.m/" + ps[i].name, ps[i].value);
            opt->v[i] = fetch("adam.v/" + ps[i].name, ps[i].value);
        }
    }
}

}  // namespace flowlink
