#pragma once

// Parameter blocks shared by every model: affine maps, the two-layer
// feed-forward block, layer-norm parameters and multi-head attention.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "sinspec/errors.hpp"
#include "sinspec/rng.hpp"
#include "sinspec/tensor.hpp"

namespace sinspec {

template <typename T>
struct NamedParam {
    std::string name;
    Tensor<T> tensor;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

template <typename T>
std::vector<Tensor<T>> tensors_of(const ParamList<T>& params) {
    std::vector<Tensor<T>> out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back(p.tensor);
    return out;
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weight matrix of shape [out, in].
template <typename T>
Tensor<T> fan_in_uniform(std::size_t out, std::size_t in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::vector<T> w(out * in);
    for (auto& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
    return Tensor<T>({out, in}, std::move(w), true);
}

template <typename T>
struct Linear {
    Tensor<T> weight;  // [out, in]
    Tensor<T> bias;    // [out]

    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng)
        : weight(fan_in_uniform<T>(out, in, rng)), bias(Tensor<T>::zeros({out}, true)) {}
    Linear(Tensor<T> w, Tensor<T> b) : weight(std::move(w)), bias(std::move(b)) {}

    std::size_t in_features() const { return weight.dim(1); }
    std::size_t out_features() const { return weight.dim(0); }

    Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.push_back({prefix + ".weight", weight});
        out.push_back({prefix + ".bias", bias});
    }
};

/// W2 relu(W1 x + b1) + b2. Every instance owns its weights.
template <typename T>
struct FeedForward {
    Linear<T> inner;
    Linear<T> outer;

    FeedForward() = default;
    FeedForward(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng)
        : inner(in, hidden, rng), outer(hidden, out, rng) {}

    Tensor<T> operator()(const Tensor<T>& x) const { return outer(relu(inner(x))); }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        inner.collect(prefix + ".l1", out);
        outer.collect(prefix + ".l2", out);
    }
};

template <typename T>
struct LayerNorm {
    Tensor<T> gain;
    Tensor<T> bias;

    LayerNorm() = default;
    explicit LayerNorm(std::size_t n) : gain(Tensor<T>::full({n}, T(1), true)), bias(Tensor<T>::zeros({n}, true)) {}

    Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gain, bias); }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        out.push_back({prefix + ".gain", gain});
        out.push_back({prefix + ".bias", bias});
    }
};

/// Dropout settings threaded through a forward pass.
struct DropoutContext {
    double p = 0.0;
    bool training = false;
    Rng* rng = nullptr;

    bool active() const { return training && p > 0.0 && rng != nullptr; }
};

template <typename T>
Tensor<T> apply_dropout(const Tensor<T>& x, const DropoutContext& ctx) {
    if (!ctx.active()) return x;
    return dropout(x, ctx.p, true, *ctx.rng);
}

template <typename T>
struct AttentionWeights {
    Linear<T> query;
    Linear<T> key;
    Linear<T> value;
    Linear<T> output;

    AttentionWeights() = default;
    AttentionWeights(std::size_t d, Rng& rng) : query(d, d, rng), key(d, d, rng), value(d, d, rng), output(d, d, rng) {}

    std::size_t model_dim() const { return query.out_features(); }

    void collect(const std::string& prefix, ParamList<T>& out) const {
        query.collect(prefix + ".q", out);
        key.collect(prefix + ".k", out);
        value.collect(prefix + ".v", out);
        output.collect(prefix + ".o", out);
    }
};

/// Scaled dot-product attention split over `heads`, concatenated and passed
/// through the output projection. `queries` is [m, d]; `keys` and `values`
/// are [n, d]. No positional information is added.
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& queries, const Tensor<T>& keys, const Tensor<T>& values,
                               const AttentionWeights<T>& w, std::size_t heads,
                               const DropoutContext& drop = {}) {
    const std::size_t d = w.model_dim();
    if (heads == 0 || d % heads != 0)
        throw ConfigError("model dimension " + std::to_string(d) + " is not divisible by " + std::to_string(heads) +
                          " heads");
    if (keys.rows() != values.rows())
        throw ShapeError("attention: keys " + shape_str(keys.shape()) + " and values " + shape_str(values.shape()));
    const std::size_t dh = d / heads;
    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

    auto q = w.query(queries);
    auto k = w.key(keys);
    auto v = w.value(values);
    std::vector<Tensor<T>> per_head;
    per_head.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        auto qh = slice_cols(q, h * dh, dh);
        auto kh = slice_cols(k, h * dh, dh);
        auto vh = slice_cols(v, h * dh, dh);
        auto scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
        auto probs = apply_dropout(softmax(scores, 1), drop);
        per_head.push_back(matmul(probs, vh));
    }
    auto merged = heads == 1 ? per_head.front() : concat_cols(per_head);
    return w.output(merged);
}

}  // namespace sinspec
