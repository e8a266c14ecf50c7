#pragma once

// Dense tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto a shared graph node. Operations allocate a
// new node that remembers its parents and a closure that pushes the node's
// gradient back to them. backward() walks the graph in reverse topological
// order. Ops that act "per row" treat the last extent as the row length.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "sinspec/errors.hpp"
#include "sinspec/rng.hpp"

namespace sinspec {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

/// Thread-local switch that disables graph construction (inference).
class GradMode {
public:
    static bool enabled() noexcept { return flag(); }
    static void set(bool on) noexcept { flag() = on; }

private:
    static bool& flag() noexcept {
        thread_local bool on = true;
        return on;
    }
};

class NoGradGuard {
public:
    NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set(false); }
    ~NoGradGuard() { GradMode::set(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

namespace detail {

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until something flows into it
    bool requires_grad = false;
    bool leaf = true;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    T* grad_buffer() {
        if (grad.empty()) grad.assign(value.size(), T(0));
        return grad.data();
    }
};

}  // namespace detail

template <typename T>
class Tensor {
public:
    using value_type = T;
    using NodePtr = std::shared_ptr<detail::Node<T>>;

    Tensor() : node_(std::make_shared<detail::Node<T>>()) { node_->shape = {0}; }

    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
        : node_(std::make_shared<detail::Node<T>>()) {
        if (shape_numel(shape) != values.size())
            throw ShapeError("tensor of shape " + shape_str(shape) + " given " +
                             std::to_string(values.size()) + " elements");
        node_->shape = std::move(shape);
        node_->value = std::move(values);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
    }

    static Tensor full(Shape shape, T v, bool requires_grad = false) {
        auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, v), requires_grad);
    }

    static Tensor scalar(T v, bool requires_grad = false) { return Tensor({1}, {v}, requires_grad); }

    static Tensor vector(std::vector<T> v, bool requires_grad = false) {
        Shape s{v.size()};
        return Tensor(std::move(s), std::move(v), requires_grad);
    }

    static Tensor from_node(NodePtr n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

    const Shape& shape() const noexcept { return node_->shape; }
    std::size_t rank() const noexcept { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t numel() const noexcept { return node_->value.size(); }
    std::size_t cols() const noexcept { return node_->shape.empty() ? 1 : node_->shape.back(); }
    std::size_t rows() const noexcept { return cols() == 0 ? 0 : numel() / cols(); }

    std::span<const T> data() const noexcept { return node_->value; }
    /// Direct write access; reserved for optimizers and weight loading.
    std::span<T> mutable_data() noexcept { return node_->value; }
    T item() const {
        if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
        return node_->value[0];
    }
    T operator[](std::size_t i) const { return node_->value.at(i); }

    bool requires_grad() const noexcept { return node_->requires_grad; }
    bool has_grad() const noexcept { return !node_->grad.empty(); }
    std::span<const T> grad() const noexcept { return node_->grad; }
    std::span<T> mutable_grad() { return {node_->grad_buffer(), node_->value.size()}; }
    void zero_grad() noexcept { node_->grad.clear(); }

    /// Copy of the values without any graph history.
    Tensor detach() const { return Tensor(shape(), node_->value, false); }

    const NodePtr& node() const noexcept { return node_; }
    bool same_node(const Tensor& o) const noexcept { return node_ == o.node_; }

private:
    NodePtr node_;
};

namespace detail {

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, std::initializer_list<Tensor<T>> parents,
                      std::function<void(Node<T>&)> fn) {
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->leaf = false;
    bool rg = false;
    if (GradMode::enabled())
        for (const auto& p : parents) rg = rg || p.requires_grad();
    if (rg) {
        n->requires_grad = true;
        for (const auto& p : parents) n->parents.push_back(p.node());
        n->backward_fn = std::move(fn);
    }
    return Tensor<T>::from_node(std::move(n));
}

template <typename T>
Tensor<T> make_result_n(Shape shape, std::vector<T> value, const std::vector<Tensor<T>>& parents,
                        std::function<void(Node<T>&)> fn) {
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->leaf = false;
    bool rg = false;
    if (GradMode::enabled())
        for (const auto& p : parents) rg = rg || p.requires_grad();
    if (rg) {
        n->requires_grad = true;
        for (const auto& p : parents) n->parents.push_back(p.node());
        n->backward_fn = std::move(fn);
    }
    return Tensor<T>::from_node(std::move(n));
}

}  // namespace detail

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
/// calls; intermediate gradients are recomputed on every call.
template <typename T>
void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1)
        throw ContractError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
    using NodeT = detail::Node<T>;
    std::vector<NodeT*> order;
    std::unordered_set<NodeT*> seen;
    std::vector<std::pair<NodeT*, std::size_t>> stack;
    NodeT* root = loss.node().get();
    if (!root->requires_grad) return;
    stack.emplace_back(root, 0);
    seen.insert(root);
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            NodeT* p = n->parents[idx++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    for (NodeT* n : order)
        if (!n->leaf) n->grad.assign(n->value.size(), T(0));
    root->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    std::vector<T> out(x.data().begin(), x.data().end());
    for (auto& v : out) v = v > T(0) ? v : T(0);
    return detail::make_result<T>(x.shape(), std::move(out), {x}, [](detail::Node<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        T* g = p.grad_buffer();
        for (std::size_t i = 0; i < self.value.size(); ++i)
            if (p.value[i] > T(0)) g[i] += self.grad[i];
    });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("add: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return detail::make_result<T>(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
        for (auto& p : self.parents) {
            if (!p->requires_grad) continue;
            T* g = p->grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("sub: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    return detail::make_result<T>(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            auto& p = *self.parents[k];
            if (!p.requires_grad) continue;
            T* g = p.grad_buffer();
            const T sgn = k == 0 ? T(1) : T(-1);
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += sgn * self.grad[i];
        }
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("mul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return detail::make_result<T>(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            T* g = pa.grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pb.value[i];
        }
        if (pb.requires_grad) {
            T* g = pb.grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pa.value[i];
        }
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
    std::vector<T> out(x.data().begin(), x.data().end());
    for (auto& v : out) v *= factor;
    return detail::make_result<T>(x.shape(), std::move(out), {x}, [factor](detail::Node<T>& self) {
        T* g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += factor * self.grad[i];
    });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
    std::vector<T> out(x.data().begin(), x.data().end());
    for (auto& v : out) v += c;
    return detail::make_result<T>(x.shape(), std::move(out), {x}, [](detail::Node<T>& self) {
        T* g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
    std::vector<T> out(x.data().begin(), x.data().end());
    for (auto& v : out) v *= v;
    return detail::make_result<T>(x.shape(), std::move(out), {x}, [](detail::Node<T>& self) {
        auto& p = *self.parents[0];
        T* g = p.grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += T(2) * p.value[i] * self.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T s = T(0);
    for (T v : x.data()) s += v;
    return detail::make_result<T>({1}, {s}, {x}, [](detail::Node<T>& self) {
        auto& p = *self.parents[0];
        T* g = p.grad_buffer();
        for (std::size_t i = 0; i < p.value.size(); ++i) g[i] += self.grad[0];
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    if (x.numel() == 0) throw ContractError("mean of empty tensor");
    return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

/// Sum of equally shaped tensors.
template <typename T>
Tensor<T> add_n(const std::vector<Tensor<T>>& xs) {
    if (xs.empty()) throw ContractError("add_n of empty list");
    const auto& s = xs.front().shape();
    std::vector<T> out(xs.front().numel(), T(0));
    for (const auto& x : xs) {
        if (x.shape() != s)
            throw ShapeError("add_n: shapes " + shape_str(s) + " and " + shape_str(x.shape()));
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += x.data()[i];
    }
    return detail::make_result_n<T>(s, std::move(out), xs, [](detail::Node<T>& self) {
        for (auto& p : self.parents) {
            if (!p->requires_grad) continue;
            T* g = p->grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
    });
}

// ---------------------------------------------------------------------------
// Matrix ops

/// [m,k] x [k,n] -> [m,n]. Rank-1 operands are treated as a single row.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    const std::size_t m = a.rows(), k = a.cols();
    if (b.rank() != 2 || b.dim(0) != k)
        throw ShapeError("matmul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    const std::size_t n = b.dim(1);
    std::vector<T> out(m * n, T(0));
    const T* A = a.data().data();
    const T* B = b.data().data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const T av = A[i * k + p];
            if (av == T(0)) continue;
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * B[p * n + j];
        }
    return detail::make_result<T>({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const T* G = self.grad.data();
        if (pa.requires_grad) {
            T* ga = pa.grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    T acc = T(0);
                    for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * pb.value[p * n + j];
                    ga[i * k + p] += acc;
                }
        }
        if (pb.requires_grad) {
            T* gb = pb.grad_buffer();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const T av = pa.value[i * k + p];
                    if (av == T(0)) continue;
                    for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * G[i * n + j];
                }
        }
    });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<T> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x.data()[i * c + j];
    return detail::make_result<T>({c, r}, std::move(out), {x}, [r, c](detail::Node<T>& self) {
        T* g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
    });
}

/// Affine map applied to each row: y = W x + b with W of shape [out, in].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (w.rank() != 2 || x.cols() != w.dim(1) || b.numel() != w.dim(0))
        throw ShapeError("linear: input " + shape_str(x.shape()) + " weight " + shape_str(w.shape()) +
                         " bias " + shape_str(b.shape()));
    const std::size_t rows = x.rows(), in = w.dim(1), out_dim = w.dim(0);
    std::vector<T> out(rows * out_dim);
    const T* X = x.data().data();
    const T* W = w.data().data();
    const T* B = b.data().data();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < out_dim; ++o) {
            T acc = B[o];
            const T* wr = W + o * in;
            const T* xr = X + r * in;
            for (std::size_t i = 0; i < in; ++i) acc += wr[i] * xr[i];
            out[r * out_dim + o] = acc;
        }
    Shape s = x.shape();
    if (s.empty()) s = {out_dim};
    else s.back() = out_dim;
    return detail::make_result<T>(std::move(s), std::move(out), {x, w, b},
                                  [rows, in, out_dim](detail::Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        auto& pb = *self.parents[2];
        const T* G = self.grad.data();
        if (px.requires_grad) {
            T* gx = px.grad_buffer();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t o = 0; o < out_dim; ++o) {
                    const T go = G[r * out_dim + o];
                    if (go == T(0)) continue;
                    const T* wr = pw.value.data() + o * in;
                    for (std::size_t i = 0; i < in; ++i) gx[r * in + i] += go * wr[i];
                }
        }
        if (pw.requires_grad) {
            T* gw = pw.grad_buffer();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t o = 0; o < out_dim; ++o) {
                    const T go = G[r * out_dim + o];
                    if (go == T(0)) continue;
                    const T* xr = px.value.data() + r * in;
                    for (std::size_t i = 0; i < in; ++i) gw[o * in + i] += go * xr[i];
                }
        }
        if (pb.requires_grad) {
            T* gb = pb.grad_buffer();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t o = 0; o < out_dim; ++o) gb[o] += G[r * out_dim + o];
        }
    });
}

// ---------------------------------------------------------------------------
// Normalization

/// Softmax along `axis`, stabilized by subtracting the running max.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
    if (axis >= x.rank())
        throw ContractError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
    const auto& s = x.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t len = s[axis];
    std::vector<T> out(x.numel());
    const T* X = x.data().data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            T mx = X[base];
            for (std::size_t k = 1; k < len; ++k) mx = std::max(mx, X[base + k * inner]);
            T z = T(0);
            for (std::size_t k = 0; k < len; ++k) {
                T e = std::exp(X[base + k * inner] - mx);
                out[base + k * inner] = e;
                z += e;
            }
            for (std::size_t k = 0; k < len; ++k) out[base + k * inner] /= z;
        }
    return detail::make_result<T>(s, std::move(out), {x}, [outer, inner, len](detail::Node<T>& self) {
        T* g = self.parents[0]->grad_buffer();
        const T* Y = self.value.data();
        const T* G = self.grad.data();
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * len * inner + in;
                T dot = T(0);
                for (std::size_t k = 0; k < len; ++k) dot += Y[base + k * inner] * G[base + k * inner];
                for (std::size_t k = 0; k < len; ++k) {
                    const std::size_t idx = base + k * inner;
                    g[idx] += Y[idx] * (G[idx] - dot);
                }
            }
    });
}

inline constexpr double kLayerNormEps = 1e-5;

/// Normalizes each row to zero mean and unit variance, then applies gain and bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias) {
    const std::size_t n = x.cols(), rows = x.rows();
    if (gain.numel() != n || bias.numel() != n)
        throw ShapeError("layer_norm: input " + shape_str(x.shape()) + " gain " + shape_str(gain.shape()) +
                         " bias " + shape_str(bias.shape()));
    std::vector<T> out(x.numel());
    auto xhat = std::make_shared<std::vector<T>>(x.numel());
    auto inv = std::make_shared<std::vector<T>>(rows);
    const T* X = x.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        T mu = T(0);
        for (std::size_t i = 0; i < n; ++i) mu += X[r * n + i];
        mu /= static_cast<T>(n);
        T var = T(0);
        for (std::size_t i = 0; i < n; ++i) {
            T dlt = X[r * n + i] - mu;
            var += dlt * dlt;
        }
        var /= static_cast<T>(n);
        const T is = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
        (*inv)[r] = is;
        for (std::size_t i = 0; i < n; ++i) {
            const T h = (X[r * n + i] - mu) * is;
            (*xhat)[r * n + i] = h;
            out[r * n + i] = h * gain.data()[i] + bias.data()[i];
        }
    }
    return detail::make_result<T>(x.shape(), std::move(out), {x, gain, bias},
                                  [rows, n, xhat, inv](detail::Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        const T* G = self.grad.data();
        if (pg.requires_grad) {
            T* gg = pg.grad_buffer();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t i = 0; i < n; ++i) gg[i] += G[r * n + i] * (*xhat)[r * n + i];
        }
        if (pb.requires_grad) {
            T* gb = pb.grad_buffer();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t i = 0; i < n; ++i) gb[i] += G[r * n + i];
        }
        if (px.requires_grad) {
            T* gx = px.grad_buffer();
            const T nn = static_cast<T>(n);
            for (std::size_t r = 0; r < rows; ++r) {
                T s1 = T(0), s2 = T(0);
                for (std::size_t i = 0; i < n; ++i) {
                    const T dh = G[r * n + i] * pg.value[i];
                    s1 += dh;
                    s2 += dh * (*xhat)[r * n + i];
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const T dh = G[r * n + i] * pg.value[i];
                    gx[r * n + i] += (*inv)[r] / nn * (nn * dh - s1 - (*xhat)[r * n + i] * s2);
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Slicing and concatenation (row-major matrices)

/// Columns [begin, begin + count) of every row.
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t count) {
    const std::size_t rows = x.rows(), c = x.cols();
    if (begin + count > c)
        throw ShapeError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + shape_str(x.shape()));
    std::vector<T> out(rows * count);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < count; ++j) out[r * count + j] = x.data()[r * c + begin + j];
    return detail::make_result<T>({rows, count}, std::move(out), {x},
                                  [rows, c, begin, count](detail::Node<T>& self) {
        T* g = self.parents[0]->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < count; ++j) g[r * c + begin + j] += self.grad[r * count + j];
    });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t count) {
    const std::size_t rows = x.rows(), c = x.cols();
    if (begin + count > rows)
        throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + shape_str(x.shape()));
    std::vector<T> out(x.data().begin() + begin * c, x.data().begin() + (begin + count) * c);
    return detail::make_result<T>({count, c}, std::move(out), {x}, [begin, c](detail::Node<T>& self) {
        T* g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * c + i] += self.grad[i];
    });
}

/// Horizontal concatenation of matrices with equal row counts.
template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& xs) {
    if (xs.empty()) throw ContractError("concat_cols of empty list");
    const std::size_t rows = xs.front().rows();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& x : xs) {
        if (x.rows() != rows)
            throw ShapeError("concat_cols: row counts differ, " + shape_str(xs.front().shape()) + " and " +
                             shape_str(x.shape()));
        widths.push_back(x.cols());
        total += x.cols();
    }
    std::vector<T> out(rows * total);
    std::size_t off = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < widths[k]; ++j) out[r * total + off + j] = xs[k].data()[r * widths[k] + j];
        off += widths[k];
    }
    return detail::make_result_n<T>({rows, total}, std::move(out), xs,
                                    [rows, total, widths](detail::Node<T>& self) {
        std::size_t o = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
            auto& p = *self.parents[k];
            if (p.requires_grad) {
                T* g = p.grad_buffer();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < widths[k]; ++j) g[r * widths[k] + j] += self.grad[r * total + o + j];
            }
            o += widths[k];
        }
    });
}

/// Rows of `table` selected by index (embedding lookup).
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<std::size_t>& ids) {
    const std::size_t c = table.cols(), n = table.rows();
    std::vector<T> out(ids.size() * c);
    for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] >= n)
            throw ShapeError("gather_rows: index " + std::to_string(ids[r]) + " outside " + shape_str(table.shape()));
        std::copy_n(table.data().begin() + ids[r] * c, c, out.begin() + r * c);
    }
    return detail::make_result<T>({ids.size(), c}, std::move(out), {table}, [ids, c](detail::Node<T>& self) {
        T* g = self.parents[0]->grad_buffer();
        for (std::size_t r = 0; r < ids.size(); ++r)
            for (std::size_t j = 0; j < c; ++j) g[ids[r] * c + j] += self.grad[r * c + j];
    });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape s) {
    if (shape_numel(s) != x.numel())
        throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(s));
    std::vector<T> out(x.data().begin(), x.data().end());
    return detail::make_result<T>(std::move(s), std::move(out), {x}, [](detail::Node<T>& self) {
        T* g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Stochastic

/// Inverted dropout. Identity when not training or p == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, Rng& rng) {
    if (!(p >= 0.0 && p < 1.0)) throw ContractError("dropout probability must lie in [0, 1)");
    if (!training || p == 0.0) return x;
    const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
    auto mask = std::make_shared<std::vector<T>>(x.numel());
    std::vector<T> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        (*mask)[i] = rng.uniform() < p ? T(0) : keep_scale;
        out[i] = x.data()[i] * (*mask)[i];
    }
    return detail::make_result<T>(x.shape(), std::move(out), {x}, [mask](detail::Node<T>& self) {
        T* g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * (*mask)[i];
    });
}

// ---------------------------------------------------------------------------
// Losses

/// Cosine of the angle between two equally sized tensors (scalar result).
template <typename T>
Tensor<T> cosine_similarity(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.numel() != b.numel())
        throw ShapeError("cosine_similarity: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    T ab = T(0), aa = T(0), bb = T(0);
    for (std::size_t i = 0; i < a.numel(); ++i) {
        ab += a.data()[i] * b.data()[i];
        aa += a.data()[i] * a.data()[i];
        bb += b.data()[i] * b.data()[i];
    }
    if (!(aa > T(0)) || !(bb > T(0))) throw NumericError("cosine_similarity: zero-norm embedding");
    const T na = std::sqrt(aa), nb = std::sqrt(bb);
    const T c = ab / (na * nb);
    return detail::make_result<T>({1}, {c}, {a, b}, [na, nb, c](detail::Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const T g = self.grad[0];
        if (pa.requires_grad) {
            T* ga = pa.grad_buffer();
            for (std::size_t i = 0; i < pa.value.size(); ++i)
                ga[i] += g * (pb.value[i] / (na * nb) - c * pa.value[i] / (na * na));
        }
        if (pb.requires_grad) {
            T* gb = pb.grad_buffer();
            for (std::size_t i = 0; i < pb.value.size(); ++i)
                gb[i] += g * (pa.value[i] / (na * nb) - c * pb.value[i] / (nb * nb));
        }
    });
}

/// Mean of squared differences over all elements.
template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    return mean(square(sub(pred, target)));
}

}  // namespace sinspec
