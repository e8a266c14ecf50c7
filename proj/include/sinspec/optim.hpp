#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "sinspec/errors.hpp"
#include "sinspec/tensor.hpp"

namespace sinspec {

struct AdamConfig {
    double learning_rate = 5.0e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.1;  // decoupled
    double clip = 0.5;          // global L2 norm; <= 0 disables
};

template <typename T>
struct OptimizerState {
    AdamConfig config;
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;
    std::uint64_t step = 0;

    OptimizerState() = default;
    OptimizerState(AdamConfig cfg, std::span<const Tensor<T>> params) : config(cfg) {
        for (const auto& p : params) {
            first_moment.emplace_back(p.numel(), 0.0);
            second_moment.emplace_back(p.numel(), 0.0);
        }
    }
};

template <typename T>
double global_grad_norm(std::span<const Tensor<T>> params) {
    double sq = 0.0;
    for (const auto& p : params)
        for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    return std::sqrt(sq);
}

/// Rescales all gradients by threshold / norm when their global L2 norm
/// exceeds the threshold. Returns the norm before clipping. A norm within
/// rounding of the threshold is left alone, which makes clipping idempotent.
template <typename T>
double clip_gradients(std::span<Tensor<T>> params, double threshold) {
    if (!(threshold > 0.0)) throw ContractError("clip threshold must be positive");
    const double norm = global_grad_norm<T>(params);
    if (norm > threshold * (1.0 + 1e-12)) {
        const double f = threshold / norm;
        for (auto& p : params) {
            if (!p.has_grad()) continue;
            for (T& g : p.mutable_grad()) g = static_cast<T>(static_cast<double>(g) * f);
        }
    }
    return norm;
}

/// One bias-corrected Adam update followed by decoupled weight decay
/// (p <- p - lr * wd * p, using the pre-update value). Parameters without a
/// gradient are treated as having zero gradient.
template <typename T>
void adam_step(std::span<Tensor<T>> params, OptimizerState<T>& state) {
    if (state.first_moment.size() != params.size())
        throw ContractError("optimizer state tracks " + std::to_string(state.first_moment.size()) +
                            " parameters, given " + std::to_string(params.size()));
    const auto& c = state.config;
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(c.beta1, t);
    const double bc2 = 1.0 - std::pow(c.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = params[k];
        auto& m = state.first_moment[k];
        auto& v = state.second_moment[k];
        if (m.size() != p.numel())
            throw ShapeError("optimizer moment size " + std::to_string(m.size()) + " for parameter " +
                             shape_str(p.shape()));
        auto values = p.mutable_data();
        auto grads = p.grad();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double g = grads.empty() ? 0.0 : static_cast<double>(grads[i]);
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            const double old = static_cast<double>(values[i]);
            const double delta = -c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
            const double decay = -c.learning_rate * c.weight_decay * old;
            values[i] = static_cast<T>(old + delta + decay);
        }
    }
}

template <typename T>
void zero_grads(std::span<Tensor<T>> params) {
    for (auto& p : params) p.zero_grad();
}

}  // namespace sinspec
