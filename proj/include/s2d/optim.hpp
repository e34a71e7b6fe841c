#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "s2d/params.hpp"
#include "s2d/rng.hpp"

namespace s2d {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

/// First/second moment estimates per tunable parameter plus the shared step
/// counter. std::map keeps serialization order deterministic.
struct AdamWState {
    std::map<std::string, std::pair<Tensor, Tensor>> moments;
    std::size_t step = 0;
};

/// Decoupled-weight-decay Adam step over the tunable parameters of a store,
/// consuming the store's grad accumulators. Frozen parameters are skipped
/// even if a gradient is present. Decay multiplies the weights directly and
/// is not applied to rank<2 tensors (norm gains, biases, scalar weights).
inline void adamw_step(ParameterStore& params, AdamWState& state, double lr, const AdamWConfig& cfg) {
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params.at(i);
        if (!p.tunable) continue;
        if (p.grad.numel() != p.value.numel())
            throw ShapeError("adamw_step: grad " + shape_str(p.grad.shape()) + " vs param " + shape_str(p.value.shape()));
        auto it = state.moments.find(p.name);
        if (it == state.moments.end())
            it = state.moments.emplace(p.name, std::make_pair(Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape()))).first;
        Tensor& m = it->second.first;
        Tensor& v = it->second.second;
        const bool decay = p.value.rank() >= 2 && cfg.weight_decay > 0.0;
        for (std::size_t j = 0; j < p.value.numel(); ++j) {
            const double g = p.grad[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            double w = p.value[j];
            if (decay) w -= lr * cfg.weight_decay * w;
            p.value[j] = w - lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

/// Cosine annealing: lr * (1 + cos(pi * step / total)) / 2; lr at step 0,
/// zero at step == total.
inline double cosine_lr(std::size_t step, std::size_t total_steps, double lr) {
    if (total_steps == 0) return lr;
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr * 0.5 * (1.0 + std::cos(M_PI * frac));
}

/// Class-balanced epoch: each draw picks a class uniformly, then a sample of
/// that class uniformly with replacement. Epoch length equals dataset size.
inline std::vector<std::size_t> oversample_indices(const std::vector<std::size_t>& labels, std::size_t classes,
                                                   std::uint64_t seed) {
    std::vector<std::vector<std::size_t>> by_class(classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= classes)
            throw ContractError("oversample_indices: label " + std::to_string(labels[i]) + " out of range");
        by_class[labels[i]].push_back(i);
    }
    std::vector<std::size_t> present;
    for (std::size_t c = 0; c < classes; ++c)
        if (!by_class[c].empty()) present.push_back(c);
    if (present.empty()) throw ContractError("oversample_indices: empty dataset");
    Rng rng(seed);
    std::vector<std::size_t> order(labels.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        const std::size_t c = present[rng.index(present.size())];
        order[i] = by_class[c][rng.index(by_class[c].size())];
    }
    return order;
}

/// Plain shuffled epoch (oversampling disabled): a seeded Fisher-Yates pass.
inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    return order;
}

} // namespace s2d
