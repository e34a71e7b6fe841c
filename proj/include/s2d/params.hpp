#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "s2d/graph.hpp"
#include "s2d/rng.hpp"
#include "s2d/tensor.hpp"

namespace s2d {

enum class ParamFilter { All, Tunable, Frozen };

/// Named parameter table. Registration order is fixed and doubles as the RNG
/// consumption order at init and the serialization order in checkpoints.
/// `grad` is the cross-sample accumulator the optimizer consumes; per-graph
/// gradients live on the tape and are folded in via accumulate_grads().
class ParameterStore {
public:
    struct Param {
        std::string name;
        Tensor value;
        Tensor grad;
        bool tunable = true;
    };

    Tensor& add(const std::string& name, Tensor init, bool tunable = true) {
        if (index_.count(name)) throw ContractError("parameter already registered: " + name);
        index_[name] = items_.size();
        Param p;
        p.name = name;
        p.grad = Tensor::zeros(init.shape());
        p.value = std::move(init);
        p.tunable = tunable;
        items_.push_back(std::move(p));
        return items_.back().value;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Param& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("unknown parameter name: " + name);
        return items_[it->second];
    }
    const Param& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("unknown parameter name: " + name);
        return items_[it->second];
    }

    std::size_t size() const { return items_.size(); }
    Param& at(std::size_t i) { return items_[i]; }
    const Param& at(std::size_t i) const { return items_[i]; }

    std::size_t index_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractError("unknown parameter name: " + name);
        return it->second;
    }

    std::size_t count_scalars(ParamFilter f = ParamFilter::All) const {
        std::size_t n = 0;
        for (const Param& p : items_) {
            if (f == ParamFilter::Tunable && !p.tunable) continue;
            if (f == ParamFilter::Frozen && p.tunable) continue;
            n += p.value.numel();
        }
        return n;
    }

    /// Scalar count restricted to names starting with `prefix`.
    std::size_t count_scalars_prefix(const std::string& prefix) const {
        std::size_t n = 0;
        for (const Param& p : items_)
            if (p.name.rfind(prefix, 0) == 0) n += p.value.numel();
        return n;
    }

    void zero_grads() {
        for (Param& p : items_) p.grad.fill(0.0);
    }

private:
    std::vector<Param> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// One graph's leaf bindings for every parameter in a store, in store order.
/// Leaves of frozen parameters do not require grad, so backward skips their
/// weight gradients while still flowing through them to earlier layers.
class BoundParams {
public:
    BoundParams(Graph& g, const ParameterStore& store, bool with_grads = true) : store_(&store) {
        vars_.reserve(store.size());
        for (std::size_t i = 0; i < store.size(); ++i) {
            const auto& p = store.at(i);
            vars_.push_back(g.leaf(p.value, with_grads && p.tunable));
        }
    }

    Var operator()(const std::string& name) const {
        // store lookup keeps binding order independent of access order
        return vars_[store_->index_of(name)];
    }

    Var operator()(const std::string& prefix, const std::string& suffix) const {
        return (*this)(prefix + suffix);
    }

    const ParameterStore& store() const { return *store_; }

    /// Folds this graph's tunable leaf grads into the store accumulators.
    void accumulate_grads(ParameterStore& dst) const {
        for (std::size_t i = 0; i < vars_.size(); ++i) {
            const auto& p = store_->at(i);
            if (!p.tunable) continue;
            if (!vars_[i].requires_grad()) continue;
            dst.at(p.name).grad.add_(vars_[i].grad());
        }
    }

private:
    const ParameterStore* store_;
    std::vector<Var> vars_;
};

// -- init helpers ------------------------------------------------------------

inline Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-a, a);
    return t;
}

inline Tensor normal_init(Shape shape, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, stddev);
    return t;
}

} // namespace s2d
