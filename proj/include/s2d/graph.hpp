#pragma once

#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include "s2d/tensor.hpp"

namespace s2d {

class Graph;

/// Handle to a node in a Graph: a value tensor plus (when reachable from a
/// tunable leaf) a same-shape gradient accumulator.
class Var {
public:
    Var() = default;
    Var(Graph* g, std::size_t id) : g_(g), id_(id) {}

    Graph* graph() const { return g_; }
    std::size_t id() const { return id_; }
    bool valid() const { return g_ != nullptr; }

    const Tensor& value() const;
    const Tensor& grad() const;
    bool requires_grad() const;
    const Shape& shape() const { return value().shape(); }

private:
    Graph* g_ = nullptr;
    std::size_t id_ = 0;
};

/// Reverse-mode tape. Nodes are appended in creation order, which is a
/// topological order by construction; backward walks ids in reverse, so each
/// node is visited exactly once and the traversal is deterministic. Gradients
/// accumulate across backward calls (+=); zero_grad() resets them.
///
/// A graph instance is single-threaded. Forward evaluation of independent
/// graphs on separate threads is safe.
class Graph {
public:
    struct Node {
        Tensor value;
        Tensor grad; // allocated iff requires_grad
        bool requires_grad = false;
        // Propagates the node's pass-local adjoint into its inputs' adjoints.
        std::function<void(Graph&, const Tensor& adj)> backprop;
    };

    Var leaf(Tensor value, bool requires_grad) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        if (requires_grad) n.grad = Tensor::zeros(n.value.shape());
        nodes_.push_back(std::move(n));
        return Var(this, nodes_.size() - 1);
    }

    Var constant(Tensor value) { return leaf(std::move(value), false); }

    /// Appends an op result. `backprop` may be empty when no input needs grads.
    Var op(Tensor value, bool requires_grad, std::function<void(Graph&, const Tensor&)> backprop) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        if (requires_grad) {
            n.grad = Tensor::zeros(n.value.shape());
            n.backprop = std::move(backprop);
        }
        nodes_.push_back(std::move(n));
        return Var(this, nodes_.size() - 1);
    }

    const Node& node(std::size_t id) const { return nodes_[id]; }
    Node& node(std::size_t id) { return nodes_[id]; }
    std::size_t size() const { return nodes_.size(); }

    /// Pass-local adjoint buffer for `id`, allocated (zeroed) on first touch.
    /// Only meaningful inside backward(); used by op backprop closures.
    Tensor& adjoint(std::size_t id) {
        if (!adj_set_[id]) {
            adj_[id] = Tensor::zeros(nodes_[id].value.shape());
            adj_set_[id] = true;
        }
        return adj_[id];
    }

    bool has_adjoint(std::size_t id) const { return adj_set_[id]; }

    /// Reverse pass from a scalar loss. Each call accumulates into node grads.
    void backward(const Var& loss) {
        if (loss.graph() != this) throw ContractError("backward: loss from another graph");
        const Node& ln = nodes_[loss.id()];
        if (ln.value.numel() != 1)
            throw ContractError("backward: loss must be scalar, got " + shape_str(ln.value.shape()));
        if (!ln.requires_grad) return; // nothing reachable is tunable

        adj_.assign(nodes_.size(), Tensor());
        adj_set_.assign(nodes_.size(), 0);
        adjoint(loss.id())[0] = 1.0;

        for (std::size_t id = loss.id() + 1; id-- > 0;) {
            if (!adj_set_[id]) continue;
            Node& n = nodes_[id];
            if (!n.requires_grad) continue;
            if (n.backprop) n.backprop(*this, adj_[id]);
            n.grad.add_(adj_[id]);
        }
        adj_.clear();
        adj_set_.clear();
    }

    void zero_grad() {
        for (Node& n : nodes_)
            if (n.requires_grad) n.grad.fill(0.0);
    }

private:
    std::vector<Node> nodes_;
    std::vector<Tensor> adj_;
    std::vector<char> adj_set_;
};

inline const Tensor& Var::value() const { return g_->node(id_).value; }
inline const Tensor& Var::grad() const { return g_->node(id_).grad; }
inline bool Var::requires_grad() const { return g_->node(id_).requires_grad; }

} // namespace s2d
