// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pathformer/numerics/tensor.hpp"

namespace pathformer::numerics {

/// Named learnable tensors. Iteration order is lexicographic by name, which
/// keeps checkpoints and optimizer state deterministic.
class ParameterStore {
public:
    Tensor& add(const std::string& name, Tensor value);
    bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
    const Tensor& get(const std::string& name) const;
    Tensor& get(const std::string& name);
    std::vector<std::string> names() const;
    std::size_t scalar_count() const;
    std::size_t size() const { return tensors_.size(); }

    auto begin() const { return tensors_.begin(); }
    auto end() const { return tensors_.end(); }
    auto begin() { return tensors_.begin(); }
    auto end() { return tensors_.end(); }

private:
    std::map<std::string, Tensor> tensors_;
};

using Gradients = std::map<std::string, Tensor>;

/// Zero-initialised gradient slots mirroring a ParameterStore.
class GradientBuffer {
public:
    GradientBuffer() = default;
    explicit GradientBuffer(const ParameterStore& store);

    void zero();
    Tensor& slot(const std::string& name);
    const Tensor& slot(const std::string& name) const;
    GradientBuffer& operator+=(const GradientBuffer& other);
    void scale(double factor);

    const Gradients& tensors() const { return slots_; }

private:
    Gradients slots_;
};

class Graph;

/// Handle to a node recorded on a Graph.
class Var {
public:
    Var() = default;
    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t id() const { return id_; }
    Graph& graph() const { return *graph_; }
    bool valid() const { return graph_ != nullptr; }

private:
    friend class Graph;
    Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}
    Graph* graph_ = nullptr;
    std::size_t id_ = 0;
};

struct BackwardArgs {
    std::span<const Tensor* const> inputs;
    const Tensor& output;
    const Tensor& grad_output;
    // nullptr where the matching input does not need a gradient.
    std::span<Tensor* const> grad_inputs;
};

using BackwardFn = std::function<void(const BackwardArgs&)>;

/// Tape of differentiable operations, recorded in topological order.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Tensor value);
    // The parameter value is referenced, not copied; the store must outlive the graph.
    Var parameter(const ParameterStore& store, const std::string& name);

    // Records an op output. `backward` accumulates into grad_inputs.
    Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

    const Tensor& value(Var v) const;
    bool requires_grad(Var v) const;
    std::size_t size() const { return nodes_.size(); }

    // Gradient of a scalar `loss` with respect to every parameter on the graph.
    Gradients backward(Var loss);
    // Accumulates seed * d(loss)/d(param) into `sink` without allocating parameter grads.
    void backward_into(Var loss, GradientBuffer& sink, double seed = 1.0);

    // Gradient of an intermediate node after backward (nullptr when untouched).
    const Tensor* grad(Var v) const;
    std::size_t nodes_visited() const { return visited_; }

private:
    struct Node {
        Tensor owned;
        const Tensor* value = nullptr;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        std::string param_name;
        bool requires_grad = false;
        Tensor grad_storage;
        Tensor* grad = nullptr;
    };

    Tensor* ensure_grad(Node& node);
    void run_backward(Var loss, double seed, GradientBuffer* sink);

    std::deque<Node> nodes_;
    std::map<std::string, std::size_t> param_nodes_;
    bool backward_done_ = false;
    std::size_t visited_ = 0;
};

}  // namespace pathformer::numerics
