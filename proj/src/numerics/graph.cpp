// SPDX-License-Identifier: Apache-2.0
#include "pathformer/numerics/graph.hpp"

#include "pathformer/errors.hpp"

namespace pathformer::numerics {

Tensor& ParameterStore::add(const std::string& name, Tensor value) {
    auto [it, inserted] = tensors_.emplace(name, std::move(value));
    if (!inserted) throw ContractError("duplicate parameter name: " + name);
    return it->second;
}

const Tensor& ParameterStore::get(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
}

Tensor& ParameterStore::get(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
}

std::vector<std::string> ParameterStore::names() const {
    std::vector<std::string> out;
    out.reserve(tensors_.size());
    for (const auto& [name, _] : tensors_) out.push_back(name);
    return out;
}

std::size_t ParameterStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) n += t.size();
    return n;
}

GradientBuffer::GradientBuffer(const ParameterStore& store) {
    for (const auto& [name, t] : store) slots_.emplace(name, Tensor::zeros_like(t));
}

void GradientBuffer::zero() {
    for (auto& [_, t] : slots_) t.fill(0.0);
}

Tensor& GradientBuffer::slot(const std::string& name) {
    auto it = slots_.find(name);
    if (it == slots_.end()) throw ContractError("no gradient slot for parameter: " + name);
    return it->second;
}

const Tensor& GradientBuffer::slot(const std::string& name) const {
    auto it = slots_.find(name);
    if (it == slots_.end()) throw ContractError("no gradient slot for parameter: " + name);
    return it->second;
}

GradientBuffer& GradientBuffer::operator+=(const GradientBuffer& other) {
    for (const auto& [name, t] : other.slots_) slot(name) += t;
    return *this;
}

void GradientBuffer::scale(double factor) {
    for (auto& [_, t] : slots_) {
        for (auto& v : t.storage()) v *= factor;
    }
}

const Tensor& Var::value() const {
    if (!graph_) throw ContractError("use of an unbound Var");
    return graph_->value(*this);
}

Var Graph::constant(Tensor value) {
    Node& n = nodes_.emplace_back();
    n.owned = std::move(value);
    n.value = &n.owned;
    return Var(this, nodes_.size() - 1);
}

Var Graph::parameter(const ParameterStore& store, const std::string& name) {
    if (auto it = param_nodes_.find(name); it != param_nodes_.end()) return Var(this, it->second);
    Node& n = nodes_.emplace_back();
    n.value = &store.get(name);
    n.param_name = name;
    n.requires_grad = true;
    param_nodes_.emplace(name, nodes_.size() - 1);
    return Var(this, nodes_.size() - 1);
}

Var Graph::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
    Node n;
    n.owned = std::move(value);
    n.inputs.reserve(inputs.size());
    for (const Var& v : inputs) {
        if (v.graph_ != this) throw ContractError("op inputs belong to a different graph");
        n.inputs.push_back(v.id_);
        n.requires_grad = n.requires_grad || nodes_[v.id_].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(backward);
    Node& stored = nodes_.emplace_back(std::move(n));
    stored.value = &stored.owned;
    return Var(this, nodes_.size() - 1);
}

const Tensor& Graph::value(Var v) const { return *nodes_.at(v.id_).value; }

bool Graph::requires_grad(Var v) const { return nodes_.at(v.id_).requires_grad; }

const Tensor* Graph::grad(Var v) const { return nodes_.at(v.id_).grad; }

Tensor* Graph::ensure_grad(Node& node) {
    if (!node.grad) {
        node.grad_storage = Tensor::zeros_like(*node.value);
        node.grad = &node.grad_storage;
    }
    return node.grad;
}

void Graph::run_backward(Var loss, double seed, GradientBuffer* sink) {
    if (loss.graph_ != this) throw ContractError("loss belongs to a different graph");
    if (backward_done_) throw ContractError("backward already ran on this graph");
    const Tensor& lv = value(loss);
    if (lv.size() != 1) {
        throw ContractError("backward requires a scalar loss, got shape " + shape_string(lv.shape()));
    }
    backward_done_ = true;
    if (sink) {
        for (auto& [name, id] : param_nodes_) nodes_[id].grad = &sink->slot(name);
    }
    Node& root = nodes_[loss.id_];
    if (!root.requires_grad) return;
    if (root.grad && root.param_name.empty()) root.grad->fill(0.0);
    ensure_grad(root)->storage()[0] += seed;

    std::vector<const Tensor*> in_values;
    std::vector<Tensor*> in_grads;
    for (std::size_t id = loss.id_ + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.backward || !n.grad) continue;
        ++visited_;
        in_values.clear();
        in_grads.clear();
        for (auto in : n.inputs) {
            Node& src = nodes_[in];
            in_values.push_back(src.value);
            in_grads.push_back(src.requires_grad ? ensure_grad(src) : nullptr);
        }
        n.backward(BackwardArgs{in_values, *n.value, *n.grad, in_grads});
    }
}

Gradients Graph::backward(Var loss) {
    run_backward(loss, 1.0, nullptr);
    Gradients out;
    for (auto& [name, id] : param_nodes_) {
        Node& n = nodes_[id];
        out.emplace(name, n.grad ? *n.grad : Tensor::zeros_like(*n.value));
    }
    return out;
}

void Graph::backward_into(Var loss, GradientBuffer& sink, double seed) { run_backward(loss, seed, &sink); }

}  // namespace pathformer::numerics
