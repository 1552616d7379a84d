// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <memory>
#include <vector>

#include "pathformer/numerics/graph.hpp"
#include "pathformer/numerics/tensor.hpp"

// Differentiable operations. Each takes and returns Vars recorded on the
// inputs' graph; shapes are validated eagerly and mismatches raise
// DimensionError naming both operands.
namespace pathformer::numerics {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
// `s` must hold exactly one element.
Var mul_scalar(Var x, Var s);
// Adds a bias of shape [n] to every length-n slice along the last axis.
Var add_bias(Var x, Var b);

// [m,k]x[k,n], [B,m,k]x[B,k,n], or [..,m,k]x[k,n] (shared right operand).
Var matmul(Var a, Var b);
// x[..., in] * W[in, out] + b[out].
Var linear(Var x, Var w, Var b);
// Swaps the last two axes of a rank-2 or rank-3 tensor.
Var transpose(Var a);
Var reshape(Var a, Shape shape);
// out.flat[i] = x.flat[index[i]]; unused or repeated sources accumulate gradients.
Var gather(Var x, std::shared_ptr<const std::vector<std::size_t>> index, Shape shape);

// Softmax over `axis`; the per-slice max is subtracted before exponentiation.
Var softmax(Var x, std::size_t axis);
Var softmax(Var x);

Var softplus(Var x);
Var gelu(Var x);
Var abs(Var x);
Var square(Var x);
Var reciprocal(Var x);

Var sum(Var x);
Var mean(Var x);
Var pick(Var x, std::size_t flat_index);

/// Centered moving average along axis 0 of an [H, d] series. Edges are
/// replicated; the window covers (kernel-1)/2 steps before and kernel/2
/// steps after each index, so output length equals H.
Var avg_pool_same(Var x, std::size_t kernel);

Var l1_loss(Var prediction, const Tensor& target);
Var mse_loss(Var prediction, const Tensor& target);

// Plain (non-recorded) kernels shared with other modules.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor avg_pool_same(const Tensor& x, std::size_t kernel);
Tensor softmax(const Tensor& x, std::size_t axis);

}  // namespace pathformer::numerics
