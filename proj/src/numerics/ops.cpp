// SPDX-License-Identifier: Apache-2.0
#include "pathformer/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pathformer/errors.hpp"

namespace pathformer::numerics {

namespace {

[[noreturn]] void mismatch(const char* op, const Tensor& a, const Tensor& b) {
    throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
}

Graph& graph_of(Var a, Var b) {
    if (&a.graph() != &b.graph()) throw ContractError("operands belong to different graphs");
    return a.graph();
}

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(const double* __restrict a, const double* __restrict b, double* __restrict c, std::size_t m, std::size_t k, std::size_t n) {
    // Row p of B is streamed once and applied to every row of C.
    for (std::size_t p = 0; p < k; ++p) {
        const double* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,k] += A[m,n] * B[k,n]^T
void gemm_nt(const double* __restrict a, const double* __restrict b, double* __restrict c, std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double* arow = a + i * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
            c[i * k + p] += acc;
        }
    }
}

// C[k,n] += A[m,k]^T * B[m,n]
void gemm_tn(const double* __restrict a, const double* __restrict b, double* __restrict c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        double* crow = c + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = a[i * k + p];
            if (av == 0.0) continue;
            const double* brow = b + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <class Fwd, class Deriv>
Var unary(Var x, Fwd fwd, Deriv deriv) {
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
    return x.graph().record(std::move(out), {x}, [deriv](const BackwardArgs& args) {
        const Tensor& in = *args.inputs[0];
        Tensor& g = *args.grad_inputs[0];
        for (std::size_t i = 0; i < in.size(); ++i) g[i] += args.grad_output[i] * deriv(in[i], args.output[i]);
    });
}

struct AxisLayout {
    std::size_t outer = 1, len = 1, inner = 1;
};

AxisLayout axis_layout(const Shape& shape, std::size_t axis) {
    if (axis >= shape.size()) {
        throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for shape " + shape_string(shape));
    }
    AxisLayout l;
    for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
    l.len = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
    return l;
}

struct MatmulPlan {
    std::size_t batch = 1, m = 0, k = 0, n = 0;
    bool shared_rhs = false;
    Shape out_shape;
};

MatmulPlan plan_matmul(const Tensor& a, const Tensor& b) {
    MatmulPlan p;
    if (a.rank() < 2 || b.rank() < 2 || b.rank() > 3) mismatch("matmul", a, b);
    if (b.rank() == 2) {
        p.shared_rhs = true;
        p.k = a.shape().back();
        p.n = b.extent(1);
        if (b.extent(0) != p.k) mismatch("matmul", a, b);
        p.m = a.size() / p.k;
        p.out_shape = a.shape();
        p.out_shape.back() = p.n;
        return p;
    }
    if (a.rank() != 3 || a.extent(0) != b.extent(0) || a.extent(2) != b.extent(1)) mismatch("matmul", a, b);
    p.batch = a.extent(0);
    p.m = a.extent(1);
    p.k = a.extent(2);
    p.n = b.extent(2);
    p.out_shape = {p.batch, p.m, p.n};
    return p;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    const MatmulPlan p = plan_matmul(a, b);
    Tensor out(p.out_shape);
    if (p.shared_rhs) {
        gemm_nn(a.data().data(), b.data().data(), out.data().data(), p.m, p.k, p.n);
    } else {
        for (std::size_t s = 0; s < p.batch; ++s) {
            gemm_nn(a.data().data() + s * p.m * p.k, b.data().data() + s * p.k * p.n,
                    out.data().data() + s * p.m * p.n, p.m, p.k, p.n);
        }
    }
    return out;
}

Var add(Var a, Var b) {
    Graph& g = graph_of(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.shape() != bv.shape()) mismatch("add", av, bv);
    Tensor out(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
    return g.record(std::move(out), {a, b}, [](const BackwardArgs& args) {
        for (Tensor* gi : args.grad_inputs) {
            if (gi) *gi += args.grad_output;
        }
    });
}

Var sub(Var a, Var b) {
    Graph& g = graph_of(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.shape() != bv.shape()) mismatch("sub", av, bv);
    Tensor out(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
    return g.record(std::move(out), {a, b}, [](const BackwardArgs& args) {
        if (args.grad_inputs[0]) *args.grad_inputs[0] += args.grad_output;
        if (Tensor* gb = args.grad_inputs[1]) {
            for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] -= args.grad_output[i];
        }
    });
}

Var mul(Var a, Var b) {
    Graph& g = graph_of(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.shape() != bv.shape()) mismatch("mul", av, bv);
    Tensor out(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
    return g.record(std::move(out), {a, b}, [](const BackwardArgs& args) {
        const Tensor& x = *args.inputs[0];
        const Tensor& y = *args.inputs[1];
        if (Tensor* ga = args.grad_inputs[0]) {
            for (std::size_t i = 0; i < x.size(); ++i) (*ga)[i] += args.grad_output[i] * y[i];
        }
        if (Tensor* gb = args.grad_inputs[1]) {
            for (std::size_t i = 0; i < x.size(); ++i) (*gb)[i] += args.grad_output[i] * x[i];
        }
    });
}

Var scale(Var a, double factor) {
    const Tensor& av = a.value();
    Tensor out(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * factor;
    return a.graph().record(std::move(out), {a}, [factor](const BackwardArgs& args) {
        Tensor& g = *args.grad_inputs[0];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += args.grad_output[i] * factor;
    });
}

Var mul_scalar(Var x, Var s) {
    Graph& g = graph_of(x, s);
    const Tensor& xv = x.value();
    const Tensor& sv = s.value();
    if (sv.size() != 1) mismatch("mul_scalar", xv, sv);
    const double c = sv[0];
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * c;
    return g.record(std::move(out), {x, s}, [](const BackwardArgs& args) {
        const Tensor& xin = *args.inputs[0];
        const double c = (*args.inputs[1])[0];
        if (Tensor* gx = args.grad_inputs[0]) {
            for (std::size_t i = 0; i < xin.size(); ++i) (*gx)[i] += args.grad_output[i] * c;
        }
        if (Tensor* gs = args.grad_inputs[1]) {
            double acc = 0.0;
            for (std::size_t i = 0; i < xin.size(); ++i) acc += args.grad_output[i] * xin[i];
            (*gs)[0] += acc;
        }
    });
}

Var add_bias(Var x, Var b) {
    Graph& g = graph_of(x, b);
    const Tensor& xv = x.value();
    const Tensor& bv = b.value();
    if (xv.rank() == 0 || bv.rank() != 1 || bv.extent(0) != xv.shape().back()) mismatch("add_bias", xv, bv);
    const std::size_t n = bv.size();
    Tensor out = xv;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % n];
    return g.record(std::move(out), {x, b}, [n](const BackwardArgs& args) {
        if (args.grad_inputs[0]) *args.grad_inputs[0] += args.grad_output;
        if (Tensor* gb = args.grad_inputs[1]) {
            for (std::size_t i = 0; i < args.grad_output.size(); ++i) (*gb)[i % n] += args.grad_output[i];
        }
    });
}

Var matmul(Var a, Var b) {
    Graph& g = graph_of(a, b);
    const MatmulPlan p = plan_matmul(a.value(), b.value());
    Tensor out = matmul(a.value(), b.value());
    return g.record(std::move(out), {a, b}, [p](const BackwardArgs& args) {
        const double* av = args.inputs[0]->data().data();
        const double* bv = args.inputs[1]->data().data();
        const double* go = args.grad_output.data().data();
        const std::size_t steps = p.shared_rhs ? 1 : p.batch;
        for (std::size_t s = 0; s < steps; ++s) {
            const std::size_t ao = s * p.m * p.k, bo = p.shared_rhs ? 0 : s * p.k * p.n, oo = s * p.m * p.n;
            if (Tensor* ga = args.grad_inputs[0]) gemm_nt(go + oo, bv + bo, ga->data().data() + ao, p.m, p.n, p.k);
            if (Tensor* gb = args.grad_inputs[1]) gemm_tn(av + ao, go + oo, gb->data().data() + bo, p.m, p.k, p.n);
        }
    });
}

Var linear(Var x, Var w, Var b) {
    Graph& g = graph_of(x, w);
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    const Tensor& bv = b.value();
    if (wv.rank() != 2 || xv.rank() == 0 || xv.shape().back() != wv.extent(0)) mismatch("linear", xv, wv);
    if (bv.rank() != 1 || bv.extent(0) != wv.extent(1)) mismatch("linear", wv, bv);
    const std::size_t in = wv.extent(0), outn = wv.extent(1), rows = xv.size() / in;
    Shape shape = xv.shape();
    shape.back() = outn;
    Tensor out(shape);
    for (std::size_t r = 0; r < rows; ++r) std::copy(bv.data().begin(), bv.data().end(), out.data().begin() + r * outn);
    gemm_nn(xv.data().data(), wv.data().data(), out.data().data(), rows, in, outn);
    return g.record(std::move(out), {x, w, b}, [rows, in, outn](const BackwardArgs& args) {
        const double* go = args.grad_output.data().data();
        if (Tensor* gx = args.grad_inputs[0]) {
            gemm_nt(go, args.inputs[1]->data().data(), gx->data().data(), rows, outn, in);
        }
        if (Tensor* gw = args.grad_inputs[1]) {
            gemm_tn(args.inputs[0]->data().data(), go, gw->data().data(), rows, in, outn);
        }
        if (Tensor* gb = args.grad_inputs[2]) {
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t j = 0; j < outn; ++j) (*gb)[j] += go[r * outn + j];
            }
        }
    });
}

Var transpose(Var a) {
    const Tensor& av = a.value();
    if (av.rank() != 2 && av.rank() != 3) {
        throw DimensionError("transpose: expected rank 2 or 3, got " + shape_string(av.shape()));
    }
    const std::size_t batch = av.rank() == 3 ? av.extent(0) : 1;
    const std::size_t r = av.shape()[av.rank() - 2], c = av.shape().back();
    auto index = std::make_shared<std::vector<std::size_t>>(av.size());
    for (std::size_t s = 0; s < batch; ++s) {
        for (std::size_t i = 0; i < c; ++i) {
            for (std::size_t j = 0; j < r; ++j) (*index)[s * r * c + i * r + j] = s * r * c + j * c + i;
        }
    }
    Shape shape = av.shape();
    std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
    return gather(a, std::move(index), std::move(shape));
}

Var reshape(Var a, Shape shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    return a.graph().record(std::move(out), {a}, [](const BackwardArgs& args) {
        Tensor& g = *args.grad_inputs[0];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += args.grad_output[i];
    });
}

Var gather(Var x, std::shared_ptr<const std::vector<std::size_t>> index, Shape shape) {
    const Tensor& xv = x.value();
    if (shape_size(shape) != index->size()) {
        throw DimensionError("gather: index length " + std::to_string(index->size()) + " does not match shape " +
                             shape_string(shape));
    }
    Tensor out(std::move(shape));
    for (std::size_t i = 0; i < index->size(); ++i) {
        const std::size_t src = (*index)[i];
        if (src >= xv.size()) throw DimensionError("gather: source index out of range for " + shape_string(xv.shape()));
        out[i] = xv[src];
    }
    return x.graph().record(std::move(out), {x}, [index](const BackwardArgs& args) {
        Tensor& g = *args.grad_inputs[0];
        for (std::size_t i = 0; i < index->size(); ++i) g[(*index)[i]] += args.grad_output[i];
    });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    const AxisLayout l = axis_layout(x.shape(), axis);
    Tensor out(x.shape());
    for (std::size_t o = 0; o < l.outer; ++o) {
        for (std::size_t in = 0; in < l.inner; ++in) {
            const std::size_t base = o * l.len * l.inner + in;
            double mx = x[base];
            for (std::size_t j = 1; j < l.len; ++j) mx = std::max(mx, x[base + j * l.inner]);
            double total = 0.0;
            for (std::size_t j = 0; j < l.len; ++j) {
                const double e = std::exp(x[base + j * l.inner] - mx);
                out[base + j * l.inner] = e;
                total += e;
            }
            for (std::size_t j = 0; j < l.len; ++j) out[base + j * l.inner] /= total;
        }
    }
    return out;
}

Var softmax(Var x, std::size_t axis) {
    const AxisLayout l = axis_layout(x.value().shape(), axis);
    Tensor out = softmax(x.value(), axis);
    return x.graph().record(std::move(out), {x}, [l](const BackwardArgs& args) {
        const Tensor& y = args.output;
        const Tensor& gy = args.grad_output;
        Tensor& gx = *args.grad_inputs[0];
        for (std::size_t o = 0; o < l.outer; ++o) {
            for (std::size_t in = 0; in < l.inner; ++in) {
                const std::size_t base = o * l.len * l.inner + in;
                double dot = 0.0;
                for (std::size_t j = 0; j < l.len; ++j) dot += y[base + j * l.inner] * gy[base + j * l.inner];
                for (std::size_t j = 0; j < l.len; ++j) {
                    const std::size_t idx = base + j * l.inner;
                    gx[idx] += y[idx] * (gy[idx] - dot);
                }
            }
        }
    });
}

Var softmax(Var x) {
    if (x.value().rank() == 0) throw DimensionError("softmax: empty axis on a scalar");
    return softmax(x, x.value().rank() - 1);
}

Var softplus(Var x) {
    return unary(
        x, [](double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); },
        [](double v, double) { return 1.0 / (1.0 + std::exp(-v)); });
}

Var gelu(Var x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    return unary(
        x, [](double v) { return 0.5 * v * (1.0 + std::tanh(c * (v + 0.044715 * v * v * v))); },
        [](double v, double) {
            const double u = c * (v + 0.044715 * v * v * v);
            const double t = std::tanh(u);
            return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * v * v);
        });
}

Var abs(Var x) {
    return unary(
        x, [](double v) { return std::abs(v); },
        [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var square(Var x) {
    return unary(
        x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Var reciprocal(Var x) {
    return unary(
        x, [](double v) { return 1.0 / v; }, [](double, double y) { return -y * y; });
}

Var sum(Var x) {
    const Tensor& xv = x.value();
    double total = 0.0;
    for (double v : xv.data()) total += v;
    return x.graph().record(Tensor::scalar(total), {x}, [](const BackwardArgs& args) {
        const double g = args.grad_output[0];
        for (auto& v : args.grad_inputs[0]->storage()) v += g;
    });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var pick(Var x, std::size_t flat_index) {
    const Tensor& xv = x.value();
    if (flat_index >= xv.size()) {
        throw DimensionError("pick: index " + std::to_string(flat_index) + " out of range for " +
                             shape_string(xv.shape()));
    }
    return x.graph().record(Tensor::scalar(xv[flat_index]), {x}, [flat_index](const BackwardArgs& args) {
        (*args.grad_inputs[0])[flat_index] += args.grad_output[0];
    });
}

namespace {
void check_pool_args(const Tensor& x, std::size_t kernel) {
    if (kernel < 1) throw ConfigError("avg_pool_same: kernel must be >= 1");
    if (x.rank() != 2) throw DimensionError("avg_pool_same: expected [H, d], got " + shape_string(x.shape()));
}
}  // namespace

Tensor avg_pool_same(const Tensor& x, std::size_t kernel) {
    check_pool_args(x, kernel);
    const std::size_t h = x.extent(0), d = x.extent(1);
    const std::ptrdiff_t left = static_cast<std::ptrdiff_t>((kernel - 1) / 2);
    const std::ptrdiff_t right = static_cast<std::ptrdiff_t>(kernel / 2);
    const double inv = 1.0 / static_cast<double>(kernel);
    Tensor out({h, d});
    for (std::ptrdiff_t t = 0; t < static_cast<std::ptrdiff_t>(h); ++t) {
        for (std::ptrdiff_t j = -left; j <= right; ++j) {
            const auto src = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(t + j, 0, h - 1));
            for (std::size_t c = 0; c < d; ++c) out.at(t, c) += x.at(src, c);
        }
        for (std::size_t c = 0; c < d; ++c) out.at(t, c) *= inv;
    }
    return out;
}

Var avg_pool_same(Var x, std::size_t kernel) {
    Tensor out = avg_pool_same(x.value(), kernel);
    return x.graph().record(std::move(out), {x}, [kernel](const BackwardArgs& args) {
        const Tensor& go = args.grad_output;
        Tensor& gx = *args.grad_inputs[0];
        const std::size_t h = go.extent(0), d = go.extent(1);
        const std::ptrdiff_t left = static_cast<std::ptrdiff_t>((kernel - 1) / 2);
        const std::ptrdiff_t right = static_cast<std::ptrdiff_t>(kernel / 2);
        const double inv = 1.0 / static_cast<double>(kernel);
        for (std::ptrdiff_t t = 0; t < static_cast<std::ptrdiff_t>(h); ++t) {
            for (std::ptrdiff_t j = -left; j <= right; ++j) {
                const auto src = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(t + j, 0, h - 1));
                for (std::size_t c = 0; c < d; ++c) gx.at(src, c) += go.at(t, c) * inv;
            }
        }
    });
}

Var l1_loss(Var prediction, const Tensor& target) {
    const Tensor& pv = prediction.value();
    if (pv.shape() != target.shape()) mismatch("l1_loss", pv, target);
    return mean(abs(sub(prediction, prediction.graph().constant(target))));
}

Var mse_loss(Var prediction, const Tensor& target) {
    const Tensor& pv = prediction.value();
    if (pv.shape() != target.shape()) mismatch("mse_loss", pv, target);
    return mean(square(sub(prediction, prediction.graph().constant(target))));
}

}  // namespace pathformer::numerics
