#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <vector>

#include "s2d/graph.hpp"
#include "s2d/tensor.hpp"

namespace s2d {

namespace detail {

inline void check_same_graph(const Var& a, const Var& b, const char* op) {
    if (a.graph() != b.graph()) throw ContractError(std::string(op) + ": operands from different graphs");
}

// out[i] = in[base + sum coord[d]*stride[d]] walked with an odometer.
inline void gather_strided(const double* in, double* out, const Shape& out_shape,
                           const std::vector<std::size_t>& in_stride) {
    const std::size_t r = out_shape.size();
    const std::size_t n = shape_numel(out_shape);
    std::vector<std::size_t> coord(r, 0);
    std::size_t off = 0;
    for (std::size_t o = 0; o < n; ++o) {
        out[o] = in[off];
        for (std::size_t d = r; d-- > 0;) {
            ++coord[d];
            off += in_stride[d];
            if (coord[d] < out_shape[d]) break;
            off -= in_stride[d] * out_shape[d];
            coord[d] = 0;
        }
    }
}

inline void scatter_add_strided(const double* src, double* dst, const Shape& src_shape,
                                const std::vector<std::size_t>& dst_stride) {
    const std::size_t r = src_shape.size();
    const std::size_t n = shape_numel(src_shape);
    std::vector<std::size_t> coord(r, 0);
    std::size_t off = 0;
    for (std::size_t o = 0; o < n; ++o) {
        dst[off] += src[o];
        for (std::size_t d = r; d-- > 0;) {
            ++coord[d];
            off += dst_stride[d];
            if (coord[d] < src_shape[d]) break;
            off -= dst_stride[d] * src_shape[d];
            coord[d] = 0;
        }
    }
}

// C[m,n] += A[m,k] * B[k,n]
inline void mm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = ai[kk];
            const double* bk = b + kk * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bk[j];
        }
    }
}

// C[m,k] += A[m,n] * B[k,n]^T
inline void mm_acc_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * n;
        double* ci = c + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double* bk = b + kk * n;
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += ai[j] * bk[j];
            ci[kk] += s;
        }
    }
}

// C[k,n] += A[m,k]^T * B[m,n]
inline void mm_acc_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* bi = b + i * n;
        const double* ai = a + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = ai[kk];
            double* ck = c + kk * n;
            for (std::size_t j = 0; j < n; ++j) ck[j] += av * bi[j];
        }
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// element-wise
// ---------------------------------------------------------------------------

inline Var add(Var a, Var b) {
    detail::check_same_graph(a, b, "add");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (!av.same_shape(bv)) throw ShapeError("add: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
    Graph& g = *a.graph();
    const bool ra = a.requires_grad(), rb = b.requires_grad();
    const std::size_t ia = a.id(), ib = b.id();
    return g.op(std::move(out), ra || rb, [=](Graph& gg, const Tensor& adj) {
        if (ra) gg.adjoint(ia).add_(adj);
        if (rb) gg.adjoint(ib).add_(adj);
    });
}

inline Var sub(Var a, Var b) {
    detail::check_same_graph(a, b, "sub");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (!av.same_shape(bv)) throw ShapeError("sub: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] - bv[i];
    Graph& g = *a.graph();
    const bool ra = a.requires_grad(), rb = b.requires_grad();
    const std::size_t ia = a.id(), ib = b.id();
    return g.op(std::move(out), ra || rb, [=](Graph& gg, const Tensor& adj) {
        if (ra) gg.adjoint(ia).add_(adj);
        if (rb) {
            Tensor& d = gg.adjoint(ib);
            for (std::size_t i = 0; i < adj.numel(); ++i) d[i] -= adj[i];
        }
    });
}

inline Var mul(Var a, Var b) {
    detail::check_same_graph(a, b, "mul");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (!av.same_shape(bv)) throw ShapeError("mul: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
    Graph& g = *a.graph();
    const bool ra = a.requires_grad(), rb = b.requires_grad();
    const std::size_t ia = a.id(), ib = b.id();
    return g.op(std::move(out), ra || rb, [=](Graph& gg, const Tensor& adj) {
        if (ra) {
            Tensor& d = gg.adjoint(ia);
            const Tensor& other = gg.node(ib).value;
            for (std::size_t i = 0; i < adj.numel(); ++i) d[i] += adj[i] * other[i];
        }
        if (rb) {
            Tensor& d = gg.adjoint(ib);
            const Tensor& other = gg.node(ia).value;
            for (std::size_t i = 0; i < adj.numel(); ++i) d[i] += adj[i] * other[i];
        }
    });
}

/// a + b where b's shape is a trailing suffix of a's (broadcast over the
/// leading batch extents only; the engine supports no other broadcasting).
inline Var add_bcast(Var a, Var b) {
    detail::check_same_graph(a, b, "add_bcast");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const Shape& as = av.shape();
    const Shape& bs = bv.shape();
    if (bs.size() > as.size() || !std::equal(bs.begin(), bs.end(), as.end() - bs.size()))
        throw ShapeError("add_bcast: " + shape_str(bs) + " is not a suffix of " + shape_str(as));
    const std::size_t bn = bv.numel();
    Tensor out(as);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i % bn];
    Graph& g = *a.graph();
    const bool ra = a.requires_grad(), rb = b.requires_grad();
    const std::size_t ia = a.id(), ib = b.id();
    return g.op(std::move(out), ra || rb, [=](Graph& gg, const Tensor& adj) {
        if (ra) gg.adjoint(ia).add_(adj);
        if (rb) {
            Tensor& d = gg.adjoint(ib);
            for (std::size_t i = 0; i < adj.numel(); ++i) d[i % bn] += adj[i];
        }
    });
}

/// x scaled by a one-element tensor (learnable scalar).
inline Var scale(Var x, Var s) {
    detail::check_same_graph(x, s, "scale");
    if (s.value().numel() != 1) throw ShapeError("scale: scale factor must have one element, got " + shape_str(s.value().shape()));
    const Tensor& xv = x.value();
    const double sv = s.value()[0];
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = xv[i] * sv;
    Graph& g = *x.graph();
    const bool rx = x.requires_grad(), rs = s.requires_grad();
    const std::size_t ix = x.id(), is = s.id();
    return g.op(std::move(out), rx || rs, [=](Graph& gg, const Tensor& adj) {
        if (rx) {
            Tensor& d = gg.adjoint(ix);
            const double sc = gg.node(is).value[0];
            for (std::size_t i = 0; i < adj.numel(); ++i) d[i] += adj[i] * sc;
        }
        if (rs) {
            const Tensor& xx = gg.node(ix).value;
            double acc = 0.0;
            for (std::size_t i = 0; i < adj.numel(); ++i) acc += adj[i] * xx[i];
            gg.adjoint(is)[0] += acc;
        }
    });
}

inline Var cmul(Var x, double c) {
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = xv[i] * c;
    Graph& g = *x.graph();
    const bool rx = x.requires_grad();
    const std::size_t ix = x.id();
    return g.op(std::move(out), rx, [=](Graph& gg, const Tensor& adj) {
        Tensor& d = gg.adjoint(ix);
        for (std::size_t i = 0; i < adj.numel(); ++i) d[i] += adj[i] * c;
    });
}

/// Repeats x along a new leading axis (gradient sums the copies).
inline Var broadcast0(Var x, std::size_t n) {
    const Tensor& xv = x.value();
    Shape os;
    os.reserve(xv.rank() + 1);
    os.push_back(n);
    for (std::size_t e : xv.shape()) os.push_back(e);
    Tensor out(os);
    const std::size_t block = xv.numel();
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t i = 0; i < block; ++i) out[r * block + i] = xv[i];
    Graph& g = *x.graph();
    const bool rx = x.requires_grad();
    const std::size_t ix = x.id();
    return g.op(std::move(out), rx, [=](Graph& gg, const Tensor& adj) {
        Tensor& d = gg.adjoint(ix);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t i = 0; i < block; ++i) d[i] += adj[r * block + i];
    });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

inline Var reshape(Var x, Shape new_shape) {
    const Tensor& xv = x.value();
    if (shape_numel(new_shape) != xv.numel())
        throw ShapeError("reshape: cannot view " + shape_str(xv.shape()) + " as " + shape_str(new_shape));
    Tensor out(new_shape);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = xv[i];
    Graph& g = *x.graph();
    const bool rx = x.requires_grad();
    const std::size_t ix = x.id();
    return g.op(std::move(out), rx, [=](Graph& gg, const Tensor& adj) {
        Tensor& d = gg.adjoint(ix);
        for (std::size_t i = 0; i < adj.numel(); ++i) d[i] += adj[i];
    });
}

inline Var permute(Var x, std::vector<std::size_t> axes) {
    const Tensor& xv = x.value();
    const std::size_t r = xv.rank();
    if (axes.size() != r) throw ShapeError("permute: axes size " + std::to_string(axes.size()) + " vs rank " + std::to_string(r));
    std::vector<char> seen(r, 0);
    for (std::size_t a : axes) {
        if (a >= r || seen[a]) throw ShapeError("permute: invalid axes for " + shape_str(xv.shape()));
        seen[a] = 1;
    }
    const std::vector<std::size_t> in_stride = xv.strides();
    Shape os(r);
    std::vector<std::size_t> sfo(r); // stride in input space per output dim
    for (std::size_t d = 0; d < r; ++d) {
        os[d] = xv.extent(axes[d]);
        sfo[d] = in_stride[axes[d]];
    }
    Tensor out(os);
    detail::gather_strided(xv.data(), out.data(), os, sfo);
    Graph& g = *x.graph();
    const bool rx = x.requires_grad();
    const std::size_t ix = x.id();
    return g.op(std::move(out), rx, [ix, os, sfo](Graph& gg, const Tensor& adj) {
        detail::scatter_add_strided(adj.data(), gg.adjoint(ix).data(), os, sfo);
    });
}

inline Var narrow(Var x, std::size_t axis, std::size_t start, std::size_t len) {
    const Tensor& xv = x.value();
    const AxisSplit sp = split_axis(xv.shape(), axis);
    if (start + len > sp.extent)
        throw ShapeError("narrow: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") exceeds extent " + std::to_string(sp.extent));
    Shape os = xv.shape();
    os[axis] = len;
    Tensor out(os);
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t j = 0; j < len; ++j) {
            const double* src = xv.data() + (o * sp.extent + start + j) * sp.inner;
            double* dst = out.data() + (o * len + j) * sp.inner;
            for (std::size_t i = 0; i < sp.inner; ++i) dst[i] = src[i];
        }
    Graph& g = *x.graph();
    const bool rx = x.requires_grad();
    const std::size_t ix = x.id();
    return g.op(std::move(out), rx, [=](Graph& gg, const Tensor& adj) {
        Tensor& d = gg.adjoint(ix);
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t j = 0; j < len; ++j) {
                const double* src = adj.data() + (o * len + j) * sp.inner;
                double* dst = d.data() + (o * sp.extent + start + j) * sp.inner;
                for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
            }
    });
}

inline Var concat(Var a, Var b, std::size_t axis) {
    detail::check_same_graph(a, b, "concat");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != bv.rank()) throw ShapeError("concat: rank mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    for (std::size_t d = 0; d < av.rank(); ++d)
        if (d != axis && av.extent(d) != bv.extent(d))
            throw ShapeError("concat: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()) + " along axis " + std::to_string(axis));
    const AxisSplit sa = split_axis(av.shape(), axis);
    const AxisSplit sb = split_axis(bv.shape(), axis);
    Shape os = av.shape();
    os[axis] = sa.extent + sb.extent;
    Tensor out(os);
    const std::size_t oe = sa.extent + sb.extent;
    for (std::size_t o = 0; o < sa.outer; ++o) {
        double* dst = out.data() + o * oe * sa.inner;
        const double* pa = av.data() + o * sa.extent * sa.inner;
        const double* pb = bv.data() + o * sb.extent * sb.inner;
        for (std::size_t i = 0; i < sa.extent * sa.inner; ++i) dst[i] = pa[i];
        for (std::size_t i = 0; i < sb.extent * sb.inner; ++i) dst[sa.extent * sa.inner + i] = pb[i];
    }
    Graph& g = *a.graph();
    const bool ra = a.requires_grad(), rb = b.requires_grad();
    const std::size_t ia = a.id(), ib = b.id();
    return g.op(std::move(out), ra || rb, [=](Graph& gg, const Tensor& adj) {
        for (std::size_t o = 0; o < sa.outer; ++o) {
            const double* src = adj.data() + o * oe * sa.inner;
            if (ra) {
                double* da = gg.adjoint(ia).data() + o * sa.extent * sa.inner;
                for (std::size_t i = 0; i < sa.extent * sa.inner; ++i) da[i] += src[i];
            }
            if (rb) {
                double* db = gg.adjoint(ib).data() + o * sb.extent * sb.inner;
                for (std::size_t i = 0; i < sb.extent * sb.inner; ++i) db[i] += src[sa.extent * sa.inner + i];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

inline Var sum_all(Var x) {
    const Tensor& xv = x.value();
    double s = 0.0;
    for (std::size_t i = 0; i < xv.numel(); ++i) s += xv[i];
    Graph& g = *x.graph();
    const bool rx = x.requires_grad();
    const std::size_t ix = x.id();
    return g.op(Tensor::scalar(s), rx, [=](Graph& gg, const Tensor& adj) {
        Tensor& d = gg.adjoint(ix);
        const double a = adj[0];
        for (std::size_t i = 0; i < d.numel(); ++i) d[i] += a;
    });
}

inline Var mean_axis(Var x, std::size_t axis) {
    const Tensor& xv = x.value();
    const AxisSplit sp = split_axis(xv.shape(), axis);
    Shape os;
    for (std::size_t d = 0; d < xv.rank(); ++d)
        if (d != axis) os.push_back(xv.extent(d));
    if (os.empty()) os.push_back(1);
    Tensor out(os);
    const double inv = 1.0 / static_cast<double>(sp.extent);
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < sp.extent; ++j) s += xv[(o * sp.extent + j) * sp.inner + i];
            out[o * sp.inner + i] = s * inv;
        }
    Graph& g = *x.graph();
    const bool rx = x.requires_grad();
    const std::size_t ix = x.id();
    return g.op(std::move(out), rx, [=](Graph& gg, const Tensor& adj) {
        Tensor& d = gg.adjoint(ix);
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t j = 0; j < sp.extent; ++j)
                for (std::size_t i = 0; i < sp.inner; ++i)
                    d[(o * sp.extent + j) * sp.inner + i] += adj[o * sp.inner + i] * inv;
    });
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

/// Matrix product with broadcasting over leading batch extents only: either
/// both operands carry identical batch dims, or one of them is rank-2 and is
/// shared across the other's batches.
inline Var matmul(Var a, Var b) {
    detail::check_same_graph(a, b, "matmul");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() < 2 || bv.rank() < 2)
        throw ShapeError("matmul: operands must have rank >= 2: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
    const std::size_t m = av.extent(av.rank() - 2);
    const std::size_t k = av.extent(av.rank() - 1);
    const std::size_t k2 = bv.extent(bv.rank() - 2);
    const std::size_t n = bv.extent(bv.rank() - 1);
    if (k != k2)
        throw ShapeError("matmul: inner extents mismatch: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
    Shape batch_a(av.shape().begin(), av.shape().end() - 2);
    Shape batch_b(bv.shape().begin(), bv.shape().end() - 2);
    if (!batch_a.empty() && !batch_b.empty() && batch_a != batch_b)
        throw ShapeError("matmul: batch extents mismatch: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
    const Shape batch = batch_a.empty() ? batch_b : batch_a;
    const std::size_t nb = shape_numel(batch);
    const bool a_batched = !batch_a.empty();
    const bool b_batched = !batch_b.empty();

    Shape os = batch;
    os.push_back(m);
    os.push_back(n);
    Tensor out(os);
    for (std::size_t bi = 0; bi < nb; ++bi)
        detail::mm_acc(av.data() + (a_batched ? bi * m * k : 0), bv.data() + (b_batched ? bi * k * n : 0),
                       out.data() + bi * m * n, m, k, n);

    Graph& g = *a.graph();
    const bool ra = a.requires_grad(), rb = b.requires_grad();
    const std::size_t ia = a.id(), ib = b.id();
    return g.op(std::move(out), ra || rb, [=](Graph& gg, const Tensor& adj) {
        const Tensor& av2 = gg.node(ia).value;
        const Tensor& bv2 = gg.node(ib).value;
        if (ra) {
            Tensor& da = gg.adjoint(ia);
            for (std::size_t bi = 0; bi < nb; ++bi)
                detail::mm_acc_nt(adj.data() + bi * m * n, bv2.data() + (b_batched ? bi * k * n : 0),
                                  da.data() + (a_batched ? bi * m * k : 0), m, n, k);
        }
        if (rb) {
            Tensor& db = gg.adjoint(ib);
            for (std::size_t bi = 0; bi < nb; ++bi)
                detail::mm_acc_tn(av2.data() + (a_batched ? bi * m * k : 0), adj.data() + bi * m * n,
                                  db.data() + (b_batched ? bi * k * n : 0), m, k, n);
        }
    });
}

// ---------------------------------------------------------------------------
// nonlinearities & normalization
// ---------------------------------------------------------------------------

/// Softmax along `axis`, computed with max-subtraction. Rejects NaN input.
inline Var softmax(Var x, std::size_t axis) {
    const Tensor& xv = x.value();
    const AxisSplit sp = split_axis(xv.shape(), axis);
    Tensor out(xv.shape());
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < sp.extent; ++j) {
                const double v = xv[(o * sp.extent + j) * sp.inner + i];
                if (std::isnan(v)) throw NumericError("softmax: NaN input");
                mx = std::max(mx, v);
            }
            double denom = 0.0;
            for (std::size_t j = 0; j < sp.extent; ++j) {
                const std::size_t off = (o * sp.extent + j) * sp.inner + i;
                const double e = std::exp(xv[off] - mx);
                out[off] = e;
                denom += e;
            }
            const double inv = 1.0 / denom;
            for (std::size_t j = 0; j < sp.extent; ++j) out[(o * sp.extent + j) * sp.inner + i] *= inv;
        }
    Graph& g = *x.graph();
    const bool rx = x.requires_grad();
    const std::size_t ix = x.id();
    const std::size_t out_id = g.size();
    return g.op(std::move(out), rx, [=](Graph& gg, const Tensor& adj) {
        // dx = y * (adj - sum(adj*y)) per slice
        const Tensor& y = gg.node(out_id).value;
        Tensor& d = gg.adjoint(ix);
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t i = 0; i < sp.inner; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < sp.extent; ++j) {
                    const std::size_t off = (o * sp.extent + j) * sp.inner + i;
                    dot += adj[off] * y[off];
                }
                for (std::size_t j = 0; j < sp.extent; ++j) {
                    const std::size_t off = (o * sp.extent + j) * sp.inner + i;
                    d[off] += y[off] * (adj[off] - dot);
                }
            }
    });
}

/// Exact GELU x * Phi(x) using the Gaussian CDF (erfc form), not the tanh
/// approximation.
inline Var gelu(Var x) {
    static constexpr double kInvSqrt2 = 0.70710678118654752440;
    static constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    const Tensor& xv = x.value();
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const double v = xv[i];
        out[i] = v * 0.5 * std::erfc(-v * kInvSqrt2);
    }
    Graph& g = *x.graph();
    const bool rx = x.requires_grad();
    const std::size_t ix = x.id();
    return g.op(std::move(out), rx, [=](Graph& gg, const Tensor& adj) {
        const Tensor& xx = gg.node(ix).value;
        Tensor& d = gg.adjoint(ix);
        for (std::size_t i = 0; i < adj.numel(); ++i) {
            const double v = xx[i];
            const double cdf = 0.5 * std::erfc(-v * kInvSqrt2);
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            d[i] += adj[i] * (cdf + v * pdf);
        }
    });
}

/// LayerNorm over `axis` with per-position gain/bias of shape [extent(axis)].
/// Population variance; normalization, then affine.
inline Var layer_norm(Var x, Var gain, Var bias, std::size_t axis, double eps = 1e-5) {
    detail::check_same_graph(x, gain, "layer_norm");
    detail::check_same_graph(x, bias, "layer_norm");
    const Tensor& xv = x.value();
    const AxisSplit sp = split_axis(xv.shape(), axis);
    if (gain.value().numel() != sp.extent || bias.value().numel() != sp.extent)
        throw ShapeError("layer_norm: gain/bias " + shape_str(gain.value().shape()) + "/" + shape_str(bias.value().shape()) +
                         " do not match axis extent " + std::to_string(sp.extent));
    const std::size_t n_slices = sp.outer * sp.inner;
    auto mean = std::make_shared<std::vector<double>>(n_slices);
    auto istd = std::make_shared<std::vector<double>>(n_slices);
    const Tensor& gv = gain.value();
    const Tensor& bv = bias.value();
    Tensor out(xv.shape());
    const double invn = 1.0 / static_cast<double>(sp.extent);
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) {
            double mu = 0.0;
            for (std::size_t j = 0; j < sp.extent; ++j) mu += xv[(o * sp.extent + j) * sp.inner + i];
            mu *= invn;
            double var = 0.0;
            for (std::size_t j = 0; j < sp.extent; ++j) {
                const double c = xv[(o * sp.extent + j) * sp.inner + i] - mu;
                var += c * c;
            }
            var *= invn;
            const double is = 1.0 / std::sqrt(var + eps);
            (*mean)[o * sp.inner + i] = mu;
            (*istd)[o * sp.inner + i] = is;
            for (std::size_t j = 0; j < sp.extent; ++j) {
                const std::size_t off = (o * sp.extent + j) * sp.inner + i;
                out[off] = (xv[off] - mu) * is * gv[j] + bv[j];
            }
        }
    Graph& g = *x.graph();
    const bool rx = x.requires_grad(), rg = gain.requires_grad(), rb = bias.requires_grad();
    const std::size_t ix = x.id(), ig = gain.id(), ibi = bias.id();
    return g.op(std::move(out), rx || rg || rb, [=](Graph& gg, const Tensor& adj) {
        const Tensor& xx = gg.node(ix).value;
        const Tensor& gv2 = gg.node(ig).value;
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t i = 0; i < sp.inner; ++i) {
                const double mu = (*mean)[o * sp.inner + i];
                const double is = (*istd)[o * sp.inner + i];
                double s1 = 0.0, s2 = 0.0; // mean(dxhat), mean(dxhat*xhat)
                for (std::size_t j = 0; j < sp.extent; ++j) {
                    const std::size_t off = (o * sp.extent + j) * sp.inner + i;
                    const double xh = (xx[off] - mu) * is;
                    const double dxh = adj[off] * gv2[j];
                    s1 += dxh;
                    s2 += dxh * xh;
                }
                s1 *= invn;
                s2 *= invn;
                if (rx) {
                    Tensor& d = gg.adjoint(ix);
                    for (std::size_t j = 0; j < sp.extent; ++j) {
                        const std::size_t off = (o * sp.extent + j) * sp.inner + i;
                        const double xh = (xx[off] - mu) * is;
                        const double dxh = adj[off] * gv2[j];
                        d[off] += is * (dxh - s1 - xh * s2);
                    }
                }
                if (rg) {
                    Tensor& d = gg.adjoint(ig);
                    for (std::size_t j = 0; j < sp.extent; ++j) {
                        const std::size_t off = (o * sp.extent + j) * sp.inner + i;
                        d[j] += adj[off] * (xx[off] - mu) * is;
                    }
                }
                if (rb) {
                    Tensor& d = gg.adjoint(ibi);
                    for (std::size_t j = 0; j < sp.extent; ++j) d[j] += adj[(o * sp.extent + j) * sp.inner + i];
                }
            }
    });
}

// ---------------------------------------------------------------------------
// structured ops
// ---------------------------------------------------------------------------

/// [T,C,H,W] -> [T, N, C*p*p] with patches in row-major grid order and each
/// patch flattened channel-major (c, py, px).
inline Var extract_patches(Var frames, std::size_t p) {
    const Tensor& fv = frames.value();
    if (fv.rank() != 4) throw ShapeError("extract_patches: expected rank-4 frames, got " + shape_str(fv.shape()));
    const std::size_t T = fv.extent(0), C = fv.extent(1), H = fv.extent(2), W = fv.extent(3);
    if (p == 0 || H % p != 0 || W % p != 0)
        throw ShapeError("extract_patches: image " + shape_str(fv.shape()) + " not divisible by patch " + std::to_string(p));
    const std::size_t gh = H / p, gw = W / p, N = gh * gw, PD = C * p * p;
    Tensor out({T, N, PD});
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t gi = 0; gi < gh; ++gi)
            for (std::size_t gj = 0; gj < gw; ++gj)
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t py = 0; py < p; ++py)
                        for (std::size_t px = 0; px < p; ++px) {
                            const std::size_t n = gi * gw + gj;
                            const std::size_t src = ((t * C + c) * H + gi * p + py) * W + gj * p + px;
                            const std::size_t dst = (t * N + n) * PD + (c * p + py) * p + px;
                            out[dst] = fv[src];
                        }
    Graph& g = *frames.graph();
    const bool rf = frames.requires_grad();
    const std::size_t idf = frames.id();
    return g.op(std::move(out), rf, [=](Graph& gg, const Tensor& adj) {
        Tensor& d = gg.adjoint(idf);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t gi = 0; gi < gh; ++gi)
                for (std::size_t gj = 0; gj < gw; ++gj)
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t py = 0; py < p; ++py)
                            for (std::size_t px = 0; px < p; ++px) {
                                const std::size_t n = gi * gw + gj;
                                const std::size_t src = ((t * C + c) * H + gi * p + py) * W + gj * p + px;
                                const std::size_t dst = (t * N + n) * PD + (c * p + py) * p + px;
                                d[src] += adj[dst];
                            }
    });
}

/// Per-pixel linear map over channels: x [T,Cin,h,w], w [Cout,Cin], b [Cout]
/// -> [T,Cout,h,w]. Equivalent to a matmul over the channel axis; built from
/// the primitive ops so gradients come for free.
inline Var conv1x1(Var x, Var w, Var b) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    if (xv.rank() != 4) throw ShapeError("conv1x1: expected rank-4 input, got " + shape_str(xv.shape()));
    if (wv.rank() != 2) throw ShapeError("conv1x1: expected rank-2 weight, got " + shape_str(wv.shape()));
    const std::size_t T = xv.extent(0), Cin = xv.extent(1), h = xv.extent(2), wd = xv.extent(3);
    const std::size_t Cout = wv.extent(0);
    if (wv.extent(1) != Cin)
        throw ShapeError("conv1x1: weight " + shape_str(wv.shape()) + " does not match input channels of " + shape_str(xv.shape()));
    if (b.value().numel() != Cout)
        throw ShapeError("conv1x1: bias " + shape_str(b.value().shape()) + " does not match " + std::to_string(Cout) + " output channels");
    Var t = reshape(x, {T, Cin, h * wd});         // [T,Cin,HW]
    t = permute(t, {0, 2, 1});                    // [T,HW,Cin]
    t = matmul(t, permute(w, {1, 0}));            // [T,HW,Cout]
    t = add_bcast(t, b);
    t = permute(t, {0, 2, 1});                    // [T,Cout,HW]
    return reshape(t, {T, Cout, h, wd});
}

// ---------------------------------------------------------------------------
// losses (fused, numerically stable under saturated logits)
// ---------------------------------------------------------------------------

namespace detail {
inline double logsumexp(const double* z, std::size_t n, std::size_t skip = static_cast<std::size_t>(-1)) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i)
        if (i != skip) mx = std::max(mx, z[i]);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        if (i != skip) s += std::exp(z[i] - mx);
    return mx + std::log(s);
}
} // namespace detail

/// Cross-entropy of softmax(logits) against a probability target:
/// L = lse(z) - sum_c t_c z_c. Gradient: p - t.
inline Var cross_entropy(Var logits, const Tensor& target) {
    const Tensor& zv = logits.value();
    if (zv.rank() != 1) throw ShapeError("cross_entropy: expected rank-1 logits, got " + shape_str(zv.shape()));
    if (!target.same_shape(zv))
        throw ShapeError("cross_entropy: target " + shape_str(target.shape()) + " vs logits " + shape_str(zv.shape()));
    const std::size_t C = zv.numel();
    const double lse = detail::logsumexp(zv.data(), C);
    double loss = lse;
    for (std::size_t c = 0; c < C; ++c) loss -= target[c] * zv[c];
    Graph& g = *logits.graph();
    const bool rz = logits.requires_grad();
    const std::size_t iz = logits.id();
    auto tgt = std::make_shared<Tensor>(target);
    return g.op(Tensor::scalar(loss), rz, [=](Graph& gg, const Tensor& adj) {
        const Tensor& z = gg.node(iz).value;
        Tensor& d = gg.adjoint(iz);
        const double a = adj[0];
        for (std::size_t c = 0; c < C; ++c) d[c] += a * (std::exp(z[c] - lse) - (*tgt)[c]);
    });
}

inline Tensor one_hot(std::size_t label, std::size_t classes) {
    if (label >= classes) throw ContractError("one_hot: label " + std::to_string(label) + " out of range " + std::to_string(classes));
    Tensor t({classes});
    t[label] = 1.0;
    return t;
}

/// Element-wise binary cross-entropy of softmax(logits) against a soft target,
/// averaged over classes:
///   L = (1/C) sum_c -[ t_c log p_c + (1 - t_c) log(1 - p_c) ]
/// log(1-p_c) is computed as lse(z w/o c) - lse(z), which stays finite when a
/// logit saturates.
inline Var soft_bce(Var logits, const Tensor& target) {
    const Tensor& zv = logits.value();
    if (zv.rank() != 1) throw ShapeError("soft_bce: expected rank-1 logits, got " + shape_str(zv.shape()));
    if (!target.same_shape(zv))
        throw ShapeError("soft_bce: target " + shape_str(target.shape()) + " vs logits " + shape_str(zv.shape()));
    const std::size_t C = zv.numel();
    if (C < 2) throw ContractError("soft_bce: needs at least 2 classes");
    const double lse = detail::logsumexp(zv.data(), C);
    auto lse_wo = std::make_shared<std::vector<double>>(C);
    double loss = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
        const double lw = detail::logsumexp(zv.data(), C, c);
        (*lse_wo)[c] = lw;
        const double logp = zv[c] - lse;
        const double log1mp = lw - lse;
        loss -= target[c] * logp + (1.0 - target[c]) * log1mp;
    }
    loss /= static_cast<double>(C);
    Graph& g = *logits.graph();
    const bool rz = logits.requires_grad();
    const std::size_t iz = logits.id();
    auto tgt = std::make_shared<Tensor>(target);
    return g.op(Tensor::scalar(loss), rz, [=](Graph& gg, const Tensor& adj) {
        const Tensor& z = gg.node(iz).value;
        Tensor& d = gg.adjoint(iz);
        const double a = adj[0] / static_cast<double>(C);
        for (std::size_t j = 0; j < C; ++j) {
            const double pj = std::exp(z[j] - lse);
            double gj = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
                const double tc = (*tgt)[c];
                gj -= tc * ((j == c ? 1.0 : 0.0) - pj);
                if (j != c) gj -= (1.0 - tc) * std::exp(z[j] - (*lse_wo)[c]);
                gj += (1.0 - tc) * pj;
            }
            d[j] += a * gj;
        }
    });
}

/// Value-only softmax used outside the graph (e.g. anchor probabilities).
inline Tensor softmax_values(const Tensor& x, std::size_t axis) {
    const AxisSplit sp = split_axis(x.shape(), axis);
    Tensor out(x.shape());
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < sp.extent; ++j) mx = std::max(mx, x[(o * sp.extent + j) * sp.inner + i]);
            double denom = 0.0;
            for (std::size_t j = 0; j < sp.extent; ++j) {
                const std::size_t off = (o * sp.extent + j) * sp.inner + i;
                out[off] = std::exp(x[off] - mx);
                denom += out[off];
            }
            for (std::size_t j = 0; j < sp.extent; ++j) out[(o * sp.extent + j) * sp.inner + i] /= denom;
        }
    return out;
}

} // namespace s2d
