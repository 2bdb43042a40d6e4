#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "plgf/autograd.hpp"

/// Differentiable tensor operations. Every function records its backward
/// rule on the tape when a parent requires a gradient.
namespace plgf::ops {

namespace detail {

template <typename Scalar>
void accumulate(const std::shared_ptr<Node<Scalar>>& p, const typename Tensor<Scalar>::Array& g) {
    if (p->requires_grad) p->grad_array() += g;
}

inline void require(bool ok, const char* op, const std::string& msg) {
    if (!ok) throw InputError(std::string(op) + ": " + msg);
}

template <typename Scalar>
void require_same_shape(const Var<Scalar>& a, const Var<Scalar>& b, const char* op) {
    require(a.shape() == b.shape(), op, "shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

template <typename Scalar>
void require_rank(const Var<Scalar>& a, std::size_t rank, const char* op) {
    require(a.value().rank() == rank, op, "expected rank " + std::to_string(rank) + ", got " + to_string(a.shape()));
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> constant(Tensor<Scalar> t) {
    return Var<Scalar>::constant(std::move(t));
}

template <typename Scalar>
Var<Scalar> detach(const Var<Scalar>& x) {
    return Var<Scalar>::constant(x.value());
}

// ---------------------------------------------------------------- element-wise

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
    detail::require_same_shape(a, b, "add");
    Tensor<Scalar> out(a.shape(), a.value().array() + b.value().array());
    return make_result<Scalar>(std::move(out), {a, b}, [](Node<Scalar>& n) {
        detail::accumulate(n.parents[0], n.grad.array());
        detail::accumulate(n.parents[1], n.grad.array());
    });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
    detail::require_same_shape(a, b, "sub");
    Tensor<Scalar> out(a.shape(), a.value().array() - b.value().array());
    return make_result<Scalar>(std::move(out), {a, b}, [](Node<Scalar>& n) {
        detail::accumulate(n.parents[0], n.grad.array());
        detail::accumulate<Scalar>(n.parents[1], -n.grad.array());
    });
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
    detail::require_same_shape(a, b, "mul");
    Tensor<Scalar> out(a.shape(), a.value().array() * b.value().array());
    return make_result<Scalar>(std::move(out), {a, b}, [](Node<Scalar>& n) {
        const auto& pa = n.parents[0];
        const auto& pb = n.parents[1];
        detail::accumulate<Scalar>(pa, n.grad.array() * pb->value.array());
        detail::accumulate<Scalar>(pb, n.grad.array() * pa->value.array());
    });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& x, Scalar s) {
    Tensor<Scalar> out(x.shape(), x.value().array() * s);
    return make_result<Scalar>(std::move(out), {x},
                               [s](Node<Scalar>& n) { detail::accumulate<Scalar>(n.parents[0], n.grad.array() * s); });
}

template <typename Scalar>
Var<Scalar> add_scalar(const Var<Scalar>& x, Scalar s) {
    Tensor<Scalar> out(x.shape(), x.value().array() + s);
    return make_result<Scalar>(std::move(out), {x},
                               [](Node<Scalar>& n) { detail::accumulate(n.parents[0], n.grad.array()); });
}

/// y = s * x with s a learnable scalar of shape (1).
template <typename Scalar>
Var<Scalar> scale_by(const Var<Scalar>& x, const Var<Scalar>& s) {
    detail::require(s.value().size() == 1, "scale_by", "scale must hold one element");
    const Scalar k = s.value()[0];
    Tensor<Scalar> out(x.shape(), x.value().array() * k);
    return make_result<Scalar>(std::move(out), {x, s}, [k](Node<Scalar>& n) {
        const auto& px = n.parents[0];
        const auto& ps = n.parents[1];
        detail::accumulate<Scalar>(px, n.grad.array() * k);
        if (ps->requires_grad) ps->grad_array()[0] += (n.grad.array() * px->value.array()).sum();
    });
}

template <typename Scalar, typename F, typename DF>
Var<Scalar> unary(const Var<Scalar>& x, F f, DF df) {
    Tensor<Scalar> out(x.shape(), x.value().array().unaryExpr(f));
    return make_result<Scalar>(std::move(out), {x}, [df](Node<Scalar>& n) {
        const auto& px = n.parents[0];
        if (!px->requires_grad) return;
        auto& g = px->grad_array();
        const auto& xv = px->value.array();
        const auto& yv = n.value.array();
        const auto& gy = n.grad.array();
        for (Eigen::Index i = 0; i < gy.size(); ++i) g[i] += gy[i] * df(xv[i], yv[i]);
    });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x) {
    return unary(
        x, [](Scalar v) { return v > Scalar(0) ? v : Scalar(0); },
        [](Scalar v, Scalar) { return v > Scalar(0) ? Scalar(1) : Scalar(0); });
}

/// Exact (erf-based) GELU.
template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& x) {
    const Scalar inv_sqrt2 = Scalar(1) / std::sqrt(Scalar(2));
    const Scalar inv_sqrt2pi = Scalar(1) / std::sqrt(Scalar(2) * std::numbers::pi_v<Scalar>);
    return unary(
        x, [=](Scalar v) { return Scalar(0.5) * v * (Scalar(1) + std::erf(v * inv_sqrt2)); },
        [=](Scalar v, Scalar) {
            return Scalar(0.5) * (Scalar(1) + std::erf(v * inv_sqrt2)) + v * std::exp(-Scalar(0.5) * v * v) * inv_sqrt2pi;
        });
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& x) {
    return unary(
        x, [](Scalar v) { return Scalar(1) / (Scalar(1) + std::exp(-v)); },
        [](Scalar, Scalar y) { return y * (Scalar(1) - y); });
}

template <typename Scalar>
Var<Scalar> tanh(const Var<Scalar>& x) {
    return unary(
        x, [](Scalar v) { return std::tanh(v); }, [](Scalar, Scalar y) { return Scalar(1) - y * y; });
}

/// |x| with subgradient 0 at the kink.
template <typename Scalar>
Var<Scalar> abs(const Var<Scalar>& x) {
    return unary(
        x, [](Scalar v) { return std::abs(v); },
        [](Scalar v, Scalar) { return v > Scalar(0) ? Scalar(1) : (v < Scalar(0) ? Scalar(-1) : Scalar(0)); });
}

template <typename Scalar>
Var<Scalar> log1p(const Var<Scalar>& x) {
    detail::require((x.value().array() > Scalar(-1)).all(), "log1p", "argument must exceed -1");
    return unary(
        x, [](Scalar v) { return std::log1p(v); }, [](Scalar v, Scalar) { return Scalar(1) / (Scalar(1) + v); });
}

template <typename Scalar>
Var<Scalar> square(const Var<Scalar>& x) {
    return unary(
        x, [](Scalar v) { return v * v; }, [](Scalar v, Scalar) { return Scalar(2) * v; });
}

/// x^p for x >= 0. The derivative at x = 0 is taken as 0 unless p == 1.
template <typename Scalar>
Var<Scalar> pow_scalar(const Var<Scalar>& x, Scalar p) {
    if (p == Scalar(0)) {
        Tensor<Scalar> out(x.shape(), Scalar(1));
        return make_result<Scalar>(std::move(out), {x}, [](Node<Scalar>&) {});
    }
    if (p == Scalar(1)) return unary(
        x, [](Scalar v) { return v; }, [](Scalar, Scalar) { return Scalar(1); });
    return unary(
        x, [p](Scalar v) { return std::pow(v, p); },
        [p](Scalar v, Scalar) { return v > Scalar(0) ? p * std::pow(v, p - Scalar(1)) : Scalar(0); });
}

// ---------------------------------------------------------------- reductions

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x) {
    Tensor<Scalar> out(Shape{1}, x.value().array().sum());
    return make_result<Scalar>(std::move(out), {x}, [](Node<Scalar>& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->grad_array() += n.grad[0];
    });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& x) {
    const Scalar inv = Scalar(1) / Scalar(x.value().size());
    Tensor<Scalar> out(Shape{1}, x.value().array().sum() * inv);
    return make_result<Scalar>(std::move(out), {x}, [inv](Node<Scalar>& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->grad_array() += n.grad[0] * inv;
    });
}

// ---------------------------------------------------------------- shape ops

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& x, Shape shape) {
    Tensor<Scalar> out = x.value().reshaped(std::move(shape));
    return make_result<Scalar>(std::move(out), {x},
                               [](Node<Scalar>& n) { detail::accumulate(n.parents[0], n.grad.array()); });
}

/// Concatenation along the leading axis; trailing dimensions must agree.
template <typename Scalar>
Var<Scalar> concat(const std::vector<Var<Scalar>>& xs) {
    detail::require(!xs.empty(), "concat", "no inputs");
    Shape tail(xs.front().shape().begin() + 1, xs.front().shape().end());
    Eigen::Index lead = 0;
    Eigen::Index total = 0;
    for (const auto& x : xs) {
        Shape t(x.shape().begin() + 1, x.shape().end());
        detail::require(t == tail, "concat", "trailing shape mismatch");
        lead += x.shape().front();
        total += x.value().size();
    }
    Shape shape = xs.front().shape();
    shape.front() = lead;
    typename Tensor<Scalar>::Array data(total);
    Eigen::Index off = 0;
    for (const auto& x : xs) {
        data.segment(off, x.value().size()) = x.value().array();
        off += x.value().size();
    }
    return make_result<Scalar>(Tensor<Scalar>(shape, std::move(data)), xs, [](Node<Scalar>& n) {
        Eigen::Index o = 0;
        for (const auto& p : n.parents) {
            const auto sz = p->value.size();
            if (p->requires_grad) p->grad_array() += n.grad.array().segment(o, sz);
            o += sz;
        }
    });
}

/// Columns [start, start + len) of a (rows, cols) matrix.
template <typename Scalar>
Var<Scalar> slice_cols(const Var<Scalar>& a, Eigen::Index start, Eigen::Index len) {
    detail::require_rank(a, 2, "slice_cols");
    const auto rows = a.shape()[0];
    Tensor<Scalar> out(Shape{rows, len});
    out.matrix() = a.value().matrix().middleCols(start, len);
    return make_result<Scalar>(std::move(out), {a}, [start, len](Node<Scalar>& n) {
        const auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->grad_array();
        p->grad.matrix().middleCols(start, len) += n.grad.matrix();
    });
}

template <typename Scalar>
Var<Scalar> concat_cols(const std::vector<Var<Scalar>>& xs) {
    detail::require(!xs.empty(), "concat_cols", "no inputs");
    const auto rows = xs.front().shape()[0];
    Eigen::Index cols = 0;
    for (const auto& x : xs) {
        detail::require_rank(x, 2, "concat_cols");
        detail::require(x.shape()[0] == rows, "concat_cols", "row mismatch");
        cols += x.shape()[1];
    }
    Tensor<Scalar> out(Shape{rows, cols});
    Eigen::Index c = 0;
    for (const auto& x : xs) {
        out.matrix().middleCols(c, x.shape()[1]) = x.value().matrix();
        c += x.shape()[1];
    }
    return make_result<Scalar>(std::move(out), xs, [](Node<Scalar>& n) {
        Eigen::Index o = 0;
        for (const auto& p : n.parents) {
            const auto w = p->value.dim(1);
            if (p->requires_grad) {
                p->grad_array();
                p->grad.matrix() += n.grad.matrix().middleCols(o, w);
            }
            o += w;
        }
    });
}

template <typename Scalar>
Var<Scalar> transpose(const Var<Scalar>& a) {
    detail::require_rank(a, 2, "transpose");
    Tensor<Scalar> out(Shape{a.shape()[1], a.shape()[0]});
    out.matrix() = a.value().matrix().transpose();
    return make_result<Scalar>(std::move(out), {a}, [](Node<Scalar>& n) {
        const auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->grad_array();
        p->grad.matrix() += n.grad.matrix().transpose();
    });
}

/// Row `index` of a (rows, cols) table as a (1, cols) matrix.
template <typename Scalar>
Var<Scalar> select_row(const Var<Scalar>& table, Eigen::Index index) {
    detail::require_rank(table, 2, "select_row");
    detail::require(index >= 0 && index < table.shape()[0], "select_row", "index out of range");
    const auto cols = table.shape()[1];
    Tensor<Scalar> out(Shape{1, cols});
    out.matrix() = table.value().matrix().row(index);
    return make_result<Scalar>(std::move(out), {table}, [index](Node<Scalar>& n) {
        const auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->grad_array();
        p->grad.matrix().row(index) += n.grad.matrix().row(0);
    });
}

// ---------------------------------------------------------------- dense algebra

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
    detail::require_rank(a, 2, "matmul");
    detail::require_rank(b, 2, "matmul");
    detail::require(a.shape()[1] == b.shape()[0], "matmul", "inner dimension mismatch");
    Tensor<Scalar> out(Shape{a.shape()[0], b.shape()[1]});
    out.matrix().noalias() = a.value().matrix() * b.value().matrix();
    return make_result<Scalar>(std::move(out), {a, b}, [](Node<Scalar>& n) {
        const auto& pa = n.parents[0];
        const auto& pb = n.parents[1];
        if (pa->requires_grad) {
            pa->grad_array();
            pa->grad.matrix().noalias() += n.grad.matrix() * pb->value.matrix().transpose();
        }
        if (pb->requires_grad) {
            pb->grad_array();
            pb->grad.matrix().noalias() += pa->value.matrix().transpose() * n.grad.matrix();
        }
    });
}

/// Row-wise affine map: X (T, in) -> X W^T + b with W (out, in), b (out).
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias) {
    detail::require_rank(x, 2, "linear");
    detail::require(x.shape()[1] == weight.shape()[1], "linear",
                    "input width " + std::to_string(x.shape()[1]) + " vs weight " + to_string(weight.shape()));
    const auto rows = x.shape()[0];
    const auto out_dim = weight.shape()[0];
    Tensor<Scalar> out(Shape{rows, out_dim});
    out.matrix().noalias() = x.value().matrix() * weight.value().matrix().transpose();
    if (bias) out.matrix().rowwise() += bias.value().array().matrix().transpose();
    std::vector<Var<Scalar>> parents{x, weight};
    if (bias) parents.push_back(bias);
    return make_result<Scalar>(std::move(out), std::move(parents), [](Node<Scalar>& n) {
        const auto& px = n.parents[0];
        const auto& pw = n.parents[1];
        const auto g = n.grad.matrix();
        if (px->requires_grad) {
            px->grad_array();
            px->grad.matrix().noalias() += g * pw->value.matrix();
        }
        if (pw->requires_grad) {
            pw->grad_array();
            pw->grad.matrix().noalias() += g.transpose() * px->value.matrix();
        }
        if (n.parents.size() > 2 && n.parents[2]->requires_grad)
            n.parents[2]->grad_array() += g.colwise().sum().transpose().array();
    });
}

template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& a) {
    detail::require_rank(a, 2, "softmax_rows");
    Tensor<Scalar> out(a.shape());
    auto m = out.matrix();
    const auto in = a.value().matrix();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        const Scalar mx = in.row(r).maxCoeff();
        m.row(r) = (in.row(r).array() - mx).exp().matrix();
        m.row(r) /= m.row(r).sum();
    }
    return make_result<Scalar>(std::move(out), {a}, [](Node<Scalar>& n) {
        const auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->grad_array();
        const auto y = n.value.matrix();
        const auto g = n.grad.matrix();
        auto gp = p->grad.matrix();
        for (Eigen::Index r = 0; r < y.rows(); ++r) {
            const Scalar dot = (g.row(r).array() * y.row(r).array()).sum();
            gp.row(r).array() += y.row(r).array() * (g.row(r).array() - dot);
        }
    });
}

// ---------------------------------------------------------------- feature maps

/// 2-D cross-correlation, stride 1, zero padding k/2 ("same" output size).
/// x (Cin, H, W), weight (Cout, Cin, k, k), bias (Cout) or undefined.
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias) {
    detail::require_rank(x, 3, "conv2d");
    detail::require_rank(weight, 4, "conv2d");
    const auto cin = x.shape()[0];
    const auto h = x.shape()[1];
    const auto w = x.shape()[2];
    const auto cout = weight.shape()[0];
    const auto k = weight.shape()[2];
    detail::require(weight.shape()[1] == cin, "conv2d",
                    "weight expects " + std::to_string(weight.shape()[1]) + " input channels, got " +
                        std::to_string(cin));
    detail::require(k % 2 == 1 && weight.shape()[3] == k, "conv2d", "kernel must be square and odd");
    const auto pad = k / 2;
    const auto hw = h * w;
    const auto patch = cin * k * k;

    // im2col; for 1x1 kernels the input itself is the column matrix.
    RowMatrix<Scalar> cols;
    if (k > 1) {
        cols.setZero(patch, hw);
        const auto& xv = x.value();
        for (Eigen::Index c = 0; c < cin; ++c)
            for (Eigen::Index ky = 0; ky < k; ++ky)
                for (Eigen::Index kx = 0; kx < k; ++kx) {
                    Scalar* row = cols.data() + ((c * k + ky) * k + kx) * hw;
                    for (Eigen::Index oy = 0; oy < h; ++oy) {
                        const auto iy = oy + ky - pad;
                        if (iy < 0 || iy >= h) continue;
                        const auto x0 = std::max<Eigen::Index>(0, pad - kx);
                        const auto x1 = std::min<Eigen::Index>(w, w + pad - kx);
                        const Scalar* src = xv.data() + (c * h + iy) * w + (kx - pad);
                        for (Eigen::Index ox = x0; ox < x1; ++ox) row[oy * w + ox] = src[ox];
                    }
                }
    }
    Tensor<Scalar> out(Shape{cout, h, w});
    const auto wm = weight.value().matrix(cout);
    if (k > 1)
        out.matrix().noalias() = wm * cols;
    else
        out.matrix().noalias() = wm * x.value().matrix(cin);
    if (bias) out.matrix().colwise() += bias.value().array().matrix();

    std::vector<Var<Scalar>> parents{x, weight};
    if (bias) parents.push_back(bias);
    return make_result<Scalar>(
        std::move(out), std::move(parents), [cols = std::move(cols), cin, cout, h, w, k, pad, hw, patch](Node<Scalar>& n) {
            const auto& px = n.parents[0];
            const auto& pw = n.parents[1];
            const auto g = n.grad.matrix(cout);
            if (pw->requires_grad) {
                pw->grad_array();
                if (k > 1)
                    pw->grad.matrix(cout).noalias() += g * cols.transpose();
                else
                    pw->grad.matrix(cout).noalias() += g * px->value.matrix(cin).transpose();
            }
            if (n.parents.size() > 2 && n.parents[2]->requires_grad)
                n.parents[2]->grad_array() += g.rowwise().sum().array();
            if (!px->requires_grad) return;
            px->grad_array();
            if (k == 1) {
                px->grad.matrix(cin).noalias() += pw->value.matrix(cout).transpose() * g;
                return;
            }
            RowMatrix<Scalar> dcols(patch, hw);
            dcols.noalias() = pw->value.matrix(cout).transpose() * g;
            Scalar* dx = px->grad.data();
            for (Eigen::Index c = 0; c < cin; ++c)
                for (Eigen::Index ky = 0; ky < k; ++ky)
                    for (Eigen::Index kx = 0; kx < k; ++kx) {
                        const Scalar* row = dcols.data() + ((c * k + ky) * k + kx) * hw;
                        for (Eigen::Index oy = 0; oy < h; ++oy) {
                            const auto iy = oy + ky - pad;
                            if (iy < 0 || iy >= h) continue;
                            const auto x0 = std::max<Eigen::Index>(0, pad - kx);
                            const auto x1 = std::min<Eigen::Index>(w, w + pad - kx);
                            Scalar* dst = dx + (c * h + iy) * w + (kx - pad);
                            for (Eigen::Index ox = x0; ox < x1; ++ox) dst[ox] += row[oy * w + ox];
                        }
                    }
        });
}

/// 1-D cross-correlation over a channel vector (C) with zero padding, no bias.
template <typename Scalar>
Var<Scalar> conv1d_same(const Var<Scalar>& v, const Var<Scalar>& kernel) {
    detail::require_rank(v, 1, "conv1d_same");
    const auto c = v.shape()[0];
    const auto k = kernel.value().size();
    detail::require(k % 2 == 1, "conv1d_same", "kernel size must be odd");
    const auto pad = k / 2;
    Tensor<Scalar> out(Shape{c});
    for (Eigen::Index i = 0; i < c; ++i)
        for (Eigen::Index j = 0; j < k; ++j) {
            const auto src = i + j - pad;
            if (src >= 0 && src < c) out[i] += kernel.value()[j] * v.value()[src];
        }
    return make_result<Scalar>(std::move(out), {v, kernel}, [c, k, pad](Node<Scalar>& n) {
        const auto& pv = n.parents[0];
        const auto& pk = n.parents[1];
        for (Eigen::Index i = 0; i < c; ++i)
            for (Eigen::Index j = 0; j < k; ++j) {
                const auto src = i + j - pad;
                if (src < 0 || src >= c) continue;
                if (pv->requires_grad) pv->grad_array()[src] += n.grad[i] * pk->value[j];
                if (pk->requires_grad) pk->grad_array()[j] += n.grad[i] * pv->value[src];
            }
    });
}

/// Group normalization over (C, H, W) with per-channel affine (C) weights.
template <typename Scalar>
Var<Scalar> group_norm(const Var<Scalar>& x, Eigen::Index groups, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       Scalar eps = Scalar(1e-5)) {
    detail::require_rank(x, 3, "group_norm");
    const auto c = x.shape()[0];
    detail::require(groups > 0 && c % groups == 0, "group_norm", "groups must divide channels");
    const auto hw = x.shape()[1] * x.shape()[2];
    const auto per = (c / groups) * hw;
    Tensor<Scalar> xhat(x.shape());
    typename Tensor<Scalar>::Array inv_std(groups);
    for (Eigen::Index g = 0; g < groups; ++g) {
        const auto seg = x.value().array().segment(g * per, per);
        const Scalar mu = seg.mean();
        const Scalar var = (seg - mu).square().mean();
        inv_std[g] = Scalar(1) / std::sqrt(var + eps);
        xhat.array().segment(g * per, per) = (seg - mu) * inv_std[g];
    }
    Tensor<Scalar> out(x.shape());
    out.matrix(c) = (xhat.matrix(c).array().colwise() * gamma.value().array()).colwise() + beta.value().array();
    return make_result<Scalar>(
        std::move(out), {x, gamma, beta},
        [xhat = std::move(xhat), inv_std = std::move(inv_std), groups, c, per](Node<Scalar>& n) {
            const auto& px = n.parents[0];
            const auto& pg = n.parents[1];
            const auto& pb = n.parents[2];
            const auto g = n.grad.matrix(c).array();
            const auto xh = xhat.matrix(c).array();
            if (pg->requires_grad) pg->grad_array() += (g * xh).rowwise().sum();
            if (pb->requires_grad) pb->grad_array() += g.rowwise().sum();
            if (!px->requires_grad) return;
            RowMatrix<Scalar> dxhat = (g.colwise() * pg->value.array()).matrix();
            auto& dx = px->grad_array();
            const Scalar m = Scalar(per);
            for (Eigen::Index gi = 0; gi < groups; ++gi) {
                const auto d = Eigen::Map<const typename Tensor<Scalar>::Array>(dxhat.data() + gi * per, per);
                const auto xs = xhat.array().segment(gi * per, per);
                const Scalar sd = d.sum();
                const Scalar sdx = (d * xs).sum();
                dx.segment(gi * per, per) += (inv_std[gi] / m) * (m * d - sd - xs * sdx);
            }
        });
}

/// Per-channel scale: y[c, :, :] = x[c, :, :] * g[c].
template <typename Scalar>
Var<Scalar> mul_channels(const Var<Scalar>& x, const Var<Scalar>& g) {
    const auto c = x.shape()[0];
    detail::require(g.value().size() == c, "mul_channels", "gate length must equal channel count");
    Tensor<Scalar> out(x.shape());
    out.matrix(c) = (x.value().matrix(c).array().colwise() * g.value().array()).matrix();
    return make_result<Scalar>(std::move(out), {x, g}, [c](Node<Scalar>& n) {
        const auto& px = n.parents[0];
        const auto& pg = n.parents[1];
        const auto gm = n.grad.matrix(c).array();
        if (px->requires_grad) {
            px->grad_array();
            px->grad.matrix(c).array() += gm.colwise() * pg->value.array();
        }
        if (pg->requires_grad) pg->grad_array() += (gm * px->value.matrix(c).array()).rowwise().sum();
    });
}

/// Per-channel shift: y[c, :, :] = x[c, :, :] + b[c].
template <typename Scalar>
Var<Scalar> add_channels(const Var<Scalar>& x, const Var<Scalar>& b) {
    const auto c = x.shape()[0];
    detail::require(b.value().size() == c, "add_channels", "shift length must equal channel count");
    Tensor<Scalar> out(x.shape());
    out.matrix(c) = (x.value().matrix(c).array().colwise() + b.value().array()).matrix();
    return make_result<Scalar>(std::move(out), {x, b}, [c](Node<Scalar>& n) {
        detail::accumulate(n.parents[0], n.grad.array());
        if (n.parents[1]->requires_grad) n.parents[1]->grad_array() += n.grad.matrix(c).array().rowwise().sum();
    });
}

/// Mean over H, W: (C, H, W) -> (C).
template <typename Scalar>
Var<Scalar> global_avg_pool(const Var<Scalar>& x) {
    const auto c = x.shape()[0];
    const auto hw = x.value().size() / c;
    Tensor<Scalar> out(Shape{c}, x.value().matrix(c).rowwise().mean().array().eval());
    return make_result<Scalar>(std::move(out), {x}, [c, hw](Node<Scalar>& n) {
        const auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->grad_array();
        p->grad.matrix(c).colwise() += (n.grad.array() / Scalar(hw)).matrix();
    });
}

/// Mean over channels: (C, H, W) -> (1, H, W).
template <typename Scalar>
Var<Scalar> channel_mean(const Var<Scalar>& x) {
    const auto c = x.shape()[0];
    Tensor<Scalar> out(Shape{1, x.shape()[1], x.shape()[2]});
    out.matrix(1) = x.value().matrix(c).colwise().mean();
    return make_result<Scalar>(std::move(out), {x}, [c](Node<Scalar>& n) {
        const auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->grad_array();
        p->grad.matrix(c).rowwise() += n.grad.matrix(1).row(0) / Scalar(c);
    });
}

/// Max over channels: (C, H, W) -> (1, H, W); gradient routed to the argmax.
template <typename Scalar>
Var<Scalar> channel_max(const Var<Scalar>& x) {
    const auto c = x.shape()[0];
    const auto hw = x.value().size() / c;
    Tensor<Scalar> out(Shape{1, x.shape()[1], x.shape()[2]});
    std::vector<Eigen::Index> arg(hw);
    const auto m = x.value().matrix(c);
    for (Eigen::Index i = 0; i < hw; ++i) out[i] = m.col(i).maxCoeff(&arg[i]);
    return make_result<Scalar>(std::move(out), {x}, [arg = std::move(arg), hw](Node<Scalar>& n) {
        const auto& p = n.parents[0];
        if (!p->requires_grad) return;
        auto& g = p->grad_array();
        for (Eigen::Index i = 0; i < hw; ++i) g[arg[i] * hw + i] += n.grad[i];
    });
}

/// Non-overlapping average pooling by `factor` in both axes.
template <typename Scalar>
Var<Scalar> avg_pool(const Var<Scalar>& x, Eigen::Index factor) {
    detail::require_rank(x, 3, "avg_pool");
    const auto c = x.shape()[0];
    const auto h = x.shape()[1];
    const auto w = x.shape()[2];
    detail::require(h % factor == 0 && w % factor == 0, "avg_pool", "spatial dims must be divisible by factor");
    if (factor == 1) return x;
    const auto oh = h / factor;
    const auto ow = w / factor;
    const Scalar inv = Scalar(1) / Scalar(factor * factor);
    Tensor<Scalar> out(Shape{c, oh, ow});
    const auto& xv = x.value();
    for (Eigen::Index ch = 0; ch < c; ++ch)
        for (Eigen::Index y = 0; y < h; ++y)
            for (Eigen::Index xx = 0; xx < w; ++xx) out.at(ch, y / factor, xx / factor) += xv.at(ch, y, xx) * inv;
    return make_result<Scalar>(std::move(out), {x}, [c, h, w, factor, inv](Node<Scalar>& n) {
        const auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->grad_array();
        for (Eigen::Index ch = 0; ch < c; ++ch)
            for (Eigen::Index y = 0; y < h; ++y)
                for (Eigen::Index xx = 0; xx < w; ++xx) p->grad.at(ch, y, xx) += n.grad.at(ch, y / factor, xx / factor) * inv;
    });
}

/// Nearest-neighbour replication by `factor` in both axes.
template <typename Scalar>
Var<Scalar> upsample_nearest(const Var<Scalar>& x, Eigen::Index factor) {
    detail::require_rank(x, 3, "upsample_nearest");
    if (factor == 1) return x;
    const auto c = x.shape()[0];
    const auto h = x.shape()[1];
    const auto w = x.shape()[2];
    Tensor<Scalar> out(Shape{c, h * factor, w * factor});
    const auto& xv = x.value();
    for (Eigen::Index ch = 0; ch < c; ++ch)
        for (Eigen::Index y = 0; y < h * factor; ++y)
            for (Eigen::Index xx = 0; xx < w * factor; ++xx) out.at(ch, y, xx) = xv.at(ch, y / factor, xx / factor);
    return make_result<Scalar>(std::move(out), {x}, [c, h, w, factor](Node<Scalar>& n) {
        const auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->grad_array();
        for (Eigen::Index ch = 0; ch < c; ++ch)
            for (Eigen::Index y = 0; y < h * factor; ++y)
                for (Eigen::Index xx = 0; xx < w * factor; ++xx) p->grad.at(ch, y / factor, xx / factor) += n.grad.at(ch, y, xx);
    });
}

/// Channel-to-space rearrangement:
/// out[c, r*i + di, r*j + dj] = in[c*r*r + r*di + dj, i, j].
template <typename Scalar>
Var<Scalar> pixel_shuffle(const Var<Scalar>& x, Eigen::Index r) {
    detail::require_rank(x, 3, "pixel_shuffle");
    const auto cin = x.shape()[0];
    if (cin % (r * r) != 0)
        throw ConfigError("pixel_shuffle: channel count " + std::to_string(cin) + " not divisible by " +
                          std::to_string(r * r));
    const auto c = cin / (r * r);
    const auto h = x.shape()[1];
    const auto w = x.shape()[2];
    const auto oh = h * r;
    const auto ow = w * r;
    // Index map out -> in, shared by forward and backward.
    std::vector<Eigen::Index> src(static_cast<std::size_t>(x.value().size()));
    for (Eigen::Index ch = 0; ch < c; ++ch)
        for (Eigen::Index di = 0; di < r; ++di)
            for (Eigen::Index dj = 0; dj < r; ++dj)
                for (Eigen::Index i = 0; i < h; ++i)
                    for (Eigen::Index j = 0; j < w; ++j)
                        src[(ch * oh + r * i + di) * ow + r * j + dj] = ((ch * r * r + r * di + dj) * h + i) * w + j;
    Tensor<Scalar> out(Shape{c, oh, ow});
    for (std::size_t o = 0; o < src.size(); ++o) out[o] = x.value()[src[o]];
    return make_result<Scalar>(std::move(out), {x}, [src = std::move(src)](Node<Scalar>& n) {
        const auto& p = n.parents[0];
        if (!p->requires_grad) return;
        auto& g = p->grad_array();
        for (std::size_t o = 0; o < src.size(); ++o) g[src[o]] += n.grad[o];
    });
}

/// Spatial gate broadcast over channels: y[c, i, j] = x[c, i, j] * m[0, i, j].
template <typename Scalar>
Var<Scalar> mul_spatial(const Var<Scalar>& x, const Var<Scalar>& mask) {
    const auto c = x.shape()[0];
    detail::require(mask.shape()[0] == 1 && mask.value().size() * c == x.value().size(), "mul_spatial",
                    "mask must be (1, H, W) matching the input");
    Tensor<Scalar> out(x.shape());
    out.matrix(c) = (x.value().matrix(c).array().rowwise() * mask.value().matrix(1).row(0).array()).matrix();
    return make_result<Scalar>(std::move(out), {x, mask}, [c](Node<Scalar>& n) {
        const auto& px = n.parents[0];
        const auto& pm = n.parents[1];
        const auto g = n.grad.matrix(c).array();
        if (px->requires_grad) {
            px->grad_array();
            px->grad.matrix(c).array() += g.rowwise() * pm->value.matrix(1).row(0).array();
        }
        if (pm->requires_grad) {
            pm->grad_array();
            pm->grad.matrix(1).row(0).array() += (g * px->value.matrix(c).array()).colwise().sum();
        }
    });
}

/// Elements [start, start + len) of a rank-1 tensor.
template <typename Scalar>
Var<Scalar> segment(const Var<Scalar>& v, Eigen::Index start, Eigen::Index len) {
    detail::require_rank(v, 1, "segment");
    detail::require(start >= 0 && start + len <= v.shape()[0], "segment", "range out of bounds");
    Tensor<Scalar> out(Shape{len}, v.value().array().segment(start, len).eval());
    return make_result<Scalar>(std::move(out), {v}, [start, len](Node<Scalar>& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->grad_array().segment(start, len) += n.grad.array();
    });
}

/// Block-wise normalisation of a nonnegative density map: every non-overlapping
/// block x block tile is divided by its sum so it sums to 1. Tiles whose sum is
/// below `min_sum` become uniform (1 / block^2) and pass no gradient.
template <typename Scalar>
Var<Scalar> block_normalize(const Var<Scalar>& density, Eigen::Index block, Scalar min_sum = Scalar(1e-9)) {
    detail::require_rank(density, 3, "block_normalize");
    const auto c = density.shape()[0];
    const auto h = density.shape()[1];
    const auto w = density.shape()[2];
    detail::require(h % block == 0 && w % block == 0, "block_normalize", "spatial dims must be divisible by block");
    const auto bh = h / block;
    const auto bw = w / block;
    Tensor<Scalar> sums(Shape{c, bh, bw});
    const auto& dv = density.value();
    for (Eigen::Index ch = 0; ch < c; ++ch)
        for (Eigen::Index y = 0; y < h; ++y)
            for (Eigen::Index x = 0; x < w; ++x) sums.at(ch, y / block, x / block) += dv.at(ch, y, x);
    Tensor<Scalar> out(density.shape());
    const Scalar uniform = Scalar(1) / Scalar(block * block);
    for (Eigen::Index ch = 0; ch < c; ++ch)
        for (Eigen::Index y = 0; y < h; ++y)
            for (Eigen::Index x = 0; x < w; ++x) {
                const Scalar s = sums.at(ch, y / block, x / block);
                out.at(ch, y, x) = s < min_sum ? uniform : dv.at(ch, y, x) / s;
            }
    return make_result<Scalar>(std::move(out), {density}, [sums = std::move(sums), c, h, w, block, min_sum](Node<Scalar>& n) {
        const auto& p = n.parents[0];
        if (!p->requires_grad) return;
        p->grad_array();
        // d y_i / d r_j = (delta_ij - y_i) / s within a tile.
        Tensor<Scalar> dot(sums.shape());
        for (Eigen::Index ch = 0; ch < c; ++ch)
            for (Eigen::Index y = 0; y < h; ++y)
                for (Eigen::Index x = 0; x < w; ++x)
                    dot.at(ch, y / block, x / block) += n.grad.at(ch, y, x) * n.value.at(ch, y, x);
        for (Eigen::Index ch = 0; ch < c; ++ch)
            for (Eigen::Index y = 0; y < h; ++y)
                for (Eigen::Index x = 0; x < w; ++x) {
                    const Scalar s = sums.at(ch, y / block, x / block);
                    if (s < min_sum) continue;
                    p->grad.at(ch, y, x) += (n.grad.at(ch, y, x) - dot.at(ch, y / block, x / block)) / s;
                }
    });
}

/// Per-element min-max scaling with clamping: (clamp(x, lo, hi) - lo) / (hi - lo).
template <typename Scalar>
Var<Scalar> minmax_scale(const Var<Scalar>& x, const typename Tensor<Scalar>::Array& lo,
                         const typename Tensor<Scalar>::Array& hi) {
    detail::require(lo.size() == x.value().size() && hi.size() == x.value().size(), "minmax_scale", "range size mismatch");
    const auto& xv = x.value().array();
    Tensor<Scalar> out(x.shape(), ((xv.max(lo).min(hi) - lo) / (hi - lo)).eval());
    return make_result<Scalar>(std::move(out), {x}, [lo, hi](Node<Scalar>& n) {
        const auto& p = n.parents[0];
        if (!p->requires_grad) return;
        const auto& xv = p->value.array();
        p->grad_array() += n.grad.array() * (xv >= lo && xv <= hi).template cast<Scalar>() / (hi - lo);
    });
}

}  // namespace plgf::ops
