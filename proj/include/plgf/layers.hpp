#pragma once

#include <cmath>
#include <random>
#include <string>

#include "plgf/ops.hpp"

namespace plgf {

using Rng = std::mt19937_64;

template <typename Scalar>
Tensor<Scalar> uniform_tensor(Shape shape, Scalar bound, Rng& rng) {
    Tensor<Scalar> t(std::move(shape));
    std::uniform_real_distribution<double> dist(-static_cast<double>(bound), static_cast<double>(bound));
    for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(dist(rng));
    return t;
}

/// Adaptive ECA kernel: t = floor(log2(C) / 2 + 1/2), bumped to the next odd
/// number when even, at least 3. C = 128 gives 5, C = 16 gives 3.
inline Eigen::Index eca_kernel_size(Eigen::Index channels) {
    const auto t = static_cast<Eigen::Index>(std::floor(std::log2(static_cast<double>(channels)) / 2.0 + 0.5));
    const auto k = t % 2 == 1 ? t : t + 1;
    return std::max<Eigen::Index>(3, k);
}

/// Affine map over rows; weights (out, in), bias (out). Default init is
/// U(-1/sqrt(in), 1/sqrt(in)) for both.
template <typename Scalar>
struct Linear {
    Var<Scalar> weight;
    Var<Scalar> bias;

    Linear() = default;
    Linear(ParameterSet<Scalar>& ps, const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng) {
        const Scalar bound = Scalar(1) / std::sqrt(Scalar(in));
        weight = ps.add(name + ".weight", uniform_tensor<Scalar>({out, in}, bound, rng));
        bias = ps.add(name + ".bias", uniform_tensor<Scalar>({out}, bound, rng));
    }

    Eigen::Index in_features() const { return weight.shape()[1]; }
    Eigen::Index out_features() const { return weight.shape()[0]; }

    /// (T, in) -> (T, out); a rank-1 input (in) maps to (out).
    Var<Scalar> operator()(const Var<Scalar>& x) const {
        if (x.value().rank() == 1) {
            auto y = ops::linear(ops::reshape(x, {1, x.shape()[0]}), weight, bias);
            return ops::reshape(y, {out_features()});
        }
        return ops::linear(x, weight, bias);
    }

    void fill(Scalar w, Scalar b) {
        weight.mutable_value().array().setConstant(w);
        bias.mutable_value().array().setConstant(b);
    }
};

/// Same-padded stride-1 convolution; fan-in scaled uniform init.
template <typename Scalar>
struct Conv2d {
    Var<Scalar> weight;
    Var<Scalar> bias;

    Conv2d() = default;
    Conv2d(ParameterSet<Scalar>& ps, const std::string& name, Eigen::Index in, Eigen::Index out, Eigen::Index kernel,
           Rng& rng) {
        const Scalar bound = Scalar(1) / std::sqrt(Scalar(in * kernel * kernel));
        weight = ps.add(name + ".weight", uniform_tensor<Scalar>({out, in, kernel, kernel}, bound, rng));
        bias = ps.add(name + ".bias", uniform_tensor<Scalar>({out}, bound, rng));
    }

    Eigen::Index in_channels() const { return weight.shape()[1]; }
    Eigen::Index out_channels() const { return weight.shape()[0]; }
    Eigen::Index kernel() const { return weight.shape()[2]; }

    Var<Scalar> operator()(const Var<Scalar>& x) const { return ops::conv2d(x, weight, bias); }

    /// Overwrites weights so output channel o copies input channel o (center tap).
    void set_identity() {
        weight.mutable_value().set_zero();
        bias.mutable_value().set_zero();
        const auto k = kernel();
        const auto n = std::min(in_channels(), out_channels());
        for (Eigen::Index o = 0; o < n; ++o)
            weight.mutable_value()[((o * in_channels() + o) * k + k / 2) * k + k / 2] = Scalar(1);
    }
};

template <typename Scalar>
struct GroupNorm {
    Var<Scalar> weight;
    Var<Scalar> bias;
    Eigen::Index groups = 1;

    GroupNorm() = default;
    GroupNorm(ParameterSet<Scalar>& ps, const std::string& name, Eigen::Index channels, Eigen::Index groups_)
        : groups(groups_) {
        if (groups <= 0 || channels % groups != 0)
            throw ConfigError(name + ": group count " + std::to_string(groups) + " does not divide " +
                              std::to_string(channels) + " channels");
        weight = ps.add(name + ".weight", Tensor<Scalar>({channels}, Scalar(1)));
        bias = ps.add(name + ".bias", Tensor<Scalar>({channels}));
    }

    Var<Scalar> operator()(const Var<Scalar>& x) const { return ops::group_norm(x, groups, weight, bias); }
};

/// Efficient channel attention: sigmoid(conv1d(GAP(x))) gates each channel.
template <typename Scalar>
struct Eca {
    Var<Scalar> kernel;

    Eca() = default;
    Eca(ParameterSet<Scalar>& ps, const std::string& name, Eigen::Index channels, Rng& rng) {
        const auto k = eca_kernel_size(channels);
        kernel = ps.add(name + ".kernel", uniform_tensor<Scalar>({k}, Scalar(1) / std::sqrt(Scalar(k)), rng));
    }

    Var<Scalar> gate(const Var<Scalar>& x) const { return ops::sigmoid(ops::conv1d_same(ops::global_avg_pool(x), kernel)); }
    Var<Scalar> operator()(const Var<Scalar>& x) const { return ops::mul_channels(x, gate(x)); }
};

/// Multi-head scaled dot-product attention with input and output projections.
/// query (Tq, D), key/value (Tk, D) -> (Tq, D).
template <typename Scalar>
struct MultiHeadAttention {
    Linear<Scalar> q_proj;
    Linear<Scalar> k_proj;
    Linear<Scalar> v_proj;
    Linear<Scalar> out_proj;
    Eigen::Index heads = 1;

    MultiHeadAttention() = default;
    MultiHeadAttention(ParameterSet<Scalar>& ps, const std::string& name, Eigen::Index dim, Eigen::Index heads_,
                       Rng& rng)
        : heads(heads_) {
        if (heads <= 0 || dim % heads != 0)
            throw ConfigError(name + ": " + std::to_string(heads) + " heads do not divide width " + std::to_string(dim));
        q_proj = Linear<Scalar>(ps, name + ".q_proj", dim, dim, rng);
        k_proj = Linear<Scalar>(ps, name + ".k_proj", dim, dim, rng);
        v_proj = Linear<Scalar>(ps, name + ".v_proj", dim, dim, rng);
        out_proj = Linear<Scalar>(ps, name + ".out_proj", dim, dim, rng);
    }

    Var<Scalar> operator()(const Var<Scalar>& query, const Var<Scalar>& key, const Var<Scalar>& value) const {
        const auto q = q_proj(query);
        const auto k = k_proj(key);
        const auto v = v_proj(value);
        const auto dim = q.shape()[1];
        const auto head_dim = dim / heads;
        const Scalar inv_sqrt = Scalar(1) / std::sqrt(Scalar(head_dim));
        if (heads == 1) return out_proj(attend(q, k, v, inv_sqrt));
        std::vector<Var<Scalar>> outs;
        outs.reserve(static_cast<std::size_t>(heads));
        for (Eigen::Index h = 0; h < heads; ++h) {
            outs.push_back(attend(ops::slice_cols(q, h * head_dim, head_dim), ops::slice_cols(k, h * head_dim, head_dim),
                                  ops::slice_cols(v, h * head_dim, head_dim), inv_sqrt));
        }
        return out_proj(ops::concat_cols(outs));
    }

private:
    static Var<Scalar> attend(const Var<Scalar>& q, const Var<Scalar>& k, const Var<Scalar>& v, Scalar inv_sqrt) {
        auto scores = ops::scale(ops::matmul(q, ops::transpose(k)), inv_sqrt);
        return ops::matmul(ops::softmax_rows(scores), v);
    }
};

}  // namespace plgf
