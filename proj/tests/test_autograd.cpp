#include <doctest.h>

#include <algorithm>
#include <functional>
#include <random>

#include "plgf/ops.hpp"
#include "support.hpp"

using namespace plgf;
using V = Var<double>;
using T = Tensor<double>;

namespace {

T rand_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    T t(std::move(shape));
    std::uniform_real_distribution<double> u(lo, hi);
    for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = u(rng);
    return t;
}

/// Compares reverse-mode gradients of sum(w * f(leaves)) for fixed random
/// weights w against central differences on every leaf entry.
void check_gradients(const std::function<V(const std::vector<V>&)>& f, std::vector<T> inputs, double tol = 1e-6,
                     std::uint64_t seed = 99) {
    std::mt19937_64 rng(seed);
    std::vector<V> leaves;
    for (auto& t : inputs) leaves.push_back(V::leaf(t));
    const V out = f(leaves);
    const T weights = rand_tensor(rng, out.shape());
    const auto objective = [&](const std::vector<V>& xs) {
        NoGradGuard guard;
        return (f(xs).value().array() * weights.array()).sum();
    };
    ops::sum(ops::mul(out, ops::constant(weights))).backward();
    const double h = 1e-6;
    for (std::size_t a = 0; a < leaves.size(); ++a) {
        for (Eigen::Index k = 0; k < inputs[a].size(); ++k) {
            auto probe = [&](double delta) {
                std::vector<V> xs;
                for (std::size_t b = 0; b < inputs.size(); ++b) {
                    T t = inputs[b];
                    if (b == a) t[k] += delta;
                    xs.push_back(V::constant(t));
                }
                return objective(xs);
            };
            const double fd = (probe(h) - probe(-h)) / (2 * h);
            const double ad = leaves[a].grad().empty() ? 0.0 : leaves[a].grad()[k];
            INFO("input " << a << " element " << k << " fd " << fd << " ad " << ad);
            CHECK(std::abs(fd - ad) <= tol * std::max(1.0, std::abs(fd)));
        }
    }
}

}  // namespace

TEST_CASE("elementwise binary ops") {
    std::mt19937_64 rng(1);
    const auto a = rand_tensor(rng, {2, 3}), b = rand_tensor(rng, {2, 3});
    check_gradients([](const auto& x) { return ops::add(x[0], x[1]); }, {a, b});
    check_gradients([](const auto& x) { return ops::sub(x[0], x[1]); }, {a, b});
    check_gradients([](const auto& x) { return ops::mul(x[0], x[1]); }, {a, b});
    check_gradients([](const auto& x) { return ops::scale(x[0], 2.5); }, {a});
    check_gradients([](const auto& x) { return ops::add_scalar(x[0], -0.3); }, {a});
    check_gradients([](const auto& x) { return ops::scale_by(x[0], x[1]); }, {a, rand_tensor(rng, {1})});
}

TEST_CASE("unary ops away from kinks") {
    std::mt19937_64 rng(2);
    T x = rand_tensor(rng, {7});
    for (Eigen::Index i = 0; i < x.size(); ++i)
        if (std::abs(x[i]) < 0.05) x[i] = 0.3;
    const auto pos = rand_tensor(rng, {7}, 0.1, 3.0);
    check_gradients([](const auto& v) { return ops::relu(v[0]); }, {x});
    check_gradients([](const auto& v) { return ops::gelu(v[0]); }, {x});
    check_gradients([](const auto& v) { return ops::sigmoid(v[0]); }, {x});
    check_gradients([](const auto& v) { return ops::tanh(v[0]); }, {x});
    check_gradients([](const auto& v) { return ops::abs(v[0]); }, {x});
    check_gradients([](const auto& v) { return ops::square(v[0]); }, {x});
    check_gradients([](const auto& v) { return ops::log1p(v[0]); }, {pos});
    check_gradients([](const auto& v) { return ops::pow_scalar(v[0], 1.7); }, {pos});
    check_gradients([](const auto& v) { return ops::pow_scalar(v[0], 0.5); }, {pos});
}

TEST_CASE("unary op values") {
    const auto x = V::constant(T({3}, Eigen::ArrayXd::LinSpaced(3, -1.0, 1.0)));
    const auto g = ops::gelu(x).value();
    CHECK(g[1] == 0.0);
    CHECK(g[2] == doctest::Approx(0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)))));
    CHECK(ops::pow_scalar(V::constant(T({1}, 0.0)), 0.0).value()[0] == 1.0);
    CHECK(ops::relu(x).value()[0] == 0.0);
}

TEST_CASE("reductions and shape ops") {
    std::mt19937_64 rng(3);
    const auto a = rand_tensor(rng, {3, 4}), b = rand_tensor(rng, {2, 4}), c = rand_tensor(rng, {3, 2});
    check_gradients([](const auto& x) { return ops::sum(x[0]); }, {a});
    check_gradients([](const auto& x) { return ops::mean(x[0]); }, {a});
    check_gradients([](const auto& x) { return ops::reshape(x[0], {4, 3}); }, {a});
    check_gradients([](const auto& x) { return ops::concat<double>({x[0], x[1]}); }, {a, b});
    check_gradients([](const auto& x) { return ops::slice_cols(x[0], 1, 2); }, {a});
    check_gradients([](const auto& x) { return ops::concat_cols<double>({x[0], x[1]}); }, {a, c});
    check_gradients([](const auto& x) { return ops::transpose(x[0]); }, {a});
    check_gradients([](const auto& x) { return ops::select_row(x[0], 2); }, {a});
    check_gradients([](const auto& x) { return ops::segment(x[0], 3, 5); }, {rand_tensor(rng, {9})});
}

TEST_CASE("dense algebra") {
    std::mt19937_64 rng(4);
    const auto a = rand_tensor(rng, {3, 4}), b = rand_tensor(rng, {4, 2});
    check_gradients([](const auto& x) { return ops::matmul(x[0], x[1]); }, {a, b});
    check_gradients([](const auto& x) { return ops::linear(x[0], x[1], x[2]); },
                    {a, rand_tensor(rng, {5, 4}), rand_tensor(rng, {5})});
    check_gradients([](const auto& x) { return ops::softmax_rows(x[0]); }, {rand_tensor(rng, {3, 5}, -3, 3)});
    const auto s = ops::softmax_rows(V::constant(rand_tensor(rng, {4, 6}, -50, 50))).value();
    for (Eigen::Index r = 0; r < 4; ++r) CHECK(s.matrix(4).row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("conv2d matches a direct loop and differentiates") {
    std::mt19937_64 rng(5);
    for (Eigen::Index k : {1, 3, 7}) {
        const auto x = rand_tensor(rng, {3, 5, 6});
        const auto w = rand_tensor(rng, {2, 3, k, k});
        const auto b = rand_tensor(rng, {2});
        const auto y = ops::conv2d(V::constant(x), V::constant(w), V::constant(b)).value();
        const Eigen::Index pad = k / 2;
        for (Eigen::Index o = 0; o < 2; ++o)
            for (Eigen::Index i = 0; i < 5; ++i)
                for (Eigen::Index j = 0; j < 6; ++j) {
                    double acc = b[o];
                    for (Eigen::Index c = 0; c < 3; ++c)
                        for (Eigen::Index di = 0; di < k; ++di)
                            for (Eigen::Index dj = 0; dj < k; ++dj) {
                                const auto si = i + di - pad, sj = j + dj - pad;
                                if (si < 0 || si >= 5 || sj < 0 || sj >= 6) continue;
                                acc += w[((o * 3 + c) * k + di) * k + dj] * x.at(c, si, sj);
                            }
                    CHECK(y.at(o, i, j) == doctest::Approx(acc).epsilon(1e-12));
                }
        check_gradients([](const auto& v) { return ops::conv2d(v[0], v[1], v[2]); }, {x, w, b});
    }
    const auto x = rand_tensor(rng, {2, 3, 3});
    check_gradients([](const auto& v) { return ops::conv2d(v[0], v[1], V()); }, {x, rand_tensor(rng, {1, 2, 3, 3})});
    CHECK_THROWS(ops::conv2d(V::constant(x), V::constant(rand_tensor(rng, {1, 3, 3, 3})), V()));
}

TEST_CASE("feature-map ops") {
    std::mt19937_64 rng(6);
    const auto x = rand_tensor(rng, {4, 4, 4});
    check_gradients([](const auto& v) { return ops::conv1d_same(v[0], v[1]); }, {rand_tensor(rng, {6}), rand_tensor(rng, {3})});
    check_gradients([](const auto& v) { return ops::group_norm(v[0], 2, v[1], v[2]); },
                    {x, rand_tensor(rng, {4}), rand_tensor(rng, {4})}, 1e-5);
    check_gradients([](const auto& v) { return ops::mul_channels(v[0], v[1]); }, {x, rand_tensor(rng, {4})});
    check_gradients([](const auto& v) { return ops::add_channels(v[0], v[1]); }, {x, rand_tensor(rng, {4})});
    check_gradients([](const auto& v) { return ops::global_avg_pool(v[0]); }, {x});
    check_gradients([](const auto& v) { return ops::channel_mean(v[0]); }, {x});
    check_gradients([](const auto& v) { return ops::channel_max(v[0]); }, {x});
    check_gradients([](const auto& v) { return ops::avg_pool(v[0], 2); }, {x});
    check_gradients([](const auto& v) { return ops::upsample_nearest(v[0], 2); }, {x});
    check_gradients([](const auto& v) { return ops::pixel_shuffle(v[0], 2); }, {x});
    check_gradients([](const auto& v) { return ops::mul_spatial(v[0], v[1]); }, {x, rand_tensor(rng, {1, 4, 4})});
    check_gradients([](const auto& v) { return ops::block_normalize(v[0], 2); }, {rand_tensor(rng, {2, 4, 4}, 0.1, 2.0)});
    Eigen::ArrayXd lo(3), hi(3);
    lo << -1, 0, 2;
    hi << 1, 5, 4;
    T mm({3});
    mm[0] = 0.2, mm[1] = 3.0, mm[2] = 2.5;
    check_gradients([lo, hi](const auto& v) { return ops::minmax_scale(v[0], lo, hi); }, {mm});
}

TEST_CASE("group norm output statistics") {
    std::mt19937_64 rng(7);
    const auto y = ops::group_norm(V::constant(rand_tensor(rng, {4, 3, 3}, 0, 10)), 2, V::constant(T({4}, 1.0)),
                                   V::constant(T({4}, 0.0)))
                       .value();
    for (int g = 0; g < 2; ++g) {
        const auto seg = y.array().segment(g * 18, 18);
        CHECK(seg.mean() == doctest::Approx(0.0).epsilon(1e-12).scale(1));
        CHECK((seg - seg.mean()).square().mean() == doctest::Approx(1.0).epsilon(1e-4));
    }
}

TEST_CASE("pixel shuffle index contract") {
    std::mt19937_64 rng(8);
    const auto x = rand_tensor(rng, {12, 3, 3});
    const auto y = ops::pixel_shuffle(V::constant(x), 2).value();
    REQUIRE(y.shape() == Shape{3, 6, 6});
    for (Eigen::Index c = 0; c < 3; ++c)
        for (Eigen::Index i = 0; i < 3; ++i)
            for (Eigen::Index j = 0; j < 3; ++j)
                for (Eigen::Index di = 0; di < 2; ++di)
                    for (Eigen::Index dj = 0; dj < 2; ++dj) CHECK(y.at(c, 2 * i + di, 2 * j + dj) == x.at(4 * c + 2 * di + dj, i, j));
    CHECK_THROWS_AS(ops::pixel_shuffle(V::constant(rand_tensor(rng, {6, 2, 2})), 2), ConfigError);
}

TEST_CASE("block normalize sums and fallback") {
    T d({1, 4, 4});
    for (Eigen::Index i = 0; i < 16; ++i) d[i] = static_cast<double>(i % 5);
    // Zero the top-left tile.
    d.at(0, 0, 0) = d.at(0, 0, 1) = d.at(0, 1, 0) = d.at(0, 1, 1) = 0.0;
    const auto y = ops::block_normalize(V::constant(d), 2).value();
    CHECK(y.at(0, 0, 0) == 0.25);
    CHECK(y.at(0, 1, 1) == 0.25);
    for (int bi = 0; bi < 2; ++bi)
        for (int bj = 0; bj < 2; ++bj) {
            double s = 0;
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b) s += y.at(0, 2 * bi + a, 2 * bj + b);
            CHECK(s == doctest::Approx(1.0).epsilon(1e-15));
        }
}

TEST_CASE("tape bookkeeping") {
    auto a = V::leaf(T({2}, 3.0));
    SUBCASE("no-grad mode records nothing") {
        NoGradGuard guard;
        CHECK_FALSE(ops::mul(a, a).requires_grad());
    }
    SUBCASE("gradients accumulate across backward calls") {
        ops::sum(ops::mul(a, a)).backward();
        ops::sum(ops::mul(a, a)).backward();
        CHECK(a.grad()[0] == 12.0);
        a.zero_grad();
        CHECK(a.grad().empty());
    }
    SUBCASE("detach blocks the gradient") {
        ops::sum(ops::mul(ops::detach(a), a)).backward();
        CHECK(a.grad()[0] == 3.0);
    }
    SUBCASE("shared subexpression") {
        const auto b = ops::scale(a, 2.0);
        ops::sum(ops::add(b, ops::mul(b, b))).backward();
        // d/da (2a + 4a^2) = 2 + 8a
        CHECK(a.grad()[0] == doctest::Approx(26.0));
    }
}

TEST_CASE("parameter set") {
    ParameterSet<double> ps;
    ps.add("a.weight", T({2, 2}, 1.0));
    ps.add("a.bias", T({2}));
    CHECK(ps.scalar_count() == 6);
    CHECK_THROWS_AS(ps.add("a.bias", T({1})), ConfigError);
    CHECK_THROWS_AS(ps.get("missing"), ConfigError);
    auto state = ps.state();
    state["a.bias"][1] = 7.0;
    ps.load_state(state);
    CHECK(ps.get("a.bias").value()[1] == 7.0);
    state["a.bias"] = T({3});
    CHECK_THROWS_AS(ps.load_state(state), LoadError);
    state.erase("a.bias");
    CHECK_THROWS_AS(ps.load_state(state), LoadError);
}
