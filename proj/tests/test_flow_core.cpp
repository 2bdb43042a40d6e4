#include <doctest.h>

#include <limits>

#include "support.hpp"

using namespace plgf;
using plgf::test::rel_err;

TEST_CASE("flow map rejects invalid contents") {
    CHECK_THROWS_AS(FlowMap(2, 2, Eigen::ArrayXf::Constant(3, 1.0f)), InputError);
    CHECK_THROWS_AS(FlowMap(0, 2), InputError);
    Eigen::ArrayXf v = Eigen::ArrayXf::Ones(4);
    v[2] = -0.5f;
    CHECK_THROWS_AS(FlowMap(2, 2, v), InputError);
    v[2] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(FlowMap(2, 2, v), InputError);
    FlowMap ok(2, 2);
    CHECK_THROWS_AS(ok.set(0, 1, 1, -1.0f), InputError);
}

TEST_CASE("grid relation geometry") {
    GridRelation r(4, 32, 16);
    CHECK(r.fine_shape() == std::pair<Eigen::Index, Eigen::Index>{128, 64});
    CHECK(r.stages() == 2);
    CHECK(GridRelation(8, 16, 16).stages() == 3);
    CHECK_THROWS_AS(GridRelation(3, 8, 8), ConfigError);
    CHECK_THROWS_AS(GridRelation(6, 8, 8), ConfigError);
    CHECK_THROWS_AS(GridRelation(2, 0, 8), ConfigError);
}

TEST_CASE("aggregate constant maps") {
    GridRelation r(2, 2, 2);
    const auto zero = aggregate(FlowMap(4, 4), r);
    CHECK(zero.height() == 2);
    CHECK((zero.values() == 0.0f).all());
    const auto four = aggregate(FlowMap(4, 4, Eigen::ArrayXf::Ones(16)), r);
    CHECK((four.values() == 4.0f).all());
}

TEST_CASE("aggregate matches a nested-loop block sum") {
    std::mt19937_64 rng(11);
    const auto fine = test::random_map(rng, 128, 128, 50.0, 0.3);
    GridRelation r(4, 32, 32);
    const auto coarse = aggregate(fine, r);
    for (int i = 0; i < 32; ++i)
        for (int j = 0; j < 32; ++j) {
            double s = 0.0;
            for (int a = 0; a < 4; ++a)
                for (int b = 0; b < 4; ++b) s += fine(4 * i + a, 4 * j + b);
            CHECK(coarse(i, j) == static_cast<float>(s));
        }
}

TEST_CASE("aggregate is linear") {
    std::mt19937_64 rng(5);
    GridRelation r(2, 8, 8);
    const auto f1 = test::random_map(rng, 16, 16);
    const auto f2 = test::random_map(rng, 16, 16);
    const float a = 0.75f, b = 2.5f;
    const FlowMap mix(16, 16, a * f1.values() + b * f2.values());
    const auto lhs = aggregate(mix, r).values();
    const auto rhs = (a * aggregate(f1, r).values() + b * aggregate(f2, r).values()).eval();
    for (Eigen::Index k = 0; k < lhs.size(); ++k) CHECK(rel_err(lhs[k], rhs[k]) < 1e-6);
}

TEST_CASE("aggregate rejects mismatched shapes") {
    CHECK_THROWS_AS(aggregate(FlowMap(6, 8), GridRelation(2, 4, 4)), InputError);
}

TEST_CASE("conservation residual") {
    std::mt19937_64 rng(3);
    GridRelation r(2, 4, 4);
    const auto fine = test::random_map(rng, 8, 8);
    const auto coarse = aggregate(fine, r);
    CHECK(conservation_residual(fine, coarse, r) < 1e-6);

    SUBCASE("one empty coarse cell bumped by one") {
        const FlowMap zero_fine(8, 8);
        FlowMap bumped(4, 4);
        bumped.set(0, 2, 1, 1.0f);
        CHECK(conservation_residual(zero_fine, bumped, r) == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("coarse doubled") {
        const FlowMap doubled(4, 4, coarse.values() * 2.0f);
        double expected = 0.0;
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) {
                double agg = 0.0;
                for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b) agg += fine(2 * i + a, 2 * j + b);
                expected = std::max(expected, std::abs(agg - static_cast<double>(doubled(i, j))) / (agg + 1.0));
            }
        CHECK(rel_err(conservation_residual(fine, doubled, r), expected) < 1e-12);
    }
    CHECK_THROWS_AS(conservation_residual(fine, FlowMap(2, 2), r), InputError);
}

TEST_CASE("metrics of identical maps are zero") {
    std::mt19937_64 rng(1);
    const auto m = test::random_map(rng, 5, 7);
    const auto r = compute_metrics(m, m);
    CHECK(r.mse == 0.0);
    CHECK(r.mae == 0.0);
    CHECK(r.mape == 0.0);
}

TEST_CASE("unit offset on a map of ones") {
    const FlowMap truth(2, 2, Eigen::ArrayXf::Ones(4));
    const FlowMap pred(2, 2, Eigen::ArrayXf::Constant(4, 2.0f));
    const auto masked = compute_metrics(pred, truth, MapeMode::masked);
    CHECK(masked.mse == 1.0);
    CHECK(masked.mae == 1.0);
    // |1 / (1 + 1e-6)| per cell.
    CHECK(masked.mape == doctest::Approx(1.0 / (1.0 + 1e-6)).epsilon(1e-15));
    CHECK(masked.cells_evaluated == 4);
    const auto guarded = compute_metrics(pred, truth, MapeMode::guarded);
    CHECK(guarded.mape == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("metrics match the scalar loop oracle") {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> dim(1, 16);
    for (int trial = 0; trial < 300; ++trial) {
        const int h = dim(rng), w = dim(rng);
        const auto truth = test::random_map(rng, h, w, 100.0, 0.3);
        const auto pred = test::random_map(rng, h, w, 100.0, 0.1);
        for (bool masked : {true, false}) {
            const auto got = compute_metrics(pred, truth, masked ? MapeMode::masked : MapeMode::guarded);
            const auto want = test::metric_oracle(pred, truth, masked);
            CHECK(rel_err(got.mse, want.mse) < 1e-9);
            CHECK(rel_err(got.mae, want.mae) < 1e-9);
            CHECK(rel_err(got.mape, want.mape) < 1e-9);
            CHECK(got.cells_evaluated == want.mape_cells);
        }
    }
}

TEST_CASE("all-zero truth leaves the MAPE mask empty") {
    const FlowMap truth(3, 3);
    const FlowMap pred(3, 3, Eigen::ArrayXf::Ones(9));
    const auto r = compute_metrics(pred, truth, MapeMode::masked);
    CHECK(r.empty_mape_mask);
    CHECK(r.mape == 0.0);
    CHECK(r.cells_evaluated == 0);
    CHECK(r.mse == 1.0);
    CHECK_FALSE(compute_metrics(pred, truth, MapeMode::guarded).empty_mape_mask);
}

TEST_CASE("metric shape mismatch") {
    CHECK_THROWS_AS(compute_metrics(FlowMap(2, 2), FlowMap(2, 3)), InputError);
}

TEST_CASE("accumulator equals metrics over concatenated maps") {
    std::mt19937_64 rng(8);
    const auto t1 = test::random_map(rng, 4, 4, 10.0, 0.25), p1 = test::random_map(rng, 4, 4);
    const auto t2 = test::random_map(rng, 4, 4, 10.0, 0.25), p2 = test::random_map(rng, 4, 4);
    MetricAccumulator acc;
    acc.add(p1, t1);
    acc.add(p2, t2);
    Eigen::ArrayXf tv(32), pv(32);
    tv << t1.values(), t2.values();
    pv << p1.values(), p2.values();
    const auto whole = compute_metrics(FlowMap(8, 4, pv), FlowMap(8, 4, tv));
    const auto r = acc.report();
    CHECK(rel_err(r.mse, whole.mse) < 1e-12);
    CHECK(rel_err(r.mae, whole.mae) < 1e-12);
    CHECK(rel_err(r.mape, whole.mape) < 1e-12);
}

TEST_CASE("mape mode names") {
    CHECK(parse_mape_mode("guarded") == MapeMode::guarded);
    CHECK(std::string(to_string(MapeMode::masked)) == "masked");
    CHECK_THROWS_AS(parse_mape_mode("percent"), ConfigError);
}
