#include <doctest.h>

#include <fstream>
#include <sstream>

#include "plgf/checkpoint.hpp"
#include "plgf/harness.hpp"
#include "support.hpp"

using namespace plgf;
namespace fs = std::filesystem;

namespace {

struct Fixture {
    test::TempDir dir{"plgf_harness"};
    GridRelation relation{4, 4, 4};
    Dataset data;

    Fixture() {
        generate_synthetic(dir / "data", 12, 30, relation);
        data = load_dataset(dir / "data", relation);
    }

    ExperimentConfig config(const std::string& out) const {
        ExperimentConfig c;
        c.model.base_channels = 4;
        c.model.rdb_layers = 1;
        c.model.rdb_growth = 2;
        c.model.fpn_scales = 2;
        c.model.cond_dim = 4;
        c.model.attn_heads = 1;
        c.model.norm_groups = 1;
        c.optimizer.epochs = 2;
        c.optimizer.batch_size = 7;
        c.optimizer.learning_rate = 1e-3;
        c.seed = 3;
        c.dataset = (dir / "data").string();
        c.output_dir = (dir / out).string();
        return c;
    }
};

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::vector<std::string>> rows;
    for (std::string line; std::getline(in, line);) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
        rows.push_back(cells);
    }
    return rows;
}

}  // namespace

TEST_CASE("learning rate schedule") {
    OptimizerConfig o;
    o.learning_rate = 3e-4;
    for (int e = 0; e < 40; ++e) {
        const double want = 3e-4 * std::pow(0.5, e / 8);
        CHECK(learning_rate_at(o, e) == doctest::Approx(want).epsilon(1e-15));
    }
    CHECK(learning_rate_at(o, 7) == learning_rate_at(o, 0));
    CHECK(learning_rate_at(o, 8) == 1.5e-4);
}

TEST_CASE("experiment config json and validation") {
    Fixture fx;
    auto c = fx.config("x");
    c.loss_kind = LossKind::l1;
    c.loss.lambda = 2.0;
    const nlohmann::json j = c;
    CHECK(j.get<ExperimentConfig>() == c);
    auto bad = j;
    bad["optimizer"]["lr"] = 1.0;
    CHECK_THROWS_AS(bad.get<ExperimentConfig>(), ConfigError);
    c.optimizer.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = fx.config("x");
    c.optimizer.decay_factor = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("evaluation") {
    Fixture fx;
    const auto& test = fx.data.test;
    SUBCASE("a truth oracle scores zero") {
        const auto r = evaluate([](const Sample& s) { return s.fine; }, test, fx.relation);
        CHECK(r.metrics.mse == 0.0);
        CHECK(r.metrics.mae == 0.0);
        CHECK(r.metrics.mape == 0.0);
        CHECK(r.conservation_residual < 1e-6);
        CHECK(r.samples == static_cast<std::int64_t>(test.size()));
    }
    SUBCASE("random-init model conserves and matches pooled metrics") {
        const auto cfg = fx.config("x");
        auto model = make_model<float>(cfg.model, 1);
        const auto r = evaluate(*model, test);
        CHECK(r.conservation_residual < 1e-4);
        MetricAccumulator acc;
        for (const auto& s : test) acc.add(model->predict(s.coarse, s.factors), s.fine);
        CHECK(test::rel_err(r.metrics.mse, acc.report().mse) < 1e-12);
        CHECK(test::rel_err(r.metrics.mape, acc.report().mape) < 1e-12);
    }
    SUBCASE("checkpoint of the wrong geometry") {
        auto cfg = fx.config("x");
        cfg.model.stages = 1;
        auto model = make_model<float>(cfg.model, 1);
        save_checkpoint(fx.dir / "m.ckpt", *model);
        CHECK_THROWS_AS(evaluate(fx.dir / "m.ckpt", fx.dir / "data", Split::test), LoadError);
    }
}

TEST_CASE("training writes its artefacts and follows the schedule") {
    Fixture fx;
    auto cfg = fx.config("run");
    cfg.optimizer.decay_every = 1;
    const auto rec = train(cfg, fx.data);
    REQUIRE(rec.epochs.size() == 2);
    CHECK(rec.epochs[0].learning_rate == 1e-3);
    CHECK(rec.epochs[1].learning_rate == 5e-4);
    for (const auto* f : {"best.ckpt", "best.ckpt.json", "last.ckpt", "last.optim", "run_record.json"})
        CHECK(fs::exists(fx.dir / "run" / f));
    CHECK(rec.parameter_count == count_parameters(cfg.model));
    CHECK(rec.best_epoch >= 0);
    CHECK(rec.test.samples == 6);

    const auto stored = load_run_record(fx.dir / "run" / "run_record.json");
    CHECK(nlohmann::json(stored) == nlohmann::json(rec));
    CHECK(evaluate(rec.best_checkpoint, fx.dir / "data", Split::test).metrics.mse == rec.test.metrics.mse);
}

TEST_CASE("same seed gives the same first epoch") {
    Fixture fx;
    auto a = fx.config("a"), b = fx.config("b");
    a.optimizer.epochs = b.optimizer.epochs = 1;
    const auto ra = train(a, fx.data), rb = train(b, fx.data);
    CHECK(ra.epochs[0].train_loss.total == rb.epochs[0].train_loss.total);
    CHECK(ra.epochs[0].val.mse == rb.epochs[0].val.mse);
}

TEST_CASE("zero epochs evaluates the initial weights") {
    Fixture fx;
    auto cfg = fx.config("zero");
    cfg.optimizer.epochs = 0;
    const auto rec = train(cfg, fx.data);
    CHECK(rec.epochs.empty());
    CHECK(rec.best_epoch == -1);
    CHECK(fs::exists(fx.dir / "zero" / "best.ckpt"));
    auto init = make_model<float>(cfg.model, cfg.seed);
    CHECK(rec.test.metrics.mse == evaluate(*init, fx.data.test).metrics.mse);
}

TEST_CASE("resume continues where the run stopped") {
    Fixture fx;
    auto full = fx.config("full");
    full.optimizer.epochs = 3;
    const auto straight = train(full, fx.data);

    auto part = fx.config("part");
    part.optimizer.epochs = 2;
    train(part, fx.data);
    part.optimizer.epochs = 3;
    TrainOptions opts;
    opts.resume = true;
    const auto resumed = train(part, fx.data, opts);
    REQUIRE(resumed.epochs.size() == 3);
    for (int e = 0; e < 3; ++e) {
        CHECK(resumed.epochs[e].train_loss.total == straight.epochs[e].train_loss.total);
        CHECK(resumed.epochs[e].val.mse == straight.epochs[e].val.mse);
    }
    CHECK(resumed.test.metrics.mse == straight.test.metrics.mse);

    auto changed = part;
    changed.optimizer.learning_rate = 1.0;
    CHECK_THROWS_AS(train(changed, fx.data, opts), ConfigError);
}

TEST_CASE("non-finite loss aborts") {
    Fixture fx;
    Dataset huge = fx.data;
    for (auto& s : huge.train) {
        s.fine = FlowMap(s.fine.height(), s.fine.width(), s.fine.values() * 1e30f + 1e30f);
        s.coarse = aggregate(s.fine, fx.relation);
    }
    auto cfg = fx.config("nan");
    cfg.loss_kind = LossKind::mse;
    CHECK_THROWS_AS(train(cfg, huge), NumericError);
}

TEST_CASE("training configuration errors surface before training") {
    Fixture fx;
    auto cfg = fx.config("bad");
    cfg.model.stages = 3;
    CHECK_THROWS_AS(train(cfg, fx.data), ConfigError);
    cfg = fx.config("bad");
    cfg.dataset = (fx.dir / "missing").string();
    CHECK_THROWS_AS(train(cfg), LoadError);
}

TEST_CASE("ablation variants") {
    Fixture fx;
    const auto base = fx.config("abl");
    CHECK(ablation_switch_names().size() == 5);
    CHECK(ablation_variant(base, "full") == base);
    CHECK(ablation_variant(base, "wo_film").model.ablation.no_film);
    CHECK(count_parameters(ablation_variant(base, "wo_film").model) < count_parameters(base.model));
    CHECK(ablation_variant(base, "wo_dualfocal").loss_kind == LossKind::mse);
    CHECK(ablation_variant(base, "wo_logarithmic").loss.lambda == 0.0);
    CHECK_THROWS_AS(ablation_variant(base, "wo_everything"), ConfigError);

    SUBCASE("empty switch set is a plain training run") {
        auto cfg = base;
        cfg.optimizer.epochs = 1;
        const auto table = run_ablation(cfg, {}, fx.data);
        REQUIRE(table.rows.size() == 1);
        CHECK(table.rows[0].variant == "full");
        auto plain = cfg;
        plain.output_dir = (fx.dir / "plain").string();
        CHECK(table.rows[0].test.metrics.mse == train(plain, fx.data).test.metrics.mse);
    }
    SUBCASE("one switch") {
        auto cfg = base;
        cfg.optimizer.epochs = 1;
        const auto table = run_ablation(cfg, {"wo_cga"}, fx.data);
        REQUIRE(table.rows.size() == 2);
        CHECK(table.rows[1].variant == "wo_cga");
        CHECK(table.rows[1].parameter_count < table.rows[0].parameter_count);
        CHECK(fs::exists(fx.dir / "abl" / "wo_cga" / "run_record.json"));
    }
}

TEST_CASE("loss swap") {
    Fixture fx;
    auto base = fx.config("swap");
    base.model.architecture = "simple_srnet";
    base.optimizer.epochs = 1;
    SUBCASE("report shape") {
        const auto r = run_loss_swap(base, {LossKind::dualfocal, {}}, {LossKind::l1, {}}, {1, 2}, fx.data);
        REQUIRE(r.rows.size() == 2);
        CHECK(r.loss_a == "dualfocal");
        CHECK(r.loss_b == "l1");
        int wins = 0;
        for (const auto& row : r.rows) wins += row.a.metrics.mape < row.b.metrics.mape;
        CHECK(r.wins_mape == wins);
        const nlohmann::json j = r;
        CHECK(j.at("schema") == "plgf-loss-swap");
        CHECK(nlohmann::json(j.get<LossSwapReport>()) == j);
        CHECK(fs::exists(fx.dir / "swap" / "l1_seed2" / "run_record.json"));
    }
    SUBCASE("identical losses never win") {
        const auto r = run_loss_swap(base, {LossKind::l1, {}}, {LossKind::l1, {}}, {4}, fx.data);
        CHECK(r.wins_mse == 0);
        CHECK(r.wins_mae == 0);
        CHECK(r.wins_mape == 0);
        CHECK(r.mean_relative_reduction_mape == 0.0);
    }
    SUBCASE("no seeds") {
        CHECK_THROWS_AS(run_loss_swap(base, {}, {LossKind::l1, {}}, {}, fx.data), ConfigError);
    }
}

TEST_CASE("plots") {
    test::TempDir out;
    RunRecord rec;
    rec.label = "demo run";
    rec.parameter_count = 1234;
    for (int e = 0; e < 3; ++e) {
        EpochRecord er;
        er.epoch = e;
        er.learning_rate = 1e-3 / (e + 1);
        er.train_loss.total = 1.0 / 3.0 + e;
        er.val.mse = 0.1 * e + 1e-17;
        er.seconds = 0.5;
        rec.epochs.push_back(er);
    }
    SUBCASE("one record") {
        const auto files = emit_plots({rec}, std::nullopt, out.path());
        CHECK(fs::exists(out / "loss_curve_demo_run.svg"));
        const auto rows = read_csv(out / "history_demo_run.csv");
        REQUIRE(rows.size() == 4);
        for (int e = 0; e < 3; ++e) {
            CHECK(std::stod(rows[e + 1][1]) == rec.epochs[e].learning_rate);
            CHECK(std::stod(rows[e + 1][2]) == rec.epochs[e].train_loss.total);
            CHECK(std::stod(rows[e + 1][6]) == rec.epochs[e].val.mse);
        }
        CHECK(std::find(files.begin(), files.end(), out / "params_runtime.svg") != files.end());
    }
    SUBCASE("scatter has one row per record") {
        RunRecord other = rec;
        other.label = "";
        emit_plots({rec, other, other}, std::nullopt, out.path());
        const auto rows = read_csv(out / "params_runtime.csv");
        CHECK(rows.size() == 4);
        CHECK(rows[2][0] == "run1");
    }
    SUBCASE("loss swap chart") {
        LossSwapReport r;
        r.model = "simple_srnet";
        r.loss_a = "dualfocal";
        r.loss_b = "l1";
        r.rows.resize(2);
        emit_plots({}, r, out.path());
        CHECK(read_csv(out / "loss_swap.csv").size() == 5);
        CHECK(fs::exists(out / "loss_swap_mape.svg"));
    }
    SUBCASE("empty input writes nothing") {
        CHECK(emit_plots({}, std::nullopt, out / "none").empty());
        CHECK_FALSE(fs::exists(out / "none"));
    }
}
