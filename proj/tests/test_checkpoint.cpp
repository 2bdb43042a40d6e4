#include <doctest.h>

#include <fstream>

#include "plgf/checkpoint.hpp"
#include "support.hpp"

using namespace plgf;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny() {
    ModelConfig c;
    c.base_channels = 4;
    c.rdb_layers = 1;
    c.rdb_growth = 2;
    c.fpn_scales = 2;
    c.cond_dim = 4;
    c.attn_heads = 1;
    c.norm_groups = 1;
    return c;
}

}  // namespace

TEST_CASE("tensor archive round trip") {
    test::TempDir dir;
    TensorMap t;
    t["a"] = Tensor<float>({2, 3}, 1.5f);
    t["b.c"] = Tensor<float>({4});
    t["b.c"][3] = -7.25f;
    t["scalar"] = Tensor<float>({1}, 3.0f);
    save_tensors(dir / "x.bin", t);
    const auto back = load_tensors(dir / "x.bin");
    REQUIRE(back.size() == 3);
    for (const auto& [name, v] : t) {
        CHECK(back.at(name).shape() == v.shape());
        CHECK((back.at(name).array() == v.array()).all());
    }
}

TEST_CASE("reloaded model predicts bit-identically") {
    test::TempDir dir;
    std::mt19937_64 rng(1);
    for (const auto* arch : {"plgf", "simple_srnet"}) {
        ModelConfig cfg = tiny();
        cfg.architecture = arch;
        auto model = make_model<float>(cfg, 5);
        for (const auto& [_, p] : model->parameters().entries()) {
            auto v = p;
            for (Eigen::Index k = 0; k < v.value().size(); ++k) v.mutable_value()[k] += 0.01f * float(k % 7);
        }
        const auto path = dir / (std::string(arch) + ".ckpt");
        save_checkpoint(path, *model);
        CHECK(fs::exists(checkpoint_sidecar(path)));
        const auto loaded = load_checkpoint<float>(path);
        CHECK(loaded->config() == cfg);
        for (int i = 0; i < 3; ++i) {
            const auto coarse = test::random_map(rng, 4, 4, 50.0);
            const auto f = test::random_factors(rng);
            CHECK(model->predict(coarse, f) == loaded->predict(coarse, f));
        }
    }
}

TEST_CASE("loading into an existing model") {
    test::TempDir dir;
    auto a = make_model<float>(tiny(), 1);
    auto b = make_model<float>(tiny(), 2);
    save_checkpoint(dir / "a.ckpt", *a);
    load_checkpoint_into(dir / "a.ckpt", *b);
    std::mt19937_64 rng(3);
    const auto coarse = test::random_map(rng, 4, 4);
    CHECK(a->predict(coarse, {}) == b->predict(coarse, {}));

    ModelConfig other = tiny();
    other.base_channels = 8;
    auto c = make_model<float>(other, 1);
    CHECK_THROWS_AS(load_checkpoint_into(dir / "a.ckpt", *c), LoadError);
}

TEST_CASE("corrupt or missing checkpoints") {
    test::TempDir dir;
    auto m = make_model<float>(tiny(), 1);
    const auto path = dir / "m.ckpt";
    save_checkpoint(path, *m);

    CHECK_THROWS_AS(load_checkpoint<float>(dir / "none.ckpt"), LoadError);
    SUBCASE("truncated") {
        fs::resize_file(path, fs::file_size(path) / 2);
        CHECK_THROWS_AS(load_checkpoint<float>(path), LoadError);
    }
    SUBCASE("bad magic") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.write("XXXX", 4);
        f.close();
        CHECK_THROWS_AS(load_checkpoint<float>(path), LoadError);
    }
    SUBCASE("missing sidecar") {
        fs::remove(checkpoint_sidecar(path));
        CHECK_THROWS_AS(load_checkpoint<float>(path), LoadError);
    }
    SUBCASE("sidecar of another model") {
        ModelConfig other = tiny();
        other.rdb_layers = 2;
        auto big = make_model<float>(other, 1);
        save_checkpoint(dir / "big.ckpt", *big);
        fs::copy_file(checkpoint_sidecar(dir / "big.ckpt"), checkpoint_sidecar(path),
                      fs::copy_options::overwrite_existing);
        CHECK_THROWS_AS(load_checkpoint<float>(path), LoadError);
    }
}

TEST_CASE("double models store float parameters") {
    test::TempDir dir;
    auto m = make_model<double>(tiny(), 4);
    save_checkpoint(dir / "d.ckpt", *m);
    const auto tensors = load_tensors(dir / "d.ckpt");
    CHECK(static_cast<Eigen::Index>(tensors.size()) == static_cast<Eigen::Index>(m->parameters().entries().size()));
    CHECK(read_checkpoint_config(dir / "d.ckpt") == tiny());
}
