#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "plgf/context_embedding.hpp"
#include "plgf/flow_core.hpp"
#include "plgf/layers.hpp"
#include "plgf/model_config.hpp"

namespace plgf {

/// Feature-wise linear modulation: F' = (1 + gamma(e)) * F + beta(e), with
/// per-channel gamma and beta. Both projections start at zero (identity).
template <typename Scalar>
struct Film {
    Linear<Scalar> gamma_proj;
    Linear<Scalar> beta_proj;

    Film() = default;
    Film(ParameterSet<Scalar>& ps, const std::string& name, Eigen::Index cond_dim, Eigen::Index channels, Rng& rng)
        : gamma_proj(ps, name + ".gamma", cond_dim, channels, rng), beta_proj(ps, name + ".beta", cond_dim, channels, rng) {
        gamma_proj.fill(Scalar(0), Scalar(0));
        beta_proj.fill(Scalar(0), Scalar(0));
    }

    Var<Scalar> operator()(const Var<Scalar>& features, const Var<Scalar>& cond) const {
        if (features.shape()[0] != gamma_proj.out_features())
            throw ConfigError("film: features have " + std::to_string(features.shape()[0]) + " channels, projection has " +
                              std::to_string(gamma_proj.out_features()));
        const auto gamma = ops::add_scalar(gamma_proj(cond), Scalar(1));
        return ops::add_channels(ops::mul_channels(features, gamma), beta_proj(cond));
    }
};

/// Residual dense block: densely connected conv -> GroupNorm -> GELU layers,
/// 1x1 fusion, ECA, and a learnable residual scale alpha.
template <typename Scalar>
struct ResidualDenseBlock {
    struct Layer {
        Conv2d<Scalar> conv;
        GroupNorm<Scalar> norm;
    };
    std::vector<Layer> layers;
    Conv2d<Scalar> fusion;
    Eca<Scalar> eca;
    Var<Scalar> alpha;

    ResidualDenseBlock() = default;
    ResidualDenseBlock(ParameterSet<Scalar>& ps, const std::string& name, const ModelConfig& cfg, Rng& rng) {
        const Eigen::Index c = cfg.base_channels;
        const Eigen::Index g = cfg.rdb_growth;
        for (int l = 0; l < cfg.rdb_layers; ++l) {
            const auto prefix = name + ".dense" + std::to_string(l);
            Layer layer{Conv2d<Scalar>(ps, prefix + ".conv", c + l * g, g, 3, rng),
                        GroupNorm<Scalar>(ps, prefix + ".norm", g, cfg.norm_groups)};
            layers.push_back(std::move(layer));
        }
        fusion = Conv2d<Scalar>(ps, name + ".fusion", c + cfg.rdb_layers * g, c, 1, rng);
        eca = Eca<Scalar>(ps, name + ".eca", c, rng);
        alpha = ps.add(name + ".alpha", Tensor<Scalar>(Shape{1}, static_cast<Scalar>(cfg.residual_scale_init)));
    }

    Var<Scalar> operator()(const Var<Scalar>& x) const {
        std::vector<Var<Scalar>> feats{x};
        for (const auto& layer : layers) feats.push_back(ops::gelu(layer.norm(layer.conv(ops::concat(feats)))));
        return ops::add(x, ops::scale_by(eca(fusion(ops::concat(feats))), alpha));
    }
};

/// Channel (ECA) then spatial (7x7 conv over channel mean/max) attention.
template <typename Scalar>
struct DualAttention {
    Eca<Scalar> channel;
    Conv2d<Scalar> spatial;

    DualAttention() = default;
    DualAttention(ParameterSet<Scalar>& ps, const std::string& name, Eigen::Index channels, Rng& rng)
        : channel(ps, name + ".channel", channels, rng), spatial(ps, name + ".spatial", 2, 1, 7, rng) {}

    Var<Scalar> operator()(const Var<Scalar>& x) const {
        const auto y = channel(x);
        const auto pooled = ops::concat<Scalar>({ops::channel_mean(y), ops::channel_max(y)});
        return ops::mul_spatial(y, ops::sigmoid(spatial(pooled)));
    }
};

/// Multi-scale global path: average-pooled pyramid p_i = AvgPool(x, 2^i),
/// top-down merge (nearest upsample + 1x1 align conv, added to the finer
/// level), 3x3 smoothing, dual attention per level, and a sigmoid-gated sum
/// of all levels at input resolution.
template <typename Scalar>
struct EnhancedFpn {
    std::vector<Conv2d<Scalar>> align;
    std::vector<Conv2d<Scalar>> smooth;
    std::vector<DualAttention<Scalar>> attention;
    Var<Scalar> level_logits;

    EnhancedFpn() = default;
    EnhancedFpn(ParameterSet<Scalar>& ps, const std::string& name, Eigen::Index channels, int scales, Rng& rng) {
        for (int i = 0; i + 1 < scales; ++i)
            align.emplace_back(ps, name + ".align" + std::to_string(i), channels, channels, 1, rng);
        for (int i = 0; i < scales; ++i) {
            smooth.emplace_back(ps, name + ".smooth" + std::to_string(i), channels, channels, 3, rng);
            attention.emplace_back(ps, name + ".level" + std::to_string(i), channels, rng);
        }
        level_logits = ps.add(name + ".level_logits", Tensor<Scalar>(Shape{scales}));
    }

    int scales() const { return static_cast<int>(smooth.size()); }

    Var<Scalar> operator()(const Var<Scalar>& x) const {
        const int s = scales();
        const Eigen::Index coarsest = Eigen::Index{1} << (s - 1);
        if (x.shape()[1] % coarsest != 0 || x.shape()[2] % coarsest != 0)
            throw ConfigError("fpn: spatial size " + std::to_string(x.shape()[1]) + "x" + std::to_string(x.shape()[2]) +
                              " not divisible by 2^(fpn_scales-1) = " + std::to_string(coarsest));
        std::vector<Var<Scalar>> merged(static_cast<std::size_t>(s));
        merged[s - 1] = ops::avg_pool(x, coarsest);
        for (int i = s - 2; i >= 0; --i) {
            const auto pooled = ops::avg_pool(x, Eigen::Index{1} << i);
            merged[i] = ops::add(pooled, align[i](ops::upsample_nearest(merged[i + 1], 2)));
        }
        const auto gates = ops::sigmoid(level_logits);
        Var<Scalar> out;
        for (int i = 0; i < s; ++i) {
            const auto refined = attention[i](smooth[i](merged[i]));
            const auto term = ops::scale_by(ops::upsample_nearest(refined, Eigen::Index{1} << i), ops::segment(gates, i, 1));
            out = out ? ops::add(out, term) : term;
        }
        return out;
    }
};

/// Attention with e_cond as the single query over the H*W spatial tokens; the
/// attended vector yields per-channel (gamma, beta) applied to the features.
/// gamma starts at 1 and beta at 0 (identity).
template <typename Scalar>
struct ContextGatedAttention {
    Linear<Scalar> query_proj;
    MultiHeadAttention<Scalar> attention;
    Linear<Scalar> gamma_proj;
    Linear<Scalar> beta_proj;

    ContextGatedAttention() = default;
    ContextGatedAttention(ParameterSet<Scalar>& ps, const std::string& name, Eigen::Index cond_dim,
                          Eigen::Index channels, Eigen::Index heads, Rng& rng)
        : query_proj(ps, name + ".query", cond_dim, channels, rng),
          attention(ps, name + ".attn", channels, heads, rng),
          gamma_proj(ps, name + ".gamma", channels, channels, rng),
          beta_proj(ps, name + ".beta", channels, channels, rng) {
        gamma_proj.fill(Scalar(0), Scalar(1));
        beta_proj.fill(Scalar(0), Scalar(0));
    }

    /// The (1, C) attended vector v_agg.
    Var<Scalar> aggregate(const Var<Scalar>& features, const Var<Scalar>& cond) const {
        const auto c = features.shape()[0];
        const auto hw = features.shape()[1] * features.shape()[2];
        const auto query = ops::reshape(query_proj(cond), {1, c});
        const auto tokens = ops::transpose(ops::reshape(features, {c, hw}));
        return attention(query, tokens, tokens);
    }

    Var<Scalar> operator()(const Var<Scalar>& features, const Var<Scalar>& cond) const {
        const auto c = features.shape()[0];
        const auto v = aggregate(features, cond);
        const auto gamma = ops::reshape(gamma_proj(v), {c});
        const auto beta = ops::reshape(beta_proj(v), {c});
        return ops::add_channels(ops::mul_channels(features, gamma), beta);
    }
};

/// 3x3 conv to 4C channels followed by a 2x pixel shuffle.
template <typename Scalar>
struct PixelShuffleUp {
    Conv2d<Scalar> conv;

    PixelShuffleUp() = default;
    PixelShuffleUp(ParameterSet<Scalar>& ps, const std::string& name, Eigen::Index channels, Rng& rng)
        : conv(ps, name + ".conv", channels, 4 * channels, 3, rng) {}

    Var<Scalar> operator()(const Var<Scalar>& x) const { return ops::pixel_shuffle(conv(x), 2); }
};

/// Conv + ReLU density, block-normalised per N x N tile, times the
/// nearest-upsampled coarse map. Tile sums equal the coarse cells.
template <typename Scalar>
struct DensityRecovery {
    static constexpr double kMinBlockSum = 1e-9;
    Conv2d<Scalar> conv;

    DensityRecovery() = default;
    DensityRecovery(ParameterSet<Scalar>& ps, const std::string& name, Eigen::Index channels, Eigen::Index out_channels,
                    Rng& rng)
        : conv(ps, name + ".conv", channels, out_channels, 3, rng) {}

    static Var<Scalar> distribute(const Var<Scalar>& raw_density, const FlowMap& coarse, Eigen::Index factor) {
        const auto dist = ops::block_normalize(raw_density, factor, static_cast<Scalar>(kMinBlockSum));
        return ops::mul(dist, ops::upsample_nearest(ops::constant(coarse.to_tensor<Scalar>()), factor));
    }

    Var<Scalar> operator()(const Var<Scalar>& features, const FlowMap& coarse, Eigen::Index factor) const {
        return distribute(ops::relu(conv(features)), coarse, factor);
    }
};

/// FiLM -> (RDB || EnhancedFPN, concatenated and 1x1 fused) -> CGA -> 2x up.
template <typename Scalar>
struct ProgressiveUpscalingBlock {
    std::optional<Film<Scalar>> film;
    ResidualDenseBlock<Scalar> rdb;
    std::optional<EnhancedFpn<Scalar>> fpn;
    std::optional<Conv2d<Scalar>> fuse;
    std::optional<ContextGatedAttention<Scalar>> cga;
    PixelShuffleUp<Scalar> up;

    ProgressiveUpscalingBlock() = default;
    ProgressiveUpscalingBlock(ParameterSet<Scalar>& ps, const std::string& name, const ModelConfig& cfg, Rng& rng) {
        const Eigen::Index c = cfg.base_channels;
        if (!cfg.ablation.no_film) film.emplace(ps, name + ".film", cfg.cond_dim, c, rng);
        rdb = ResidualDenseBlock<Scalar>(ps, name + ".rdb", cfg, rng);
        if (!cfg.ablation.no_fusion) {
            fpn.emplace(ps, name + ".fpn", c, cfg.fpn_scales, rng);
            fuse.emplace(ps, name + ".fuse", 2 * c, c, 1, rng);
        }
        if (!cfg.ablation.no_cga) cga.emplace(ps, name + ".cga", cfg.cond_dim, c, cfg.attn_heads, rng);
        up = PixelShuffleUp<Scalar>(ps, name + ".up", c, rng);
    }

    Var<Scalar> operator()(const Var<Scalar>& features, const Var<Scalar>& cond) const {
        const auto x = film ? (*film)(features, cond) : features;
        auto h = rdb(x);
        if (fpn) h = (*fuse)(ops::concat<Scalar>({h, (*fpn)(x)}));
        if (cga) h = (*cga)(h, cond);
        return up(h);
    }
};

/// Common interface of the trainable flow-inference networks.
template <typename Scalar>
class FlowModel {
public:
    explicit FlowModel(ModelConfig config) : config_(std::move(config)) { config_.validate(); }
    virtual ~FlowModel() = default;
    FlowModel(const FlowModel&) = delete;
    FlowModel& operator=(const FlowModel&) = delete;

    /// Fine-resolution prediction (C, N*H, N*W) on the tape.
    virtual Var<Scalar> forward(const FlowMap& coarse, const ExternalFactors& factors) const = 0;

    FlowMap predict(const FlowMap& coarse, const ExternalFactors& factors) const {
        NoGradGuard guard;
        return FlowMap::from_tensor(forward(coarse, factors).value());
    }

    const ModelConfig& config() const { return config_; }
    ParameterSet<Scalar>& parameters() { return params_; }
    const ParameterSet<Scalar>& parameters() const { return params_; }

protected:
    void check_input(const FlowMap& coarse) const {
        if (coarse.channels() != config_.input_channels)
            throw InputError("coarse map has " + std::to_string(coarse.channels()) + " channels, model expects " +
                             std::to_string(config_.input_channels));
    }

    ModelConfig config_;
    ParameterSet<Scalar> params_;
};

/// Stem conv, context embedding, S progressive upscaling blocks, density
/// recovery head.
template <typename Scalar>
class PlgfNet : public FlowModel<Scalar> {
public:
    PlgfNet(const ModelConfig& config, std::uint64_t seed) : FlowModel<Scalar>(config) {
        if (config.architecture != "plgf") throw ConfigError("PlgfNet requires architecture plgf");
        Rng rng(seed);
        auto& ps = this->params_;
        const Eigen::Index c = config.base_channels;
        embedding_ = ContextEmbedding<Scalar>(ps, "context", config.cond_dim, config.attn_heads, rng);
        stem_ = Conv2d<Scalar>(ps, "stem", config.input_channels, c, 3, rng);
        for (int s = 0; s < config.stages; ++s)
            blocks_.emplace_back(ps, "pub" + std::to_string(s), config, rng);
        head_ = DensityRecovery<Scalar>(ps, "head", c, config.input_channels, rng);
    }

    Var<Scalar> forward(const FlowMap& coarse, const ExternalFactors& factors) const override {
        this->check_input(coarse);
        const auto& cfg = this->config_;
        const Eigen::Index smallest = Eigen::Index{1} << (cfg.fpn_scales - 1);
        if (!cfg.ablation.no_fusion && (coarse.height() % smallest != 0 || coarse.width() % smallest != 0))
            throw ConfigError("coarse grid " + std::to_string(coarse.height()) + "x" + std::to_string(coarse.width()) +
                              " too small or not divisible for fpn_scales = " + std::to_string(cfg.fpn_scales));
        const auto cond = embedding_(factors);
        auto features = stem_(ops::constant(coarse.to_tensor<Scalar>()));
        for (const auto& block : blocks_) features = block(features, cond);
        return head_(features, coarse, cfg.upscale_factor());
    }

    const ContextEmbedding<Scalar>& embedding() const { return embedding_; }
    ContextEmbedding<Scalar>& embedding() { return embedding_; }
    const ProgressiveUpscalingBlock<Scalar>& block(std::size_t s) const { return blocks_.at(s); }
    ProgressiveUpscalingBlock<Scalar>& block(std::size_t s) { return blocks_.at(s); }
    const Conv2d<Scalar>& stem() const { return stem_; }
    const DensityRecovery<Scalar>& head() const { return head_; }

private:
    ContextEmbedding<Scalar> embedding_;
    Conv2d<Scalar> stem_;
    std::vector<ProgressiveUpscalingBlock<Scalar>> blocks_;
    DensityRecovery<Scalar> head_;
};

/// Minimal baseline: conv stem, a few 3x3 conv + ReLU layers, one
/// conv + pixel-shuffle + ReLU per 2x stage, and the same density recovery
/// head. Ignores external factors.
template <typename Scalar>
class SimpleSrNet : public FlowModel<Scalar> {
public:
    SimpleSrNet(const ModelConfig& config, std::uint64_t seed) : FlowModel<Scalar>(config) {
        if (config.architecture != "simple_srnet") throw ConfigError("SimpleSrNet requires architecture simple_srnet");
        Rng rng(seed);
        auto& ps = this->params_;
        const Eigen::Index c = config.base_channels;
        stem_ = Conv2d<Scalar>(ps, "stem", config.input_channels, c, 3, rng);
        for (int l = 0; l < config.srnet_body_layers; ++l) body_.emplace_back(ps, "body" + std::to_string(l), c, c, 3, rng);
        for (int s = 0; s < config.stages; ++s) ups_.emplace_back(ps, "up" + std::to_string(s), c, rng);
        head_ = DensityRecovery<Scalar>(ps, "head", c, config.input_channels, rng);
    }

    Var<Scalar> forward(const FlowMap& coarse, const ExternalFactors&) const override {
        this->check_input(coarse);
        auto x = ops::relu(stem_(ops::constant(coarse.to_tensor<Scalar>())));
        for (const auto& conv : body_) x = ops::relu(conv(x));
        for (const auto& up : ups_) x = ops::relu(up(x));
        return head_(x, coarse, this->config_.upscale_factor());
    }

private:
    Conv2d<Scalar> stem_;
    std::vector<Conv2d<Scalar>> body_;
    std::vector<PixelShuffleUp<Scalar>> ups_;
    DensityRecovery<Scalar> head_;
};

template <typename Scalar>
std::unique_ptr<FlowModel<Scalar>> make_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    if (config.architecture == "simple_srnet") return std::make_unique<SimpleSrNet<Scalar>>(config, seed);
    return std::make_unique<PlgfNet<Scalar>>(config, seed);
}

extern template class PlgfNet<float>;
extern template class PlgfNet<double>;
extern template class SimpleSrNet<float>;
extern template class SimpleSrNet<double>;

/// Total trainable scalars of the network `config` describes.
Eigen::Index count_parameters(const ModelConfig& config);

}  // namespace plgf
