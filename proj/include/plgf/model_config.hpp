#pragma once

#include <json.hpp>

#include <string>

namespace plgf {

struct AblationSwitches {
    /// FiLM step becomes the identity.
    bool no_film = false;
    /// Global (FPN) path and its fusion conv removed; local path used alone.
    bool no_fusion = false;
    /// Context-gated attention step becomes the identity.
    bool no_cga = false;

    bool operator==(const AblationSwitches&) const = default;
};

/// Architectural hyperparameters. Defaults are the full-size PLGF setting.
struct ModelConfig {
    /// "plgf" or "simple_srnet" (minimal conv + pixel-shuffle baseline).
    std::string architecture = "plgf";
    int base_channels = 128;
    int stages = 2;
    int rdb_layers = 4;
    int rdb_growth = 32;
    int fpn_scales = 4;
    int attn_heads = 4;
    double residual_scale_init = 0.1;
    int cond_dim = 128;
    int norm_groups = 8;
    int input_channels = 1;
    /// Plain conv layers between stem and upsampling in simple_srnet.
    int srnet_body_layers = 2;
    AblationSwitches ablation;

    int upscale_factor() const { return 1 << stages; }

    /// Throws ConfigError on any inconsistent field.
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const AblationSwitches& a);
void from_json(const nlohmann::json& j, AblationSwitches& a);
void to_json(nlohmann::json& j, const ModelConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace plgf
