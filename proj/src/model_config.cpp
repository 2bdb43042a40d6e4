#include "plgf/model_config.hpp"

#include <set>

#include "plgf/errors.hpp"

namespace plgf {

namespace {

void positive(const char* field, int v) {
    if (v <= 0) throw ConfigError(std::string("model.") + field + " must be positive, got " + std::to_string(v));
}

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const char* where) {
    if (!j.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
    for (const auto& [key, _] : j.items())
        if (!known.count(key)) throw ConfigError(std::string("unknown key '") + key + "' in " + where);
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
}

}  // namespace

void ModelConfig::validate() const {
    if (architecture != "plgf" && architecture != "simple_srnet")
        throw ConfigError("model.architecture must be plgf or simple_srnet, got '" + architecture + "'");
    positive("base_channels", base_channels);
    positive("stages", stages);
    positive("rdb_layers", rdb_layers);
    positive("rdb_growth", rdb_growth);
    positive("fpn_scales", fpn_scales);
    positive("attn_heads", attn_heads);
    positive("cond_dim", cond_dim);
    positive("norm_groups", norm_groups);
    positive("input_channels", input_channels);
    if (srnet_body_layers < 0) throw ConfigError("model.srnet_body_layers must be >= 0");
    if (stages > 6) throw ConfigError("model.stages above 6 (N = 64) is not supported");
    if (!(residual_scale_init == residual_scale_init)) throw ConfigError("model.residual_scale_init must be finite");
    if (architecture != "plgf") return;
    if (rdb_growth % norm_groups != 0)
        throw ConfigError("model.norm_groups (" + std::to_string(norm_groups) + ") must divide rdb_growth (" +
                          std::to_string(rdb_growth) + ")");
    if (cond_dim % attn_heads != 0)
        throw ConfigError("model.attn_heads must divide cond_dim (" + std::to_string(cond_dim) + ")");
    if (base_channels % attn_heads != 0)
        throw ConfigError("model.attn_heads must divide base_channels (" + std::to_string(base_channels) + ")");
}

void to_json(nlohmann::json& j, const AblationSwitches& a) {
    j = {{"no_film", a.no_film}, {"no_fusion", a.no_fusion}, {"no_cga", a.no_cga}};
}

void from_json(const nlohmann::json& j, AblationSwitches& a) {
    reject_unknown(j, {"no_film", "no_fusion", "no_cga"}, "model.ablation");
    read(j, "no_film", a.no_film);
    read(j, "no_fusion", a.no_fusion);
    read(j, "no_cga", a.no_cga);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"architecture", c.architecture},
         {"base_channels", c.base_channels},
         {"stages", c.stages},
         {"rdb_layers", c.rdb_layers},
         {"rdb_growth", c.rdb_growth},
         {"fpn_scales", c.fpn_scales},
         {"attn_heads", c.attn_heads},
         {"residual_scale_init", c.residual_scale_init},
         {"cond_dim", c.cond_dim},
         {"norm_groups", c.norm_groups},
         {"input_channels", c.input_channels},
         {"srnet_body_layers", c.srnet_body_layers},
         {"ablation", c.ablation}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    reject_unknown(j,
                   {"architecture", "base_channels", "stages", "rdb_layers", "rdb_growth", "fpn_scales", "attn_heads",
                    "residual_scale_init", "cond_dim", "norm_groups", "input_channels", "srnet_body_layers",
                    "ablation"},
                   "model");
    read(j, "architecture", c.architecture);
    read(j, "base_channels", c.base_channels);
    read(j, "stages", c.stages);
    read(j, "rdb_layers", c.rdb_layers);
    read(j, "rdb_growth", c.rdb_growth);
    read(j, "fpn_scales", c.fpn_scales);
    read(j, "attn_heads", c.attn_heads);
    read(j, "residual_scale_init", c.residual_scale_init);
    read(j, "cond_dim", c.cond_dim);
    read(j, "norm_groups", c.norm_groups);
    read(j, "input_channels", c.input_channels);
    read(j, "srnet_body_layers", c.srnet_body_layers);
    if (j.contains("ablation")) c.ablation = j.at("ablation").get<AblationSwitches>();
}

}  // namespace plgf
