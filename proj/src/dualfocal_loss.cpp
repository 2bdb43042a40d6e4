#include "plgf/dualfocal_loss.hpp"

#include <cmath>

namespace plgf {

namespace {

Var<double> as_var(const FlowMap& m) { return Var<double>::constant(m.to_tensor<double>()); }

void check_distinct(double pred, double truth) {
    if (pred == truth) throw DomainError("gradient undefined at pred == truth (|.| kink)");
    if (pred < 0.0 || truth < 0.0) throw InputError("flows must be nonnegative");
}

}  // namespace

void LossConfig::validate() const {
    if (!std::isfinite(lambda) || !std::isfinite(beta) || !std::isfinite(gamma))
        throw ConfigError("loss hyperparameters must be finite");
    if (lambda < 0.0) throw ConfigError("loss.lambda must be >= 0");
    if (beta <= 0.0) throw ConfigError("loss.beta must be > 0");
    if (gamma < 0.0) throw ConfigError("loss.gamma must be >= 0");
}

Eigen::ArrayXd dual_scale_loss(const FlowMap& pred, const FlowMap& truth, const LossConfig& cfg) {
    NoGradGuard guard;
    if (!pred.same_shape(truth)) throw InputError("dual_scale_loss: shape mismatch");
    return dual_scale_loss(as_var(pred), as_var(truth), cfg).value().array();
}

LossBreakdown dualfocal_loss(const FlowMap& pred, const FlowMap& truth, const LossConfig& cfg) {
    NoGradGuard guard;
    if (!pred.same_shape(truth)) throw InputError("dualfocal_loss: shape mismatch");
    return dualfocal_loss(as_var(pred), as_var(truth), cfg).breakdown;
}

double baseline_loss(const FlowMap& pred, const FlowMap& truth, LossKind which) {
    NoGradGuard guard;
    if (!pred.same_shape(truth)) throw InputError("baseline_loss: shape mismatch");
    if (which == LossKind::dualfocal) throw ConfigError("baseline_loss expects mse or l1");
    const auto r = which == LossKind::mse ? mse_loss(as_var(pred), as_var(truth)) : l1_loss(as_var(pred), as_var(truth));
    return r.value()[0];
}

double l1_gradient(double pred, double truth) {
    check_distinct(pred, truth);
    return pred > truth ? 1.0 : -1.0;
}

double log_l1_gradient(double pred, double truth) {
    check_distinct(pred, truth);
    const double sign = std::log1p(pred) > std::log1p(truth) ? 1.0 : -1.0;
    return sign / (1.0 + pred);
}

double dualfocal_gradient_oracle(double pred, double truth, const LossConfig& cfg) {
    cfg.validate();
    const double ds = std::abs(pred - truth) + cfg.lambda * std::abs(std::log1p(pred) - std::log1p(truth));
    const double dds = l1_gradient(pred, truth) + cfg.lambda * log_l1_gradient(pred, truth);
    const double z = cfg.beta * ds;
    double f = 0.0;
    double df = 0.0;
    if (cfg.modulator == Modulator::tanh) {
        f = std::tanh(z);
        df = 1.0 - f * f;
    } else {
        const double s = 1.0 / (1.0 + std::exp(-z));
        f = 2.0 * s - 1.0;
        df = 2.0 * s * (1.0 - s);
    }
    const double m = cfg.gamma == 0.0 ? 1.0 : std::pow(f, cfg.gamma);
    if (cfg.detach_modulation || cfg.gamma == 0.0) return m * dds;
    const double dm = cfg.gamma * std::pow(f, cfg.gamma - 1.0) * df * cfg.beta * dds;
    return dm * ds + m * dds;
}

const char* to_string(Modulator m) { return m == Modulator::tanh ? "tanh" : "sigmoid"; }
const char* to_string(Reduction r) { return r == Reduction::mean ? "mean" : "sum"; }
const char* to_string(FocalScope s) { return s == FocalScope::element ? "element" : "map"; }

const char* to_string(LossKind k) {
    switch (k) {
        case LossKind::dualfocal: return "dualfocal";
        case LossKind::mse: return "mse";
        case LossKind::l1: return "l1";
    }
    return "?";
}

LossKind parse_loss_kind(const std::string& name) {
    if (name == "dualfocal") return LossKind::dualfocal;
    if (name == "mse") return LossKind::mse;
    if (name == "l1") return LossKind::l1;
    throw ConfigError("unknown loss '" + name + "' (expected dualfocal|mse|l1)");
}

void to_json(nlohmann::json& j, const LossConfig& c) {
    j = {{"lambda", c.lambda},
         {"beta", c.beta},
         {"gamma", c.gamma},
         {"modulator", to_string(c.modulator)},
         {"reduction", to_string(c.reduction)},
         {"detach_modulation", c.detach_modulation},
         {"focal_scope", to_string(c.focal_scope)}};
}

void from_json(const nlohmann::json& j, LossConfig& c) {
    if (!j.is_object()) throw ConfigError("loss config must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (key != "lambda" && key != "beta" && key != "gamma" && key != "modulator" && key != "reduction" &&
            key != "detach_modulation" && key != "focal_scope")
            throw ConfigError("unknown key '" + key + "' in loss config");
    }
    try {
        if (j.contains("lambda")) c.lambda = j.at("lambda").get<double>();
        if (j.contains("beta")) c.beta = j.at("beta").get<double>();
        if (j.contains("gamma")) c.gamma = j.at("gamma").get<double>();
        if (j.contains("detach_modulation")) c.detach_modulation = j.at("detach_modulation").get<bool>();
        if (j.contains("modulator")) {
            const auto m = j.at("modulator").get<std::string>();
            if (m == "tanh")
                c.modulator = Modulator::tanh;
            else if (m == "sigmoid")
                c.modulator = Modulator::sigmoid;
            else
                throw ConfigError("unknown modulator '" + m + "'");
        }
        if (j.contains("reduction")) {
            const auto r = j.at("reduction").get<std::string>();
            if (r == "mean")
                c.reduction = Reduction::mean;
            else if (r == "sum")
                c.reduction = Reduction::sum;
            else
                throw ConfigError("unknown reduction '" + r + "'");
        }
        if (j.contains("focal_scope")) {
            const auto s = j.at("focal_scope").get<std::string>();
            if (s == "element")
                c.focal_scope = FocalScope::element;
            else if (s == "map")
                c.focal_scope = FocalScope::map;
            else
                throw ConfigError("unknown focal_scope '" + s + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad loss config: ") + e.what());
    }
    c.validate();
}

void to_json(nlohmann::json& j, const LossBreakdown& b) {
    j = {{"l1", b.l1}, {"log_l1", b.log_l1}, {"dual_scale", b.dual_scale}, {"modulation", b.modulation}, {"total", b.total}};
}

void from_json(const nlohmann::json& j, LossBreakdown& b) {
    b.l1 = j.at("l1").get<double>();
    b.log_l1 = j.at("log_l1").get<double>();
    b.dual_scale = j.at("dual_scale").get<double>();
    b.modulation = j.at("modulation").get<double>();
    b.total = j.at("total").get<double>();
}

}  // namespace plgf
