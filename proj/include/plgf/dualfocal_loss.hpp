#pragma once

#include <json.hpp>

#include <string>

#include "plgf/flow_core.hpp"
#include "plgf/ops.hpp"

namespace plgf {

enum class Modulator {
    /// f(x) = tanh(x)
    tanh,
    /// f(x) = 2 * sigmoid(x) - 1, which also maps 0 to 0
    sigmoid,
};

enum class Reduction { mean, sum };

/// Where the focal factor is applied: per element before reduction, or once
/// to the reduced dual-scale loss of a map.
enum class FocalScope { element, map };

struct LossConfig {
    double lambda = 10.0;
    double beta = 0.2;
    double gamma = 1.0;
    Modulator modulator = Modulator::tanh;
    Reduction reduction = Reduction::mean;
    /// Treat the modulating factor as a constant in the backward pass.
    bool detach_modulation = false;
    FocalScope focal_scope = FocalScope::element;

    /// Throws ConfigError unless all fields are finite, gamma >= 0, beta > 0,
    /// lambda >= 0.
    void validate() const;
    bool operator==(const LossConfig&) const = default;
};

/// Loss selector used by training: the DualFocal loss or a plain baseline.
enum class LossKind { dualfocal, mse, l1 };

/// Mean components over all elements; `total` is the reduced training loss.
struct LossBreakdown {
    double l1 = 0.0;
    double log_l1 = 0.0;
    double dual_scale = 0.0;
    double modulation = 0.0;
    double total = 0.0;
};

template <typename Scalar>
struct LossResult {
    Var<Scalar> loss;
    LossBreakdown breakdown;
};

namespace detail {

template <typename Scalar>
void require_loss_inputs(const Var<Scalar>& pred, const Var<Scalar>& truth) {
    if (pred.shape() != truth.shape())
        throw InputError("loss: prediction " + to_string(pred.shape()) + " and truth " + to_string(truth.shape()) +
                         " differ in shape");
    if ((pred.value().array() < Scalar(0)).any() || (truth.value().array() < Scalar(0)).any())
        throw InputError("loss: flows must be nonnegative");
}

template <typename Scalar>
Var<Scalar> modulate(const Var<Scalar>& x, Modulator m) {
    if (m == Modulator::tanh) return ops::tanh(x);
    return ops::add_scalar(ops::scale(ops::sigmoid(x), Scalar(2)), Scalar(-1));
}

template <typename Scalar>
Var<Scalar> reduce(const Var<Scalar>& x, Reduction r) {
    return r == Reduction::mean ? ops::mean(x) : ops::sum(x);
}

}  // namespace detail

/// Element-wise |p - y| + lambda * |log(1 + p) - log(1 + y)|.
template <typename Scalar>
Var<Scalar> dual_scale_loss(const Var<Scalar>& pred, const Var<Scalar>& truth, const LossConfig& cfg) {
    detail::require_loss_inputs(pred, truth);
    const auto l1 = ops::abs(ops::sub(pred, truth));
    const auto lg = ops::abs(ops::sub(ops::log1p(pred), ops::log1p(truth)));
    return ops::add(l1, ops::scale(lg, static_cast<Scalar>(cfg.lambda)));
}

/// (f(beta * L_ds))^gamma * L_ds, reduced per `cfg.reduction`.
template <typename Scalar>
LossResult<Scalar> dualfocal_loss(const Var<Scalar>& pred, const Var<Scalar>& truth, const LossConfig& cfg) {
    cfg.validate();
    detail::require_loss_inputs(pred, truth);
    const auto l1 = ops::abs(ops::sub(pred, truth));
    const auto lg = ops::abs(ops::sub(ops::log1p(pred), ops::log1p(truth)));
    const auto ds = ops::add(l1, ops::scale(lg, static_cast<Scalar>(cfg.lambda)));
    const auto beta = static_cast<Scalar>(cfg.beta);
    const auto gamma = static_cast<Scalar>(cfg.gamma);

    LossResult<Scalar> r;
    Var<Scalar> modulation;
    if (cfg.focal_scope == FocalScope::element) {
        modulation = ops::pow_scalar(detail::modulate(ops::scale(ds, beta), cfg.modulator), gamma);
        if (cfg.detach_modulation) modulation = ops::detach(modulation);
        r.loss = detail::reduce(ops::mul(modulation, ds), cfg.reduction);
    } else {
        const auto reduced = detail::reduce(ds, cfg.reduction);
        modulation = ops::pow_scalar(detail::modulate(ops::scale(ops::mean(ds), beta), cfg.modulator), gamma);
        if (cfg.detach_modulation) modulation = ops::detach(modulation);
        r.loss = ops::mul(modulation, reduced);
    }
    r.breakdown.l1 = static_cast<double>(l1.value().array().template cast<double>().mean());
    r.breakdown.log_l1 = static_cast<double>(lg.value().array().template cast<double>().mean());
    r.breakdown.dual_scale = static_cast<double>(ds.value().array().template cast<double>().mean());
    r.breakdown.modulation = static_cast<double>(modulation.value().array().template cast<double>().mean());
    r.breakdown.total = static_cast<double>(r.loss.value()[0]);
    return r;
}

template <typename Scalar>
Var<Scalar> mse_loss(const Var<Scalar>& pred, const Var<Scalar>& truth) {
    if (pred.shape() != truth.shape()) throw InputError("mse_loss: shape mismatch");
    return ops::mean(ops::square(ops::sub(pred, truth)));
}

template <typename Scalar>
Var<Scalar> l1_loss(const Var<Scalar>& pred, const Var<Scalar>& truth) {
    if (pred.shape() != truth.shape()) throw InputError("l1_loss: shape mismatch");
    return ops::mean(ops::abs(ops::sub(pred, truth)));
}

/// Dispatches on the loss kind; baselines report their value as l1/total.
template <typename Scalar>
LossResult<Scalar> compute_loss(LossKind kind, const Var<Scalar>& pred, const Var<Scalar>& truth,
                                const LossConfig& cfg) {
    if (kind == LossKind::dualfocal) return dualfocal_loss(pred, truth, cfg);
    LossResult<Scalar> r;
    r.loss = kind == LossKind::mse ? mse_loss(pred, truth) : l1_loss(pred, truth);
    r.breakdown.total = static_cast<double>(r.loss.value()[0]);
    if (kind == LossKind::l1) r.breakdown.l1 = r.breakdown.total;
    return r;
}

// ---------------------------------------------------------------- FlowMap API

/// Per-element dual-scale loss map (64-bit).
Eigen::ArrayXd dual_scale_loss(const FlowMap& pred, const FlowMap& truth, const LossConfig& cfg);

/// Reduced DualFocal loss with its breakdown (64-bit).
LossBreakdown dualfocal_loss(const FlowMap& pred, const FlowMap& truth, const LossConfig& cfg);

/// Plain MSE or L1 between two maps (64-bit).
double baseline_loss(const FlowMap& pred, const FlowMap& truth, LossKind which);

// ---------------------------------------------------------------- analytic gradients

/// d|p - y| / dp = sgn(p - y). Throws DomainError at p == y.
double l1_gradient(double pred, double truth);

/// d|log(1 + p) - log(1 + y)| / dp = sgn(p - y) / (1 + p). Throws DomainError at p == y.
double log_l1_gradient(double pred, double truth);

/// Closed-form derivative of the per-element DualFocal loss w.r.t. the
/// prediction, composed by product and chain rule from the two component
/// gradients. Honors `detach_modulation`; element focal scope only.
double dualfocal_gradient_oracle(double pred, double truth, const LossConfig& cfg);

const char* to_string(Modulator m);
const char* to_string(Reduction r);
const char* to_string(LossKind k);
const char* to_string(FocalScope s);
LossKind parse_loss_kind(const std::string& name);

void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);
void to_json(nlohmann::json& j, const LossBreakdown& b);
void from_json(const nlohmann::json& j, LossBreakdown& b);

}  // namespace plgf
