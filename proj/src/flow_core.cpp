#include "plgf/flow_core.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

namespace plgf {

FlowMap::FlowMap(Eigen::Index height, Eigen::Index width, Eigen::Index channels)
    : FlowMap(height, width, Array::Zero(height * width * channels), channels) {}

FlowMap::FlowMap(Eigen::Index height, Eigen::Index width, Array values, Eigen::Index channels)
    : height_(height), width_(width), channels_(channels), values_(std::move(values)) {
    if (height <= 0 || width <= 0 || channels <= 0)
        throw InputError("flow map dimensions must be positive, got " + std::to_string(channels) + "x" +
                         std::to_string(height) + "x" + std::to_string(width));
    if (values_.size() != height * width * channels)
        throw InputError("flow map expects " + std::to_string(height * width * channels) + " values, got " +
                         std::to_string(values_.size()));
    if (!values_.allFinite()) throw InputError("flow map contains non-finite values");
    if ((values_ < 0.0f).any()) throw InputError("flow map contains negative values");
}

void FlowMap::set(Eigen::Index c, Eigen::Index i, Eigen::Index j, float v) {
    if (!(v >= 0.0f) || !std::isfinite(v)) throw InputError("flow values must be finite and nonnegative");
    values_[(c * height_ + i) * width_ + j] = v;
}

GridRelation::GridRelation(Eigen::Index upscale_factor, Eigen::Index coarse_height, Eigen::Index coarse_width)
    : factor_(upscale_factor), coarse_h_(coarse_height), coarse_w_(coarse_width) {
    if (upscale_factor < 2 || !std::has_single_bit(static_cast<std::uint64_t>(upscale_factor)))
        throw ConfigError("upscale factor must be a power of two >= 2, got " + std::to_string(upscale_factor));
    if (coarse_height <= 0 || coarse_width <= 0) throw ConfigError("coarse grid dimensions must be positive");
}

int GridRelation::stages() const { return std::countr_zero(static_cast<std::uint64_t>(factor_)); }

FlowMap aggregate(const FlowMap& fine, const GridRelation& relation) {
    if (!relation.matches_fine(fine))
        throw InputError("aggregate: fine map " + std::to_string(fine.height()) + "x" + std::to_string(fine.width()) +
                         " does not match relation fine shape " + std::to_string(relation.fine_shape().first) + "x" +
                         std::to_string(relation.fine_shape().second));
    const auto n = relation.upscale_factor();
    const auto [ch, cw] = relation.coarse_shape();
    const auto channels = fine.channels();
    Eigen::ArrayXd acc = Eigen::ArrayXd::Zero(channels * ch * cw);
    for (Eigen::Index c = 0; c < channels; ++c)
        for (Eigen::Index i = 0; i < fine.height(); ++i)
            for (Eigen::Index j = 0; j < fine.width(); ++j) acc[(c * ch + i / n) * cw + j / n] += fine.at(c, i, j);
    return FlowMap(ch, cw, acc.cast<float>(), channels);
}

double conservation_residual(const FlowMap& fine, const FlowMap& coarse, const GridRelation& relation) {
    if (!relation.matches_coarse(coarse) || coarse.channels() != fine.channels())
        throw InputError("conservation_residual: coarse map does not match relation");
    if (!relation.matches_fine(fine)) throw InputError("conservation_residual: fine map does not match relation");
    const auto n = relation.upscale_factor();
    const auto [ch, cw] = relation.coarse_shape();
    Eigen::ArrayXd acc = Eigen::ArrayXd::Zero(coarse.size());
    for (Eigen::Index c = 0; c < fine.channels(); ++c)
        for (Eigen::Index i = 0; i < fine.height(); ++i)
            for (Eigen::Index j = 0; j < fine.width(); ++j) acc[(c * ch + i / n) * cw + j / n] += fine.at(c, i, j);
    const Eigen::ArrayXd target = coarse.values().cast<double>();
    return ((acc - target).abs() / (acc + 1.0)).maxCoeff();
}

void MetricAccumulator::add(const FlowMap& pred, const FlowMap& truth) {
    if (!pred.same_shape(truth)) throw InputError("compute_metrics: prediction and truth shapes differ");
    const double eps = mode_ == MapeMode::masked ? kMaskedMapeEpsilon : kGuardedMapeEpsilon;
    for (Eigen::Index k = 0; k < pred.size(); ++k) {
        const double p = pred.values()[k];
        const double t = truth.values()[k];
        const double d = p - t;
        sq_ += d * d;
        abs_ += std::abs(d);
        if (mode_ == MapeMode::guarded || t > 0.0) {
            pct_ += std::abs(d / (t + eps));
            ++mape_cells_;
        }
    }
    cells_ += pred.size();
}

MetricReport MetricAccumulator::report() const {
    MetricReport r;
    if (cells_ == 0) return r;
    r.mse = sq_ / static_cast<double>(cells_);
    r.mae = abs_ / static_cast<double>(cells_);
    r.cells_evaluated = mape_cells_;
    if (mape_cells_ == 0)
        r.empty_mape_mask = true;
    else
        r.mape = pct_ / static_cast<double>(mape_cells_);
    return r;
}

MetricReport compute_metrics(const FlowMap& pred, const FlowMap& truth, MapeMode mode) {
    MetricAccumulator acc(mode);
    acc.add(pred, truth);
    return acc.report();
}

const char* to_string(MapeMode mode) { return mode == MapeMode::masked ? "masked" : "guarded"; }

MapeMode parse_mape_mode(const std::string& name) {
    if (name == "masked") return MapeMode::masked;
    if (name == "guarded") return MapeMode::guarded;
    throw ConfigError("unknown mape mode '" + name + "' (expected masked|guarded)");
}

}  // namespace plgf
