#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <utility>

#include "plgf/tensor.hpp"

namespace plgf {

/// Nonnegative grid of flow volumes, stored channel-major (C, H, W) in 32-bit
/// floats. Single channel unless a dataset carries more.
class FlowMap {
public:
    using Array = Eigen::ArrayXf;

    FlowMap() = default;
    FlowMap(Eigen::Index height, Eigen::Index width, Eigen::Index channels = 1);
    /// Throws InputError if the size does not match or any value is negative
    /// or non-finite.
    FlowMap(Eigen::Index height, Eigen::Index width, Array values, Eigen::Index channels = 1);

    Eigen::Index height() const { return height_; }
    Eigen::Index width() const { return width_; }
    Eigen::Index channels() const { return channels_; }
    Eigen::Index size() const { return values_.size(); }
    std::pair<Eigen::Index, Eigen::Index> shape() const { return {height_, width_}; }
    bool same_shape(const FlowMap& other) const {
        return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
    }

    const Array& values() const { return values_; }
    float operator()(Eigen::Index i, Eigen::Index j) const { return values_[i * width_ + j]; }
    float at(Eigen::Index c, Eigen::Index i, Eigen::Index j) const { return values_[(c * height_ + i) * width_ + j]; }
    void set(Eigen::Index c, Eigen::Index i, Eigen::Index j, float v);

    template <typename Scalar>
    Tensor<Scalar> to_tensor() const {
        return Tensor<Scalar>(Shape{channels_, height_, width_}, values_.cast<Scalar>());
    }

    /// Builds a map from a (C, H, W) tensor; negative entries are rejected.
    template <typename Scalar>
    static FlowMap from_tensor(const Tensor<Scalar>& t) {
        if (t.rank() != 3) throw InputError("flow map tensor must be (C, H, W), got " + to_string(t.shape()));
        return FlowMap(t.dim(1), t.dim(2), t.array().template cast<float>(), t.dim(0));
    }

    bool operator==(const FlowMap& other) const {
        return same_shape(other) && (values_ == other.values_).all();
    }

private:
    Eigen::Index height_ = 0;
    Eigen::Index width_ = 0;
    Eigen::Index channels_ = 0;
    Array values_;
};

/// Coarse/fine geometry: each coarse cell covers an N x N block of fine cells.
/// N must be a power of two, one 2x stage per factor of two.
class GridRelation {
public:
    GridRelation(Eigen::Index upscale_factor, Eigen::Index coarse_height, Eigen::Index coarse_width);

    Eigen::Index upscale_factor() const { return factor_; }
    std::pair<Eigen::Index, Eigen::Index> coarse_shape() const { return {coarse_h_, coarse_w_}; }
    std::pair<Eigen::Index, Eigen::Index> fine_shape() const { return {coarse_h_ * factor_, coarse_w_ * factor_}; }
    /// log2(N).
    int stages() const;

    bool matches_coarse(const FlowMap& m) const { return m.shape() == coarse_shape(); }
    bool matches_fine(const FlowMap& m) const { return m.shape() == fine_shape(); }

private:
    Eigen::Index factor_;
    Eigen::Index coarse_h_;
    Eigen::Index coarse_w_;
};

/// Sums every N x N fine block into its coarse cell (64-bit accumulation).
FlowMap aggregate(const FlowMap& fine, const GridRelation& relation);

/// max over coarse cells of |aggregate(fine) - coarse| / (aggregate(fine) + 1).
/// Zero means perfectly conserved.
double conservation_residual(const FlowMap& fine, const FlowMap& coarse, const GridRelation& relation);

enum class MapeMode {
    /// Only cells with truth > 0, epsilon 1e-6.
    masked,
    /// Every cell, epsilon 1.0.
    guarded,
};

inline constexpr double kMaskedMapeEpsilon = 1e-6;
inline constexpr double kGuardedMapeEpsilon = 1.0;

struct MetricReport {
    double mse = 0.0;
    double mae = 0.0;
    /// Fraction, not percent.
    double mape = 0.0;
    std::int64_t cells_evaluated = 0;
    /// Set when the MAPE mask selected no cell.
    bool empty_mape_mask = false;
};

/// Streams (pred, truth) pairs and reports metrics over all cells seen, so a
/// split-level report equals compute_metrics on the concatenated maps.
class MetricAccumulator {
public:
    explicit MetricAccumulator(MapeMode mode = MapeMode::masked) : mode_(mode) {}
    void add(const FlowMap& pred, const FlowMap& truth);
    MetricReport report() const;

private:
    MapeMode mode_;
    double sq_ = 0.0;
    double abs_ = 0.0;
    double pct_ = 0.0;
    std::int64_t cells_ = 0;
    std::int64_t mape_cells_ = 0;
};

MetricReport compute_metrics(const FlowMap& pred, const FlowMap& truth, MapeMode mode = MapeMode::masked);

const char* to_string(MapeMode mode);
MapeMode parse_mape_mode(const std::string& name);

}  // namespace plgf
