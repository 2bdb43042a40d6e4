#pragma once

#include <array>
#include <string>

#include "plgf/layers.hpp"

namespace plgf {

/// The seven external factors attached to every flow interval.
struct ExternalFactors {
    static constexpr int kWeatherClasses = 16;
    static constexpr int kDaysOfWeek = 7;
    static constexpr int kHoursOfDay = 24;
    static constexpr double kTemperatureMin = -24.6;
    static constexpr double kTemperatureMax = 41.0;
    static constexpr double kWindMin = 0.0;
    static constexpr double kWindMax = 48.6;

    int weather_class = 0;
    double temperature_c = 0.0;
    double wind_mph = 0.0;
    int day_of_week = 0;
    int hour_of_day = 0;
    bool is_holiday = false;
    bool is_weekend = false;

    /// Throws InputError when a categorical index is outside its cardinality.
    void validate() const;

    /// Copy with temperature and wind clamped to the dataset ranges.
    ExternalFactors clamped() const;

    bool operator==(const ExternalFactors&) const = default;
};

/// Raw continuous block fed to the MLP: temperature, wind, holiday, weekend.
template <typename Scalar>
Tensor<Scalar> continuous_features(const ExternalFactors& f) {
    Tensor<Scalar> t(Shape{4});
    t[0] = static_cast<Scalar>(f.temperature_c);
    t[1] = static_cast<Scalar>(f.wind_mph);
    t[2] = f.is_holiday ? Scalar(1) : Scalar(0);
    t[3] = f.is_weekend ? Scalar(1) : Scalar(0);
    return t;
}

/// Encodes ExternalFactors into the conditioning vector (dim d):
/// Linear(concat(MHA([v_day, v_hour, v_weather, v_cont]))).
template <typename Scalar>
class ContextEmbedding {
public:
    ContextEmbedding() = default;
    ContextEmbedding(ParameterSet<Scalar>& ps, const std::string& name, Eigen::Index dim, Eigen::Index heads, Rng& rng)
        : dim_(dim) {
        day_table_ = ps.add(name + ".day_table", uniform_tensor<Scalar>({ExternalFactors::kDaysOfWeek, dim}, Scalar(1), rng));
        hour_table_ =
            ps.add(name + ".hour_table", uniform_tensor<Scalar>({ExternalFactors::kHoursOfDay, dim}, Scalar(1), rng));
        weather_table_ = ps.add(name + ".weather_table",
                                uniform_tensor<Scalar>({ExternalFactors::kWeatherClasses, dim}, Scalar(1), rng));
        cont_in_ = Linear<Scalar>(ps, name + ".cont_mlp.0", 4, dim, rng);
        cont_out_ = Linear<Scalar>(ps, name + ".cont_mlp.1", dim, dim, rng);
        attention_ = MultiHeadAttention<Scalar>(ps, name + ".attn", dim, heads, rng);
        project_ = Linear<Scalar>(ps, name + ".project", 4 * dim, dim, rng);
    }

    Eigen::Index dim() const { return dim_; }
    Linear<Scalar>& projection() { return project_; }

    Var<Scalar> operator()(const ExternalFactors& factors) const {
        return (*this)(factors, Var<Scalar>::constant(continuous_features<Scalar>(factors)));
    }

    /// Variant taking the raw continuous block (temperature, wind, holiday,
    /// weekend) as a tape value, so gradients reach the inputs.
    Var<Scalar> operator()(const ExternalFactors& factors, const Var<Scalar>& continuous_raw) const {
        factors.validate();
        using Array = typename Tensor<Scalar>::Array;
        Array lo(4), hi(4);
        lo << Scalar(ExternalFactors::kTemperatureMin), Scalar(ExternalFactors::kWindMin), Scalar(0), Scalar(0);
        hi << Scalar(ExternalFactors::kTemperatureMax), Scalar(ExternalFactors::kWindMax), Scalar(1), Scalar(1);
        const auto cont = ops::minmax_scale(continuous_raw, lo, hi);
        const auto v_cont = ops::reshape(cont_out_(ops::gelu(cont_in_(cont))), {1, dim_});
        const auto tokens = ops::concat<Scalar>({ops::select_row(day_table_, factors.day_of_week),
                                                 ops::select_row(hour_table_, factors.hour_of_day),
                                                 ops::select_row(weather_table_, factors.weather_class), v_cont});
        const auto mixed = attention_(tokens, tokens, tokens);
        return project_(ops::reshape(mixed, {4 * dim_}));
    }

private:
    Eigen::Index dim_ = 0;
    Var<Scalar> day_table_;
    Var<Scalar> hour_table_;
    Var<Scalar> weather_table_;
    Linear<Scalar> cont_in_;
    Linear<Scalar> cont_out_;
    MultiHeadAttention<Scalar> attention_;
    Linear<Scalar> project_;
};

}  // namespace plgf
