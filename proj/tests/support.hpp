#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "plgf/data_layer.hpp"
#include "plgf/flow_core.hpp"

namespace plgf::test {

/// Unique scratch directory, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "plgf") {
        static std::uint64_t counter = 0;
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                (tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

private:
    std::filesystem::path path_;
};

inline FlowMap random_map(std::mt19937_64& rng, Eigen::Index h, Eigen::Index w, double hi = 10.0, double zero_prob = 0.0) {
    std::uniform_real_distribution<double> u(0.0, hi);
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    Eigen::ArrayXf v(h * w);
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = coin(rng) < zero_prob ? 0.0f : static_cast<float>(u(rng));
    return FlowMap(h, w, v);
}

inline ExternalFactors random_factors(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> weather(0, 15), day(0, 6), hour(0, 23), flag(0, 1);
    std::uniform_real_distribution<double> temp(-20.0, 38.0), wind(0.0, 40.0);
    ExternalFactors f;
    f.weather_class = weather(rng);
    f.day_of_week = day(rng);
    f.hour_of_day = hour(rng);
    f.is_holiday = flag(rng) == 1;
    f.is_weekend = flag(rng) == 1;
    f.temperature_c = temp(rng);
    f.wind_mph = wind(rng);
    return f;
}

inline double rel_err(double a, double b, double floor = 1e-12) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Scalar double-loop metric oracle.
struct ScalarMetrics {
    double mse = 0, mae = 0, mape = 0;
    std::int64_t mape_cells = 0;
};

inline ScalarMetrics metric_oracle(const FlowMap& pred, const FlowMap& truth, bool masked) {
    ScalarMetrics m;
    const double eps = masked ? 1e-6 : 1.0;
    double sq = 0, ab = 0, pct = 0;
    for (Eigen::Index i = 0; i < truth.height(); ++i)
        for (Eigen::Index j = 0; j < truth.width(); ++j) {
            const double y = truth(i, j), p = pred(i, j);
            sq += (y - p) * (y - p);
            ab += std::abs(y - p);
            if (!masked || y > 0) {
                pct += std::abs((y - p) / (y + eps));
                ++m.mape_cells;
            }
        }
    const double n = static_cast<double>(truth.height() * truth.width());
    m.mse = sq / n;
    m.mae = ab / n;
    m.mape = m.mape_cells ? pct / static_cast<double>(m.mape_cells) : 0.0;
    return m;
}

/// Per-element DualFocal value written straight from the formula.
inline double dualfocal_oracle(double p, double y, double lambda, double beta, double gamma, bool sigmoid_mod = false) {
    const double ds = std::abs(p - y) + lambda * std::abs(std::log(1.0 + p) - std::log(1.0 + y));
    const double z = beta * ds;
    const double f = sigmoid_mod ? 2.0 / (1.0 + std::exp(-z)) - 1.0 : std::tanh(z);
    return (gamma == 0.0 ? 1.0 : std::pow(f, gamma)) * ds;
}

/// Central difference of a scalar function.
inline double central_difference(const std::function<double(double)>& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

}  // namespace plgf::test
