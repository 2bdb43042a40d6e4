#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "plgf/data_layer.hpp"
#include "plgf/dualfocal_loss.hpp"
#include "plgf/plgf_model.hpp"

namespace plgf {

struct OptimizerConfig {
    double learning_rate = 3e-4;
    /// The rate is multiplied by decay_factor every decay_every epochs.
    int decay_every = 8;
    double decay_factor = 0.5;
    int epochs = 100;
    int batch_size = 20;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    /// Global L2 gradient-norm clip; 0 disables.
    double grad_clip = 0.0;

    bool operator==(const OptimizerConfig&) const = default;
};

struct EarlyStoppingConfig {
    /// Validation MSE is the only supported metric.
    std::string metric = "val_mse";
    /// Epochs without improvement before stopping; 0 disables.
    int patience = 15;

    bool operator==(const EarlyStoppingConfig&) const = default;
};

struct ExperimentConfig {
    ModelConfig model;
    LossKind loss_kind = LossKind::dualfocal;
    LossConfig loss;
    OptimizerConfig optimizer;
    EarlyStoppingConfig early_stopping;
    std::uint64_t seed = 0;
    std::string dataset;
    std::string output_dir;
    MapeMode mape_mode = MapeMode::masked;
    /// Use only the first n training samples; 0 keeps all.
    std::int64_t train_limit = 0;

    /// Throws ConfigError on the first invalid field.
    void validate() const;
    bool operator==(const ExperimentConfig&) const = default;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
/// Missing keys keep defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, ExperimentConfig& c);

/// lr(e) = learning_rate * decay_factor^floor(e / decay_every), e from 0.
double learning_rate_at(const OptimizerConfig& cfg, int epoch);

/// Adam over every parameter of a set, with bias correction.
template <typename Scalar>
class Adam {
public:
    Adam(ParameterSet<Scalar>& params, const OptimizerConfig& cfg);

    void set_learning_rate(double lr) { lr_ = lr; }
    double learning_rate() const { return lr_; }
    std::int64_t steps() const { return step_; }

    /// Applies one update from the accumulated gradients; returns the global
    /// gradient norm before clipping.
    double step();

    /// Moments as "m/<param>", "v/<param>" plus "step".
    std::map<std::string, Tensor<float>> state() const;
    void load_state(const std::map<std::string, Tensor<float>>& state);

private:
    ParameterSet<Scalar>* params_;
    OptimizerConfig cfg_;
    double lr_;
    std::int64_t step_ = 0;
    std::vector<typename Tensor<Scalar>::Array> m_;
    std::vector<typename Tensor<Scalar>::Array> v_;
};

extern template class Adam<float>;
extern template class Adam<double>;

struct EvalReport {
    MetricReport metrics;
    /// Max over samples of conservation_residual(pred, coarse).
    double conservation_residual = 0.0;
    std::int64_t samples = 0;
};

void to_json(nlohmann::json& j, const MetricReport& r);
void from_json(const nlohmann::json& j, MetricReport& r);
void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

using Predictor = std::function<FlowMap(const Sample&)>;

EvalReport evaluate(const Predictor& predict, const std::vector<Sample>& samples, const GridRelation& relation,
                    MapeMode mode = MapeMode::masked);

template <typename Scalar>
EvalReport evaluate(const FlowModel<Scalar>& model, const std::vector<Sample>& samples, MapeMode mode = MapeMode::masked);

/// Loads the checkpoint, checks it against the dataset geometry, evaluates one split.
EvalReport evaluate(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset, Split split,
                    MapeMode mode = MapeMode::masked);

struct EpochRecord {
    int epoch = 0;
    double learning_rate = 0.0;
    /// Mean training loss components over the epoch.
    LossBreakdown train_loss;
    /// Mean squared error of the training forward passes within the epoch.
    double train_mse = 0.0;
    MetricReport val;
    double seconds = 0.0;
};

inline constexpr int kRunRecordSchemaVersion = 1;

struct RunRecord {
    int schema_version = kRunRecordSchemaVersion;
    std::string label;
    ExperimentConfig config;
    std::vector<EpochRecord> epochs;
    /// -1 when no epoch ran; the checkpoint then holds the initial weights.
    int best_epoch = -1;
    std::string best_checkpoint;
    bool early_stopped = false;
    EvalReport test;
    std::int64_t parameter_count = 0;
};

void to_json(nlohmann::json& j, const EpochRecord& r);
void from_json(const nlohmann::json& j, EpochRecord& r);
void to_json(nlohmann::json& j, const RunRecord& r);
void from_json(const nlohmann::json& j, RunRecord& r);

void save_run_record(const std::filesystem::path& path, const RunRecord& record);
RunRecord load_run_record(const std::filesystem::path& path);

struct TrainOptions {
    /// Continue from output_dir/last.ckpt and run_record.json when present;
    /// the stored config may differ only in optimizer.epochs.
    bool resume = false;
    /// Progress lines on stderr.
    bool verbose = false;
    std::string label;
};

/// Files written under output_dir: best.ckpt(.json), last.ckpt(.json),
/// last.optim, run_record.json.
RunRecord train(const ExperimentConfig& config, const Dataset& data, const TrainOptions& options = {});
/// Loads config.dataset first; all config and dataset errors surface before training.
RunRecord train(const ExperimentConfig& config, const TrainOptions& options = {});

GridRelation relation_for(const ModelConfig& model, const DatasetManifest& manifest);

/// The five table rows: wo_film, wo_fusion, wo_cga, wo_dualfocal, wo_logarithmic.
const std::vector<std::string>& ablation_switch_names();
/// Config of one variant; "full" returns the base unchanged.
ExperimentConfig ablation_variant(const ExperimentConfig& base, const std::string& name);

struct AblationRow {
    std::string variant;
    std::int64_t parameter_count = 0;
    EvalReport test;
};

struct AblationTable {
    std::vector<AblationRow> rows;
    std::vector<RunRecord> runs;
};

void to_json(nlohmann::json& j, const AblationTable& t);

/// Trains the full model and each variant with the same seed and schedule,
/// each under output_dir/<variant>.
AblationTable run_ablation(const ExperimentConfig& base, const std::vector<std::string>& switches, const Dataset& data,
                           const TrainOptions& options = {});

struct LossSpec {
    LossKind kind = LossKind::dualfocal;
    LossConfig config;
    std::string label() const { return to_string(kind); }
};

struct LossSwapRow {
    std::uint64_t seed = 0;
    EvalReport a;
    EvalReport b;
};

struct LossSwapReport {
    std::string model;
    std::string loss_a;
    std::string loss_b;
    std::vector<LossSwapRow> rows;
    /// Seeds where loss_a scored strictly lower on the metric.
    int wins_mse = 0;
    int wins_mae = 0;
    int wins_mape = 0;
    /// Mean of (b - a) / b over seeds.
    double mean_relative_reduction_mape = 0.0;
};

void to_json(nlohmann::json& j, const LossSwapReport& r);
void from_json(const nlohmann::json& j, LossSwapReport& r);

/// Same architecture, same seeds, two losses; runs under output_dir/<loss>_seed<k>.
LossSwapReport run_loss_swap(const ExperimentConfig& base, const LossSpec& a, const LossSpec& b,
                             const std::vector<std::uint64_t>& seeds, const Dataset& data,
                             const TrainOptions& options = {});

/// SVG charts plus CSVs of every plotted number. Returns the files written;
/// empty input writes nothing and warns on stderr.
std::vector<std::filesystem::path> emit_plots(const std::vector<RunRecord>& records,
                                              const std::optional<LossSwapReport>& swap,
                                              const std::filesystem::path& out_dir);

}  // namespace plgf
