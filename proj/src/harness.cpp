#include "plgf/harness.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "plgf/checkpoint.hpp"

namespace plgf {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || key == k;
        if (!ok) throw ConfigError("unknown key '" + key + "' in " + where);
    }
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void ExperimentConfig::validate() const {
    model.validate();
    loss.validate();
    const auto& o = optimizer;
    if (!(o.learning_rate > 0.0) || !std::isfinite(o.learning_rate)) throw ConfigError("optimizer.learning_rate must be > 0");
    if (o.decay_every < 1) throw ConfigError("optimizer.decay_every must be >= 1");
    if (!(o.decay_factor > 0.0 && o.decay_factor <= 1.0)) throw ConfigError("optimizer.decay_factor must be in (0, 1]");
    if (o.epochs < 0) throw ConfigError("optimizer.epochs must be >= 0");
    if (o.batch_size < 1) throw ConfigError("optimizer.batch_size must be >= 1");
    if (!(o.beta1 >= 0.0 && o.beta1 < 1.0) || !(o.beta2 >= 0.0 && o.beta2 < 1.0))
        throw ConfigError("optimizer betas must be in [0, 1)");
    if (!(o.epsilon > 0.0)) throw ConfigError("optimizer.epsilon must be > 0");
    if (!(o.grad_clip >= 0.0)) throw ConfigError("optimizer.grad_clip must be >= 0");
    if (early_stopping.metric != "val_mse") throw ConfigError("early_stopping.metric must be val_mse");
    if (early_stopping.patience < 0) throw ConfigError("early_stopping.patience must be >= 0");
    if (train_limit < 0) throw ConfigError("train_limit must be >= 0");
}

void to_json(json& j, const ExperimentConfig& c) {
    json loss = c.loss;
    loss["kind"] = to_string(c.loss_kind);
    const auto& o = c.optimizer;
    j = {{"model", c.model},
         {"loss", loss},
         {"optimizer",
          {{"learning_rate", o.learning_rate},
           {"decay_every", o.decay_every},
           {"decay_factor", o.decay_factor},
           {"epochs", o.epochs},
           {"batch_size", o.batch_size},
           {"beta1", o.beta1},
           {"beta2", o.beta2},
           {"epsilon", o.epsilon},
           {"grad_clip", o.grad_clip}}},
         {"early_stopping", {{"metric", c.early_stopping.metric}, {"patience", c.early_stopping.patience}}},
         {"seed", c.seed},
         {"dataset", c.dataset},
         {"output_dir", c.output_dir},
         {"mape_mode", to_string(c.mape_mode)},
         {"train_limit", c.train_limit}};
}

void from_json(const json& j, ExperimentConfig& c) {
    reject_unknown(j, {"model", "loss", "optimizer", "early_stopping", "seed", "dataset", "output_dir", "mape_mode", "train_limit"},
                   "experiment config");
    try {
        if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
        if (j.contains("loss")) {
            json loss = j.at("loss");
            if (!loss.is_object()) throw ConfigError("loss must be a JSON object");
            if (loss.contains("kind")) {
                c.loss_kind = parse_loss_kind(loss.at("kind").get<std::string>());
                loss.erase("kind");
            }
            c.loss = loss.get<LossConfig>();
        }
        if (j.contains("optimizer")) {
            const auto& o = j.at("optimizer");
            reject_unknown(o, {"learning_rate", "decay_every", "decay_factor", "epochs", "batch_size", "beta1", "beta2", "epsilon", "grad_clip"},
                           "optimizer");
            read_opt(o, "learning_rate", c.optimizer.learning_rate);
            read_opt(o, "decay_every", c.optimizer.decay_every);
            read_opt(o, "decay_factor", c.optimizer.decay_factor);
            read_opt(o, "epochs", c.optimizer.epochs);
            read_opt(o, "batch_size", c.optimizer.batch_size);
            read_opt(o, "beta1", c.optimizer.beta1);
            read_opt(o, "beta2", c.optimizer.beta2);
            read_opt(o, "epsilon", c.optimizer.epsilon);
            read_opt(o, "grad_clip", c.optimizer.grad_clip);
        }
        if (j.contains("early_stopping")) {
            const auto& e = j.at("early_stopping");
            reject_unknown(e, {"metric", "patience"}, "early_stopping");
            read_opt(e, "metric", c.early_stopping.metric);
            read_opt(e, "patience", c.early_stopping.patience);
        }
        read_opt(j, "seed", c.seed);
        read_opt(j, "dataset", c.dataset);
        read_opt(j, "output_dir", c.output_dir);
        read_opt(j, "train_limit", c.train_limit);
        if (j.contains("mape_mode")) c.mape_mode = parse_mape_mode(j.at("mape_mode").get<std::string>());
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad experiment config: ") + e.what());
    }
    c.validate();
}

double learning_rate_at(const OptimizerConfig& cfg, int epoch) {
    return cfg.learning_rate * std::pow(cfg.decay_factor, epoch / cfg.decay_every);
}

template <typename Scalar>
Adam<Scalar>::Adam(ParameterSet<Scalar>& params, const OptimizerConfig& cfg)
    : params_(&params), cfg_(cfg), lr_(cfg.learning_rate) {
    for (const auto& [_, v] : params.entries()) {
        m_.push_back(Tensor<Scalar>::Array::Zero(v.value().size()));
        v_.push_back(Tensor<Scalar>::Array::Zero(v.value().size()));
    }
}

template <typename Scalar>
double Adam<Scalar>::step() {
    const auto& entries = params_->entries();
    double sq = 0.0;
    for (const auto& [_, v] : entries)
        if (!v.grad().empty()) sq += v.grad().array().template cast<double>().square().sum();
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) return norm;
    const Scalar clip = cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip ? Scalar(cfg_.grad_clip / norm) : Scalar(1);

    ++step_;
    const Scalar b1 = Scalar(cfg_.beta1), b2 = Scalar(cfg_.beta2);
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    const Scalar step_size = Scalar(lr_ / c1);
    const Scalar eps = Scalar(cfg_.epsilon);
    const Scalar root_c2 = Scalar(std::sqrt(c2));
    for (std::size_t i = 0; i < entries.size(); ++i) {
        auto v = entries[i].second;
        if (v.grad().empty()) {
            m_[i] *= b1;
            v_[i] *= b2;
        } else {
            const auto g = v.grad().array() * clip;
            m_[i] = b1 * m_[i] + (Scalar(1) - b1) * g;
            v_[i] = b2 * v_[i] + (Scalar(1) - b2) * g.square();
        }
        v.mutable_value().array() -= step_size * m_[i] / (v_[i].sqrt() / root_c2 + eps);
    }
    return norm;
}

template <typename Scalar>
std::map<std::string, Tensor<float>> Adam<Scalar>::state() const {
    std::map<std::string, Tensor<float>> out;
    const auto& entries = params_->entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& shape = entries[i].second.shape();
        out.emplace("m/" + entries[i].first, Tensor<float>(shape, m_[i].template cast<float>()));
        out.emplace("v/" + entries[i].first, Tensor<float>(shape, v_[i].template cast<float>()));
    }
    // Two 24-bit halves keep the count exact in float storage.
    Tensor<float> step(Shape{2});
    step[0] = static_cast<float>(step_ >> 24);
    step[1] = static_cast<float>(step_ & 0xFFFFFF);
    out.emplace("step", step);
    return out;
}

template <typename Scalar>
void Adam<Scalar>::load_state(const std::map<std::string, Tensor<float>>& state) {
    const auto& entries = params_->entries();
    if (state.size() != 2 * entries.size() + 1) throw LoadError("optimizer state does not match the parameter set");
    for (std::size_t i = 0; i < entries.size(); ++i) {
        for (auto [prefix, dst] : {std::pair{"m/", &m_[i]}, std::pair{"v/", &v_[i]}}) {
            auto it = state.find(prefix + entries[i].first);
            if (it == state.end() || it->second.shape() != entries[i].second.shape())
                throw LoadError("optimizer state missing or misshapen for " + entries[i].first);
            *dst = it->second.array().template cast<Scalar>();
        }
    }
    auto it = state.find("step");
    if (it == state.end() || it->second.size() != 2) throw LoadError("optimizer state lacks a step counter");
    step_ = (static_cast<std::int64_t>(it->second[0]) << 24) + static_cast<std::int64_t>(it->second[1]);
}

template class Adam<float>;
template class Adam<double>;

void to_json(json& j, const MetricReport& r) {
    j = {{"mse", r.mse}, {"mae", r.mae}, {"mape", r.mape}, {"cells_evaluated", r.cells_evaluated}, {"empty_mape_mask", r.empty_mape_mask}};
}

void from_json(const json& j, MetricReport& r) {
    r.mse = j.at("mse").get<double>();
    r.mae = j.at("mae").get<double>();
    r.mape = j.at("mape").get<double>();
    r.cells_evaluated = j.at("cells_evaluated").get<std::int64_t>();
    r.empty_mape_mask = j.at("empty_mape_mask").get<bool>();
}

void to_json(json& j, const EvalReport& r) {
    j = {{"metrics", r.metrics}, {"conservation_residual", r.conservation_residual}, {"samples", r.samples}};
}

void from_json(const json& j, EvalReport& r) {
    r.metrics = j.at("metrics").get<MetricReport>();
    r.conservation_residual = j.at("conservation_residual").get<double>();
    r.samples = j.at("samples").get<std::int64_t>();
}

EvalReport evaluate(const Predictor& predict, const std::vector<Sample>& samples, const GridRelation& relation,
                    MapeMode mode) {
    MetricAccumulator acc(mode);
    EvalReport r;
    for (const auto& s : samples) {
        const FlowMap pred = predict(s);
        acc.add(pred, s.fine);
        r.conservation_residual = std::max(r.conservation_residual, conservation_residual(pred, s.coarse, relation));
        ++r.samples;
    }
    r.metrics = acc.report();
    return r;
}

template <typename Scalar>
EvalReport evaluate(const FlowModel<Scalar>& model, const std::vector<Sample>& samples, MapeMode mode) {
    const auto& c = model.config();
    const auto n = c.upscale_factor();
    if (samples.empty()) return EvalReport{MetricAccumulator(mode).report(), 0.0, 0};
    const GridRelation relation(n, samples.front().coarse.height(), samples.front().coarse.width());
    return evaluate([&](const Sample& s) { return model.predict(s.coarse, s.factors); }, samples, relation, mode);
}

template EvalReport evaluate<float>(const FlowModel<float>&, const std::vector<Sample>&, MapeMode);
template EvalReport evaluate<double>(const FlowModel<double>&, const std::vector<Sample>&, MapeMode);

GridRelation relation_for(const ModelConfig& model, const DatasetManifest& manifest) {
    if (manifest.upscale_factor != model.upscale_factor())
        throw ConfigError("model upscales by " + std::to_string(model.upscale_factor()) + " but the dataset has N=" +
                          std::to_string(manifest.upscale_factor));
    if (manifest.channels != model.input_channels)
        throw ConfigError("model expects " + std::to_string(model.input_channels) + " channels, dataset has " +
                          std::to_string(manifest.channels));
    return GridRelation(manifest.upscale_factor, manifest.coarse_height, manifest.coarse_width);
}

EvalReport evaluate(const fs::path& checkpoint, const fs::path& dataset, Split split, MapeMode mode) {
    auto model = load_checkpoint<float>(checkpoint);
    const auto manifest = read_manifest(dataset);
    GridRelation relation = [&] {
        try {
            return relation_for(model->config(), manifest);
        } catch (const ConfigError& e) {
            throw LoadError(std::string("checkpoint does not fit the dataset: ") + e.what());
        }
    }();
    const auto data = load_dataset(dataset, relation);
    return evaluate(*model, data.split(split), mode);
}

void to_json(json& j, const EpochRecord& r) {
    j = {{"epoch", r.epoch},           {"learning_rate", r.learning_rate}, {"train_loss", r.train_loss},
         {"train_mse", r.train_mse},   {"val", r.val},                     {"seconds", r.seconds}};
}

void from_json(const json& j, EpochRecord& r) {
    r.epoch = j.at("epoch").get<int>();
    r.learning_rate = j.at("learning_rate").get<double>();
    r.train_loss = j.at("train_loss").get<LossBreakdown>();
    r.train_mse = j.at("train_mse").get<double>();
    r.val = j.at("val").get<MetricReport>();
    r.seconds = j.at("seconds").get<double>();
}

void to_json(json& j, const RunRecord& r) {
    j = {{"schema", "plgf-run-record"},
         {"schema_version", r.schema_version},
         {"label", r.label},
         {"config", r.config},
         {"epochs", r.epochs},
         {"best_epoch", r.best_epoch},
         {"best_checkpoint", r.best_checkpoint},
         {"early_stopped", r.early_stopped},
         {"test", r.test},
         {"parameter_count", r.parameter_count}};
}

void from_json(const json& j, RunRecord& r) {
    if (j.at("schema").get<std::string>() != "plgf-run-record") throw LoadError("not a run record");
    r.schema_version = j.at("schema_version").get<int>();
    if (r.schema_version != kRunRecordSchemaVersion)
        throw LoadError("unsupported run record schema_version " + std::to_string(r.schema_version));
    r.label = j.at("label").get<std::string>();
    r.config = j.at("config").get<ExperimentConfig>();
    r.epochs = j.at("epochs").get<std::vector<EpochRecord>>();
    r.best_epoch = j.at("best_epoch").get<int>();
    r.best_checkpoint = j.at("best_checkpoint").get<std::string>();
    r.early_stopped = j.at("early_stopped").get<bool>();
    r.test = j.at("test").get<EvalReport>();
    r.parameter_count = j.at("parameter_count").get<std::int64_t>();
}

void save_run_record(const fs::path& path, const RunRecord& record) {
    // Written beside the target and renamed so readers never see a partial file.
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        out << json(record).dump(2) << '\n';
        if (!out) throw LoadError("cannot write run record " + path.string());
    }
    fs::rename(tmp, path);
}

RunRecord load_run_record(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open run record " + path.string());
    try {
        return json::parse(in).get<RunRecord>();
    } catch (const json::exception& e) {
        throw LoadError("malformed run record " + path.string() + ": " + e.what());
    }
}

namespace {

std::string describe(const LossBreakdown& b) {
    std::ostringstream os;
    os << "l1=" << b.l1 << " log_l1=" << b.log_l1 << " dual_scale=" << b.dual_scale << " modulation=" << b.modulation
       << " total=" << b.total;
    return os.str();
}

std::uint64_t epoch_seed(std::uint64_t seed, int epoch) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch), 0x5eedu};
    std::uint64_t out[1];
    seq.generate(reinterpret_cast<std::uint32_t*>(out), reinterpret_cast<std::uint32_t*>(out) + 2);
    return out[0];
}

}  // namespace

RunRecord train(const ExperimentConfig& config, const Dataset& data, const TrainOptions& options) {
    config.validate();
    relation_for(config.model, data.manifest);
    if (config.output_dir.empty()) throw ConfigError("output_dir must be set");
    const auto& opt = config.optimizer;
    if (opt.epochs > 0 && data.train.empty()) throw ConfigError("training split is empty");
    if (opt.epochs > 0 && data.val.empty()) throw ConfigError("validation split is empty");
    const std::vector<Sample>* train_set = &data.train;
    std::vector<Sample> limited;
    if (config.train_limit > 0 && config.train_limit < static_cast<std::int64_t>(data.train.size())) {
        limited.assign(data.train.begin(), data.train.begin() + config.train_limit);
        train_set = &limited;
    }

    const fs::path out = config.output_dir;
    fs::create_directories(out);
    const fs::path best_path = out / "best.ckpt", last_path = out / "last.ckpt", optim_path = out / "last.optim",
                   record_path = out / "run_record.json";

    auto model = make_model<float>(config.model, config.seed);
    Adam<float> adam(model->parameters(), opt);

    RunRecord rec;
    rec.label = options.label;
    rec.config = config;
    rec.parameter_count = model->parameters().scalar_count();
    rec.best_checkpoint = best_path.string();

    double best = std::numeric_limits<double>::infinity();
    int since_best = 0;
    if (options.resume && fs::exists(last_path) && fs::exists(record_path)) {
        RunRecord prior = load_run_record(record_path);
        auto comparable = prior.config;
        comparable.optimizer.epochs = config.optimizer.epochs;
        if (!(comparable == config))
            throw ConfigError("cannot resume: " + record_path.string() + " was produced by a different config");
        rec.config = config;
        load_checkpoint_into(last_path, *model);
        adam.load_state(load_tensors(optim_path));
        rec.epochs = prior.epochs;
        rec.best_epoch = prior.best_epoch;
        for (const auto& e : rec.epochs) {
            if (e.val.mse < best) {
                best = e.val.mse;
                since_best = 0;
            } else {
                ++since_best;
            }
        }
        if (options.verbose) std::clog << "resuming after epoch " << rec.epochs.size() << '\n';
    } else {
        save_checkpoint(best_path, *model);
    }

    const auto patience = config.early_stopping.patience;
    const auto n_train = static_cast<std::int64_t>(train_set->size());
    const auto batch = static_cast<std::int64_t>(opt.batch_size);
    for (int epoch = static_cast<int>(rec.epochs.size()); epoch < opt.epochs; ++epoch) {
        if (patience > 0 && since_best >= patience) {
            rec.early_stopped = true;
            break;
        }
        const auto t0 = std::chrono::steady_clock::now();
        EpochRecord er;
        er.epoch = epoch;
        er.learning_rate = learning_rate_at(opt, epoch);
        adam.set_learning_rate(er.learning_rate);

        std::vector<std::int64_t> order(static_cast<std::size_t>(n_train));
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 shuffle_rng(epoch_seed(config.seed, epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double sq_err = 0.0;
        std::int64_t cells = 0;
        for (std::int64_t start = 0, b = 0; start < n_train; start += batch, ++b) {
            const auto stop = std::min(n_train, start + batch);
            const float inv = 1.0f / static_cast<float>(stop - start);
            model->parameters().zero_grad();
            for (auto k = start; k < stop; ++k) {
                const auto& s = (*train_set)[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])];
                const auto pred = model->forward(s.coarse, s.factors);
                const auto truth = Var<float>::constant(s.fine.to_tensor<float>());
                const auto r = compute_loss(config.loss_kind, pred, truth, config.loss);
                if (!std::isfinite(r.breakdown.total) || !std::isfinite(static_cast<double>(r.loss.value()[0])))
                    throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                       std::to_string(b) + " (sample t=" + std::to_string(s.timestamp) +
                                       "): " + describe(r.breakdown));
                ops::scale(r.loss, inv).backward();
                er.train_loss.l1 += r.breakdown.l1;
                er.train_loss.log_l1 += r.breakdown.log_l1;
                er.train_loss.dual_scale += r.breakdown.dual_scale;
                er.train_loss.modulation += r.breakdown.modulation;
                er.train_loss.total += r.breakdown.total;
                const Eigen::ArrayXd diff =
                    pred.value().array().template cast<double>() - s.fine.values().cast<double>();
                sq_err += diff.square().sum();
                cells += diff.size();
            }
            const double norm = adam.step();
            if (!std::isfinite(norm))
                throw NumericError("non-finite gradient norm at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(b) + "; consider optimizer.grad_clip");
        }
        const double n = static_cast<double>(n_train);
        er.train_loss.l1 /= n;
        er.train_loss.log_l1 /= n;
        er.train_loss.dual_scale /= n;
        er.train_loss.modulation /= n;
        er.train_loss.total /= n;
        er.train_mse = sq_err / static_cast<double>(cells);
        er.val = evaluate(*model, data.val, config.mape_mode).metrics;
        er.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        if (er.val.mse < best) {
            best = er.val.mse;
            since_best = 0;
            rec.best_epoch = epoch;
            save_checkpoint(best_path, *model);
        } else {
            ++since_best;
        }
        rec.epochs.push_back(er);
        save_checkpoint(last_path, *model);
        save_tensors(optim_path, adam.state());
        save_run_record(record_path, rec);
        if (options.verbose)
            std::clog << (options.label.empty() ? "" : options.label + " ") << "epoch " << epoch << " lr " << er.learning_rate
                      << " loss " << er.train_loss.total << " train_mse " << er.train_mse << " val_mse " << er.val.mse
                      << " val_mape " << er.val.mape << " (" << er.seconds << " s)\n";
    }
    if (patience > 0 && since_best >= patience) rec.early_stopped = true;

    load_checkpoint_into(best_path, *model);
    rec.test = evaluate(*model, data.test, config.mape_mode);
    save_run_record(record_path, rec);
    return rec;
}

RunRecord train(const ExperimentConfig& config, const TrainOptions& options) {
    config.validate();
    if (config.dataset.empty()) throw ConfigError("dataset path must be set");
    const auto manifest = read_manifest(config.dataset);
    const auto data = load_dataset(config.dataset, relation_for(config.model, manifest));
    return train(config, data, options);
}

const std::vector<std::string>& ablation_switch_names() {
    static const std::vector<std::string> names = {"wo_film", "wo_fusion", "wo_cga", "wo_dualfocal", "wo_logarithmic"};
    return names;
}

ExperimentConfig ablation_variant(const ExperimentConfig& base, const std::string& name) {
    ExperimentConfig c = base;
    if (name == "full") return c;
    if (name == "wo_film" || name == "wo_fusion" || name == "wo_cga") {
        if (c.model.architecture != "plgf") throw ConfigError(name + " applies only to the plgf architecture");
        if (name == "wo_film") c.model.ablation.no_film = true;
        if (name == "wo_fusion") c.model.ablation.no_fusion = true;
        if (name == "wo_cga") c.model.ablation.no_cga = true;
    } else if (name == "wo_dualfocal") {
        c.loss_kind = LossKind::mse;
    } else if (name == "wo_logarithmic") {
        c.loss_kind = LossKind::dualfocal;
        c.loss.lambda = 0.0;
    } else {
        throw ConfigError("unknown ablation switch '" + name + "'");
    }
    return c;
}

void to_json(json& j, const AblationTable& t) {
    json rows = json::array();
    for (const auto& r : t.rows)
        rows.push_back({{"variant", r.variant},
                        {"parameter_count", r.parameter_count},
                        {"mse", r.test.metrics.mse},
                        {"mae", r.test.metrics.mae},
                        {"mape", r.test.metrics.mape},
                        {"conservation_residual", r.test.conservation_residual}});
    j = {{"schema", "plgf-ablation"}, {"schema_version", 1}, {"rows", rows}};
}

AblationTable run_ablation(const ExperimentConfig& base, const std::vector<std::string>& switches, const Dataset& data,
                           const TrainOptions& options) {
    std::vector<std::string> variants = {"full"};
    for (const auto& s : switches) {
        ablation_variant(base, s);  // rejects unknown names before any training
        if (std::find(variants.begin(), variants.end(), s) == variants.end()) variants.push_back(s);
    }
    AblationTable table;
    for (const auto& v : variants) {
        auto cfg = ablation_variant(base, v);
        if (v != "full") cfg.output_dir = (fs::path(base.output_dir) / v).string();
        auto opts = options;
        opts.label = v;
        auto rec = train(cfg, data, opts);
        table.rows.push_back({v, rec.parameter_count, rec.test});
        table.runs.push_back(std::move(rec));
    }
    return table;
}

void to_json(json& j, const LossSwapReport& r) {
    json rows = json::array();
    for (const auto& row : r.rows)
        rows.push_back({{"seed", row.seed}, {"a", row.a}, {"b", row.b}});
    j = {{"schema", "plgf-loss-swap"},
         {"schema_version", 1},
         {"model", r.model},
         {"loss_a", r.loss_a},
         {"loss_b", r.loss_b},
         {"rows", rows},
         {"wins", {{"mse", r.wins_mse}, {"mae", r.wins_mae}, {"mape", r.wins_mape}}},
         {"mean_relative_reduction_mape", r.mean_relative_reduction_mape}};
}

void from_json(const json& j, LossSwapReport& r) {
    if (j.at("schema").get<std::string>() != "plgf-loss-swap") throw LoadError("not a loss-swap report");
    r.model = j.at("model").get<std::string>();
    r.loss_a = j.at("loss_a").get<std::string>();
    r.loss_b = j.at("loss_b").get<std::string>();
    r.rows.clear();
    for (const auto& row : j.at("rows"))
        r.rows.push_back({row.at("seed").get<std::uint64_t>(), row.at("a").get<EvalReport>(), row.at("b").get<EvalReport>()});
    r.wins_mse = j.at("wins").at("mse").get<int>();
    r.wins_mae = j.at("wins").at("mae").get<int>();
    r.wins_mape = j.at("wins").at("mape").get<int>();
    r.mean_relative_reduction_mape = j.at("mean_relative_reduction_mape").get<double>();
}

LossSwapReport run_loss_swap(const ExperimentConfig& base, const LossSpec& a, const LossSpec& b,
                             const std::vector<std::uint64_t>& seeds, const Dataset& data, const TrainOptions& options) {
    if (base.model.architecture != "plgf" && base.model.architecture != "simple_srnet")
        throw ConfigError("loss swap supports plgf and simple_srnet");
    if (seeds.empty()) throw ConfigError("loss swap needs at least one seed");
    a.config.validate();
    b.config.validate();
    LossSwapReport report;
    report.model = base.model.architecture;
    report.loss_a = a.label();
    report.loss_b = b.label();
    const std::string dir_a = a.label() + (a.label() == b.label() ? "_a" : "");
    const std::string dir_b = b.label() + (a.label() == b.label() ? "_b" : "");
    double reduction = 0.0;
    for (auto seed : seeds) {
        LossSwapRow row;
        row.seed = seed;
        for (const auto& [spec, dir, slot] : {std::tuple{&a, dir_a, &row.a}, std::tuple{&b, dir_b, &row.b}}) {
            auto cfg = base;
            cfg.seed = seed;
            cfg.loss_kind = spec->kind;
            cfg.loss = spec->config;
            cfg.output_dir = (fs::path(base.output_dir) / (dir + "_seed" + std::to_string(seed))).string();
            auto opts = options;
            opts.label = dir + "/seed" + std::to_string(seed);
            *slot = train(cfg, data, opts).test;
        }
        report.wins_mse += row.a.metrics.mse < row.b.metrics.mse;
        report.wins_mae += row.a.metrics.mae < row.b.metrics.mae;
        report.wins_mape += row.a.metrics.mape < row.b.metrics.mape;
        if (row.b.metrics.mape > 0.0) reduction += (row.b.metrics.mape - row.a.metrics.mape) / row.b.metrics.mape;
        report.rows.push_back(row);
    }
    report.mean_relative_reduction_mape = reduction / static_cast<double>(seeds.size());
    return report;
}

}  // namespace plgf
