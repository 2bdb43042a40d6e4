#include <CLI11.hpp>
#include <yaml-cpp/yaml.h>

#include <fstream>
#include <iostream>
#include <map>

#include "plgf/checkpoint.hpp"
#include "plgf/harness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace plgf;

namespace {

json yaml_to_json(const YAML::Node& node) {
    switch (node.Type()) {
        case YAML::NodeType::Null:
        case YAML::NodeType::Undefined: return nullptr;
        case YAML::NodeType::Sequence: {
            json out = json::array();
            for (const auto& item : node) out.push_back(yaml_to_json(item));
            return out;
        }
        case YAML::NodeType::Map: {
            json out = json::object();
            for (const auto& kv : node) out[kv.first.as<std::string>()] = yaml_to_json(kv.second);
            return out;
        }
        case YAML::NodeType::Scalar: break;
    }
    const auto text = node.Scalar();
    if (node.Tag() == "!") return text;  // quoted
    if (text == "true" || text == "True") return true;
    if (text == "false" || text == "False") return false;
    if (text == "null" || text == "~") return nullptr;
    try {
        std::size_t used = 0;
        const long long i = std::stoll(text, &used);
        if (used == text.size()) return i;
        const double d = std::stod(text, &used);
        if (used == text.size()) return d;
    } catch (const std::exception&) {
    }
    return text;
}

json read_document(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    const auto ext = path.extension().string();
    try {
        if (ext == ".yaml" || ext == ".yml") return yaml_to_json(YAML::Load(in));
        return json::parse(in);
    } catch (const YAML::Exception& e) {
        throw ConfigError("cannot parse " + path.string() + ": " + e.what());
    } catch (const json::exception& e) {
        throw ConfigError("cannot parse " + path.string() + ": " + e.what());
    }
}

/// "a.b.c=value"; the value is read as JSON when it parses, else as a string.
void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    const auto key = assignment.substr(0, eq);
    const auto raw = assignment.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    std::string pointer = "/";
    for (char c : key) pointer += c == '.' ? '/' : c;
    doc[json::json_pointer(pointer)] = value;
}

struct ExperimentArgs {
    std::string config;
    std::vector<std::string> overrides;
    std::string dataset;
    std::string output;
    int epochs = -1;
    long long seed = -1;
};

void add_experiment_options(CLI::App* cmd, ExperimentArgs& a) {
    cmd->add_option("-c,--config", a.config, "Experiment file (.json, .yaml, .yml)");
    cmd->add_option("--set", a.overrides, "Override a field, e.g. optimizer.epochs=5");
    cmd->add_option("--dataset", a.dataset, "Dataset directory");
    cmd->add_option("-o,--output", a.output, "Output directory");
    cmd->add_option("--epochs", a.epochs, "Training epochs");
    cmd->add_option("--seed", a.seed, "Random seed");
}

ExperimentConfig build_config(const ExperimentArgs& a) {
    json doc = a.config.empty() ? json::object() : read_document(a.config);
    if (!doc.is_object()) throw ConfigError("experiment file must hold a mapping");
    for (const auto& o : a.overrides) apply_override(doc, o);
    if (!a.dataset.empty()) doc["dataset"] = a.dataset;
    if (!a.output.empty()) doc["output_dir"] = a.output;
    if (a.epochs >= 0) doc["optimizer"]["epochs"] = a.epochs;
    if (a.seed >= 0) doc["seed"] = a.seed;
    return doc.get<ExperimentConfig>();
}

Dataset load_for(const ExperimentConfig& c) {
    if (c.dataset.empty()) throw ConfigError("dataset path must be set (--dataset or config 'dataset')");
    return load_dataset(c.dataset, relation_for(c.model, read_manifest(c.dataset)));
}

void write_json(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    out << j.dump(2) << '\n';
    if (!out) throw LoadError("cannot write " + path.string());
}

std::pair<Eigen::Index, Eigen::Index> parse_shape(const std::string& text) {
    const auto x = text.find('x');
    if (x == std::string::npos) throw ConfigError("shape '" + text + "' must look like 8x8");
    try {
        return {std::stol(text.substr(0, x)), std::stol(text.substr(x + 1))};
    } catch (const std::exception&) {
        throw ConfigError("shape '" + text + "' must look like 8x8");
    }
}

int exit_code(const std::string& kind) {
    static const std::map<std::string, int> codes = {{"config_error", 2}, {"usage_error", 2}, {"input_error", 3}, {"load_error", 4},
                                                     {"domain_error", 5}, {"numeric_error", 6}};
    auto it = codes.find(kind);
    return it == codes.end() ? 1 : it->second;
}

int fail(const std::string& kind, const std::string& message) {
    std::cerr << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << '\n';
    return exit_code(kind);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Progressive upscaling flow inference: training, evaluation and experiments"};
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "Progress on stderr");

    ExperimentArgs train_args;
    bool resume = false;
    auto* train_cmd = app.add_subcommand("train", "Train one model and write its run record");
    add_experiment_options(train_cmd, train_args);
    train_cmd->add_flag("--resume", resume, "Continue from output_dir/last.ckpt");

    std::string eval_ckpt, eval_data, eval_split = "test", eval_mode = "masked";
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
    eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
    eval_cmd->add_option("--dataset", eval_data, "Dataset directory")->required();
    eval_cmd->add_option("--split", eval_split, "train|val|test");
    eval_cmd->add_option("--mape-mode", eval_mode, "masked|guarded");

    ExperimentArgs ablate_args;
    std::vector<std::string> switches;
    auto* ablate_cmd = app.add_subcommand("ablate", "Train the full model and ablated variants");
    add_experiment_options(ablate_cmd, ablate_args);
    ablate_cmd->add_option("--switches", switches, "wo_film wo_fusion wo_cga wo_dualfocal wo_logarithmic")->delimiter(',');

    ExperimentArgs swap_args;
    std::string loss_a = "dualfocal", loss_b = "l1";
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    auto* swap_cmd = app.add_subcommand("loss-swap", "Train one architecture under two losses over matched seeds");
    add_experiment_options(swap_cmd, swap_args);
    swap_cmd->add_option("--loss-a", loss_a, "dualfocal|mse|l1");
    swap_cmd->add_option("--loss-b", loss_b, "dualfocal|mse|l1");
    swap_cmd->add_option("--seeds", seeds, "Comma-separated seeds")->delimiter(',');

    ExperimentArgs count_args;
    auto* count_cmd = app.add_subcommand("param-count", "Count trainable parameters of a model config");
    add_experiment_options(count_cmd, count_args);

    std::string synth_out, synth_coarse = "8x8", synth_skew;
    std::uint64_t synth_seed = 0;
    std::int64_t synth_count = 400;
    int synth_factor = 4;
    auto* synth_cmd = app.add_subcommand("synth-data", "Write a synthetic long-tail dataset");
    synth_cmd->add_option("-o,--output", synth_out, "Dataset directory")->required();
    synth_cmd->add_option("--seed", synth_seed, "Generator seed");
    synth_cmd->add_option("--count", synth_count, "Number of 30-minute intervals");
    synth_cmd->add_option("--coarse", synth_coarse, "Coarse grid, e.g. 8x8");
    synth_cmd->add_option("--factor", synth_factor, "Upscale factor N (power of two)");
    synth_cmd->add_option("--skew", synth_skew, "JSON/YAML file with generator parameters");

    std::vector<std::string> plot_records;
    std::string plot_swap, plot_out;
    auto* plot_cmd = app.add_subcommand("plot", "Render SVG charts and CSVs from run records");
    plot_cmd->add_option("--records", plot_records, "run_record.json files");
    plot_cmd->add_option("--swap", plot_swap, "Loss-swap report JSON");
    plot_cmd->add_option("-o,--output", plot_out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage_error", e.what());
    }

    try {
        TrainOptions opts;
        opts.verbose = verbose;
        if (*train_cmd) {
            opts.resume = resume;
            const auto cfg = build_config(train_args);
            auto out_dir = fs::path(cfg.output_dir).lexically_normal();
            if (out_dir.filename().empty()) out_dir = out_dir.parent_path();
            opts.label = out_dir.filename().string();
            const auto data = load_for(cfg);
            std::cout << json(train(cfg, data, opts)).dump(2) << '\n';
        } else if (*eval_cmd) {
            const auto r = evaluate(eval_ckpt, eval_data, parse_split(eval_split), parse_mape_mode(eval_mode));
            std::cout << json(r).dump(2) << '\n';
        } else if (*ablate_cmd) {
            const auto cfg = build_config(ablate_args);
            for (const auto& s : switches) ablation_variant(cfg, s);
            const auto data = load_for(cfg);
            const json table = run_ablation(cfg, switches, data, opts);
            write_json(fs::path(cfg.output_dir) / "ablation.json", table);
            std::cout << table.dump(2) << '\n';
        } else if (*swap_cmd) {
            const auto cfg = build_config(swap_args);
            LossSpec a{parse_loss_kind(loss_a), cfg.loss}, b{parse_loss_kind(loss_b), cfg.loss};
            const auto data = load_for(cfg);
            const json report = run_loss_swap(cfg, a, b, seeds, data, opts);
            write_json(fs::path(cfg.output_dir) / "loss_swap.json", report);
            std::cout << report.dump(2) << '\n';
        } else if (*count_cmd) {
            const auto cfg = build_config(count_args);
            const auto model = make_model<float>(cfg.model, 0);
            std::map<std::string, Eigen::Index> parts;
            for (const auto& [name, v] : model->parameters().entries()) parts[name.substr(0, name.find('.'))] += v.value().size();
            std::cout << json{{"parameter_count", model->parameters().scalar_count()}, {"by_module", parts}}.dump(2) << '\n';
        } else if (*synth_cmd) {
            const auto [h, w] = parse_shape(synth_coarse);
            SkewParams skew;
            if (!synth_skew.empty()) skew = read_document(synth_skew).get<SkewParams>();
            const json manifest = generate_synthetic(synth_out, synth_seed, synth_count, GridRelation(synth_factor, h, w), skew);
            std::cout << manifest.dump(2) << '\n';
        } else if (*plot_cmd) {
            std::vector<RunRecord> records;
            for (const auto& p : plot_records) records.push_back(load_run_record(p));
            std::optional<LossSwapReport> swap;
            if (!plot_swap.empty()) swap = read_document(plot_swap).get<LossSwapReport>();
            json files = json::array();
            for (const auto& f : emit_plots(records, swap, plot_out)) files.push_back(f.string());
            std::cout << json{{"files", files}}.dump(2) << '\n';
        }
    } catch (const plgf::Error& e) {
        return fail(e.kind(), e.what());
    } catch (const json::exception& e) {
        return fail("config_error", e.what());
    } catch (const std::exception& e) {
        return fail("internal_error", e.what());
    }
    return 0;
}
