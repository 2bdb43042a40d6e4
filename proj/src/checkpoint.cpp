#include "plgf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "plgf/binary_io.hpp"

namespace plgf {

namespace {
constexpr char kMagic[8] = {'P', 'L', 'G', 'F', 'T', 'N', 'S', 'R'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_tensors(const std::filesystem::path& path, const TensorMap& tensors) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw LoadError("cannot open " + path.string() + " for writing");
    out.write(kMagic, sizeof(kMagic));
    io::write_u32(out, kVersion);
    io::write_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        io::write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        io::write_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) io::write_u64(out, static_cast<std::uint64_t>(d));
        io::write_f32_array(out, t.data(), t.size());
    }
    if (!out) throw LoadError("write failed for " + path.string());
}

TensorMap load_tensors(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open checkpoint " + path.string());
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw LoadError(path.string() + ": bad magic");
    const auto version = io::read_u32(in);
    if (version != kVersion) throw LoadError(path.string() + ": unsupported version " + std::to_string(version));
    const auto count = io::read_u32(in);
    TensorMap out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = io::read_u32(in);
        if (len > 4096) throw LoadError(path.string() + ": implausible name length");
        std::string name(len, '\0');
        in.read(name.data(), len);
        const auto rank = io::read_u32(in);
        if (rank > 8) throw LoadError(path.string() + ": implausible rank for " + name);
        Shape shape(rank);
        for (auto& d : shape) d = static_cast<Eigen::Index>(io::read_u64(in));
        Tensor<float> t(shape);
        io::read_f32_array(in, t.data(), t.size());
        if (!in) throw LoadError(path.string() + ": truncated at tensor " + name);
        out.emplace(std::move(name), std::move(t));
    }
    return out;
}

std::filesystem::path checkpoint_sidecar(const std::filesystem::path& checkpoint) {
    auto p = checkpoint;
    p += ".json";
    return p;
}

ModelConfig read_checkpoint_config(const std::filesystem::path& path) {
    std::ifstream in(checkpoint_sidecar(path));
    if (!in) throw LoadError("missing checkpoint sidecar " + checkpoint_sidecar(path).string());
    nlohmann::json j;
    try {
        in >> j;
        if (j.at("format").get<std::string>() != "plgf-checkpoint") throw LoadError("sidecar format tag mismatch");
        return j.at("model").get<ModelConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw LoadError("malformed checkpoint sidecar: " + std::string(e.what()));
    }
}

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const FlowModel<Scalar>& model) {
    TensorMap tensors;
    for (const auto& [name, v] : model.parameters().entries()) tensors.emplace(name, v.value().template cast<float>());
    save_tensors(path, tensors);
    nlohmann::json j = {{"format", "plgf-checkpoint"},
                        {"version", kVersion},
                        {"model", model.config()},
                        {"parameter_count", model.parameters().scalar_count()}};
    std::ofstream out(checkpoint_sidecar(path), std::ios::trunc);
    out << j.dump(2) << '\n';
    if (!out) throw LoadError("cannot write sidecar for " + path.string());
}

template <typename Scalar>
std::unique_ptr<FlowModel<Scalar>> load_checkpoint(const std::filesystem::path& path) {
    auto model = make_model<Scalar>(read_checkpoint_config(path), 0);
    model->parameters().load_state(load_tensors(path));
    return model;
}

template <typename Scalar>
void load_checkpoint_into(const std::filesystem::path& path, FlowModel<Scalar>& model) {
    if (read_checkpoint_config(path) != model.config())
        throw LoadError("checkpoint " + path.string() + " was saved with a different model config");
    model.parameters().load_state(load_tensors(path));
}

template void save_checkpoint<float>(const std::filesystem::path&, const FlowModel<float>&);
template void save_checkpoint<double>(const std::filesystem::path&, const FlowModel<double>&);
template std::unique_ptr<FlowModel<float>> load_checkpoint<float>(const std::filesystem::path&);
template std::unique_ptr<FlowModel<double>> load_checkpoint<double>(const std::filesystem::path&);
template void load_checkpoint_into<float>(const std::filesystem::path&, FlowModel<float>&);
template void load_checkpoint_into<double>(const std::filesystem::path&, FlowModel<double>&);

}  // namespace plgf
