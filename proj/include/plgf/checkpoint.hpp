#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>

#include "plgf/plgf_model.hpp"

namespace plgf {

/// Binary tensor archive, all integers and floats little-endian:
///
///   "PLGFTNSR" | u32 version (1) | u32 tensor count
///   per tensor: u32 name length | name bytes | u32 rank | u64 dims[rank] |
///               f32 data[prod(dims)]
///
/// Tensors are written in name order.
using TensorMap = std::map<std::string, Tensor<float>>;

void save_tensors(const std::filesystem::path& path, const TensorMap& tensors);
TensorMap load_tensors(const std::filesystem::path& path);

/// Sidecar path carrying the ModelConfig: "<checkpoint>.json".
std::filesystem::path checkpoint_sidecar(const std::filesystem::path& checkpoint);

/// Writes the parameters (as f32) and the JSON sidecar.
template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const FlowModel<Scalar>& model);

/// Reads the sidecar, rebuilds the model and loads its parameters.
template <typename Scalar>
std::unique_ptr<FlowModel<Scalar>> load_checkpoint(const std::filesystem::path& path);

/// Loads parameters into an existing model; the sidecar config must match.
template <typename Scalar>
void load_checkpoint_into(const std::filesystem::path& path, FlowModel<Scalar>& model);

ModelConfig read_checkpoint_config(const std::filesystem::path& path);

}  // namespace plgf
