#pragma once

#include "triage/nn/network.hpp"

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

namespace triage::nn {

// Weights container (little-endian):
//   "CTRIAGEW"            8-byte magic
//   u32 format version    kWeightsFormatVersion
//   u64 header length
//   header                JSON: {"format_version", "payload_fnv1a", "models": [
//                           {"name", "spec": {...}, "tensors": [{"key", "shape", "offset"}]}]}
//   payload               float64 parameter values, tensors back to back
// A file can hold several named models (e.g. "lungs" and "lesions").
inline constexpr std::uint32_t kWeightsFormatVersion = 1;

nlohmann::json spec_to_json(const NetworkSpec& spec);
// Missing keys keep default_spec(kind) values. Throws InvalidSpec.
NetworkSpec spec_from_json(const nlohmann::json& j);

template <typename T>
struct NamedModel {
    std::string name;
    Network<T>* model = nullptr;
};

template <typename T>
void save_weights(const std::vector<NamedModel<T>>& models, const std::filesystem::path& path);
template <typename T>
void save_weights(Network<T>& model, const std::filesystem::path& path, const std::string& name = "model");

// Loads the named model's parameters into an already-built network. Throws
// VersionMismatch (bad magic/version), KeyMismatch (spec or parameter keys
// differ), UnreadableFile (truncated or checksum failure).
template <typename T>
void load_weights(Network<T>& model, const std::filesystem::path& path, const std::string& name = "model");

std::vector<std::string> model_names(const std::filesystem::path& path);
NetworkSpec read_spec(const std::filesystem::path& path, const std::string& name = "model");

// Builds the network from the stored spec and loads its parameters.
template <typename T>
std::unique_ptr<Network<T>> load_network(const std::filesystem::path& path, const std::string& name = "model");

} // namespace triage::nn
