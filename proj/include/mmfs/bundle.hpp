#pragma once

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <string>

namespace mmfs {

inline constexpr int kBundleFormatVersion = 1;
inline constexpr const char* kManifestName = "manifest.json";
inline constexpr const char* kBlobName = "tensors.bin";

// Named-tensor container on disk:
//
//   <dir>/manifest.json   format_version, kind, config echo, tensor table
//   <dir>/tensors.bin     raw little-endian row-major f32 payloads
//
// Each tensor-table entry is {dtype, shape, file, byte_offset, byte_length,
// checksum(sha256 hex)}. Writing is canonical: identical contents always
// produce identical bytes.
struct TensorBundle {
    std::string kind;
    nlohmann::json config = nlohmann::json::object();
    std::map<std::string, torch::Tensor> tensors;
};

void write_bundle(const std::filesystem::path& dir, const TensorBundle& bundle);

// Verifies format version (MigrationError) and every checksum
// (CorruptionError naming the tensor) before returning.
TensorBundle read_bundle(const std::filesystem::path& dir);

void add_module(TensorBundle& bundle, const std::string& prefix, const torch::nn::Module& module);

// Missing or mis-shaped tensors raise FormatError naming the tensor.
void load_module(const TensorBundle& bundle, const std::string& prefix, torch::nn::Module& module);

} // namespace mmfs
