#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "sara/trainer.hpp"

// Directory bundle: manifest.json (format_version, metadata, tensor table
// name -> {dtype, shape, offset, nbytes, crc32}) plus one little-endian
// weights.bin blob.
namespace sara {

inline constexpr int kCheckpointFormatVersion = 1;

template <Scalar T>
struct NamedTensor {
    std::string name;
    Tensor<T> value;
};

// Writes to <dir>.tmp and renames over dir.
template <Scalar T>
void write_bundle(const std::filesystem::path& dir, const std::vector<std::pair<std::string, const Tensor<T>*>>& tensors,
                  const nlohmann::ordered_json& meta);

struct Bundle {
    nlohmann::json manifest;
    DType dtype = DType::f32;
};

// Reads the manifest and validates version and dtype consistency.
Bundle read_manifest(const std::filesystem::path& dir);

// Loads every tensor, verifying blob length, shape/byte agreement and
// checksums. Errors name the offending tensor.
template <Scalar T>
std::vector<NamedTensor<T>> read_bundle(const std::filesystem::path& dir, Bundle* manifest_out = nullptr);

template <Scalar T>
void save_checkpoint(TrainState<T>& state, const std::filesystem::path& dir);

template <Scalar T>
std::unique_ptr<TrainState<T>> load_checkpoint(const std::filesystem::path& dir);

// Config stored in a checkpoint manifest, as flat "section.key" -> value.
std::map<std::string, std::string> checkpoint_config(const std::filesystem::path& dir);

// crc32 of weights.bin and manifest.json, hex; identifies a checkpoint.
std::string checkpoint_hash(const std::filesystem::path& dir);

}  // namespace sara
