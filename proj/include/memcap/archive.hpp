#pragma once

// safetensors-compatible archive: u64 little-endian header length, JSON header
// {name: {"dtype": "F32", "shape": [...], "data_offsets": [begin, end]}} with an
// optional "__metadata__" string map, then contiguous little-endian data.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "memcap/model.hpp"
#include "memcap/tensor.hpp"

namespace memcap {

struct Archive {
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::map<std::string, std::string> metadata;

  const Tensor& get(const std::string& name) const;
};

std::vector<std::uint8_t> serialize_archive(const Archive& archive);
Archive parse_archive(const std::vector<std::uint8_t>& bytes);

void write_archive(const std::string& path, const Archive& archive);
Archive read_archive(const std::string& path);

/// Stores the model config (and `extra` metadata) under "__metadata__".
void save_weights(const ModelWeights& weights, const std::string& path,
                  const std::map<std::string, std::string>& extra = {});
/// Reads the config from the archive metadata and validates every tensor
/// against it. The returned weights are frozen.
ModelWeights load_weights(const std::string& path);
/// Validates against `config` instead of the embedded one.
ModelWeights load_weights(const std::string& path, const ModelConfig& config);
ModelWeights weights_from_archive(const Archive& archive, const ModelConfig& config);

}  // namespace memcap
