#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "alora/supernet.hpp"

namespace alora {

// Container layout: the magic line "ALORA1\n", one line of JSON mapping
// tensor name -> {shape, dtype, offset}, a newline, then the raw
// little-endian float64 blobs. Offsets are relative to the blob section.

void save_tensor_map(const std::filesystem::path& path,
                     const std::map<std::string, Tensor>& tensors);
std::map<std::string, Tensor> load_tensor_map(const std::filesystem::path& path);

// Full network state. Adapter tensors are stored as
// "adapter.{layer}.{kind}.{A|B|gates}"; the model dimensions ride along
// as the "meta.config" vector so a checkpoint is self-describing.
std::map<std::string, Tensor> network_tensor_map(const SuperNetwork& net);

void save_checkpoint(const std::filesystem::path& path, const SuperNetwork& net);
SuperNetwork load_checkpoint(const std::filesystem::path& path);

// Rebuilds a network from a tensor map that may or may not contain
// adapter tensors (merged checkpoints do not).
SuperNetwork network_from_tensor_map(const std::map<std::string, Tensor>& tensors);

}  // namespace alora
