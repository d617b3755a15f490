#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "guild/nn/tensor.hpp"

namespace guild::nn {

/// Header carried by every checkpoint: provenance hashes, an optional role
/// name (set for trained role experts), and the architecture dimensions the
/// parameters were built with.
struct CheckpointMeta {
  uint64_t config_hash = 0;
  uint64_t spec_hash = 0;
  std::string role;
  std::vector<std::pair<std::string, uint32_t>> dims;

  uint32_t dim(const std::string& key) const;
};

void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const std::vector<const ParamTensor*>& params);

/// Reads only the header. Lets callers size the parameter structs before a
/// full load.
CheckpointMeta peek_checkpoint(const std::string& path);

/// Restores values and frozen flags into an existing parameter list. The
/// file must contain exactly the given names with matching shapes.
CheckpointMeta load_checkpoint(const std::string& path,
                               const std::vector<ParamTensor*>& params);

uint64_t hash_file(const std::string& path);

}  // namespace guild::nn
