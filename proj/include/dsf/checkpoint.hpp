#pragma once

#include "dsf/nn.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace dsf {

/// Binary parameter file ("DSFCKPT1", JSON metadata, named float tensors,
/// little-endian) with a sidecar "<file>.manifest" text listing
/// "name CxHxW" per parameter.
struct Checkpoint {
  nlohmann::json meta;
  std::vector<nn::ParameterRegistry::Entry> tensors;

  static Checkpoint capture(const nn::ParameterRegistry& registry, nlohmann::json meta);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
  /// Reads only the metadata block.
  static nlohmann::json read_meta(const std::filesystem::path& path);
};

std::filesystem::path manifest_path(const std::filesystem::path& checkpoint);

/// Textual diff between what a registry expects and what a checkpoint
/// holds: missing names, unexpected names, shape mismatches.
std::string manifest_diff(const nn::ParameterRegistry& registry, const Checkpoint& checkpoint,
                          bool allow_missing = false);

/// Copies checkpoint tensors into the registry. Every checkpoint tensor must
/// exist in the registry with the same shape; with `allow_missing` the
/// registry may hold extra parameters the checkpoint lacks.
void restore(nn::ParameterRegistry& registry, const Checkpoint& checkpoint, bool allow_missing = false);

}  // namespace dsf
