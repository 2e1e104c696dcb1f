#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <nlohmann/json.hpp>

namespace capaint {

/// Single-file model checkpoint:
///
///   bytes 0..7   magic "CAPCKPT\x01"
///   bytes 8..15  u64 little-endian header length L
///   next L bytes JSON header {"kind", "config", "meta", "tensors": [...]}
///   payload      raw little-endian float32 tensors, in header order
///
/// Each tensor entry records name, shape, byte offset into the payload and
/// element count.
struct CheckpointHeader {
  std::string kind;
  nlohmann::json config;
  nlohmann::json meta;
};

void save_checkpoint(const std::filesystem::path& path, const torch::nn::Module& module,
                     const CheckpointHeader& header);

/// Reads only the JSON header; used to rebuild the module before loading.
CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

/// Copies stored tensors into `module`. Names and shapes must match exactly.
CheckpointHeader load_checkpoint(const std::filesystem::path& path, torch::nn::Module& module);

}  // namespace capaint
