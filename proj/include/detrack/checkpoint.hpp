// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container. Layout (little-endian):
//
//   "DTRACKCK"                 8-byte magic
//   u32 version                readers accept newer versions and skip
//                              sections they do not know
//   u32 section_count
//   section_count x { u32 name_len, name, u64 size, size bytes }
//
// Sections written today:
//   meta       key=value lines (stage, epoch, step, ...)
//   config     the run's configuration echo
//   params     u32 count, then per tensor: u32 name_len, name, u32 ndim,
//              i64 dims[ndim], float32 data
//   optimizer  AdamW step and moments per parameter, in parameter order
//   rng        textual state of the training random engine

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace detrack {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  torch::Tensor value;  // float32, contiguous, CPU
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::map<std::string, std::string> meta;
  std::string config;
  std::vector<NamedTensor> params;
  std::string optimizer;
  std::string rng;

  std::int64_t meta_int(const std::string& key, std::int64_t fallback) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
/// Throws std::runtime_error on missing, truncated or malformed files.
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string serialize_checkpoint(const Checkpoint& ck);
Checkpoint deserialize_checkpoint(const std::string& bytes);

/// All named parameters and buffers of `module`, copied to float32.
std::vector<NamedTensor> capture_params(const torch::nn::Module& module);
/// Copy `params` into `module` by name. Every parameter must be present with
/// a matching shape.
void restore_params(torch::nn::Module& module, const std::vector<NamedTensor>& params);

/// FNV-1a over each tensor's raw bytes, in order.
std::uint64_t parameter_hash(const std::vector<torch::Tensor>& tensors);

}  // namespace detrack
