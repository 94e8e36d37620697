#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "samlp/models.hpp"
#include "samlp/run_config.hpp"
#include "samlp/tensor.hpp"

namespace samlp {

// Binary layout, all integers little-endian:
//   "SACK" u16 version
//   u32 config length, config INI text
//   u32 epoch
//   u32 tensor count, then per tensor:
//     u16 name length, name, u8 dtype (0 = f32), u8 rank, u32 dims...,
//     f32 payload, u32 CRC32 of the payload bytes
//   u32 CRC32 of everything above
struct Checkpoint {
  RunConfig config;
  std::uint32_t epoch = 0;
  std::map<std::string, Tensor> tensors;
};

/// The output directory is left out of the stored config, so the same run
/// written to two places yields identical bytes.
Checkpoint capture_checkpoint(Model& model, const RunConfig& config, std::uint32_t epoch);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies every parameter and buffer into the model. Raises ConfigError when
/// a name is missing or a shape differs (architecture mismatch).
void restore_model(Model& model, const Checkpoint& ckpt);

/// Builds the architecture recorded in the checkpoint and restores it.
Model model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace samlp
