#pragma once

// Binary checkpoint container, little-endian:
//
//   "TPCK" u32 version=1
//   u32 K, u32 D, u32 L, u32 A, f64 tau, f64 lambda,
//   u8 norm, u8 activation, u8 prototype_module
//   u32 tensor_count, then per tensor: u32 name_len, name, u32 rows, u32 cols, rows*cols f64

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tpmil/model.hpp"

namespace tpmil {

inline constexpr char kCheckpointMagic[4] = {'T', 'P', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<unsigned char> encode_checkpoint(const Model& model);
Model decode_checkpoint(const std::vector<unsigned char>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Model& model);
Model load_checkpoint(const std::filesystem::path& path);

/// FNV-1a 64 of the encoded checkpoint, as 16 lowercase hex digits.
std::string checkpoint_hash(const Model& model);

}  // namespace tpmil
