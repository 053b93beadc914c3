#pragma once

#include <string>
#include <string_view>

#include "syntaxlm/model.hpp"

namespace syntaxlm {

// Layout (all integers little-endian):
//   "SXLMCKPT"            8-byte magic
//   u32 version           currently 1
//   u32 scalar_bytes      4 (float32) or 8 (float64, gradient-check mode)
//   ModelConfig           i32 layers, hidden, heads, ff, vocab_size, max_len, distance_classes;
//                         f64 alpha_init; u8 alpha_enabled, alpha_per_layer, syntax_layer_enabled,
//                         syntax_bias, activation, syntax_activation; f64 dropout, init_std, ln_eps
//   u32 tensor_count
//   per tensor, in registration order:
//     u32 name_len, name bytes, u8 kind, u32 rows, u32 cols, rows*cols scalars row-major
enum class CheckpointPrecision { f32, f64 };

inline constexpr std::string_view kCheckpointMagic = "SXLMCKPT";
inline constexpr unsigned kCheckpointVersion = 1;

std::string encode_checkpoint(const ModelParams& params, CheckpointPrecision precision = CheckpointPrecision::f32);
ModelParams decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::string& path, const ModelParams& params,
                     CheckpointPrecision precision = CheckpointPrecision::f32);
ModelParams load_checkpoint(const std::string& path);
// Throws DataError unless the stored architecture matches `expected`.
ModelParams load_checkpoint(const std::string& path, const ModelConfig& expected);

}  // namespace syntaxlm
