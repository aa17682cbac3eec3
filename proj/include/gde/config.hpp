// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace gde {

enum class EnhancerVariant { original, efficient };
enum class FusionMode { early, none };

std::string_view to_string(EnhancerVariant v);
std::string_view to_string(FusionMode m);
EnhancerVariant parse_variant(std::string_view s);
FusionMode parse_fusion_mode(std::string_view s);

struct EnhancerConfig {
  EnhancerVariant variant = EnhancerVariant::efficient;
  FusionMode fusion_mode = FusionMode::early;
  std::size_t layers = 3;
  std::size_t heads = 4;
  std::size_t deformable_points = 4;
  std::size_t ffn_dim = 256;
  // Hidden width of each cross-scale fusion block (concat -> 1x1 -> 3x3).
  std::size_t fusion_hidden = 16;
};

struct TextConfig {
  std::size_t vocab = 4096;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t max_phrase_len = 16;
  std::size_t ffn_dim = 128;
};

struct HeadConfig {
  std::size_t num_queries = 100;
  std::size_t decoder_layers = 3;
  std::size_t heads = 4;
  std::size_t decoder_points = 4;
  std::size_t ffn_dim = 256;
  float threshold = 0.3f;
  std::size_t max_detections = 100;
};

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t image_size = 640;
  // Stem (patchify, stride 4) then three stride-2 stages feeding P3/P4/P5.
  std::array<std::size_t, 4> backbone_channels{16, 32, 48, 64};
  TextConfig text;
  EnhancerConfig enhancer;
  HeadConfig head;

  /// Throws ConfigError on inconsistent values.
  void validate() const;
};

ModelConfig config_from_json(std::string_view text);
std::string config_to_json(const ModelConfig& cfg);

/// Hex FNV-1a digest of the architecture-defining fields. Runtime-only
/// settings (variant, fusion mode, threshold, max detections, input size)
/// do not participate, so one weight file serves every runtime mode.
std::string config_digest(const ModelConfig& cfg);

}  // namespace gde
