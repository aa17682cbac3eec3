// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gde/backbone.hpp"
#include "gde/config.hpp"
#include "gde/tensor.hpp"
#include "gde/text.hpp"
#include "gde/weights.hpp"

namespace gde {

inline constexpr std::size_t kLevelP3 = 0;
inline constexpr std::size_t kLevelP4 = 1;
inline constexpr std::size_t kLevelP5 = 2;

struct LevelRange {
  std::size_t level = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t height = 0;
  std::size_t width = 0;
};

/// Pyramid levels flattened into one token sequence, lower levels first and
/// row-major within a level. Positional information is kept apart from the
/// features: attention adds `pos_embed` to queries and keys only, so
/// flatten followed by unflatten is exact.
struct TokenizedPyramid {
  Tensor tokens;     // [N, d]
  Tensor pos_embed;  // [N, d], level embedding + 2-D sine encoding
  Tensor positions;  // [N, 2], normalized (x, y) cell centres
  std::vector<std::size_t> level_index;
  std::vector<LevelRange> level_ranges;

  std::size_t size() const noexcept { return level_index.size(); }
  /// tokens + pos_embed.
  Tensor embedded() const;
};

/// `levels` must be a non-empty strictly increasing subset of {0,1,2}.
TokenizedPyramid flatten_pyramid(const FeaturePyramid& p, std::span<const std::size_t> levels,
                                 const WeightStore& ws);

/// Writes `tokens` ([N, d], laid out as `layout`) back into the levels of `p`.
void unflatten_into(const TokenizedPyramid& layout, const Tensor& tokens, FeaturePyramid& p);

/// Multi-scale deformable attention without residual or norm. For each
/// query and head, samples `points` locations per level around its reference
/// point (offsets are in pixels of that level), weights them by a softmax
/// over levels x points, and output-projects the concatenated heads. The
/// parameters under `prefix` are `.value`, `.offset`, `.weight`, `.out`.
Tensor deformable_attention(const Tensor& query, const Tensor& reference,
                            const TokenizedPyramid& memory, const WeightStore& ws,
                            const std::string& prefix, std::size_t heads, std::size_t points);

/// LN(x + deformable_attention(x + pos, positions, x)) over every token of
/// `tp`; the norm lives at `norm_prefix`.
Tensor deformable_self_attention(const TokenizedPyramid& tp, const WeightStore& ws,
                                 const std::string& prefix, const std::string& norm_prefix,
                                 std::size_t heads, std::size_t points);

/// LN(x + MHA(x + pos, x + pos, x)).
Tensor vanilla_self_attention(const TokenizedPyramid& tp, const WeightStore& ws,
                              const std::string& prefix, const std::string& norm_prefix,
                              std::size_t heads);

/// Bidirectional pre-norm cross-attention: image tokens attend to text,
/// text tokens attend to image, both with residual connections.
std::pair<Tensor, Tensor> cross_modality_fusion(const Tensor& img_tokens, const Tensor& text,
                                                const WeightStore& ws, const std::string& prefix,
                                                std::size_t heads);

/// Top-down then bottom-up conv fusion of P3/P4 with an enhanced P5. Each
/// fusion block is target + conv3x3(gelu(conv1x1(concat(target, other)))).
FeaturePyramid cross_scale_fusion(const Tensor& p3, const Tensor& p4, const Tensor& p5_enhanced,
                                  const WeightStore& ws);

struct EnhancedFeatures {
  FeaturePyramid pyramid;
  TextFeatures text;
};

EnhancedFeatures original_enhancer_forward(const FeaturePyramid& p, const TextFeatures& text,
                                           const EnhancerConfig& cfg, const WeightStore& ws);

EnhancedFeatures efficient_enhancer_forward(const FeaturePyramid& p, const TextFeatures& text,
                                            const EnhancerConfig& cfg, const WeightStore& ws);

/// Dispatches on cfg.variant.
EnhancedFeatures enhance(const FeaturePyramid& p, const TextFeatures& text,
                         const EnhancerConfig& cfg, const WeightStore& ws);

}  // namespace gde
