// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "gde/config.hpp"
#include "gde/tensor.hpp"
#include "gde/weights.hpp"

namespace gde {

/// Decoded 8-bit RGB, interleaved, row-major.
struct RawImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;
};

/// Normalized square canvas. The resized content occupies the top-left
/// `content_height` x `content_width` region; the rest is zero.
struct Image {
  Tensor pixels;  // [3, S, S]
  double scale = 1.0;  // canvas pixels per source pixel
  std::size_t content_width = 0;
  std::size_t content_height = 0;
  std::size_t source_width = 0;
  std::size_t source_height = 0;

  std::size_t size() const { return pixels.dim(1); }
};

inline constexpr std::array<float, 3> kPixelMean{0.485f, 0.456f, 0.406f};
inline constexpr std::array<float, 3> kPixelStd{0.229f, 0.224f, 0.225f};
inline constexpr std::array<std::size_t, 3> kPyramidStrides{8, 16, 32};

/// (x - mean) / std per channel on a [3, H, W] tensor of values in [0, 1].
Tensor normalize_pixels(const Tensor& unit_rgb);

/// Bilinear resize of the longer side to `target`, per-channel
/// normalization, zero padding to target x target.
Image preprocess_image(const RawImage& raw, std::size_t target);

struct FeaturePyramid {
  Tensor p3;  // [d, H/8,  W/8]
  Tensor p4;  // [d, H/16, W/16]
  Tensor p5;  // [d, H/32, W/32]

  const Tensor& level(std::size_t i) const;
  Tensor& level(std::size_t i);
  friend bool operator==(const FeaturePyramid&, const FeaturePyramid&) = default;
};

/// GELU conv stem (4x4 patchify, stride 4) then three stride-2 3x3 stages;
/// each stage output is projected to d_model by a 1x1 lateral conv.
FeaturePyramid extract_pyramid(const Image& img, const WeightStore& ws, const ModelConfig& cfg);
FeaturePyramid extract_pyramid(const Tensor& pixels, const WeightStore& ws, const ModelConfig& cfg);

}  // namespace gde
