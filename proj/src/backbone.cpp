// SPDX-License-Identifier: Apache-2.0
#include "gde/backbone.hpp"

#include <algorithm>
#include <cmath>

#include "gde/flops.hpp"
#include "gde/ops.hpp"

namespace gde {

Tensor normalize_pixels(const Tensor& unit_rgb) {
  if (unit_rgb.rank() != 3 || unit_rgb.dim(0) != 3) {
    throw DimensionError("normalize_pixels: expected [3,H,W], got " + shape_string(unit_rgb.shape()));
  }
  Tensor out = unit_rgb;
  const std::size_t plane = unit_rgb.dim(1) * unit_rgb.dim(2);
  auto data = out.data();
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < plane; ++i)
      data[c * plane + i] = (data[c * plane + i] - kPixelMean[c]) / kPixelStd[c];
  return out;
}

Image preprocess_image(const RawImage& raw, std::size_t target) {
  if (target == 0 || target % 32 != 0) {
    throw ValidationError("preprocess: target size " + std::to_string(target) +
                          " is not a positive multiple of 32");
  }
  if (raw.width == 0 || raw.height == 0) throw ValidationError("preprocess: empty image");
  if (raw.rgb.size() != raw.width * raw.height * 3) {
    throw ValidationError("preprocess: pixel buffer does not match " + std::to_string(raw.width) +
                          "x" + std::to_string(raw.height) + " RGB");
  }

  Image img;
  img.source_width = raw.width;
  img.source_height = raw.height;
  img.scale = static_cast<double>(target) / static_cast<double>(std::max(raw.width, raw.height));
  img.content_width = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(raw.width * img.scale)), 1, target);
  img.content_height = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(raw.height * img.scale)), 1, target);
  img.pixels = Tensor({3, target, target});

  const std::size_t cw = img.content_width, ch = img.content_height;
  const bool identity = cw == raw.width && ch == raw.height;
  const double sx = static_cast<double>(raw.width) / static_cast<double>(cw);
  const double sy = static_cast<double>(raw.height) / static_cast<double>(ch);
  auto px = [&](std::size_t x, std::size_t y, std::size_t c) {
    return static_cast<double>(raw.rgb[(y * raw.width + x) * 3 + c]);
  };

  for (std::size_t y = 0; y < ch; ++y) {
    // Half-pixel centres, clamped at the border.
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0,
                                 static_cast<double>(raw.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, raw.height - 1);
    const double ly = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < cw; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0,
                                   static_cast<double>(raw.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, raw.width - 1);
      const double lx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        double v;
        if (identity) {
          v = px(x, y, c);
        } else {
          v = (1 - ly) * ((1 - lx) * px(x0, y0, c) + lx * px(x1, y0, c)) +
              ly * ((1 - lx) * px(x0, y1, c) + lx * px(x1, y1, c));
        }
        const float unit = static_cast<float>(v / 255.0);
        img.pixels(c, y, x) = (unit - kPixelMean[c]) / kPixelStd[c];
      }
    }
  }
  return img;
}

const Tensor& FeaturePyramid::level(std::size_t i) const {
  switch (i) {
    case 0: return p3;
    case 1: return p4;
    case 2: return p5;
  }
  throw ValidationError("pyramid: level index " + std::to_string(i) + " out of range");
}

Tensor& FeaturePyramid::level(std::size_t i) {
  return const_cast<Tensor&>(std::as_const(*this).level(i));
}

FeaturePyramid extract_pyramid(const Image& img, const WeightStore& ws, const ModelConfig& cfg) {
  return extract_pyramid(img.pixels, ws, cfg);
}

FeaturePyramid extract_pyramid(const Tensor& pixels, const WeightStore& ws, const ModelConfig& cfg) {
  if (pixels.rank() != 3 || pixels.dim(0) != 3) {
    throw DimensionError("backbone: expected [3,H,W] image, got " + shape_string(pixels.shape()));
  }
  if (pixels.dim(1) % 32 != 0 || pixels.dim(2) % 32 != 0 || pixels.dim(1) == 0 ||
      pixels.dim(2) == 0) {
    throw ValidationError("backbone: image " + shape_string(pixels.shape()) +
                          " spatial size not divisible by 32");
  }
  flops::Stage stage("backbone");
  auto conv = [&](const Tensor& x, const std::string& name, std::size_t stride, std::size_t pad) {
    return conv2d(x, ws.get(name + ".weight"), ws.get(name + ".bias"), stride, pad);
  };

  Tensor x = gelu(conv(pixels, "backbone.stem", 4, 0));
  FeaturePyramid out;
  for (std::size_t s = 1; s <= 3; ++s) {
    x = gelu(conv(x, "backbone.stage" + std::to_string(s), 2, 1));
    out.level(s - 1) = conv(x, "backbone.lateral" + std::to_string(s + 2), 1, 0);
  }
  if (out.p3.dim(0) != cfg.d_model) {
    throw DimensionError("backbone: lateral width " + std::to_string(out.p3.dim(0)) +
                         " does not match d_model " + std::to_string(cfg.d_model));
  }
  return out;
}

}  // namespace gde
