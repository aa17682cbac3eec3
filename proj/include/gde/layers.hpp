// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "gde/ops.hpp"
#include "gde/weights.hpp"

namespace gde {

// Views onto named parameters in a WeightStore. The store must outlive them.

inline LinearRef<float> linear_ref(const WeightStore& ws, const std::string& prefix) {
  return {ws.get(prefix + ".weight"), ws.get(prefix + ".bias")};
}

inline NormRef<float> norm_ref(const WeightStore& ws, const std::string& prefix) {
  return {ws.get(prefix + ".gamma"), ws.get(prefix + ".beta")};
}

inline AttentionRef<float> attention_ref(const WeightStore& ws, const std::string& prefix,
                                         std::size_t heads) {
  return {linear_ref(ws, prefix + ".q"), linear_ref(ws, prefix + ".k"),
          linear_ref(ws, prefix + ".v"), linear_ref(ws, prefix + ".out"), heads};
}

/// fc2(gelu(fc1(x))).
inline Tensor feed_forward(const Tensor& x, const WeightStore& ws, const std::string& prefix) {
  return linear(gelu(linear(x, linear_ref(ws, prefix + ".fc1"))), linear_ref(ws, prefix + ".fc2"));
}

/// DETR-style sine encoding of normalized coordinates: each coordinate gets
/// `width` channels, sin on even and cos on odd indices, scaled by 2*pi.
std::vector<float> sine_encoding(std::span<const float> coords, std::size_t width);

}  // namespace gde
