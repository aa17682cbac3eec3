// SPDX-License-Identifier: Apache-2.0
#include "gde/layers.hpp"

#include <cmath>
#include <numbers>

namespace gde {

std::vector<float> sine_encoding(std::span<const float> coords, std::size_t width) {
  if (width == 0 || width % 2 != 0) {
    throw ValidationError("sine_encoding: width must be a positive even number");
  }
  std::vector<float> out(coords.size() * width);
  for (std::size_t c = 0; c < coords.size(); ++c) {
    const double v = static_cast<double>(coords[c]) * 2.0 * std::numbers::pi;
    for (std::size_t k = 0; k < width / 2; ++k) {
      const double freq = std::pow(10000.0, 2.0 * static_cast<double>(k) / static_cast<double>(width));
      out[c * width + 2 * k] = static_cast<float>(std::sin(v / freq));
      out[c * width + 2 * k + 1] = static_cast<float>(std::cos(v / freq));
    }
  }
  return out;
}

}  // namespace gde
