// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gde/config.hpp"
#include "gde/tensor.hpp"

namespace gde {

/// Named f32 parameters plus provenance metadata. Names are kept sorted,
/// which is also the payload order of the on-disk format.
class WeightStore {
 public:
  std::uint64_t seed = 0;
  std::string config_digest;

  const Tensor& get(const std::string& name) const;
  Tensor& get_mutable(const std::string& name);
  void set(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

  const std::map<std::string, Tensor>& tensors() const noexcept { return tensors_; }
  std::size_t parameter_count() const;

  /// Zeroes every tensor whose name starts with `prefix`.
  void zero_prefix(const std::string& prefix);

  friend bool operator==(const WeightStore&, const WeightStore&) = default;

 private:
  std::map<std::string, Tensor> tensors_;
};

enum class ParamKind { weight, bias, gain };

struct ParamSpec {
  std::string name;
  Shape shape;
  ParamKind kind;
};

/// Every parameter the model needs for both enhancer variants, so one store
/// serves either runtime mode.
std::vector<ParamSpec> parameter_specs(const ModelConfig& cfg);

/// sqrt(6 / (fan_in + fan_out)). [in, out] matrices use the two dims;
/// conv kernels [c_out, c_in, kh, kw] fold the receptive field into both.
double xavier_bound(const Shape& shape);

/// Weights are Xavier-uniform from a counter-based stream keyed by
/// (seed, parameter name); biases are zero, norm gains one.
WeightStore init_weights(const ModelConfig& cfg, std::uint64_t seed);

inline constexpr std::uint32_t kWeightFormatVersion = 1;

std::vector<std::uint8_t> serialize_weights(const WeightStore& ws);
WeightStore deserialize_weights(std::span<const std::uint8_t> bytes);

void save_weights(const WeightStore& ws, const std::filesystem::path& path);
WeightStore load_weights(const std::filesystem::path& path);

}  // namespace gde
