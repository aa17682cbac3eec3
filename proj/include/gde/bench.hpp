// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gde/backbone.hpp"
#include "gde/config.hpp"
#include "gde/text.hpp"
#include "gde/weights.hpp"

namespace gde {

struct TokenCount {
  std::vector<std::size_t> per_level;
  std::size_t total = 0;
  double p5_ratio = 0;  // total / last-level count
};

/// Token count (size / s)^2 per stride. Each stride must divide the size.
TokenCount count_tokens(std::size_t input_size, std::span<const std::size_t> strides);

inline constexpr const char* kEnhancerStages[] = {"enhancer-self-attn", "enhancer-fusion",
                                                  "cross-scale-fusion"};

struct FlopReport {
  EnhancerVariant variant = EnhancerVariant::efficient;
  std::size_t input_size = 0;
  std::map<std::string, std::uint64_t> stages;
  std::uint64_t total = 0;

  std::uint64_t stage(const std::string& name) const;
  /// Sum of the feature-enhancer stages (self-attention, fusion, cross-scale).
  std::uint64_t enhancer() const;
};

/// Seeded random RGB image, square, `size` pixels per side.
RawImage random_image(std::size_t size, std::uint64_t seed);

/// The fixed five-phrase prompt used by the cost and latency harnesses.
Prompt benchmark_prompt();

/// Runs one full predict under a FLOP counter and reports every stage.
FlopReport count_flops(const ModelConfig& cfg, const WeightStore& ws, std::uint64_t seed);

struct BenchReport {
  EnhancerVariant variant = EnhancerVariant::efficient;
  std::size_t input_size = 0;
  std::size_t warmup = 0;
  std::size_t runs = 0;
  std::vector<double> samples_ms;
  double median_ms = 0;
  double p10_ms = 0;
  double p90_ms = 0;
  double fps = 0;
};

/// Linear-interpolated percentile, q in [0, 100].
double percentile(std::vector<double> values, double q);

/// Times `runs` full predicts after `warmup` untimed ones. Weight loading
/// and image decoding are outside the timed region.
BenchReport run_latency_bench(const ModelConfig& cfg, const WeightStore& ws, std::size_t warmup,
                              std::size_t runs, std::uint64_t seed);

std::string bench_csv_header();
std::string bench_csv_row(const BenchReport& r);

}  // namespace gde
