// SPDX-License-Identifier: Apache-2.0
#include "gde/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>

#include "gde/errors.hpp"
#include "gde/flops.hpp"
#include "gde/head.hpp"

namespace gde {

TokenCount count_tokens(std::size_t input_size, std::span<const std::size_t> strides) {
  if (strides.empty()) throw ValidationError("count_tokens: no strides given");
  TokenCount tc;
  for (std::size_t s : strides) {
    if (s == 0 || input_size % s != 0) {
      throw ValidationError("count_tokens: input size " + std::to_string(input_size) +
                            " is not divisible by stride " + std::to_string(s));
    }
    const std::size_t side = input_size / s;
    tc.per_level.push_back(side * side);
    tc.total += side * side;
  }
  if (tc.per_level.back() == 0) throw ValidationError("count_tokens: input size must be positive");
  tc.p5_ratio = static_cast<double>(tc.total) / static_cast<double>(tc.per_level.back());
  return tc;
}

std::uint64_t FlopReport::stage(const std::string& name) const {
  auto it = stages.find(name);
  return it == stages.end() ? 0 : it->second;
}

std::uint64_t FlopReport::enhancer() const {
  std::uint64_t sum = 0;
  for (const char* s : kEnhancerStages) sum += stage(s);
  return sum;
}

RawImage random_image(std::size_t size, std::uint64_t seed) {
  RawImage img;
  img.width = img.height = size;
  img.rgb.resize(size * size * 3);
  std::mt19937_64 rng(seed);
  for (auto& b : img.rgb) b = static_cast<std::uint8_t>(rng() >> 56);
  return img;
}

Prompt benchmark_prompt() {
  const std::vector<std::string> phrases{"person", "car", "dog", "chair", "bottle"};
  return assemble_prompt(phrases);
}

FlopReport count_flops(const ModelConfig& cfg, const WeightStore& ws, std::uint64_t seed) {
  const RawImage img = random_image(cfg.image_size, seed);
  const Prompt prompt = benchmark_prompt();
  flops::Counter counter;
  {
    flops::ScopedCounter scope(counter);
    predict(img, prompt, ws, cfg);
  }
  FlopReport r;
  r.variant = cfg.enhancer.variant;
  r.input_size = cfg.image_size;
  r.stages = counter.by_stage();
  r.total = counter.total();
  return r;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ValidationError("percentile: no values");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + (values[hi] - values[lo]) * frac;
}

BenchReport run_latency_bench(const ModelConfig& cfg, const WeightStore& ws, std::size_t warmup,
                              std::size_t runs, std::uint64_t seed) {
  if (runs < 10) throw ValidationError("bench: runs must be >= 10");
  if (warmup < 3) throw ValidationError("bench: warmup must be >= 3");
  const RawImage img = random_image(cfg.image_size, seed);
  const Prompt prompt = benchmark_prompt();

  for (std::size_t i = 0; i < warmup; ++i) predict(img, prompt, ws, cfg);

  BenchReport r;
  r.variant = cfg.enhancer.variant;
  r.input_size = cfg.image_size;
  r.warmup = warmup;
  r.runs = runs;
  for (std::size_t i = 0; i < runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    predict(img, prompt, ws, cfg);
    const auto t1 = std::chrono::steady_clock::now();
    r.samples_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  r.median_ms = percentile(r.samples_ms, 50);
  r.p10_ms = percentile(r.samples_ms, 10);
  r.p90_ms = percentile(r.samples_ms, 90);
  r.fps = 1000.0 / r.median_ms;
  return r;
}

std::string bench_csv_header() { return "variant,input_size,runs,median_ms,p10_ms,p90_ms,fps"; }

std::string bench_csv_row(const BenchReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%.3f,%.3f,%.3f,%.3f",
                std::string(to_string(r.variant)).c_str(), r.input_size, r.runs, r.median_ms,
                r.p10_ms, r.p90_ms, r.fps);
  return buf;
}

}  // namespace gde
