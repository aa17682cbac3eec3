// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace gde::flops {

/// Per-stage FLOP tally. Kernels report into whichever counter is installed
/// on the calling thread; with none installed, reporting is a no-op.
class Counter {
 public:
  void add(std::uint64_t n) { by_stage_[stage_] += n; }

  const std::map<std::string, std::uint64_t>& by_stage() const noexcept { return by_stage_; }
  std::uint64_t total() const;
  std::uint64_t stage(const std::string& name) const;

  const std::string& current_stage() const noexcept { return stage_; }
  void set_stage(std::string name) { stage_ = std::move(name); }

 private:
  std::map<std::string, std::uint64_t> by_stage_;
  std::string stage_ = "unattributed";
};

/// Installs `counter` for the current thread for the lifetime of the scope.
class ScopedCounter {
 public:
  explicit ScopedCounter(Counter& counter);
  ~ScopedCounter();
  ScopedCounter(const ScopedCounter&) = delete;
  ScopedCounter& operator=(const ScopedCounter&) = delete;

 private:
  Counter* previous_;
};

/// Attributes everything reported inside the scope to `name`.
class Stage {
 public:
  explicit Stage(const char* name);
  ~Stage();
  Stage(const Stage&) = delete;
  Stage& operator=(const Stage&) = delete;

 private:
  std::string previous_;
  bool active_ = false;
};

void record(std::uint64_t n);

// Closed forms shared by the kernels and by tests.
constexpr std::uint64_t matmul(std::uint64_t m, std::uint64_t k, std::uint64_t n) {
  return 2 * m * k * n;
}
constexpr std::uint64_t conv(std::uint64_t c_out, std::uint64_t c_in, std::uint64_t kh,
                             std::uint64_t kw, std::uint64_t h_out, std::uint64_t w_out) {
  return 2 * c_out * c_in * kh * kw * h_out * w_out;
}
/// Scores plus weighted sum over the full (unsplit) model width.
constexpr std::uint64_t attention(std::uint64_t nq, std::uint64_t nk, std::uint64_t d) {
  return 4 * nq * nk * d;
}
constexpr std::uint64_t bilinear(std::uint64_t samples, std::uint64_t channels) {
  return 11 * samples * channels;
}

}  // namespace gde::flops
