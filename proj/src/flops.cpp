// SPDX-License-Identifier: Apache-2.0
#include "gde/flops.hpp"

namespace gde::flops {

namespace {
thread_local Counter* active = nullptr;
}

std::uint64_t Counter::total() const {
  std::uint64_t sum = 0;
  for (const auto& [_, n] : by_stage_) sum += n;
  return sum;
}

std::uint64_t Counter::stage(const std::string& name) const {
  auto it = by_stage_.find(name);
  return it == by_stage_.end() ? 0 : it->second;
}

ScopedCounter::ScopedCounter(Counter& counter) : previous_(active) { active = &counter; }
ScopedCounter::~ScopedCounter() { active = previous_; }

Stage::Stage(const char* name) {
  if (active != nullptr) {
    previous_ = active->current_stage();
    active->set_stage(name);
    active_ = true;
  }
}

Stage::~Stage() {
  if (active_ && active != nullptr) active->set_stage(std::move(previous_));
}

void record(std::uint64_t n) {
  if (active != nullptr) active->add(n);
}

}  // namespace gde::flops
