#pragma once

#include <cstdint>
#include <mutex>

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>

namespace gjscc {

namespace detail {
std::mutex& global_seed_mutex();
}

/// Runs `make` with the default CPU generator seeded to `seed`, then restores
/// the previous generator state. Module constructors draw their initial
/// weights from the default generator, so this makes construction reproducible.
template <typename Fn>
auto with_seed(std::uint64_t seed, Fn&& make) {
  std::lock_guard lock(detail::global_seed_mutex());
  at::Generator gen = at::detail::getDefaultCPUGenerator();
  auto saved = gen.get_state();
  torch::manual_seed(seed);
  auto result = make();
  gen.set_state(saved);
  return result;
}

}  // namespace gjscc
