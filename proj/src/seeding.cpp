#include "gjscc/seeding.hpp"

namespace gjscc::detail {

std::mutex& global_seed_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace gjscc::detail
