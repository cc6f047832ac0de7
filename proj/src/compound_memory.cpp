// SPDX-License-Identifier: Apache-2.0

#include "detrack/compound_memory.hpp"

namespace detrack {

UpdateMode parse_update_mode(const std::string& s) {
  if (s == "gated") return UpdateMode::kGated;
  if (s == "direct") return UpdateMode::kDirect;
  throw std::invalid_argument("unknown update mode '" + s + "' (expected gated|direct)");
}

std::string to_string(UpdateMode m) { return m == UpdateMode::kGated ? "gated" : "direct"; }

std::int64_t update_interval(std::int64_t t) {
  if (t < 1) throw std::invalid_argument("update_interval: frame index must be >= 1");
  if (t > 500) return 160;
  const std::int64_t band = (t - 1) / 100;  // 0 for (0,100], 4 for (400,500]
  return std::int64_t{5} << band;
}

}  // namespace detrack
