// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace recalign {

using Rng = std::mt19937_64;

/// Independent stream for (seed, tags...). Used so that per-sample generation
/// does not depend on iteration order.
inline Rng make_stream(std::initializer_list<std::uint64_t> tags) {
  std::seed_seq seq(tags.begin(), tags.end());
  return Rng(seq);
}

inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace recalign
