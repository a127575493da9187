#pragma once

#include <cstdint>

namespace evowarn {

// Per-step population snapshot: node counts by strategy and edge counts by
// endpoint-strategy pair. The five prediction channels.
struct FeatureFrame {
  std::uint32_t cooperators = 0;  // #C
  std::uint32_t defectors = 0;    // #D
  std::uint32_t cc_edges = 0;     // #CC
  std::uint32_t cd_edges = 0;     // #CD (either orientation)
  std::uint32_t dd_edges = 0;     // #DD

  friend bool operator==(const FeatureFrame&, const FeatureFrame&) = default;
};

}  // namespace evowarn
