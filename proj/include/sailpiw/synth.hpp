#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "sailpiw/data.hpp"

namespace sailpiw {

// Planted-preference interaction log: items split into equal clusters, each
// user prefers one cluster, and a fraction of users switches to another
// cluster after the base block.
struct SynthConfig {
  std::size_t users = 1000;
  std::size_t items = 200;
  std::size_t clusters = 4;
  std::size_t base_per_user = 18;
  std::size_t inc_per_user = 3;
  std::size_t inc_blocks = 4;
  double noise = 0.1;             // share of interactions outside the preferred cluster
  double dynamic_fraction = 0.5;
  // Block 1 repeats the base block verbatim and nobody switches.
  bool duplicate_base = false;
  std::uint64_t seed = 1;

  void validate() const;
  friend bool operator==(const SynthConfig&, const SynthConfig&) = default;
};

struct SynthDataset {
  TemporalDataset dataset;
  std::vector<std::size_t> item_cluster;   // by raw item id
  std::vector<std::size_t> pref_before;    // by raw user id
  std::vector<std::size_t> pref_after;
  std::vector<bool> dynamic;               // by raw user id
};

SynthDataset generate_synthetic(const SynthConfig& config);

}  // namespace sailpiw
