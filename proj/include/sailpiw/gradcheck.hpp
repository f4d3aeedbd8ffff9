#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sailpiw/model.hpp"

namespace sailpiw {

// Finite-difference checks of every loss path on a small random instance
// (20 users, 30 items, d=8, M=3, R=2 by default).
struct GradSuiteOptions {
  std::size_t users = 20;
  std::size_t items = 30;
  std::size_t d = 8;
  std::size_t clusters = 3;
  std::size_t layers = 2;
  std::size_t probes_per_block = 10;
  double step = 1e-5;
};

struct GradSuiteEntry {
  std::string path;  // bpr_l2, cluster_kl, graphsail_piw, sgct_piw, lwckd_piw, weight_generator, total
  std::uint64_t seed = 0;
  GradientCheckResult result;
};

std::vector<GradSuiteEntry> gradient_suite(const std::vector<std::uint64_t>& seeds, const GradSuiteOptions& opts = {});

}  // namespace sailpiw
