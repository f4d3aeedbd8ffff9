#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "sailpiw/model.hpp"
#include "sailpiw/trainer.hpp"

namespace sailpiw {

// Container: 8-byte magic "SAILPIW1", uint64 little-endian manifest length,
// JSON manifest, then little-endian float64 arrays in manifest order.

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_model(const std::filesystem::path& path, const ModelState& state, std::size_t block, std::uint64_t seed);
ModelState load_model(const std::filesystem::path& path);

void save_progress(const std::filesystem::path& path, const RunProgress& progress);
RunProgress load_progress(const std::filesystem::path& path);

}  // namespace sailpiw
