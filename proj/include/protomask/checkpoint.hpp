#pragma once

#include <cstdint>
#include <string>

#include "protomask/model.hpp"

namespace protomask::checkpoint {

inline constexpr uint32_t kFormatVersion = 1;

struct CheckpointData {
  model::PrototypeModel model;
  uint64_t seed = 0;
  std::string config_echo;  // JSON text, verbatim
};

// Single binary archive: magic, format_version, config echo (JSON), then
// all named tensors as raw doubles. Identical inputs produce identical
// bytes; no timestamps.
void save(const std::string& path, const model::PrototypeModel& model, uint64_t seed,
          const std::string& config_echo_json);

CheckpointData load(const std::string& path);

}  // namespace protomask::checkpoint
