#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "neox/model.hpp"

// Binary model checkpoints. Layout is documented in docs/checkpoint-format.md.
namespace neox::model {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  LMModel model;
  // Extra header entries beyond the model config, e.g. "step".
  std::map<std::string, std::string> meta;
};

void save_checkpoint(const std::filesystem::path& path, const LMModel& model,
                     const std::map<std::string, std::string>& meta = {});

// Throws ValidationError on a bad magic, unknown version, missing or
// mis-shaped tensor, or truncated file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace neox::model
