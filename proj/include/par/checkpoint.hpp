#pragma once

#include <stdexcept>
#include <string>

#include "par/meta.hpp"

namespace par {

/// Unreadable, malformed or version-mismatched checkpoint.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  TrainConfig config;
  ParameterStore params;
};

/// JSON text: {"format": "par-checkpoint", "version": 1, "config": {...}, "tensors": {...}}.
std::string checkpoint_to_json(const TrainConfig& cfg, const ParameterStore& params);
/// Rebuilds the store from the embedded config and checks every tensor shape.
Checkpoint checkpoint_from_json(const std::string& text);

void save_checkpoint(const std::string& path, const TrainConfig& cfg, const ParameterStore& params);
Checkpoint load_checkpoint(const std::string& path);

const char* normalization_name(ops::RowNorm mode);
/// Throws ConfigError for unknown names.
ops::RowNorm parse_normalization(const std::string& name);

}  // namespace par
