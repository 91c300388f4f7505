#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "trace/model.hpp"
#include "trace/train.hpp"
#include "trace/vocabulary.hpp"

namespace trace {

// Self-describing container: a text manifest (resolved config, vocabulary,
// training metadata, tensor index) followed by the raw little-endian float64
// payload of every tensor in index order.
struct Checkpoint {
  static constexpr int kFormatVersion = 1;

  TrainConfig train_config;
  Vocabulary vocab;
  TraceModel model;
  std::optional<double> best_val_pr_auc;
  double median_panel_gap = 0.0;
  std::string rng_state;  // training shuffle engine after the last epoch
};

std::string serialize_checkpoint(const Checkpoint& checkpoint);
// Throws VersionError on a foreign or differently versioned file and
// ParseError on a damaged one.
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace trace
