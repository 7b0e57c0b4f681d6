/**
 * @file checkpoint.hpp
 * @brief CSIW checkpoint files: model configuration, named float32 tensors
 * (parameters and Adam moments) and the training state trailer.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "csifb/model.hpp"

namespace csifb::train {

/// Per-parameter Adam moments plus the shared step counter.
struct AdamState {
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
  std::uint64_t step = 0;
  bool operator==(const AdamState&) const = default;
};

struct TrainingState {
  unsigned bits = 8;
  double mu = 255.0;
  std::vector<std::uint64_t> histogram;  // raw counts, empty if never fitted
  std::uint64_t epoch = 0;               // completed epochs
  std::uint64_t global_step = 0;
  double best_score = 0.0;               // best validation NMSE in dB
  bool operator==(const TrainingState&) const = default;
};

struct Checkpoint {
  model::ModelParams params;
  AdamState adam;
  TrainingState state;
};

constexpr std::uint16_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const model::ModelParams& params, const AdamState& adam,
                                               const TrainingState& state);
Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const model::ModelParams& params, const AdamState& adam,
                     const TrainingState& state);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace csifb::train
