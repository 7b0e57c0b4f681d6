/**
 * @file run_config.hpp
 * @brief Resolved run configuration: named presets, key=value config files,
 * per-key overrides and the run manifest.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "csifb/data.hpp"
#include "csifb/model.hpp"
#include "csifb/train.hpp"

namespace csifb::cli {

struct RunConfig {
  std::string preset;

  // [data]
  data::Profile profile = data::Profile::kIndoor;
  std::size_t samples = 1500;
  std::size_t subcarriers = 256;
  std::uint64_t data_seed = 1;

  // [model]; nc and nt come from [data]
  model::ModelConfig model;

  // [train] and [quantizer] (train.quant)
  train::TrainConfig train;

  // [sweep]
  std::vector<double> snrs{0, 5, 10, 15, 20};
  std::vector<unsigned> sweep_bits{2, 4, 6, 8};
  std::vector<std::size_t> sweep_latents{128, 256, 512};
  std::uint64_t eval_seed = 1;
  std::string split = "test";

  data::GeneratorConfig generator() const;

  /// Every key, as "section.key", in a fixed order.
  static const std::vector<std::string>& keys();
  /// Throws UsageError on an unknown key or a malformed value.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  /// All keys with their current values.
  std::map<std::string, std::string> resolved() const;

  /// Applies a key=value file with [section] headers and # comments.
  void apply_text(const std::string& text, const std::string& origin = "config");
  void apply_file(const std::filesystem::path& path);

  /// Structural checks shared by every command.
  void validate() const;
};

/// "desk" or "paper". Presets are fixed in code; overrides never modify them.
RunConfig preset(const std::string& name);
const std::vector<std::string>& preset_names();

/// Keys whose value differs from the named preset.
std::map<std::string, std::string> overrides(const RunConfig& config);

std::string sha1_hex(std::span<const std::uint8_t> bytes);
/// Git blob hash of a file: SHA-1 of "blob <size>\0" followed by the content.
std::string blob_hash(const std::filesystem::path& path);

struct ManifestInput {
  std::string role;
  std::filesystem::path path;
};

/// JSON manifest: command, preset, resolved config, overrides, input hashes
/// and a content hash over all of them. Contains no timestamps.
std::string make_manifest(const std::string& command, const RunConfig& config,
                          const std::vector<ManifestInput>& inputs);

}  // namespace csifb::cli
