// SPDX-License-Identifier: Apache-2.0
//
// Flat sectioned key=value configuration:
//
//   [model]
//   kind = vision
//   hidden = 32
//   [train]
//   milestones = 90,110
//
// Keys are addressed as "section.key" for overrides and file headers.
// Unknown sections or keys are rejected.
#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fineformer/architectures.hpp"
#include "fineformer/synthdata.hpp"
#include "fineformer/training.hpp"

namespace fineformer {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

KeyValues to_key_values(const ModelConfig& config);
KeyValues to_key_values(const SyntheticSpec& spec);
KeyValues to_key_values(const TrainConfig& config);

void set_field(ModelConfig& config, std::string_view key, std::string_view value);
void set_field(SyntheticSpec& spec, std::string_view key, std::string_view value);
void set_field(TrainConfig& config, std::string_view key, std::string_view value);

struct EvalSettings {
  std::size_t num_clips = 1;
};

struct RunPaths {
  std::string dataset;     // dataset file to read (generated from [data] when empty)
  std::string checkpoint;  // checkpoint to evaluate / inspect
  std::string resume;      // checkpoint to continue training from
  std::string out = "out";
};

struct RunConfig {
  ModelConfig model;
  SyntheticSpec data;
  TrainConfig train;
  EvalSettings eval;
  RunPaths paths;

  /// Sets "section.key" from text; throws ConfigError for unknown keys or bad values.
  void set(std::string_view dotted_key, std::string_view value);
  /// Applies "section.key=value".
  void apply_override(std::string_view assignment);
  /// Fully resolved config in file syntax.
  std::string to_text() const;

  static RunConfig parse(std::string_view text);
};

RunConfig load_run_config(const std::filesystem::path& path, std::span<const std::string> overrides = {});

/// Throws ConfigError if the model cannot consume examples drawn from `spec`.
void check_compatible(const ModelConfig& model, const SyntheticSpec& spec);

/// "prefix.key=value\n" lines, used for file headers.
std::string header_text(std::string_view prefix, const KeyValues& values);
/// Parses "key=value" lines into ordered pairs (no section handling).
KeyValues parse_header(std::string_view text);

}  // namespace fineformer
