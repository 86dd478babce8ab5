// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "fineformer/architectures.hpp"
#include "fineformer/training.hpp"

namespace fineformer {

/// FFCK1 checkpoint: configs, counters and rng state in a text header, then
/// named float64 tensors. Layout in docs/FORMATS.md.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  ModelConfig model;
  TrainConfig train;
  std::size_t epoch = 0;  // completed epochs
  std::size_t optimizer_steps = 0;
  std::string rng_state;  // textual std::mt19937_64 state of the shuffler
  double best_top1 = -1.0;
  std::size_t best_epoch = 0;
  std::vector<NamedTensor> parameters;  // trainable then frozen, deep copies
  std::vector<NamedTensor> optimizer_state;

  std::string to_bytes() const;
  static Checkpoint from_bytes(std::string_view bytes);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

/// Snapshot of a model's parameters (copied, not shared).
std::vector<NamedTensor> snapshot_parameters(const ActionModel& model);

/// Rebuilds the model described by the checkpoint and loads its parameters.
std::unique_ptr<ActionModel> restore_model(const Checkpoint& checkpoint);

}  // namespace fineformer
