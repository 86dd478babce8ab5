// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fineformer/architectures.hpp"
#include "fineformer/nn.hpp"

namespace fineformer {

struct Dataset;
struct Checkpoint;

enum class OptimizerKind { sgd_momentum, adamw };
enum class ScheduleKind { fixed_step, cosine_warmup };

std::string_view to_string(OptimizerKind kind);
std::string_view to_string(ScheduleKind kind);
OptimizerKind parse_optimizer_kind(std::string_view text);
ScheduleKind parse_schedule_kind(std::string_view text);

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::sgd_momentum;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 40.0;  // global L2 cap; <= 0 disables clipping
  std::size_t epochs = 60;
  ScheduleKind schedule = ScheduleKind::fixed_step;
  std::vector<std::size_t> milestones;
  std::optional<double> warmup_epochs;  // unset: 10% of epochs
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  void validate() const;
  double resolved_warmup_epochs() const;
};

/// Learning rate at a (possibly fractional) epoch position.
///  fixed_step:    base · 0.1^(milestones ≤ epoch)
///  cosine_warmup: linear 0→base over the warmup, then base·½(1+cos(π·p)) with
///                 p = (epoch − warmup)/(epochs − 1 − warmup) clamped to [0, 1].
double lr_schedule(const TrainConfig& config, double epoch);

/// v ← momentum·v + (g + wd·w);  w ← w − lr·v
void sgd_momentum_step(std::span<double> weights, std::span<const double> grads, std::span<double> velocity,
                       double lr, double momentum, double weight_decay);

/// Decoupled weight decay with bias-corrected moments; `step` counts from 1.
void adamw_step(std::span<double> weights, std::span<const double> grads, std::span<double> first_moment,
                std::span<double> second_moment, std::size_t step, double lr, double beta1, double beta2,
                double epsilon, double weight_decay);

/// Scales all gradients by max_norm/‖g‖ when the global L2 norm exceeds
/// max_norm. Returns the pre-clip norm. Throws NumericalError naming the first
/// parameter holding a non-finite gradient.
double clip_gradients(ParameterList& params, double max_norm);

/// −log softmax(logits)[label] for a single logit vector.
Tensor cross_entropy_loss(const Tensor& logits, std::size_t label);

class Optimizer {
 public:
  Optimizer(const TrainConfig& config, ParameterList params);

  /// One update from the current gradients; parameters without a gradient
  /// are treated as having a zero gradient.
  void step(double lr);
  void zero_grad();

  std::size_t steps() const { return steps_; }
  const ParameterList& parameters() const { return params_; }

  /// Slot buffers as named tensors ("velocity.<param>", "adam_m.<param>", ...).
  std::vector<NamedTensor> state() const;
  void load_state(std::span<const NamedTensor> state, std::size_t steps);

 private:
  TrainConfig config_;
  ParameterList params_;
  std::vector<std::vector<double>> slot_a_;  // velocity (SGD) or first moment (AdamW)
  std::vector<std::vector<double>> slot_b_;  // second moment (AdamW only)
  std::size_t steps_ = 0;
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based count of completed epochs
  double lr = 0.0;        // rate at the start of the epoch
  double train_loss = 0.0;
  double top1 = 0.0;
  double mean_class_accuracy = 0.0;
};

struct TrainOptions {
  /// Continue from a checkpoint written by an earlier run with the same config.
  const Checkpoint* resume = nullptr;
  /// Called after every epoch with the checkpoint of that point and whether
  /// it is the best test top-1 so far.
  std::function<void(const EpochMetrics&, const Checkpoint&, bool is_best)> on_epoch_end;
  std::ostream* log = nullptr;
  std::size_t eval_clips = 1;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  std::vector<double> batch_losses;
};

/// Shuffled mini-batches per epoch; per batch: forward, cross-entropy,
/// backward, clip, schedule, step. Only model.parameters() are updated.
/// Throws NumericalError (with epoch/batch context) on a non-finite loss.
TrainResult train(ActionModel& model, const Dataset& data, const TrainConfig& config,
                  const TrainOptions& options = {});

std::string metrics_csv(std::span<const EpochMetrics> history);

/// Fixed-precision double formatting shared by all text outputs (%.17g).
std::string format_double(double value);

}  // namespace fineformer
