// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fineformer/architectures.hpp"

namespace fineformer {

struct Example;

/// Index of the largest value; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

double top1_accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels);

/// Unweighted mean of per-class accuracies over classes that have at least
/// one example.
double mean_class_accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                           std::size_t num_classes);

struct EvalReport {
  std::size_t num_classes = 0;
  std::size_t total = 0;
  double top1 = 0.0;
  double mean_class_accuracy = 0.0;
  std::vector<std::size_t> class_counts;
  std::vector<double> per_class_accuracy;  // 0 for classes without examples
  std::vector<std::size_t> empty_classes;
  std::vector<std::size_t> confusion;  // row = true class, column = prediction

  std::size_t confusion_at(std::size_t truth, std::size_t predicted) const {
    return confusion[truth * num_classes + predicted];
  }
};

EvalReport make_report(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                       std::size_t num_classes);

/// Two-decimal percentage, e.g. 0.9346 → "93.46".
std::string format_percent(double fraction);

/// Features of the single clip used for training and diagnostics: videos
/// longer than the model clip contribute their centre window.
FeatureSequence prepare_centre_clip(const ActionModel& model, const ModelInput& input);

/// Mean of per-clip logits over `num_clips` evenly spaced windows of the
/// model's clip length. Throws ShapeError when the video is shorter than one
/// clip.
std::vector<double> multi_clip_eval(const ActionModel& model, const Video& video, std::size_t num_clips);

/// Argmax predictions. Feature inputs are batched; videos use multi-clip
/// evaluation. Runs without recording a graph and fans out across
/// FINEFORMER_THREADS workers.
std::vector<std::size_t> predict(const ActionModel& model, std::span<const Example> examples,
                                 std::size_t num_clips = 1);

EvalReport evaluate(const ActionModel& model, std::span<const Example> examples, std::size_t num_clips = 1);

/// Per-class rows `class,count,correct,accuracy` followed by summary rows.
std::string report_csv(const EvalReport& report);
std::string confusion_csv(const EvalReport& report);

/// Cross-attention diagnostic averaged over examples, plus per-attribute
/// match ratios: mean attention from text token i to timesteps whose hidden
/// attribute is i, divided by its mean attention to the other timesteps.
struct AttentionMatchReport {
  std::size_t vocab = 0;
  std::size_t tokens = 0;
  std::vector<double> mean_map;  // vocab×tokens
  std::vector<double> ratio;     // NaN for attributes that never (or always) appear
  std::size_t scored = 0;        // attributes with a defined ratio
  double fraction_above_one = 0.0;
  double mean_ratio = 0.0;
};

AttentionMatchReport attention_match_report(const CrossEncoderModel& model, std::span<const Example> examples);

/// `token,t0..` rows followed by one `match_summary` line.
std::string attention_report_csv(const AttentionMatchReport& report);

}  // namespace fineformer
