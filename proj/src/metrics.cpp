// SPDX-License-Identifier: Apache-2.0
#include "fineformer/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "fineformer/errors.hpp"
#include "fineformer/synthdata.hpp"
#include "fineformer/threads.hpp"
#include "fineformer/training.hpp"

namespace fineformer {
namespace {

void require_pairs(std::span<const std::size_t> predictions, std::span<const std::size_t> labels, const char* op) {
  if (predictions.empty()) throw std::invalid_argument(std::string(op) + ": empty input");
  if (predictions.size() != labels.size()) {
    throw std::invalid_argument(std::string(op) + ": " + std::to_string(predictions.size()) + " predictions for " +
                                std::to_string(labels.size()) + " labels");
  }
}

Video clip_at(const Video& video, std::size_t offset, std::size_t length) {
  const std::size_t frame_size = video.height * video.width * 3;
  Video clip{length, video.height, video.width, {}};
  const auto first = video.values.begin() + static_cast<std::ptrdiff_t>(offset * frame_size);
  clip.values.assign(first, first + static_cast<std::ptrdiff_t>(length * frame_size));
  return clip;
}

constexpr std::size_t kChunk = 64;

}  // namespace

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

double top1_accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels) {
  require_pairs(predictions, labels, "top1_accuracy");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double mean_class_accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                           std::size_t num_classes) {
  return make_report(predictions, labels, num_classes).mean_class_accuracy;
}

EvalReport make_report(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                       std::size_t num_classes) {
  require_pairs(predictions, labels, "make_report");
  EvalReport r;
  r.num_classes = num_classes;
  r.total = labels.size();
  r.class_counts.assign(num_classes, 0);
  r.per_class_accuracy.assign(num_classes, 0.0);
  r.confusion.assign(num_classes * num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes || predictions[i] >= num_classes) {
      throw std::out_of_range("make_report: class index outside [0, " + std::to_string(num_classes) + ")");
    }
    ++r.class_counts[labels[i]];
    ++r.confusion[labels[i] * num_classes + predictions[i]];
  }
  std::size_t correct = 0, present = 0;
  double class_sum = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const std::size_t hits = r.confusion_at(c, c);
    correct += hits;
    if (r.class_counts[c] == 0) {
      r.empty_classes.push_back(c);
      continue;
    }
    r.per_class_accuracy[c] = static_cast<double>(hits) / static_cast<double>(r.class_counts[c]);
    class_sum += r.per_class_accuracy[c];
    ++present;
  }
  r.top1 = static_cast<double>(correct) / static_cast<double>(r.total);
  r.mean_class_accuracy = class_sum / static_cast<double>(present);
  return r;
}

std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", fraction * 100.0);
  return buf;
}

FeatureSequence prepare_centre_clip(const ActionModel& model, const ModelInput& input) {
  const auto* video = std::get_if<Video>(&input);
  const std::size_t length = model.config().frames;
  if (video == nullptr || video->frames <= length) return model.prepare(input);
  return model.prepare(clip_at(*video, (video->frames - length) / 2, length));
}

std::vector<double> multi_clip_eval(const ActionModel& model, const Video& video, std::size_t num_clips) {
  const std::size_t length = model.config().frames;
  if (num_clips == 0) throw std::invalid_argument("multi_clip_eval: num_clips must be >= 1");
  if (video.frames < length) {
    throw ShapeError("multi_clip_eval: video has " + std::to_string(video.frames) + " frames, clip needs " +
                     std::to_string(length));
  }
  // Clip i is centred in the i-th of num_clips equal segments of the valid start range.
  const std::size_t slack = video.frames - length;
  std::vector<FeatureSequence> clips;
  for (std::size_t i = 0; i < num_clips; ++i) {
    const std::size_t offset = slack * (2 * i + 1) / (2 * num_clips);
    clips.push_back(model.prepare(clip_at(video, offset, length)));
  }
  NoGradGuard no_grad;
  const Tensor logits = model.forward(clips);
  const std::size_t classes = logits.dim(1);
  std::vector<double> mean(classes, 0.0);
  for (std::size_t i = 0; i < num_clips; ++i)
    for (std::size_t c = 0; c < classes; ++c) mean[c] += logits.at(i, c);
  for (auto& v : mean) v /= static_cast<double>(num_clips);
  return mean;
}

std::vector<std::size_t> predict(const ActionModel& model, std::span<const Example> examples, std::size_t num_clips) {
  std::vector<std::size_t> out(examples.size());
  const auto chunks = static_cast<std::ptrdiff_t>((examples.size() + kChunk - 1) / kChunk);
  std::exception_ptr failure;

#pragma omp parallel for schedule(dynamic) num_threads(static_cast<int>(worker_count()))
  for (std::ptrdiff_t chunk = 0; chunk < chunks; ++chunk) {
    try {
      NoGradGuard no_grad;
      const std::size_t begin = static_cast<std::size_t>(chunk) * kChunk;
      const std::size_t end = std::min(examples.size(), begin + kChunk);
      std::vector<FeatureSequence> batch;
      for (std::size_t i = begin; i < end; ++i) {
        if (const auto* video = std::get_if<Video>(&examples[i].input)) {
          out[i] = argmax(multi_clip_eval(model, *video, num_clips));
        } else {
          batch.push_back(model.prepare(examples[i].input));
        }
      }
      if (!batch.empty()) {
        const Tensor logits = model.forward(batch);
        const auto values = logits.values();
        const std::size_t classes = logits.dim(1);
        std::size_t row = 0;
        for (std::size_t i = begin; i < end; ++i) {
          if (std::holds_alternative<Video>(examples[i].input)) continue;
          out[i] = argmax(values.subspan(row * classes, classes));
          ++row;
        }
      }
    } catch (...) {
#pragma omp critical(fineformer_predict_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

EvalReport evaluate(const ActionModel& model, std::span<const Example> examples, std::size_t num_clips) {
  const auto predictions = predict(model, examples, num_clips);
  std::vector<std::size_t> labels;
  labels.reserve(examples.size());
  for (const auto& ex : examples) labels.push_back(ex.label);
  return make_report(predictions, labels, model.config().num_classes);
}

std::string report_csv(const EvalReport& report) {
  std::ostringstream os;
  os << "class,count,correct,accuracy\n";
  std::size_t correct = 0;
  for (std::size_t c = 0; c < report.num_classes; ++c) {
    const std::size_t hits = report.confusion_at(c, c);
    correct += hits;
    os << c << ',' << report.class_counts[c] << ',' << hits << ',';
    if (report.class_counts[c] == 0) {
      os << "NA\n";
    } else {
      os << format_double(report.per_class_accuracy[c]) << '\n';
    }
  }
  os << "top1," << report.total << ',' << correct << ',' << format_double(report.top1) << '\n';
  os << "mean_class_acc," << report.num_classes - report.empty_classes.size() << ",,"
     << format_double(report.mean_class_accuracy) << '\n';
  return os.str();
}

std::string confusion_csv(const EvalReport& report) {
  std::ostringstream os;
  os << "true\\predicted";
  for (std::size_t c = 0; c < report.num_classes; ++c) os << ',' << c;
  os << '\n';
  for (std::size_t t = 0; t < report.num_classes; ++t) {
    os << t;
    for (std::size_t p = 0; p < report.num_classes; ++p) os << ',' << report.confusion_at(t, p);
    os << '\n';
  }
  return os.str();
}

AttentionMatchReport attention_match_report(const CrossEncoderModel& model, std::span<const Example> examples) {
  AttentionMatchReport r;
  r.vocab = model.config().vocab;
  r.tokens = model.config().tokens;
  r.mean_map.assign(r.vocab * r.tokens, 0.0);
  std::vector<double> match_sum(r.vocab, 0.0), other_sum(r.vocab, 0.0);
  std::vector<std::size_t> seen(r.vocab, 0);

  for (const auto& ex : examples) {
    const auto map = model.cross_attention_diagnostic(prepare_centre_clip(model, ex.input));
    for (std::size_t k = 0; k < map.size(); ++k) r.mean_map[k] += map[k];
    for (std::size_t i = 0; i < r.vocab; ++i) {
      double match = 0.0, other = 0.0;
      std::size_t n_match = 0;
      for (std::size_t t = 0; t < r.tokens; ++t) {
        if (ex.attributes[t] == i) {
          match += map[i * r.tokens + t];
          ++n_match;
        } else {
          other += map[i * r.tokens + t];
        }
      }
      if (n_match == 0 || n_match == r.tokens) continue;
      match_sum[i] += match / static_cast<double>(n_match);
      other_sum[i] += other / static_cast<double>(r.tokens - n_match);
      ++seen[i];
    }
  }
  if (!examples.empty()) {
    for (auto& v : r.mean_map) v /= static_cast<double>(examples.size());
  }

  r.ratio.assign(r.vocab, std::numeric_limits<double>::quiet_NaN());
  std::size_t above = 0;
  double ratio_sum = 0.0;
  for (std::size_t i = 0; i < r.vocab; ++i) {
    if (seen[i] == 0 || other_sum[i] <= 0.0) continue;
    r.ratio[i] = match_sum[i] / other_sum[i];
    ++r.scored;
    ratio_sum += r.ratio[i];
    above += r.ratio[i] > 1.0;
  }
  if (r.scored > 0) {
    r.fraction_above_one = static_cast<double>(above) / static_cast<double>(r.scored);
    r.mean_ratio = ratio_sum / static_cast<double>(r.scored);
  }
  return r;
}

std::string attention_report_csv(const AttentionMatchReport& report) {
  std::ostringstream os;
  os << "token";
  for (std::size_t t = 0; t < report.tokens; ++t) os << ",t" << t;
  os << '\n';
  for (std::size_t i = 0; i < report.vocab; ++i) {
    os << i;
    for (std::size_t t = 0; t < report.tokens; ++t) os << ',' << format_double(report.mean_map[i * report.tokens + t]);
    os << '\n';
  }
  os << "match_summary,scored=" << report.scored << ",fraction_above_one=" << format_double(report.fraction_above_one)
     << ",mean_ratio=" << format_double(report.mean_ratio) << '\n';
  return os.str();
}

}  // namespace fineformer
