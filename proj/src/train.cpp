// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "fineformer/checkpoint.hpp"
#include "fineformer/config.hpp"
#include "fineformer/errors.hpp"
#include "fineformer/metrics.hpp"
#include "fineformer/synthdata.hpp"
#include "fineformer/training.hpp"

namespace fineformer {
namespace {

// The backbone is frozen and deterministic, so features are extracted once.
std::vector<FeatureSequence> extract_features(const ActionModel& model, std::span<const Example> examples) {
  std::vector<FeatureSequence> out(examples.size());
  const auto n = static_cast<std::ptrdiff_t>(examples.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] = prepare_centre_clip(model, examples[static_cast<std::size_t>(i)].input);
  }
  return out;
}

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

std::mt19937_64 rng_from_string(const std::string& text) {
  std::mt19937_64 rng;
  std::istringstream is(text);
  is >> rng;
  if (!is) throw FormatError("checkpoint rng state is malformed");
  return rng;
}

}  // namespace

TrainResult train(ActionModel& model, const Dataset& data, const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  check_compatible(model.config(), data.spec);
  if (config.epochs > 0 && data.train.empty()) throw ConfigError("training split is empty");

  Optimizer optimizer(config, model.parameters());
  std::mt19937_64 shuffler(config.seed);
  std::size_t first_epoch = 0;
  double best_top1 = -1.0;
  std::size_t best_epoch = 0;

  if (options.resume != nullptr) {
    const Checkpoint& ck = *options.resume;
    if (ck.epoch > config.epochs) throw ConfigError("resume checkpoint is past the configured epoch count");
    load_parameters(model, ck.parameters);
    optimizer.load_state(ck.optimizer_state, ck.optimizer_steps);
    shuffler = rng_from_string(ck.rng_state);
    first_epoch = ck.epoch;
    best_top1 = ck.best_top1;
    best_epoch = ck.best_epoch;
  }

  TrainResult result;
  if (first_epoch >= config.epochs) return result;

  const auto features = extract_features(model, data.train);
  std::vector<std::size_t> labels;
  labels.reserve(data.train.size());
  for (const auto& ex : data.train) labels.push_back(ex.label);

  const std::size_t n = features.size();
  const std::size_t batches = (n + config.batch_size - 1) / config.batch_size;
  std::vector<std::size_t> order(n);
  std::vector<FeatureSequence> batch;
  std::vector<std::size_t> batch_labels;
  ParameterList params = model.parameters();

  for (std::size_t epoch = first_epoch; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), shuffler);

    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t begin = b * config.batch_size;
      const std::size_t end = std::min(n, begin + config.batch_size);
      batch.clear();
      batch_labels.clear();
      for (std::size_t i = begin; i < end; ++i) {
        batch.push_back(features[order[i]]);
        batch_labels.push_back(labels[order[i]]);
      }

      const double position = static_cast<double>(epoch) + static_cast<double>(b) / static_cast<double>(batches);
      const double lr = lr_schedule(config, position);
      const std::string where = "epoch " + std::to_string(epoch + 1) + ", batch " + std::to_string(b + 1);

      optimizer.zero_grad();
      Tensor loss;
      try {
        loss = cross_entropy(model.forward(batch), batch_labels);
      } catch (const NumericalError& e) {
        throw NumericalError(where + ": " + e.what());
      }
      const double value = loss.item();
      if (!std::isfinite(value)) throw NumericalError(where + ": non-finite loss");
      backward(loss);
      try {
        clip_gradients(params, config.clip_norm);
      } catch (const NumericalError& e) {
        throw NumericalError(where + ": " + e.what());
      }
      optimizer.step(lr);

      result.batch_losses.push_back(value);
      loss_sum += value * static_cast<double>(end - begin);
    }
    optimizer.zero_grad();

    EpochMetrics m;
    m.epoch = epoch + 1;
    m.lr = lr_schedule(config, static_cast<double>(epoch));
    m.train_loss = loss_sum / static_cast<double>(n);
    if (!data.test.empty()) {
      const auto report = evaluate(model, data.test, options.eval_clips);
      m.top1 = report.top1;
      m.mean_class_accuracy = report.mean_class_accuracy;
    }
    const bool is_best = m.top1 > best_top1;
    if (is_best) {
      best_top1 = m.top1;
      best_epoch = m.epoch;
    }
    result.history.push_back(m);

    if (options.log != nullptr) {
      *options.log << "epoch " << m.epoch << "/" << config.epochs << "  lr " << m.lr << "  loss " << m.train_loss
                   << "  top1 " << format_percent(m.top1) << "  mean_class " << format_percent(m.mean_class_accuracy)
                   << (is_best ? "  *" : "") << std::endl;
    }
    if (options.on_epoch_end) {
      Checkpoint ck;
      ck.model = model.config();
      ck.train = config;
      ck.epoch = m.epoch;
      ck.optimizer_steps = optimizer.steps();
      ck.rng_state = rng_to_string(shuffler);
      ck.best_top1 = best_top1;
      ck.best_epoch = best_epoch;
      ck.parameters = snapshot_parameters(model);
      ck.optimizer_state = optimizer.state();
      options.on_epoch_end(m, ck, is_best);
    }
  }
  return result;
}

std::string metrics_csv(std::span<const EpochMetrics> history) {
  std::string out = "epoch,lr,train_loss,top1,mean_class_acc\n";
  for (const auto& m : history) {
    out += std::to_string(m.epoch) + ',' + format_double(m.lr) + ',' + format_double(m.train_loss) + ',' +
           format_double(m.top1) + ',' + format_double(m.mean_class_accuracy) + '\n';
  }
  return out;
}

}  // namespace fineformer
