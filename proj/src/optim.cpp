// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "fineformer/errors.hpp"
#include "fineformer/training.hpp"

namespace fineformer {

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::adamw ? "adamw" : "sgd_momentum";
}

std::string_view to_string(ScheduleKind kind) {
  return kind == ScheduleKind::cosine_warmup ? "cosine_warmup" : "fixed_step";
}

OptimizerKind parse_optimizer_kind(std::string_view text) {
  if (text == "sgd_momentum" || text == "sgd") return OptimizerKind::sgd_momentum;
  if (text == "adamw") return OptimizerKind::adamw;
  throw ConfigError("unknown optimizer '" + std::string(text) + "' (expected sgd_momentum|adamw)");
}

ScheduleKind parse_schedule_kind(std::string_view text) {
  if (text == "fixed_step") return ScheduleKind::fixed_step;
  if (text == "cosine_warmup") return ScheduleKind::cosine_warmup;
  throw ConfigError("unknown schedule '" + std::string(text) + "' (expected fixed_step|cosine_warmup)");
}

std::string format_double(double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train.momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw ConfigError("train.beta1 and train.beta2 must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("train.epsilon must be > 0");
  if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (schedule == ScheduleKind::fixed_step) {
    for (std::size_t i = 0; i < milestones.size(); ++i) {
      if (i > 0 && milestones[i] <= milestones[i - 1]) {
        throw ConfigError("train.milestones must be strictly increasing");
      }
      if (milestones[i] >= epochs) throw ConfigError("train.milestones must be < train.epochs");
    }
  }
  if (warmup_epochs && (*warmup_epochs < 0.0 || (epochs > 0 && *warmup_epochs >= static_cast<double>(epochs)))) {
    throw ConfigError("train.warmup_epochs must lie in [0, epochs)");
  }
}

double TrainConfig::resolved_warmup_epochs() const {
  return warmup_epochs.value_or(0.1 * static_cast<double>(epochs));
}

double lr_schedule(const TrainConfig& config, double epoch) {
  const double base = config.learning_rate;
  if (config.schedule == ScheduleKind::fixed_step) {
    double lr = base;
    for (const auto m : config.milestones) {
      if (epoch >= static_cast<double>(m)) lr *= 0.1;
    }
    return lr;
  }
  const double warmup = config.resolved_warmup_epochs();
  if (epoch < warmup) return base * epoch / warmup;
  const double span = static_cast<double>(config.epochs) - 1.0 - warmup;
  const double progress = span > 0.0 ? std::clamp((epoch - warmup) / span, 0.0, 1.0) : 0.0;
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

namespace {
void require_same_size(std::size_t a, std::size_t b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": buffer sizes " + std::to_string(a) + " and " + std::to_string(b));
}
}  // namespace

void sgd_momentum_step(std::span<double> weights, std::span<const double> grads, std::span<double> velocity,
                       double lr, double momentum, double weight_decay) {
  require_same_size(weights.size(), grads.size(), "sgd_momentum_step");
  require_same_size(weights.size(), velocity.size(), "sgd_momentum_step");
  for (std::size_t i = 0; i < weights.size(); ++i) {
    velocity[i] = momentum * velocity[i] + (grads[i] + weight_decay * weights[i]);
    weights[i] -= lr * velocity[i];
  }
}

void adamw_step(std::span<double> weights, std::span<const double> grads, std::span<double> first_moment,
                std::span<double> second_moment, std::size_t step, double lr, double beta1, double beta2,
                double epsilon, double weight_decay) {
  require_same_size(weights.size(), grads.size(), "adamw_step");
  require_same_size(weights.size(), first_moment.size(), "adamw_step");
  require_same_size(weights.size(), second_moment.size(), "adamw_step");
  if (step == 0) throw std::invalid_argument("adamw_step: step counts from 1");
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < weights.size(); ++i) {
    weights[i] -= lr * weight_decay * weights[i];
    first_moment[i] = beta1 * first_moment[i] + (1.0 - beta1) * grads[i];
    second_moment[i] = beta2 * second_moment[i] + (1.0 - beta2) * grads[i] * grads[i];
    const double m_hat = first_moment[i] / c1;
    const double v_hat = second_moment[i] / c2;
    weights[i] -= lr * m_hat / (std::sqrt(v_hat) + epsilon);
  }
}

double clip_gradients(ParameterList& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (const double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericalError("non-finite gradient in parameter '" + p.name + "'");
      sq += g * g;
    }
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& p : params) {
      if (!p.tensor.has_grad()) continue;
      for (double& g : p.tensor.mutable_grad()) g *= scale;
    }
  }
  return norm;
}

Tensor cross_entropy_loss(const Tensor& logits, std::size_t label) {
  const std::size_t classes = logits.numel();
  const std::size_t labels[] = {label};
  return cross_entropy(reshape(logits, {1, classes}), labels);
}

Optimizer::Optimizer(const TrainConfig& config, ParameterList params) : config_(config), params_(std::move(params)) {
  for (const auto& p : params_) {
    slot_a_.emplace_back(p.tensor.numel(), 0.0);
    slot_b_.emplace_back(config_.optimizer == OptimizerKind::adamw ? p.tensor.numel() : 0, 0.0);
  }
}

void Optimizer::step(double lr) {
  ++steps_;
  std::vector<double> zero;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& t = params_[i].tensor;
    std::span<const double> g;
    if (t.has_grad()) {
      g = t.grad();
    } else {
      zero.assign(t.numel(), 0.0);
      g = zero;
    }
    if (config_.optimizer == OptimizerKind::sgd_momentum) {
      sgd_momentum_step(t.mutable_values(), g, slot_a_[i], lr, config_.momentum, config_.weight_decay);
    } else {
      adamw_step(t.mutable_values(), g, slot_a_[i], slot_b_[i], steps_, lr, config_.beta1, config_.beta2,
                 config_.epsilon, config_.weight_decay);
    }
  }
}

void Optimizer::zero_grad() {
  for (auto& p : params_) p.tensor.clear_grad();
}

std::vector<NamedTensor> Optimizer::state() const {
  std::vector<NamedTensor> out;
  const bool adam = config_.optimizer == OptimizerKind::adamw;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& p = params_[i];
    out.push_back({(adam ? "adam_m." : "velocity.") + p.name, Tensor(p.tensor.shape(), slot_a_[i])});
    if (adam) out.push_back({"adam_v." + p.name, Tensor(p.tensor.shape(), slot_b_[i])});
  }
  return out;
}

void Optimizer::load_state(std::span<const NamedTensor> state, std::size_t steps) {
  auto find = [&state](const std::string& name) -> const Tensor& {
    for (const auto& s : state) {
      if (s.name == name) return s.tensor;
    }
    throw FormatError("optimizer state has no entry '" + name + "'");
  };
  auto copy_into = [](const Tensor& src, std::vector<double>& dst, const std::string& name) {
    if (src.numel() != dst.size()) throw FormatError("optimizer state '" + name + "' has the wrong size");
    std::copy(src.values().begin(), src.values().end(), dst.begin());
  };
  const bool adam = config_.optimizer == OptimizerKind::adamw;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const std::string a = (adam ? "adam_m." : "velocity.") + params_[i].name;
    copy_into(find(a), slot_a_[i], a);
    if (adam) {
      const std::string b = "adam_v." + params_[i].name;
      copy_into(find(b), slot_b_[i], b);
    }
  }
  steps_ = steps;
}

}  // namespace fineformer
