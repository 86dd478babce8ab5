// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures for the unit tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "fineformer/architectures.hpp"
#include "fineformer/synthdata.hpp"
#include "fineformer/tensor.hpp"
#include "fineformer/training.hpp"

namespace fftest {

using namespace fineformer;

inline Tensor random_tensor(Shape shape, std::uint64_t seed, bool requires_grad = false, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = normal(rng);
  return Tensor(std::move(shape), std::move(values), requires_grad);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

inline bool bit_identical(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin());
}

/// Tiny synthetic spec that trains in well under a second.
inline SyntheticSpec tiny_spec(std::uint64_t seed = 0) {
  SyntheticSpec s;
  s.attributes = 6;
  s.num_classes = 4;
  s.tokens = 4;
  s.channels = 16;
  s.noise_sigma = 0.1;
  s.ordered_pair_fraction = 0.5;
  s.train_per_class = 8;
  s.test_per_class = 4;
  s.seed = seed;
  return s;
}

inline ModelConfig tiny_model(ModelKind kind, const SyntheticSpec& spec, std::size_t layers = 1) {
  ModelConfig c;
  c.kind = kind;
  c.hidden = 8;
  c.heads = 2;
  c.layers = layers;
  c.cross_layers = layers;
  c.channels = spec.channels;
  c.tokens = spec.tokens;
  c.vocab = spec.attributes;
  c.num_classes = spec.num_classes;
  c.feature_height = 1;
  c.feature_width = 1;
  c.frames = spec.tokens;
  c.height = 1;
  c.width = 1;
  c.seed = 3;
  return c;
}

inline TrainConfig tiny_train(std::size_t epochs = 3) {
  TrainConfig t;
  t.optimizer = OptimizerKind::adamw;
  t.learning_rate = 0.01;
  t.weight_decay = 0.01;
  t.epochs = epochs;
  t.schedule = ScheduleKind::cosine_warmup;
  t.batch_size = 8;
  t.seed = 5;
  return t;
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() / ("fineformer_" + tag + "_" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace fftest
