// SPDX-License-Identifier: Apache-2.0
//
// Synthetic fine-grained benchmark. Each class is a fixed sequence of T′
// attribute ids; a configurable fraction of classes come in "order twins"
// sharing one attribute multiset in a different order, so any classifier
// that ignores token order is capped at the bag-of-features bound.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "fineformer/architectures.hpp"

namespace fineformer {

struct SyntheticSpec {
  std::size_t attributes = 12;  // N
  std::size_t num_classes = 16;
  std::size_t tokens = 8;       // T′
  std::size_t channels = 64;    // C′
  double noise_sigma = 0.1;
  double ordered_pair_fraction = 0.5;  // fraction of classes that have an order twin
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 50;
  std::uint64_t seed = 0;
  double long_tail_exponent = 0.0;  // Zipf skew of per-class counts; 0 keeps classes balanced
  bool video = false;               // emit raw clips for the backbone instead of features
  std::size_t video_frames = 16;
  std::size_t video_height = 8;
  std::size_t video_width = 8;

  void validate() const;
  /// Classes that belong to an order-twin pair (always even).
  std::size_t paired_class_count() const;
  std::size_t train_count(std::size_t label) const;
  std::size_t test_count(std::size_t label) const;
};

/// Row-major rows×cols matrix of unit-norm prototype rows.
struct PrototypeMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  std::span<const double> row(std::size_t i) const { return {values.data() + i * cols, cols}; }
};

/// Unit-norm random rows with pairwise |cosine| below `max_abs_cosine`;
/// each row is redrawn up to `max_attempts` times before giving up with
/// ConfigError.
PrototypeMatrix generate_prototypes(std::size_t count, std::size_t channels, std::uint64_t seed,
                                    double max_abs_cosine = 0.3, std::size_t max_attempts = 1000);

struct ClassTable {
  std::vector<std::vector<std::size_t>> sequences;  // num_classes × T′ attribute ids
  std::vector<long> twin;                           // order twin of each class, or -1

  std::size_t size() const { return sequences.size(); }
  bool is_paired(std::size_t label) const { return twin[label] >= 0; }
};

/// Classes 0..P−1 form twins (2k, 2k+1); the rest have unique multisets.
ClassTable define_classes(const SyntheticSpec& spec);

struct Example {
  ModelInput input;
  std::size_t label = 0;
  std::vector<std::size_t> attributes;  // hidden ground truth, never fed to a model
};

/// Feature column t = prototype[seq[t]] + N(0, σ²) noise. Values are rounded
/// to single precision so a dataset survives its on-disk form unchanged.
Example sample_example(std::size_t label, const SyntheticSpec& spec, const ClassTable& classes,
                       const PrototypeMatrix& prototypes, std::mt19937_64& rng);

struct Dataset {
  SyntheticSpec spec;
  ClassTable classes;
  PrototypeMatrix prototypes;
  std::vector<Example> train;
  std::vector<Example> test;
};

/// Pure function of the spec (seed included). Examples are drawn from
/// per-example rng streams, so generation parallelises over examples.
Dataset generate_dataset(const SyntheticSpec& spec);

/// Attribute prototypes used for features (or RGB colours in video mode).
PrototypeMatrix attribute_prototypes(const SyntheticSpec& spec);

/// Best accuracy reachable from the attribute multiset alone on a balanced
/// noiseless test set: (1 − f) + f/2 with f the paired-class fraction.
double bag_of_features_bayes_bound(const SyntheticSpec& spec);

/// FFDS1 dataset file; layout in docs/FORMATS.md.
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace fineformer
