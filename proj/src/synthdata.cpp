// SPDX-License-Identifier: Apache-2.0
#include "fineformer/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <set>

#include "fineformer/errors.hpp"

namespace fineformer {
namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double to_float_precision(double v) { return static_cast<double>(static_cast<float>(v)); }

// Number of size-k multisets over n symbols, saturating at `cap`.
std::size_t multiset_count(std::size_t n, std::size_t k, std::size_t cap) {
  double count = 1.0;
  for (std::size_t i = 1; i <= k; ++i) {
    count = count * static_cast<double>(n + i - 1) / static_cast<double>(i);
    if (count > static_cast<double>(cap)) return cap;
  }
  return static_cast<std::size_t>(std::llround(count));
}

}  // namespace

void SyntheticSpec::validate() const {
  if (attributes == 0 || num_classes == 0 || tokens == 0 || channels == 0) {
    throw ConfigError("data.attributes, data.num_classes, data.tokens and data.channels must be >= 1");
  }
  if (noise_sigma < 0.0) throw ConfigError("data.noise_sigma must be >= 0");
  if (ordered_pair_fraction < 0.0 || ordered_pair_fraction > 1.0) {
    throw ConfigError("data.ordered_pair_fraction must lie in [0, 1]");
  }
  if (ordered_pair_fraction > 0.0 && num_classes % 2 != 0) {
    throw ConfigError("data.num_classes must be even when data.ordered_pair_fraction > 0");
  }
  if (long_tail_exponent < 0.0) throw ConfigError("data.long_tail_exponent must be >= 0");
  if (train_per_class == 0 && test_per_class == 0) throw ConfigError("data has no examples");
  if (video && (video_frames % tokens != 0 || video_height == 0 || video_width == 0)) {
    throw ConfigError("data.video_frames must be a positive multiple of data.tokens");
  }
}

std::size_t SyntheticSpec::paired_class_count() const {
  auto paired = static_cast<std::size_t>(std::llround(ordered_pair_fraction * static_cast<double>(num_classes)));
  paired -= paired % 2;
  return std::min(paired, num_classes - num_classes % 2);
}

namespace {
std::size_t skewed_count(std::size_t base, std::size_t label, double exponent) {
  if (base == 0) return 0;
  if (exponent == 0.0) return base;
  const double scaled = static_cast<double>(base) * std::pow(static_cast<double>(label + 1), -exponent);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(scaled)));
}
}  // namespace

std::size_t SyntheticSpec::train_count(std::size_t label) const {
  return skewed_count(train_per_class, label, long_tail_exponent);
}

std::size_t SyntheticSpec::test_count(std::size_t label) const {
  return skewed_count(test_per_class, label, long_tail_exponent);
}

PrototypeMatrix generate_prototypes(std::size_t count, std::size_t channels, std::uint64_t seed,
                                    double max_abs_cosine, std::size_t max_attempts) {
  if (channels < count) {
    std::cerr << "warning: " << count << " prototypes in " << channels
              << " dimensions cannot all be near-orthogonal\n";
  }
  PrototypeMatrix out{count, channels, std::vector<double>(count * channels)};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> candidate(channels);

  for (std::size_t i = 0; i < count; ++i) {
    bool accepted = false;
    for (std::size_t attempt = 0; attempt < max_attempts && !accepted; ++attempt) {
      double norm = 0.0;
      for (auto& v : candidate) {
        v = normal(rng);
        norm += v * v;
      }
      norm = std::sqrt(norm);
      for (auto& v : candidate) v /= norm;

      accepted = true;
      for (std::size_t j = 0; j < i && accepted; ++j) {
        double dot = 0.0;
        const auto other = out.row(j);
        for (std::size_t c = 0; c < channels; ++c) dot += candidate[c] * other[c];
        accepted = std::abs(dot) < max_abs_cosine;
      }
    }
    if (!accepted) {
      throw ConfigError("could not place prototype " + std::to_string(i) + " with |cosine| < " +
                        std::to_string(max_abs_cosine) + " after " + std::to_string(max_attempts) + " attempts");
    }
    std::copy(candidate.begin(), candidate.end(), out.values.begin() + static_cast<std::ptrdiff_t>(i * channels));
  }
  return out;
}

ClassTable define_classes(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t paired = spec.paired_class_count();
  const std::size_t groups = paired / 2 + (spec.num_classes - paired);
  const std::size_t available = multiset_count(spec.attributes, spec.tokens, groups + 1);
  // Twins need a multiset with at least two distinct attributes.
  if (available < groups || (paired > 0 && spec.attributes < 2) || (paired > 0 && spec.tokens < 2)) {
    throw ConfigError("infeasible class spec: " + std::to_string(groups) + " distinct attribute multisets needed, " +
                      std::to_string(available) + " available");
  }

  ClassTable table;
  table.sequences.resize(spec.num_classes);
  table.twin.assign(spec.num_classes, -1);

  std::mt19937_64 rng(mix_seed(spec.seed, 2));
  std::uniform_int_distribution<std::size_t> pick(0, spec.attributes - 1);
  std::set<std::vector<std::size_t>> used;
  const std::size_t max_draws = 1000 * groups + 1000;
  std::size_t draws = 0;

  auto draw_sequence = [&](bool need_two_distinct) {
    std::vector<std::size_t> seq(spec.tokens);
    for (;;) {
      if (++draws > max_draws) throw ConfigError("infeasible class spec: ran out of draws for distinct multisets");
      for (auto& a : seq) a = pick(rng);
      auto key = seq;
      std::sort(key.begin(), key.end());
      if (need_two_distinct && key.front() == key.back()) continue;
      if (used.insert(key).second) return seq;
    }
  };

  for (std::size_t c = 0; c < paired; c += 2) {
    auto seq = draw_sequence(true);
    auto twin = seq;
    do {
      std::shuffle(twin.begin(), twin.end(), rng);
    } while (twin == seq);
    table.sequences[c] = std::move(seq);
    table.sequences[c + 1] = std::move(twin);
    table.twin[c] = static_cast<long>(c + 1);
    table.twin[c + 1] = static_cast<long>(c);
  }
  for (std::size_t c = paired; c < spec.num_classes; ++c) table.sequences[c] = draw_sequence(false);
  return table;
}

PrototypeMatrix attribute_prototypes(const SyntheticSpec& spec) {
  if (spec.video) {
    // RGB colours; three dimensions cannot hold many near-orthogonal rows.
    return generate_prototypes(spec.attributes, 3, mix_seed(spec.seed, 1), 0.98);
  }
  return generate_prototypes(spec.attributes, spec.channels, mix_seed(spec.seed, 1));
}

Example sample_example(std::size_t label, const SyntheticSpec& spec, const ClassTable& classes,
                       const PrototypeMatrix& prototypes, std::mt19937_64& rng) {
  if (label >= classes.size()) throw std::out_of_range("sample_example: label " + std::to_string(label));
  std::normal_distribution<double> noise(0.0, 1.0);
  const auto& seq = classes.sequences[label];
  Example ex;
  ex.label = label;
  ex.attributes = seq;

  if (!spec.video) {
    FeatureSequence f{spec.channels, spec.tokens, std::vector<double>(spec.channels * spec.tokens)};
    for (std::size_t t = 0; t < spec.tokens; ++t) {
      const auto proto = prototypes.row(seq[t]);
      for (std::size_t c = 0; c < spec.channels; ++c) {
        f.values[c * spec.tokens + t] = to_float_precision(proto[c] + spec.noise_sigma * noise(rng));
      }
    }
    ex.input = std::move(f);
    return ex;
  }

  const std::size_t per_token = spec.video_frames / spec.tokens;
  Video v{spec.video_frames, spec.video_height, spec.video_width,
          std::vector<double>(spec.video_frames * spec.video_height * spec.video_width * 3)};
  for (std::size_t t = 0; t < spec.video_frames; ++t) {
    const auto colour = prototypes.row(seq[t / per_token]);
    for (std::size_t p = 0; p < spec.video_height * spec.video_width; ++p)
      for (std::size_t k = 0; k < 3; ++k) {
        v.values[(t * spec.video_height * spec.video_width + p) * 3 + k] =
            to_float_precision(colour[k] + spec.noise_sigma * noise(rng));
      }
  }
  ex.input = std::move(v);
  return ex;
}

Dataset generate_dataset(const SyntheticSpec& spec) {
  spec.validate();
  Dataset data;
  data.spec = spec;
  data.classes = define_classes(spec);
  data.prototypes = attribute_prototypes(spec);

  struct Job {
    std::size_t split, label, index;
  };
  std::vector<Job> jobs;
  for (std::size_t split = 0; split < 2; ++split)
    for (std::size_t label = 0; label < spec.num_classes; ++label) {
      const std::size_t count = split == 0 ? spec.train_count(label) : spec.test_count(label);
      for (std::size_t i = 0; i < count; ++i) jobs.push_back({split, label, i});
    }

  std::vector<Example> examples(jobs.size());
  const auto n_jobs = static_cast<std::ptrdiff_t>(jobs.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t j = 0; j < n_jobs; ++j) {
    const auto& job = jobs[static_cast<std::size_t>(j)];
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(job.split), static_cast<std::uint32_t>(job.label),
                      static_cast<std::uint32_t>(job.index)};
    std::mt19937_64 rng(seq);
    examples[static_cast<std::size_t>(j)] = sample_example(job.label, spec, data.classes, data.prototypes, rng);
  }
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    (jobs[j].split == 0 ? data.train : data.test).push_back(std::move(examples[j]));
  }
  return data;
}

double bag_of_features_bayes_bound(const SyntheticSpec& spec) {
  const double paired_fraction =
      static_cast<double>(spec.paired_class_count()) / static_cast<double>(spec.num_classes);
  return (1.0 - paired_fraction) + paired_fraction / 2.0;
}

}  // namespace fineformer
