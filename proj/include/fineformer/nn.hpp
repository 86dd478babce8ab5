// SPDX-License-Identifier: Apache-2.0
//
// Transformer encoder building blocks. All layers take token matrices of
// shape (sequences·seq_len)×hidden so a mini-batch of equal-length sequences
// runs through one set of kernel calls; attention never crosses sequences.
#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fineformer/tensor.hpp"

namespace fineformer {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Ordered, named view of a model's parameters. Tensors are shared handles,
/// so mutating through the list mutates the model.
using ParameterList = std::vector<NamedTensor>;

/// Seeded parameter factory. Weights follow a zero-mean normal truncated at
/// two standard deviations, with the underlying scale chosen so the realised
/// standard deviation is `weight_std`.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed, double weight_std = 0.02);

  Tensor weight(Shape shape);
  Tensor zeros(Shape shape);
  Tensor ones(Shape shape);

  double truncated_normal();

 private:
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  double scale_;
};

struct Linear {
  Linear() = default;
  Linear(std::size_t in_dim, std::size_t out_dim, Initializer& init, bool with_bias = true);

  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParameterList& out) const;

  Tensor weight;  // in_dim×out_dim
  Tensor bias;    // out_dim, undefined when built without bias
};

struct Embedding {
  Embedding() = default;
  Embedding(std::size_t rows, std::size_t hidden, Initializer& init);

  /// Rows of the table at `ids`; throws std::out_of_range for ids >= rows.
  Tensor lookup(std::span<const std::size_t> ids) const;
  void collect(const std::string& prefix, ParameterList& out) const;

  Tensor table;  // rows×hidden
};

struct LayerNorm {
  LayerNorm() = default;
  LayerNorm(std::size_t hidden, Initializer& init);

  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParameterList& out) const;

  Tensor gain;
  Tensor offset;
  double eps = 1e-12;
};

/// Post-norm encoder block: y = LN(x + MHA(x)); out = LN(y + FFN(y)), with a
/// GELU feed-forward of inner width 4·hidden.
class EncoderLayer {
 public:
  EncoderLayer(std::size_t hidden, std::size_t heads, Initializer& init);

  Tensor self_attention(const Tensor& x, std::size_t seq_len, AttentionMaps* maps = nullptr) const;
  Tensor feed_forward(const Tensor& x) const;
  Tensor forward(const Tensor& x, std::size_t seq_len, AttentionMaps* maps = nullptr) const;

  void collect(const std::string& prefix, ParameterList& out) const;

  std::size_t hidden() const { return hidden_; }
  std::size_t heads() const { return heads_; }

  // The key projection has no bias: a key bias adds the same amount to every
  // score in a softmax row and cancels.
  Linear query;
  Linear key;
  Linear value;
  Linear output;
  LayerNorm attention_norm;
  Linear ffn_in;
  Linear ffn_out;
  LayerNorm ffn_norm;

 private:
  std::size_t hidden_;
  std::size_t heads_;
};

class EncoderStack {
 public:
  EncoderStack() = default;
  EncoderStack(std::size_t layers, std::size_t hidden, std::size_t heads, Initializer& init);

  /// Applies every layer in order. When `last_maps` is set it receives the
  /// attention probabilities of the final layer.
  Tensor forward(const Tensor& x, std::size_t seq_len, AttentionMaps* last_maps = nullptr) const;

  void collect(const std::string& prefix, ParameterList& out) const;

  std::size_t depth() const { return layers_.size(); }
  const EncoderLayer& layer(std::size_t i) const { return layers_.at(i); }
  EncoderLayer& layer(std::size_t i) { return layers_.at(i); }

 private:
  std::vector<EncoderLayer> layers_;
};

}  // namespace fineformer
