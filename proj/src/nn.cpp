// SPDX-License-Identifier: Apache-2.0
#include "fineformer/nn.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "fineformer/errors.hpp"

namespace fineformer {
namespace {

// Standard deviation of a unit normal truncated to [-2, 2].
double truncated_unit_std() {
  const double phi2 = std::exp(-2.0) * 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
  const double mass = std::erf(2.0 / std::numbers::sqrt2);
  return std::sqrt(1.0 - 2.0 * 2.0 * phi2 / mass);
}

}  // namespace

Initializer::Initializer(std::uint64_t seed, double weight_std)
    : rng_(seed), scale_(weight_std / truncated_unit_std()) {}

double Initializer::truncated_normal() {
  for (;;) {
    const double z = normal_(rng_);
    if (std::abs(z) <= 2.0) return z * scale_;
  }
}

Tensor Initializer::weight(Shape shape) {
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = truncated_normal();
  return Tensor(std::move(shape), std::move(values), true);
}

Tensor Initializer::zeros(Shape shape) { return Tensor::zeros(std::move(shape), true); }
Tensor Initializer::ones(Shape shape) { return Tensor::full(std::move(shape), 1.0, true); }

// ---- Linear / Embedding / LayerNorm ---------------------------------------

Linear::Linear(std::size_t in_dim, std::size_t out_dim, Initializer& init, bool with_bias)
    : weight(init.weight({in_dim, out_dim})) {
  if (with_bias) bias = init.zeros({out_dim});
}

Tensor Linear::forward(const Tensor& x) const {
  Tensor y = matmul(x, weight);
  return bias.defined() ? add_broadcast_row(y, bias) : y;
}

void Linear::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

Embedding::Embedding(std::size_t rows, std::size_t hidden, Initializer& init)
    : table(init.weight({rows, hidden})) {}

Tensor Embedding::lookup(std::span<const std::size_t> ids) const { return gather_rows(table, ids); }

void Embedding::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".table", table});
}

LayerNorm::LayerNorm(std::size_t hidden, Initializer& init)
    : gain(init.ones({hidden})), offset(init.zeros({hidden})) {}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm(x, gain, offset, eps); }

void LayerNorm::collect(const std::string& prefix, ParameterList& out) const {
  out.push_back({prefix + ".gain", gain});
  out.push_back({prefix + ".offset", offset});
}

// ---- EncoderLayer -----------------------------------------------------------

namespace {
std::size_t checked_heads(std::size_t hidden, std::size_t heads) {
  if (heads == 0 || hidden % heads != 0) {
    throw ConfigError("hidden width " + std::to_string(hidden) + " is not divisible by " +
                      std::to_string(heads) + " attention heads");
  }
  return heads;
}
}  // namespace

EncoderLayer::EncoderLayer(std::size_t hidden, std::size_t heads, Initializer& init)
    : query(hidden, hidden, init),
      key(hidden, hidden, init, /*with_bias=*/false),
      value(hidden, hidden, init),
      output(hidden, hidden, init),
      attention_norm(hidden, init),
      ffn_in(hidden, 4 * hidden, init),
      ffn_out(4 * hidden, hidden, init),
      ffn_norm(hidden, init),
      hidden_(hidden),
      heads_(checked_heads(hidden, heads)) {}

Tensor EncoderLayer::self_attention(const Tensor& x, std::size_t seq_len, AttentionMaps* maps) const {
  const Tensor q = query.forward(x);
  const Tensor k = key.forward(x);
  const Tensor v = value.forward(x);
  return output.forward(scaled_dot_attention(q, k, v, seq_len, heads_, maps));
}

Tensor EncoderLayer::feed_forward(const Tensor& x) const { return ffn_out.forward(gelu(ffn_in.forward(x))); }

Tensor EncoderLayer::forward(const Tensor& x, std::size_t seq_len, AttentionMaps* maps) const {
  const Tensor y = attention_norm.forward(add(x, self_attention(x, seq_len, maps)));
  return ffn_norm.forward(add(y, feed_forward(y)));
}

void EncoderLayer::collect(const std::string& prefix, ParameterList& out) const {
  query.collect(prefix + ".attention.query", out);
  key.collect(prefix + ".attention.key", out);
  value.collect(prefix + ".attention.value", out);
  output.collect(prefix + ".attention.output", out);
  attention_norm.collect(prefix + ".attention_norm", out);
  ffn_in.collect(prefix + ".ffn.in", out);
  ffn_out.collect(prefix + ".ffn.out", out);
  ffn_norm.collect(prefix + ".ffn_norm", out);
}

// ---- EncoderStack -----------------------------------------------------------

EncoderStack::EncoderStack(std::size_t layers, std::size_t hidden, std::size_t heads, Initializer& init) {
  if (layers == 0) throw ConfigError("encoder stack needs at least one layer");
  layers_.reserve(layers);
  for (std::size_t i = 0; i < layers; ++i) layers_.emplace_back(hidden, heads, init);
}

Tensor EncoderStack::forward(const Tensor& x, std::size_t seq_len, AttentionMaps* last_maps) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i].forward(h, seq_len, i + 1 == layers_.size() ? last_maps : nullptr);
  }
  return h;
}

void EncoderStack::collect(const std::string& prefix, ParameterList& out) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(prefix + ".layers." + std::to_string(i), out);
}

}  // namespace fineformer
