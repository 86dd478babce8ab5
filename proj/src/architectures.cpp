// SPDX-License-Identifier: Apache-2.0
#include "fineformer/architectures.hpp"

#include <algorithm>
#include <array>
#include <map>

#include "fineformer/errors.hpp"

namespace fineformer {

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::pooled_linear: return "pooled_linear";
    case ModelKind::vision: return "vision";
    case ModelKind::cross: return "cross";
  }
  return "unknown";
}

ModelKind parse_model_kind(std::string_view text) {
  if (text == "pooled_linear") return ModelKind::pooled_linear;
  if (text == "vision") return ModelKind::vision;
  if (text == "cross") return ModelKind::cross;
  throw ConfigError("unknown model kind '" + std::string(text) + "' (expected pooled_linear|vision|cross)");
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("model.") + name + " must be >= 1");
  };
  positive(hidden, "hidden");
  positive(layers, "layers");
  positive(cross_layers, "cross_layers");
  positive(heads, "heads");
  positive(channels, "channels");
  positive(tokens, "tokens");
  positive(vocab, "vocab");
  positive(num_classes, "num_classes");
  positive(feature_height, "feature_height");
  positive(feature_width, "feature_width");
  positive(frames, "frames");
  positive(height, "height");
  positive(width, "width");
  if (hidden % heads != 0) {
    throw ConfigError("model.hidden (" + std::to_string(hidden) + ") must be divisible by model.heads (" +
                      std::to_string(heads) + ")");
  }
  if (kind != ModelKind::pooled_linear && hidden < 2) throw ConfigError("model.hidden must be >= 2 for layer norm");
  if (frames % tokens != 0) throw ConfigError("model.frames must be a multiple of model.tokens");
  if (height % feature_height != 0 || width % feature_width != 0) {
    throw ConfigError("model.height/width must be multiples of model.feature_height/feature_width");
  }
}

std::vector<std::size_t> Vocabulary::token_ids() const {
  std::vector<std::size_t> ids(size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  return ids;
}

Vocabulary Vocabulary::numbered(std::size_t count) {
  Vocabulary v;
  for (std::size_t i = 0; i < count; ++i) v.descriptions.push_back("attribute_" + std::to_string(i));
  return v;
}

// ---- ActionModel ------------------------------------------------------------

namespace {
const ModelConfig& validated(const ModelConfig& config) {
  config.validate();
  return config;
}
}  // namespace

ActionModel::ActionModel(const ModelConfig& config) : config_(validated(config)), backbone_(config_) {}

FeatureSequence ActionModel::prepare(const ModelInput& input) const {
  if (const auto* features = std::get_if<FeatureSequence>(&input)) {
    if (features->channels != config_.channels || features->tokens != config_.tokens ||
        features->values.size() != config_.channels * config_.tokens) {
      throw ShapeError("feature sequence " + std::to_string(features->channels) + "x" +
                       std::to_string(features->tokens) + " does not match model " +
                       std::to_string(config_.channels) + "x" + std::to_string(config_.tokens));
    }
    return *features;
  }
  return spatial_avg_pool(backbone_.forward(std::get<Video>(input)));
}

Tensor ActionModel::forward_inputs(std::span<const ModelInput> inputs) const {
  std::vector<FeatureSequence> batch;
  batch.reserve(inputs.size());
  for (const auto& in : inputs) batch.push_back(prepare(in));
  return forward(batch);
}

ParameterList ActionModel::frozen_parameters() const { return {backbone_.projection()}; }

Tensor ActionModel::token_rows(std::span<const FeatureSequence> batch) const {
  if (batch.empty()) throw ShapeError("forward: empty batch");
  const std::size_t c_dim = config_.channels, t_dim = config_.tokens;
  std::vector<double> rows(batch.size() * t_dim * c_dim);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& f = batch[b];
    if (f.channels != c_dim || f.tokens != t_dim || f.values.size() != c_dim * t_dim) {
      throw ShapeError("forward: feature sequence extents do not match the model");
    }
    for (std::size_t t = 0; t < t_dim; ++t)
      for (std::size_t c = 0; c < c_dim; ++c) rows[(b * t_dim + t) * c_dim + c] = f.values[c * t_dim + t];
  }
  return Tensor({batch.size() * t_dim, c_dim}, std::move(rows));
}

namespace {

std::vector<std::size_t> repeated_range(std::size_t count, std::size_t times, std::size_t offset = 0) {
  std::vector<std::size_t> ids;
  ids.reserve(count * times);
  for (std::size_t r = 0; r < times; ++r)
    for (std::size_t i = 0; i < count; ++i) ids.push_back(offset + i);
  return ids;
}

// Mean over each block of `seq_len` consecutive rows: (batch·seq_len)×h → batch×h.
Tensor pool_sequences(const Tensor& rows, std::size_t seq_len) {
  const std::size_t h = rows.dim(1);
  return mean_over_axis(reshape(rows, {rows.dim(0) / seq_len, seq_len, h}), 1);
}

Tensor concat_columns(const Tensor& left, const Tensor& right) {
  const std::array<Tensor, 2> parts{transpose(left), transpose(right)};
  return transpose(concat_rows(parts));
}

}  // namespace

// ---- VideoEmbedding ---------------------------------------------------------

VideoEmbedding::VideoEmbedding(const ModelConfig& config, Initializer& init)
    : projection(config.channels, config.hidden, init), positions(init.weight({config.tokens, config.hidden})) {}

Tensor VideoEmbedding::forward(const Tensor& token_rows, std::size_t batch) const {
  const auto ids = repeated_range(positions.dim(0), batch);
  return add(projection.forward(token_rows), gather_rows(positions, ids));
}

void VideoEmbedding::collect(const std::string& prefix, ParameterList& out) const {
  projection.collect(prefix + ".projection", out);
  out.push_back({prefix + ".positions", positions});
}

// ---- PooledLinearModel ------------------------------------------------------

namespace {
// Parameters are drawn in member declaration order from one seeded stream.
Initializer make_init(const ModelConfig& config) { return Initializer(config.seed); }
}  // namespace

PooledLinearModel::PooledLinearModel(const ModelConfig& config) : ActionModel(config) {
  auto init = make_init(config_);
  classifier = Linear(config_.channels, config_.num_classes, init);
}

Tensor PooledLinearModel::forward(std::span<const FeatureSequence> batch, ForwardTrace* trace) const {
  const Tensor pooled = pool_sequences(token_rows(batch), config_.tokens);
  if (trace != nullptr) trace->joint = pooled;
  return classifier.forward(pooled);
}

ParameterList PooledLinearModel::parameters() const {
  ParameterList out;
  classifier.collect("classifier", out);
  return out;
}

// ---- VisionEncoderModel -----------------------------------------------------

VisionEncoderModel::VisionEncoderModel(const ModelConfig& config) : ActionModel(config) {
  auto init = make_init(config_);
  embedding = VideoEmbedding(config_, init);
  encoder = EncoderStack(config_.layers, config_.hidden, config_.heads, init);
  classifier = Linear(config_.hidden, config_.num_classes, init);
}

Tensor VisionEncoderModel::video_embed(std::span<const FeatureSequence> batch) const {
  return embedding.forward(token_rows(batch), batch.size());
}

Tensor VisionEncoderModel::forward(std::span<const FeatureSequence> batch, ForwardTrace* trace) const {
  const Tensor embedded = video_embed(batch);
  AttentionMaps* maps = trace != nullptr ? &trace->last_attention : nullptr;
  const Tensor encoded = encoder.forward(embedded, config_.tokens, maps);
  const Tensor pooled = pool_sequences(encoded, config_.tokens);
  if (trace != nullptr) {
    trace->embedded = embedded;
    trace->encoded = encoded;
    trace->joint = pooled;
  }
  return classifier.forward(pooled);
}

ParameterList VisionEncoderModel::parameters() const {
  ParameterList out;
  embedding.collect("embedding", out);
  encoder.collect("encoder", out);
  classifier.collect("classifier", out);
  return out;
}

// ---- CrossEncoderModel ------------------------------------------------------

CrossEncoderModel::CrossEncoderModel(const ModelConfig& config)
    : ActionModel(config), vocabulary_(Vocabulary::numbered(config.vocab)) {
  auto init = make_init(config_);
  embedding = VideoEmbedding(config_, init);
  text_table = Embedding(config_.vocab, config_.hidden, init);
  cross_positions = init.weight({config_.tokens + config_.vocab, config_.hidden});
  token_types = init.weight({2, config_.hidden});
  encoder = EncoderStack(config_.cross_layers, config_.hidden, config_.heads, init);
  classifier = Linear(2 * config_.hidden, config_.num_classes, init);
}

Tensor CrossEncoderModel::video_embed(std::span<const FeatureSequence> batch) const {
  return embedding.forward(token_rows(batch), batch.size());
}

Tensor CrossEncoderModel::text_embed() const {
  const auto ids = vocabulary_.token_ids();
  const auto positions = repeated_range(config_.vocab, 1, config_.tokens);
  return add(text_table.lookup(ids), gather_rows(cross_positions, positions));
}

Tensor CrossEncoderModel::cross_embed(const Tensor& visual, const Tensor& text, std::size_t batch) const {
  const std::size_t t_dim = config_.tokens, n_dim = config_.vocab;
  if (visual.rank() != 2 || visual.dim(0) != batch * t_dim || text.rank() != 2 || text.dim(0) != n_dim ||
      visual.dim(1) != text.dim(1)) {
    throw ShapeError("cross_embed: visual " + shape_to_string(visual.shape()) + " / text " +
                     shape_to_string(text.shape()) + " inconsistent with batch " + std::to_string(batch));
  }
  const std::array<Tensor, 2> parts{visual, text};
  const Tensor stacked = concat_rows(parts);

  std::vector<std::size_t> order, positions, types;
  const std::size_t seq_len = t_dim + n_dim;
  order.reserve(batch * seq_len);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < t_dim; ++t) order.push_back(b * t_dim + t);
    for (std::size_t i = 0; i < n_dim; ++i) order.push_back(batch * t_dim + i);
  }
  const Tensor sequence = gather_rows(stacked, order);

  // Visual rows take cross positions 0..T′−1; text rows already carry T′.. from text_embed.
  const std::array<Tensor, 2> pos_parts{gather_rows(cross_positions, repeated_range(t_dim, 1)),
                                         Tensor::zeros({n_dim, config_.hidden})};
  const Tensor per_sequence_positions = concat_rows(pos_parts);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t p = 0; p < seq_len; ++p) positions.push_back(p);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < t_dim; ++t) types.push_back(0);
    for (std::size_t i = 0; i < n_dim; ++i) types.push_back(1);
  }
  return add(add(sequence, gather_rows(per_sequence_positions, positions)), gather_rows(token_types, types));
}

Tensor CrossEncoderModel::forward(std::span<const FeatureSequence> batch, ForwardTrace* trace) const {
  const std::size_t b_dim = batch.size();
  const std::size_t t_dim = config_.tokens, n_dim = config_.vocab, seq_len = t_dim + n_dim;
  const Tensor embedded = cross_embed(video_embed(batch), text_embed(), b_dim);
  AttentionMaps* maps = trace != nullptr ? &trace->last_attention : nullptr;
  const Tensor encoded = encoder.forward(embedded, seq_len, maps);

  std::vector<std::size_t> visual_rows, text_rows;
  for (std::size_t b = 0; b < b_dim; ++b) {
    for (std::size_t t = 0; t < t_dim; ++t) visual_rows.push_back(b * seq_len + t);
    for (std::size_t i = 0; i < n_dim; ++i) text_rows.push_back(b * seq_len + t_dim + i);
  }
  const Tensor visual_part = gather_rows(encoded, visual_rows);
  const Tensor text_part = gather_rows(encoded, text_rows);
  const Tensor joint = concat_columns(pool_sequences(visual_part, t_dim), pool_sequences(text_part, n_dim));
  if (trace != nullptr) {
    trace->embedded = embedded;
    trace->encoded = encoded;
    trace->visual_part = visual_part;
    trace->text_part = text_part;
    trace->joint = joint;
  }
  return classifier.forward(joint);
}

ParameterList CrossEncoderModel::parameters() const {
  ParameterList out;
  embedding.collect("embedding", out);
  text_table.collect("text", out);
  out.push_back({"cross.positions", cross_positions});
  out.push_back({"cross.token_types", token_types});
  encoder.collect("encoder", out);
  classifier.collect("classifier", out);
  return out;
}

std::vector<double> CrossEncoderModel::cross_attention_diagnostic(const FeatureSequence& input) const {
  NoGradGuard no_grad;
  ForwardTrace trace;
  const std::array<FeatureSequence, 1> batch{input};
  forward(batch, &trace);
  const auto& maps = trace.last_attention;
  const std::size_t t_dim = config_.tokens, n_dim = config_.vocab;
  std::vector<double> out(n_dim * t_dim, 0.0);
  for (std::size_t head = 0; head < maps.heads; ++head)
    for (std::size_t i = 0; i < n_dim; ++i)
      for (std::size_t t = 0; t < t_dim; ++t) out[i * t_dim + t] += maps.at(0, head, t_dim + i, t);
  for (auto& v : out) v /= static_cast<double>(maps.heads);
  return out;
}

// ---- factory / loading ------------------------------------------------------

std::unique_ptr<ActionModel> make_model(const ModelConfig& config) {
  switch (config.kind) {
    case ModelKind::pooled_linear: return std::make_unique<PooledLinearModel>(config);
    case ModelKind::vision: return std::make_unique<VisionEncoderModel>(config);
    case ModelKind::cross: return std::make_unique<CrossEncoderModel>(config);
  }
  throw ConfigError("unknown model kind");
}

void load_parameters(ActionModel& model, std::span<const NamedTensor> values) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& nt : values) by_name[nt.name] = &nt.tensor;

  auto fetch = [&](const NamedTensor& target) -> const Tensor& {
    const auto it = by_name.find(target.name);
    if (it == by_name.end()) throw FormatError("missing parameter '" + target.name + "'");
    if (it->second->shape() != target.tensor.shape()) {
      throw FormatError("parameter '" + target.name + "' has shape " + shape_to_string(it->second->shape()) +
                        ", model expects " + shape_to_string(target.tensor.shape()));
    }
    return *it->second;
  };

  for (auto& p : model.parameters()) {
    const Tensor& src = fetch(p);
    std::copy(src.values().begin(), src.values().end(), p.tensor.mutable_values().begin());
  }
  for (const auto& p : model.frozen_parameters()) {
    model.backbone().set_projection(fetch(p).values());
  }
}

}  // namespace fineformer
