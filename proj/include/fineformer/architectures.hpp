// SPDX-License-Identifier: Apache-2.0
//
// The two encoder architectures (vision-only and video-text cross) plus the
// order-blind pooled-feature baseline, all sharing the frozen backbone stub.
#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "fineformer/nn.hpp"
#include "fineformer/tensor.hpp"

namespace fineformer {

enum class ModelKind { pooled_linear, vision, cross };

std::string_view to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view text);

struct ModelConfig {
  ModelKind kind = ModelKind::vision;
  std::size_t hidden = 768;        // embedding width h
  std::size_t layers = 3;          // vision encoder depth B
  std::size_t cross_layers = 2;    // cross encoder depth
  std::size_t heads = 12;
  std::size_t channels = 2048;     // backbone channels C′
  std::size_t tokens = 8;          // visual tokens T′
  std::size_t vocab = 66;          // attribute vocabulary N
  std::size_t num_classes = 99;
  std::size_t feature_height = 7;  // H′
  std::size_t feature_width = 7;   // W′
  std::size_t frames = 32;         // raw clip length T
  std::size_t height = 224;
  std::size_t width = 224;
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;
};

/// Backbone output, C′×T′×H′×W′ row-major.
struct FeatureVolume {
  std::size_t channels = 0, tokens = 0, height = 0, width = 0;
  std::vector<double> values;

  double at(std::size_t c, std::size_t t, std::size_t y, std::size_t x) const {
    return values[((c * tokens + t) * height + y) * width + x];
  }
};

/// Spatially pooled features, C′×T′ row-major.
struct FeatureSequence {
  std::size_t channels = 0, tokens = 0;
  std::vector<double> values;

  double at(std::size_t c, std::size_t t) const { return values[c * tokens + t]; }
};

/// Raw clip, T×H×W×3 row-major.
struct Video {
  std::size_t frames = 0, height = 0, width = 0;
  std::vector<double> values;

  double at(std::size_t t, std::size_t y, std::size_t x, std::size_t rgb) const {
    return values[((t * height + y) * width + x) * 3 + rgb];
  }
};

using ModelInput = std::variant<FeatureSequence, Video>;

/// Stand-in for the pretrained 3D CNN: temporal striding T→T′, patch
/// averaging H×W→H′×W′ and a fixed random 3→C′ linear map (no bias). Its
/// weights are drawn once from the model seed and never trained.
class BackboneStub {
 public:
  explicit BackboneStub(const ModelConfig& config);

  FeatureVolume forward(const Video& video) const;
  /// The fixed 3×C′ projection, as a tensor that does not require gradients.
  NamedTensor projection() const;
  void set_projection(std::span<const double> values);

 private:
  std::size_t channels_, tokens_, feature_height_, feature_width_;
  std::size_t frames_, height_, width_;
  std::vector<double> projection_;  // 3×C′
};

FeatureSequence spatial_avg_pool(const FeatureVolume& volume);

/// Ordered attribute descriptions; the token id of description i is i.
struct Vocabulary {
  std::vector<std::string> descriptions;

  std::size_t size() const { return descriptions.size(); }
  std::vector<std::size_t> token_ids() const;

  static Vocabulary numbered(std::size_t count);
};

/// Optional intermediate values captured during a forward pass.
struct ForwardTrace {
  Tensor embedded;     // encoder input
  Tensor encoded;      // encoder output
  Tensor visual_part;  // cross model: visual rows of the encoder output
  Tensor text_part;    // cross model: text rows of the encoder output
  Tensor joint;        // feature fed to the classifier
  AttentionMaps last_attention;
};

class ActionModel {
 public:
  explicit ActionModel(const ModelConfig& config);
  virtual ~ActionModel() = default;

  const ModelConfig& config() const { return config_; }
  const BackboneStub& backbone() const { return backbone_; }
  BackboneStub& backbone() { return backbone_; }

  /// Feature sequences pass through after an extent check; videos go through
  /// the frozen backbone and spatial pooling.
  FeatureSequence prepare(const ModelInput& input) const;

  /// Logits of shape batch×num_classes.
  virtual Tensor forward(std::span<const FeatureSequence> batch, ForwardTrace* trace = nullptr) const = 0;
  Tensor forward_inputs(std::span<const ModelInput> inputs) const;

  /// Trainable parameters in a fixed order.
  virtual ParameterList parameters() const = 0;
  /// Backbone weights; never handed to an optimizer.
  ParameterList frozen_parameters() const;

 protected:
  /// Stacks the batch as (batch·T′)×C′ token rows (time-major per example).
  Tensor token_rows(std::span<const FeatureSequence> batch) const;

  ModelConfig config_;
  BackboneStub backbone_;
};

/// Projection C′→h plus a learned T′×h positional table.
struct VideoEmbedding {
  VideoEmbedding() = default;
  VideoEmbedding(const ModelConfig& config, Initializer& init);

  Tensor forward(const Tensor& token_rows, std::size_t batch) const;
  void collect(const std::string& prefix, ParameterList& out) const;

  Linear projection;
  Tensor positions;
};

/// Temporal mean pooling followed by one linear layer; blind to token order.
class PooledLinearModel : public ActionModel {
 public:
  explicit PooledLinearModel(const ModelConfig& config);

  Tensor forward(std::span<const FeatureSequence> batch, ForwardTrace* trace = nullptr) const override;
  ParameterList parameters() const override;

  Linear classifier;
};

class VisionEncoderModel : public ActionModel {
 public:
  explicit VisionEncoderModel(const ModelConfig& config);

  Tensor video_embed(std::span<const FeatureSequence> batch) const;
  Tensor forward(std::span<const FeatureSequence> batch, ForwardTrace* trace = nullptr) const override;
  ParameterList parameters() const override;

  VideoEmbedding embedding;
  EncoderStack encoder;
  Linear classifier;
};

class CrossEncoderModel : public ActionModel {
 public:
  explicit CrossEncoderModel(const ModelConfig& config);

  Tensor video_embed(std::span<const FeatureSequence> batch) const;
  /// N×h: text table rows plus cross positional rows T′..T′+N−1.
  Tensor text_embed() const;
  /// Per sequence: T′ visual rows then N text rows. Visual rows receive
  /// cross positional rows 0..T′−1 (text rows got theirs in text_embed) and
  /// every row receives its modality's token-type row.
  Tensor cross_embed(const Tensor& visual, const Tensor& text, std::size_t batch) const;

  Tensor forward(std::span<const FeatureSequence> batch, ForwardTrace* trace = nullptr) const override;
  ParameterList parameters() const override;

  /// N×T′ row-major: head-averaged attention of each text token on each
  /// visual token in the last encoder layer.
  std::vector<double> cross_attention_diagnostic(const FeatureSequence& input) const;

  const Vocabulary& vocabulary() const { return vocabulary_; }

  VideoEmbedding embedding;
  Embedding text_table;
  Tensor cross_positions;  // (T′+N)×h
  Tensor token_types;      // 2×h: row 0 visual, row 1 text
  EncoderStack encoder;
  Linear classifier;       // 2h → classes

 private:
  Vocabulary vocabulary_;
};

std::unique_ptr<ActionModel> make_model(const ModelConfig& config);

/// Copies values into the model's parameters (trainable and frozen) by name.
/// Throws FormatError on a missing name or shape mismatch.
void load_parameters(ActionModel& model, std::span<const NamedTensor> values);

}  // namespace fineformer
