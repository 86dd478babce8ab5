// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>

#include "fineformer/architectures.hpp"
#include "fineformer/errors.hpp"

namespace fineformer {

BackboneStub::BackboneStub(const ModelConfig& config)
    : channels_(config.channels),
      tokens_(config.tokens),
      feature_height_(config.feature_height),
      feature_width_(config.feature_width),
      frames_(config.frames),
      height_(config.height),
      width_(config.width),
      projection_(3 * config.channels) {
  std::mt19937_64 rng(config.seed ^ 0x5eedbac4b0e5ULL);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(3.0));
  for (auto& w : projection_) w = normal(rng);
}

FeatureVolume BackboneStub::forward(const Video& video) const {
  if (video.frames != frames_ || video.height != height_ || video.width != width_ ||
      video.values.size() != frames_ * height_ * width_ * 3) {
    throw ShapeError("backbone: expected video " + std::to_string(frames_) + "x" + std::to_string(height_) + "x" +
                     std::to_string(width_) + "x3, got " + std::to_string(video.frames) + "x" +
                     std::to_string(video.height) + "x" + std::to_string(video.width) + "x3");
  }
  const std::size_t stride = frames_ / tokens_;
  const std::size_t patch_h = height_ / feature_height_;
  const std::size_t patch_w = width_ / feature_width_;
  const double inv_patch = 1.0 / static_cast<double>(patch_h * patch_w);

  FeatureVolume out{channels_, tokens_, feature_height_, feature_width_,
                    std::vector<double>(channels_ * tokens_ * feature_height_ * feature_width_)};
  for (std::size_t t = 0; t < tokens_; ++t) {
    const std::size_t frame = t * stride;
    for (std::size_t y = 0; y < feature_height_; ++y) {
      for (std::size_t x = 0; x < feature_width_; ++x) {
        double rgb[3] = {0.0, 0.0, 0.0};
        for (std::size_t py = 0; py < patch_h; ++py)
          for (std::size_t px = 0; px < patch_w; ++px)
            for (std::size_t k = 0; k < 3; ++k) rgb[k] += video.at(frame, y * patch_h + py, x * patch_w + px, k);
        for (auto& v : rgb) v *= inv_patch;
        for (std::size_t c = 0; c < channels_; ++c) {
          out.values[((c * tokens_ + t) * feature_height_ + y) * feature_width_ + x] =
              rgb[0] * projection_[c] + rgb[1] * projection_[channels_ + c] + rgb[2] * projection_[2 * channels_ + c];
        }
      }
    }
  }
  return out;
}

NamedTensor BackboneStub::projection() const {
  return {"backbone.projection", Tensor({3, channels_}, projection_, false)};
}

void BackboneStub::set_projection(std::span<const double> values) {
  if (values.size() != projection_.size()) throw FormatError("backbone projection size mismatch");
  projection_.assign(values.begin(), values.end());
}

FeatureSequence spatial_avg_pool(const FeatureVolume& volume) {
  if (volume.height == 0 || volume.width == 0) throw ShapeError("spatial_avg_pool: empty spatial extent");
  FeatureSequence out{volume.channels, volume.tokens, std::vector<double>(volume.channels * volume.tokens)};
  const double inv = 1.0 / static_cast<double>(volume.height * volume.width);
  for (std::size_t c = 0; c < volume.channels; ++c) {
    for (std::size_t t = 0; t < volume.tokens; ++t) {
      double total = 0.0;
      for (std::size_t y = 0; y < volume.height; ++y)
        for (std::size_t x = 0; x < volume.width; ++x) total += volume.at(c, t, y, x);
      out.values[c * volume.tokens + t] = total * inv;
    }
  }
  return out;
}

}  // namespace fineformer
