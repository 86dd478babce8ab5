// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors of doubles with define-by-run reverse-mode
// differentiation. Every primitive below records itself (inputs plus an
// adjoint closure) when at least one input requires a gradient and recording
// is enabled; backward() replays the recorded adjoints in reverse execution
// order.
#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fineformer {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  /// In-place access for optimizers, initializers and finite differencing.
  /// Mutating a tensor that already feeds a recorded graph invalidates it.
  std::span<double> mutable_values();
  double item() const;
  /// Element (row, col) of a rank-2 tensor.
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  /// Drops the gradient buffer; has_grad() is false afterwards.
  void clear_grad();

  /// A new leaf holding a copy of the values, with no gradient tracking.
  Tensor detach() const;

  /// Identity of the underlying storage (shared between copies of a handle).
  const void* id() const { return node_.get(); }

 private:
  friend struct detail::Node;
  friend class OpRecorder;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_recording_enabled();

/// Replays adjoints from a scalar loss. Gradients of leaf tensors accumulate
/// across calls; intermediate adjoints are recomputed from zero each call.
/// Returns the number of recorded operations replayed.
std::size_t backward(const Tensor& loss);

// ---- primitives ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor mul_scalar(const Tensor& x, double factor);
/// x[m×n] + row[n], the row added to every row of x.
Tensor add_broadcast_row(const Tensor& x, const Tensor& row);

Tensor relu(const Tensor& x);
/// Exact (erf) form: x·Φ(x).
Tensor gelu(const Tensor& x);

/// Softmax over the last axis with max subtraction. Throws NumericalError on
/// non-finite input.
Tensor softmax(const Tensor& x);

Tensor sum(const Tensor& x);
/// Arithmetic mean along `axis`; the axis is removed from the result shape.
Tensor mean_over_axis(const Tensor& x, std::size_t axis);

/// Stacks rank-2 tensors with equal column counts.
Tensor concat_rows(std::span<const Tensor> parts);
/// Rows of x picked by index (repeats allowed); adjoint scatter-adds.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices);

/// Row-wise normalisation to zero mean / unit variance (eps added to the
/// population variance), then scaled by `gain` and shifted by `offset`.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& offset, double eps = 1e-12);

/// Attention probabilities captured by scaled_dot_attention, laid out as
/// [sequence][head][query][key].
struct AttentionMaps {
  std::size_t sequences = 0;
  std::size_t heads = 0;
  std::size_t seq_len = 0;
  std::vector<double> probs;

  double at(std::size_t seq, std::size_t head, std::size_t query, std::size_t key) const {
    return probs[((seq * heads + head) * seq_len + query) * seq_len + key];
  }
};

/// Multi-head scaled dot-product attention core. q, k, v are
/// (sequences·seq_len)×hidden; each block of seq_len rows attends only within
/// itself, and columns are split into `heads` contiguous head slices.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            std::size_t seq_len, std::size_t heads, AttentionMaps* maps = nullptr);

/// Mean over the batch of −log softmax(logits[i])[labels[i]] (log-sum-exp form).
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

}  // namespace fineformer
