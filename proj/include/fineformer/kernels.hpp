// SPDX-License-Identifier: Apache-2.0
//
// Dense numeric kernels behind the tensor primitives. Every kernel exists in
// two flavours: `serial::` is the plain reference loop nest, `parallel::`
// distributes independent output rows (or attention blocks) over OpenMP
// workers while keeping the per-element summation order of the reference,
// so both produce bit-identical results. The unqualified entry points
// dispatch on worker_count().
//
// All matrices are row-major. Matmul kernels accumulate into `c`.
#pragma once

#include <cstddef>
#include <span>

namespace fineformer::kernels {

/// Block-diagonal multi-head attention layout: `sequences` independent
/// sequences of `seq_len` rows each, hidden width heads * head_dim.
struct AttentionShape {
  std::size_t sequences = 1;
  std::size_t seq_len = 1;
  std::size_t heads = 1;
  std::size_t head_dim = 1;

  std::size_t hidden() const { return heads * head_dim; }
  std::size_t rows() const { return sequences * seq_len; }
  std::size_t prob_count() const { return sequences * heads * seq_len * seq_len; }
};

#define FINEFORMER_KERNEL_DECLS                                                                  \
  /* c[m×n] += a[m×k] · b[k×n] */                                                                \
  void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,         \
              std::size_t m, std::size_t k, std::size_t n);                                      \
  /* c[m×n] += a[k×m]ᵀ · b[k×n] */                                                               \
  void matmul_at_b(std::span<const double> a, std::span<const double> b, std::span<double> c,    \
                   std::size_t m, std::size_t k, std::size_t n);                                 \
  /* c[m×n] += a[m×k] · b[n×k]ᵀ */                                                               \
  void matmul_a_bt(std::span<const double> a, std::span<const double> b, std::span<double> c,    \
                   std::size_t m, std::size_t k, std::size_t n);                                 \
  /* out = softmax(q kᵀ / sqrt(head_dim)) v per (sequence, head); probs receives the softmax. */ \
  void attention_forward(const AttentionShape& shape, std::span<const double> q,                 \
                         std::span<const double> k, std::span<const double> v,                   \
                         std::span<double> out, std::span<double> probs);                        \
  /* Accumulates adjoints of q, k, v given d_out and the forward probs. */                       \
  void attention_backward(const AttentionShape& shape, std::span<const double> q,                \
                          std::span<const double> k, std::span<const double> v,                  \
                          std::span<const double> probs, std::span<const double> d_out,          \
                          std::span<double> dq, std::span<double> dk, std::span<double> dv);

namespace serial {
FINEFORMER_KERNEL_DECLS
}

namespace parallel {
FINEFORMER_KERNEL_DECLS
}

FINEFORMER_KERNEL_DECLS

#undef FINEFORMER_KERNEL_DECLS

}  // namespace fineformer::kernels
