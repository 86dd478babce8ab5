// SPDX-License-Identifier: Apache-2.0
#include <omp.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "fineformer/kernels.hpp"
#include "fineformer/threads.hpp"

namespace fineformer::kernels {
namespace parallel {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* c_row = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double a_ip = a[i * k + p];
      const double* b_row = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) c_row[j] += a_ip * b_row[j];
    }
  }
}

void matmul_at_b(std::span<const double> a, std::span<const double> b, std::span<double> c,
                 std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* c_row = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double a_pi = a[p * m + i];
      const double* b_row = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) c_row[j] += a_pi * b_row[j];
    }
  }
}

void matmul_a_bt(std::span<const double> a, std::span<const double> b, std::span<double> c,
                 std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const double* a_row = a.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* b_row = b.data() + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a_row[p] * b_row[p];
      c[i * n + j] += acc;
    }
  }
}

void attention_forward(const AttentionShape& shape, std::span<const double> q,
                       std::span<const double> k, std::span<const double> v,
                       std::span<double> out, std::span<double> probs) {
  const std::size_t s = shape.seq_len;
  const std::size_t d = shape.head_dim;
  const std::size_t hidden = shape.hidden();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const auto blocks = static_cast<std::ptrdiff_t>(shape.sequences * shape.heads);

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t block = 0; block < blocks; ++block) {
    const std::size_t seq = static_cast<std::size_t>(block) / shape.heads;
    const std::size_t head = static_cast<std::size_t>(block) % shape.heads;
    const std::size_t row0 = seq * s;
    const std::size_t col0 = head * d;
    double* p_block = probs.data() + static_cast<std::size_t>(block) * s * s;

    for (std::size_t i = 0; i < s; ++i) {
      const double* q_row = q.data() + (row0 + i) * hidden + col0;
      double* p_row = p_block + i * s;
      double row_max = -INFINITY;
      for (std::size_t j = 0; j < s; ++j) {
        const double* k_row = k.data() + (row0 + j) * hidden + col0;
        double dot = 0.0;
        for (std::size_t t = 0; t < d; ++t) dot += q_row[t] * k_row[t];
        p_row[j] = dot * scale;
        row_max = std::max(row_max, p_row[j]);
      }
      double total = 0.0;
      for (std::size_t j = 0; j < s; ++j) {
        p_row[j] = std::exp(p_row[j] - row_max);
        total += p_row[j];
      }
      for (std::size_t j = 0; j < s; ++j) p_row[j] /= total;

      double* o_row = out.data() + (row0 + i) * hidden + col0;
      for (std::size_t t = 0; t < d; ++t) o_row[t] = 0.0;
      for (std::size_t j = 0; j < s; ++j) {
        const double* v_row = v.data() + (row0 + j) * hidden + col0;
        for (std::size_t t = 0; t < d; ++t) o_row[t] += p_row[j] * v_row[t];
      }
    }
  }
}

void attention_backward(const AttentionShape& shape, std::span<const double> q,
                        std::span<const double> k, std::span<const double> v,
                        std::span<const double> probs, std::span<const double> d_out,
                        std::span<double> dq, std::span<double> dk, std::span<double> dv) {
  const std::size_t s = shape.seq_len;
  const std::size_t d = shape.head_dim;
  const std::size_t hidden = shape.hidden();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const auto blocks = static_cast<std::ptrdiff_t>(shape.sequences * shape.heads);

#pragma omp parallel
  {
    std::vector<double> d_scores(s);
#pragma omp for schedule(static)
    for (std::ptrdiff_t block = 0; block < blocks; ++block) {
      const std::size_t seq = static_cast<std::size_t>(block) / shape.heads;
      const std::size_t head = static_cast<std::size_t>(block) % shape.heads;
      const std::size_t row0 = seq * s;
      const std::size_t col0 = head * d;
      const double* p_block = probs.data() + static_cast<std::size_t>(block) * s * s;

      for (std::size_t i = 0; i < s; ++i) {
        const double* p_row = p_block + i * s;
        const double* do_row = d_out.data() + (row0 + i) * hidden + col0;

        double weighted = 0.0;
        for (std::size_t j = 0; j < s; ++j) {
          const double* v_row = v.data() + (row0 + j) * hidden + col0;
          double* dv_row = dv.data() + (row0 + j) * hidden + col0;
          double dp = 0.0;
          for (std::size_t t = 0; t < d; ++t) {
            dp += do_row[t] * v_row[t];
            dv_row[t] += p_row[j] * do_row[t];
          }
          d_scores[j] = dp;
          weighted += p_row[j] * dp;
        }
        for (std::size_t j = 0; j < s; ++j) d_scores[j] = p_row[j] * (d_scores[j] - weighted) * scale;

        const double* q_row = q.data() + (row0 + i) * hidden + col0;
        double* dq_row = dq.data() + (row0 + i) * hidden + col0;
        for (std::size_t j = 0; j < s; ++j) {
          const double* k_row = k.data() + (row0 + j) * hidden + col0;
          double* dk_row = dk.data() + (row0 + j) * hidden + col0;
          for (std::size_t t = 0; t < d; ++t) {
            dq_row[t] += d_scores[j] * k_row[t];
            dk_row[t] += d_scores[j] * q_row[t];
          }
        }
      }
    }
  }
}

}  // namespace parallel

namespace {

// Below this many multiply-adds the fork/join cost dominates.
constexpr std::size_t kParallelWorkThreshold = 1u << 15;

bool use_parallel(std::size_t work) {
  return worker_count() > 1 && work >= kParallelWorkThreshold && omp_in_parallel() == 0;
}

}  // namespace

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n) {
  if (use_parallel(m * k * n)) {
    parallel::matmul(a, b, c, m, k, n);
  } else {
    serial::matmul(a, b, c, m, k, n);
  }
}

void matmul_at_b(std::span<const double> a, std::span<const double> b, std::span<double> c,
                 std::size_t m, std::size_t k, std::size_t n) {
  if (use_parallel(m * k * n)) {
    parallel::matmul_at_b(a, b, c, m, k, n);
  } else {
    serial::matmul_at_b(a, b, c, m, k, n);
  }
}

void matmul_a_bt(std::span<const double> a, std::span<const double> b, std::span<double> c,
                 std::size_t m, std::size_t k, std::size_t n) {
  if (use_parallel(m * k * n)) {
    parallel::matmul_a_bt(a, b, c, m, k, n);
  } else {
    serial::matmul_a_bt(a, b, c, m, k, n);
  }
}

void attention_forward(const AttentionShape& shape, std::span<const double> q,
                       std::span<const double> k, std::span<const double> v,
                       std::span<double> out, std::span<double> probs) {
  if (use_parallel(shape.prob_count() * shape.head_dim)) {
    parallel::attention_forward(shape, q, k, v, out, probs);
  } else {
    serial::attention_forward(shape, q, k, v, out, probs);
  }
}

void attention_backward(const AttentionShape& shape, std::span<const double> q,
                        std::span<const double> k, std::span<const double> v,
                        std::span<const double> probs, std::span<const double> d_out,
                        std::span<double> dq, std::span<double> dk, std::span<double> dv) {
  if (use_parallel(shape.prob_count() * shape.head_dim)) {
    parallel::attention_backward(shape, q, k, v, probs, d_out, dq, dk, dv);
  } else {
    serial::attention_backward(shape, q, k, v, probs, d_out, dq, dk, dv);
  }
}

}  // namespace fineformer::kernels
