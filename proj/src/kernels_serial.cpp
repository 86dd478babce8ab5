// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <vector>

#include "fineformer/kernels.hpp"

namespace fineformer::kernels::serial {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
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
  for (std::size_t i = 0; i < m; ++i) {
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
  for (std::size_t i = 0; i < m; ++i) {
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

  for (std::size_t seq = 0; seq < shape.sequences; ++seq) {
    for (std::size_t head = 0; head < shape.heads; ++head) {
      const std::size_t row0 = seq * s;
      const std::size_t col0 = head * d;
      double* p_block = probs.data() + (seq * shape.heads + head) * s * s;

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
}

void attention_backward(const AttentionShape& shape, std::span<const double> q,
                        std::span<const double> k, std::span<const double> v,
                        std::span<const double> probs, std::span<const double> d_out,
                        std::span<double> dq, std::span<double> dk, std::span<double> dv) {
  const std::size_t s = shape.seq_len;
  const std::size_t d = shape.head_dim;
  const std::size_t hidden = shape.hidden();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> d_scores(s);

  for (std::size_t seq = 0; seq < shape.sequences; ++seq) {
    for (std::size_t head = 0; head < shape.heads; ++head) {
      const std::size_t row0 = seq * s;
      const std::size_t col0 = head * d;
      const double* p_block = probs.data() + (seq * shape.heads + head) * s * s;

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

}  // namespace fineformer::kernels::serial
