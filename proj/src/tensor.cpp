// SPDX-License-Identifier: Apache-2.0
#include "fineformer/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "fineformer/errors.hpp"
#include "fineformer/kernels.hpp"

namespace fineformer {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until backward reaches the node
  bool requires_grad = false;
  std::uint64_t sequence = 0;  // execution order; 0 for leaves
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> adjoint;

  bool is_op() const { return static_cast<bool>(adjoint); }
};

}  // namespace detail

using detail::Node;

namespace {

thread_local bool t_recording = true;
std::atomic<std::uint64_t> g_sequence{0};

// Returns the gradient buffer to accumulate into, or nullptr when the node
// does not take gradients.
double* grad_target(Node& node) {
  if (!node.requires_grad) return nullptr;
  if (node.grad.empty()) node.grad.assign(node.values.size(), 0.0);
  return node.grad.data();
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    std::ostringstream os;
    os << op << ": expected rank " << rank << ", got shape " << shape_to_string(t.shape());
    throw ShapeError(os.str());
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    std::ostringstream os;
    os << op << ": shape mismatch " << shape_to_string(a.shape()) << " vs "
       << shape_to_string(b.shape());
    throw ShapeError(os.str());
  }
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor");
}

}  // namespace

// Builds result tensors and wires them into the graph.
class OpRecorder {
 public:
  static Node& node(const Tensor& t) { return *t.node_; }

  static Tensor make(Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
                     std::function<void(Node&)> adjoint) {
    return make(std::move(shape), std::move(values), std::vector<Tensor>(inputs), std::move(adjoint));
  }

  static Tensor make(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                     std::function<void(Node&)> adjoint) {
    auto out = std::make_shared<Node>();
    out->shape = std::move(shape);
    out->values = std::move(values);
    bool needs_grad = false;
    if (t_recording) {
      for (const auto& in : inputs) needs_grad = needs_grad || in.node_->requires_grad;
    }
    if (needs_grad) {
      out->requires_grad = true;
      out->sequence = ++g_sequence;
      out->inputs.reserve(inputs.size());
      for (const auto& in : inputs) out->inputs.push_back(in.node_);
      out->adjoint = std::move(adjoint);
    }
    return Tensor(std::move(out));
  }
};

// ---- Tensor ---------------------------------------------------------------

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto extent : shape) {
    if (extent == 0) throw ShapeError("tensor extents must be positive, got " + shape_to_string(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor of shape " + shape_to_string(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->values = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_to_string(shape()));
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->values.size(); }

std::span<const double> Tensor::values() const { return node_->values; }
std::span<double> Tensor::mutable_values() { return node_->values; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_to_string(shape()));
  return node_->values[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  require_rank(*this, 2, "at");
  return node_->values[row * node_->shape[1] + col];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::is_leaf() const { return !node_->is_op(); }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::mutable_grad() {
  if (node_->grad.empty()) node_->grad.assign(node_->values.size(), 0.0);
  return node_->grad;
}

void Tensor::clear_grad() {
  node_->grad.clear();
  node_->grad.shrink_to_fit();
}

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->values, false); }

NoGradGuard::NoGradGuard() : previous_(t_recording) { t_recording = false; }
NoGradGuard::~NoGradGuard() { t_recording = previous_; }

bool grad_recording_enabled() { return t_recording; }

std::size_t backward(const Tensor& loss) {
  require_defined(loss, "backward");
  Node& root = OpRecorder::node(loss);
  if (root.values.size() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + shape_to_string(root.shape));
  }
  if (!root.requires_grad) {
    throw std::invalid_argument("backward: loss does not depend on any tensor that requires a gradient");
  }

  std::vector<Node*> ops;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{&root};
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    if (n->is_op()) {
      ops.push_back(n);
      n->grad.assign(n->values.size(), 0.0);
      for (const auto& in : n->inputs) stack.push_back(in.get());
    } else if (n->requires_grad && n->grad.empty()) {
      n->grad.assign(n->values.size(), 0.0);
    }
  }

  root.grad[0] += 1.0;
  std::sort(ops.begin(), ops.end(), [](const Node* a, const Node* b) { return a->sequence > b->sequence; });
  for (Node* op : ops) op->adjoint(*op);
  return ops.size();
}

// ---- primitives ------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_to_string(a.shape()) + " and " +
                     shape_to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  kernels::matmul(a.values(), b.values(), out, m, k, n);
  return OpRecorder::make({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    if (double* ga = grad_target(na)) {
      kernels::matmul_a_bt(self.grad, nb.values, std::span<double>(ga, m * k), m, n, k);
    }
    if (double* gb = grad_target(nb)) {
      kernels::matmul_at_b(na.values, self.grad, std::span<double>(gb, k * n), k, m, n);
    }
  });
}

Tensor transpose(const Tensor& x) {
  require_rank(x, 2, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(r * c);
  const auto in = x.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
  return OpRecorder::make({c, r}, std::move(out), {x}, [r, c](Node& self) {
    if (double* g = grad_target(*self.inputs[0])) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined(x, "reshape");
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_to_string(x.shape()) + " as " + shape_to_string(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return OpRecorder::make(std::move(shape), std::move(out), {x}, [](Node& self) {
    if (double* g = grad_target(*self.inputs[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto va = a.values(), vb = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
  return OpRecorder::make(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (auto& in : self.inputs) {
      if (double* g = grad_target(*in)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  const auto va = a.values(), vb = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] - vb[i];
  return OpRecorder::make(a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (double* g = grad_target(*self.inputs[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = grad_target(*self.inputs[1])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto va = a.values(), vb = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
  return OpRecorder::make(a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    // Read both value buffers before writing: a and b may be the same node.
    if (double* g = grad_target(na)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * nb.values[i];
    }
    if (double* g = grad_target(nb)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * na.values[i];
    }
  });
}

Tensor mul_scalar(const Tensor& x, double factor) {
  require_defined(x, "mul_scalar");
  std::vector<double> out(x.values().begin(), x.values().end());
  for (auto& v : out) v *= factor;
  return OpRecorder::make(x.shape(), std::move(out), {x}, [factor](Node& self) {
    if (double* g = grad_target(*self.inputs[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += factor * self.grad[i];
    }
  });
}

Tensor add_broadcast_row(const Tensor& x, const Tensor& row) {
  require_rank(x, 2, "add_broadcast_row");
  require_rank(row, 1, "add_broadcast_row");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (row.dim(0) != n) {
    throw ShapeError("add_broadcast_row: row " + shape_to_string(row.shape()) + " does not match trailing extent of " +
                     shape_to_string(x.shape()));
  }
  std::vector<double> out(m * n);
  const auto vx = x.values(), vr = row.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = vx[i * n + j] + vr[j];
  return OpRecorder::make(x.shape(), std::move(out), {x, row}, [m, n](Node& self) {
    if (double* g = grad_target(*self.inputs[0])) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = grad_target(*self.inputs[1])) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
    }
  });
}

Tensor relu(const Tensor& x) {
  require_defined(x, "relu");
  std::vector<double> out(x.values().begin(), x.values().end());
  for (auto& v : out) v = v > 0.0 ? v : 0.0;
  return OpRecorder::make(x.shape(), std::move(out), {x}, [](Node& self) {
    Node& in = *self.inputs[0];
    if (double* g = grad_target(in)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (in.values[i] > 0.0) g[i] += self.grad[i];
      }
    }
  });
}

Tensor gelu(const Tensor& x) {
  require_defined(x, "gelu");
  const auto vx = x.values();
  std::vector<double> out(vx.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.5 * vx[i] * (1.0 + std::erf(vx[i] * std::numbers::sqrt2 / 2.0));
  }
  return OpRecorder::make(x.shape(), std::move(out), {x}, [](Node& self) {
    Node& in = *self.inputs[0];
    if (double* g = grad_target(in)) {
      const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double v = in.values[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        g[i] += self.grad[i] * (cdf + v * pdf);
      }
    }
  });
}

Tensor softmax(const Tensor& x) {
  require_defined(x, "softmax");
  if (x.rank() == 0) throw ShapeError("softmax: needs rank >= 1");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  const auto vx = x.values();
  for (double v : vx) {
    if (!std::isfinite(v)) throw NumericalError("softmax: non-finite input");
  }
  std::vector<double> out(vx.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in_row = vx.data() + r * n;
    double* out_row = out.data() + r * n;
    const double row_max = *std::max_element(in_row, in_row + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out_row[j] = std::exp(in_row[j] - row_max);
      total += out_row[j];
    }
    for (std::size_t j = 0; j < n; ++j) out_row[j] /= total;
  }
  return OpRecorder::make(x.shape(), std::move(out), {x}, [rows, n](Node& self) {
    if (double* g = grad_target(*self.inputs[0])) {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = self.values.data() + r * n;
        const double* dy = self.grad.data() + r * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
        for (std::size_t j = 0; j < n; ++j) g[r * n + j] += y[j] * (dy[j] - dot);
      }
    }
  });
}

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  double total = 0.0;
  for (double v : x.values()) total += v;
  return OpRecorder::make({}, {total}, {x}, [](Node& self) {
    if (double* g = grad_target(*self.inputs[0])) {
      const double dy = self.grad[0];
      for (std::size_t i = 0; i < self.inputs[0]->values.size(); ++i) g[i] += dy;
    }
  });
}

Tensor mean_over_axis(const Tensor& x, std::size_t axis) {
  require_defined(x, "mean_over_axis");
  if (axis >= x.rank()) {
    throw ShapeError("mean_over_axis: axis " + std::to_string(axis) + " invalid for shape " +
                     shape_to_string(x.shape()));
  }
  const auto& shape = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t n = shape[axis];

  Shape out_shape;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out_shape.push_back(shape[i]);
  }
  std::vector<double> out(outer * inner, 0.0);
  const auto vx = x.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += vx[(o * n + a) * inner + i];
  const double inv_n = 1.0 / static_cast<double>(n);
  for (auto& v : out) v *= inv_n;

  return OpRecorder::make(std::move(out_shape), std::move(out), {x}, [outer, n, inner, inv_n](Node& self) {
    if (double* g = grad_target(*self.inputs[0])) {
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t a = 0; a < n; ++a)
          for (std::size_t i = 0; i < inner; ++i) g[(o * n + a) * inner + i] += self.grad[o * inner + i] * inv_n;
    }
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  for (const auto& p : parts) require_rank(p, 2, "concat_rows");
  const std::size_t cols = parts[0].dim(1);
  std::size_t rows = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.dim(1) != cols) {
      throw ShapeError("concat_rows: column mismatch " + shape_to_string(parts[0].shape()) + " vs " +
                       shape_to_string(p.shape()));
    }
    offsets.push_back(rows * cols);
    rows += p.dim(0);
  }
  std::vector<double> out;
  out.reserve(rows * cols);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  return OpRecorder::make({rows, cols}, std::move(out), std::vector<Tensor>(parts.begin(), parts.end()),
                          [offsets](Node& self) {
                            for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                              Node& in = *self.inputs[k];
                              if (double* g = grad_target(in)) {
                                for (std::size_t i = 0; i < in.values.size(); ++i) g[i] += self.grad[offsets[k] + i];
                              }
                            }
                          });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices) {
  require_rank(x, 2, "gather_rows");
  if (indices.empty()) throw ShapeError("gather_rows: empty index list");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<double> out(indices.size() * cols);
  const auto vx = x.values();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= rows) {
      throw std::out_of_range("gather_rows: index " + std::to_string(indices[r]) + " out of range for " +
                              std::to_string(rows) + " rows");
    }
    std::copy_n(vx.data() + indices[r] * cols, cols, out.data() + r * cols);
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return OpRecorder::make({indices.size(), cols}, std::move(out), {x}, [idx = std::move(idx), cols](Node& self) {
    if (double* g = grad_target(*self.inputs[0])) {
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t j = 0; j < cols; ++j) g[idx[r] * cols + j] += self.grad[r * cols + j];
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& offset, double eps) {
  require_rank(x, 2, "layer_norm");
  const std::size_t rows = x.dim(0), h = x.dim(1);
  if (h < 2) throw ShapeError("layer_norm: normalised width must be >= 2, got " + shape_to_string(x.shape()));
  if (gain.shape() != Shape{h} || offset.shape() != Shape{h}) {
    throw ShapeError("layer_norm: gain/offset " + shape_to_string(gain.shape()) + "/" +
                     shape_to_string(offset.shape()) + " do not match " + shape_to_string(x.shape()));
  }
  const auto vx = x.values(), vg = gain.values(), vb = offset.values();
  std::vector<double> out(rows * h);
  auto normalized = std::make_shared<std::vector<double>>(rows * h);
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = vx.data() + r * h;
    double mean = 0.0;
    for (std::size_t j = 0; j < h; ++j) mean += row[j];
    mean /= static_cast<double>(h);
    double var = 0.0;
    for (std::size_t j = 0; j < h; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(h);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < h; ++j) {
      const double xh = (row[j] - mean) * is;
      (*normalized)[r * h + j] = xh;
      out[r * h + j] = xh * vg[j] + vb[j];
    }
  }
  return OpRecorder::make(x.shape(), std::move(out), {x, gain, offset}, [rows, h, normalized, inv_std](Node& self) {
    Node& nx = *self.inputs[0];
    Node& ng = *self.inputs[1];
    Node& nb = *self.inputs[2];
    const auto& xh = *normalized;
    if (double* gg = grad_target(ng)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < h; ++j) gg[j] += self.grad[r * h + j] * xh[r * h + j];
    }
    if (double* gb = grad_target(nb)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < h; ++j) gb[j] += self.grad[r * h + j];
    }
    if (double* gx = grad_target(nx)) {
      const double inv_h = 1.0 / static_cast<double>(h);
      for (std::size_t r = 0; r < rows; ++r) {
        double mean_d = 0.0, mean_dx = 0.0;
        for (std::size_t j = 0; j < h; ++j) {
          const double d = self.grad[r * h + j] * ng.values[j];
          mean_d += d;
          mean_dx += d * xh[r * h + j];
        }
        mean_d *= inv_h;
        mean_dx *= inv_h;
        for (std::size_t j = 0; j < h; ++j) {
          const double d = self.grad[r * h + j] * ng.values[j];
          gx[r * h + j] += (*inv_std)[r] * (d - mean_d - xh[r * h + j] * mean_dx);
        }
      }
    }
  });
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t seq_len,
                            std::size_t heads, AttentionMaps* maps) {
  require_rank(q, 2, "scaled_dot_attention");
  require_same_shape(q, k, "scaled_dot_attention");
  require_same_shape(q, v, "scaled_dot_attention");
  const std::size_t rows = q.dim(0), hidden = q.dim(1);
  if (seq_len == 0 || rows % seq_len != 0) {
    throw ShapeError("scaled_dot_attention: " + std::to_string(rows) + " rows is not a multiple of sequence length " +
                     std::to_string(seq_len));
  }
  if (heads == 0 || hidden % heads != 0) {
    throw ShapeError("scaled_dot_attention: hidden width " + std::to_string(hidden) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  kernels::AttentionShape shape{rows / seq_len, seq_len, heads, hidden / heads};
  std::vector<double> out(rows * hidden);
  auto probs = std::make_shared<std::vector<double>>(shape.prob_count());
  kernels::attention_forward(shape, q.values(), k.values(), v.values(), out, *probs);
  if (maps != nullptr) {
    maps->sequences = shape.sequences;
    maps->heads = heads;
    maps->seq_len = seq_len;
    maps->probs = *probs;
  }
  return OpRecorder::make({rows, hidden}, std::move(out), {q, k, v}, [shape, probs](Node& self) {
    Node& nq = *self.inputs[0];
    Node& nk = *self.inputs[1];
    Node& nv = *self.inputs[2];
    const std::size_t n = nq.values.size();
    // The kernel writes all three adjoints at once; untracked ones go to scratch.
    std::vector<double> scratch_q, scratch_k, scratch_v;
    auto target = [n](Node& node, std::vector<double>& scratch) -> std::span<double> {
      if (double* g = grad_target(node)) return {g, n};
      scratch.assign(n, 0.0);
      return scratch;
    };
    const auto dq = target(nq, scratch_q);
    const auto dk = target(nk, scratch_k);
    const auto dv = target(nv, scratch_v);
    kernels::attention_backward(shape, nq.values, nk.values, nv.values, *probs, self.grad, dq, dk, dv);
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     shape_to_string(logits.shape()));
  }
  const auto vl = logits.values();
  for (double v : vl) {
    if (!std::isfinite(v)) throw NumericalError("cross_entropy: non-finite logit");
  }
  auto probs = std::make_shared<std::vector<double>>(batch * classes);
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b] >= classes) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(labels[b]) + " invalid for " +
                              std::to_string(classes) + " classes");
    }
    const double* row = vl.data() + b * classes;
    const double row_max = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(row[c] - row_max);
    const double log_z = row_max + std::log(z);
    total += log_z - row[labels[b]];
    for (std::size_t c = 0; c < classes; ++c) (*probs)[b * classes + c] = std::exp(row[c] - log_z);
  }
  const double inv_batch = 1.0 / static_cast<double>(batch);
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return OpRecorder::make({}, {total * inv_batch}, {logits},
                          [probs, lab = std::move(lab), batch, classes, inv_batch](Node& self) {
                            if (double* g = grad_target(*self.inputs[0])) {
                              const double dy = self.grad[0] * inv_batch;
                              for (std::size_t b = 0; b < batch; ++b) {
                                for (std::size_t c = 0; c < classes; ++c) {
                                  const double target = c == lab[b] ? 1.0 : 0.0;
                                  g[b * classes + c] += dy * ((*probs)[b * classes + c] - target);
                                }
                              }
                            }
                          });
}

}  // namespace fineformer
