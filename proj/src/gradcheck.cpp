// SPDX-License-Identifier: Apache-2.0
#include "fineformer/gradcheck.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include "fineformer/architectures.hpp"

namespace fineformer {

double gradient_relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

namespace {

// `sample` re-evaluates the output at the current parameter values. With
// empty `weights` it must be a scalar; otherwise the checked loss is the
// weighted sum of its elements.
GradCheckResult check_core(const std::string& name, const Tensor& loss, ParameterList& params,
                           const std::function<Tensor()>& sample, const std::vector<double>& weights, double step,
                           double tolerance, double floor) {
  GradCheckResult result;
  result.name = name;
  result.tolerance = tolerance;

  for (auto& p : params) p.tensor.clear_grad();
  backward(loss);

  NoGradGuard no_grad;
  for (auto& p : params) {
    std::vector<double> analytic(p.tensor.numel(), 0.0);
    if (p.tensor.has_grad()) std::copy(p.tensor.grad().begin(), p.tensor.grad().end(), analytic.begin());
    auto values = p.tensor.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const Tensor up = sample();
      values[i] = saved - step;
      const Tensor down = sample();
      values[i] = saved;

      double delta = 0.0;
      if (weights.empty()) {
        delta = up.item() - down.item();
      } else {
        const auto u = up.values(), d = down.values();
        for (std::size_t k = 0; k < weights.size(); ++k) delta += weights[k] * (u[k] - d[k]);
      }
      const double numeric = delta / (2.0 * step);
      const double err = gradient_relative_error(analytic[i], numeric, floor);
      ++result.elements;
      if (err > result.max_relative_error || (std::isnan(err) && !std::isnan(result.max_relative_error))) {
        result.max_relative_error = err;
        result.worst_parameter = p.name;
        result.worst_index = i;
        result.worst_analytic = analytic[i];
        result.worst_numeric = numeric;
      }
    }
    p.tensor.clear_grad();
  }
  result.passed = result.max_relative_error < tolerance;
  return result;
}

}  // namespace

GradCheckResult check_gradients(const std::string& name, const std::function<Tensor()>& loss_fn,
                                ParameterList params, double step, double tolerance, double floor) {
  return check_core(name, loss_fn(), params, loss_fn, {}, step, tolerance, floor);
}

GradCheckResult check_output_gradients(const std::string& name, const std::function<Tensor()>& output_fn,
                                       ParameterList params, std::uint64_t seed, double step, double tolerance,
                                       double floor) {
  const Tensor out = output_fn();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> weights(out.numel());
  for (auto& w : weights) w = normal(rng);
  const Tensor loss = sum(mul(out, Tensor(out.shape(), weights)));
  return check_core(name, loss, params, output_fn, weights, step, tolerance, floor);
}

void randomize_parameters(ParameterList& params, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  for (auto& p : params) {
    const bool gain = p.name.ends_with(".gain");
    for (double& v : p.tensor.mutable_values()) v = (gain ? 1.0 : 0.0) + normal(rng);
  }
}

namespace {

class SuiteBuilder {
 public:
  SuiteBuilder(const GradCheckSuiteOptions& options, std::ostream* log)
      : options_(options), log_(log), rng_(options.seed) {}

  Tensor random(Shape shape, bool requires_grad = true, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = normal(rng_);
    return Tensor(std::move(shape), std::move(values), requires_grad);
  }

  // Values bounded away from zero, for the kink of relu.
  Tensor away_from_zero(Shape shape) {
    Tensor t = random(std::move(shape));
    for (double& v : t.mutable_values()) v = v >= 0.0 ? v + 0.1 : v - 0.1;
    return t;
  }

  /// Checks a scalar loss.
  void add_loss(const std::string& name, const std::function<Tensor()>& loss_fn, ParameterList params, bool model) {
    record(check_gradients(name, loss_fn, std::move(params), options_.step, tolerance(model), floor(model)));
  }

  /// Checks a fixed random projection of a tensor-valued output.
  void add(const std::string& name, const std::function<Tensor()>& output_fn, ParameterList params, bool model) {
    record(check_output_gradients(name, output_fn, std::move(params), rng_(), options_.step, tolerance(model),
                                  floor(model)));
  }

  std::vector<GradCheckResult> take() { return std::move(results_); }

 private:
  double tolerance(bool model) const { return model ? options_.model_tolerance : options_.primitive_tolerance; }
  double floor(bool model) const { return model ? options_.model_floor : options_.primitive_floor; }

  void record(GradCheckResult r) {
    if (log_ != nullptr) {
      *log_ << (r.passed ? "PASS " : "FAIL ") << r.name << "  elements=" << r.elements
            << "  max_rel_err=" << r.max_relative_error;
      if (!r.passed) {
        *log_ << "  worst=" << r.worst_parameter << "[" << r.worst_index << "] analytic=" << r.worst_analytic
              << " numeric=" << r.worst_numeric;
      }
      *log_ << std::endl;
    }
    results_.push_back(std::move(r));
  }

  GradCheckSuiteOptions options_;
  std::ostream* log_;
  std::mt19937_64 rng_;
  std::vector<GradCheckResult> results_;
};

ModelConfig miniature(ModelKind kind, std::size_t layers) {
  ModelConfig c;
  c.kind = kind;
  c.hidden = 8;
  c.heads = 2;
  c.layers = layers;
  c.cross_layers = layers;
  c.channels = 6;
  c.tokens = 5;
  c.vocab = 4;
  c.num_classes = 3;
  c.feature_height = 1;
  c.feature_width = 1;
  c.frames = 5;
  c.height = 1;
  c.width = 1;
  c.seed = 11;
  return c;
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckSuiteOptions& options, std::ostream* log) {
  SuiteBuilder s(options, log);

  {
    Tensor a = s.random({3, 4}), b = s.random({4, 5});
    s.add("matmul", [=] { return matmul(a, b); }, {{"a", a}, {"b", b}}, false);
  }
  {
    Tensor x = s.random({3, 4});
    s.add("transpose", [=] { return transpose(x); }, {{"x", x}}, false);
  }
  {
    Tensor x = s.random({3, 4});
    s.add("reshape", [=] { return reshape(x, {2, 2, 3}); }, {{"x", x}}, false);
  }
  {
    Tensor a = s.random({3, 4}), b = s.random({3, 4});
    s.add("add", [=] { return add(a, b); }, {{"a", a}, {"b", b}}, false);
    s.add("sub", [=] { return sub(a, b); }, {{"a", a}, {"b", b}}, false);
    s.add("mul", [=] { return mul(a, b); }, {{"a", a}, {"b", b}}, false);
  }
  {
    Tensor x = s.random({3, 4});
    s.add("mul_scalar", [=] { return mul_scalar(x, -1.7); }, {{"x", x}}, false);
  }
  {
    Tensor x = s.random({3, 4}), row = s.random({4});
    s.add("add_broadcast_row", [=] { return add_broadcast_row(x, row); }, {{"x", x}, {"row", row}}, false);
  }
  {
    Tensor x = s.away_from_zero({3, 4});
    s.add("relu", [=] { return relu(x); }, {{"x", x}}, false);
  }
  {
    Tensor x = s.random({3, 4}, true, 2.0);
    s.add("gelu", [=] { return gelu(x); }, {{"x", x}}, false);
  }
  {
    Tensor x = s.random({3, 5}, true, 2.0);
    s.add("softmax", [=] { return softmax(x); }, {{"x", x}}, false);
  }
  {
    Tensor x = s.random({3, 4});
    s.add_loss("sum", [=] { return sum(mul(x, x)); }, {{"x", x}}, false);
  }
  {
    Tensor x = s.random({2, 3, 4});
    s.add("mean_over_axis[0]", [=] { return mean_over_axis(x, 0); }, {{"x", x}}, false);
    s.add("mean_over_axis[1]", [=] { return mean_over_axis(x, 1); }, {{"x", x}}, false);
    s.add("mean_over_axis[2]", [=] { return mean_over_axis(x, 2); }, {{"x", x}}, false);
  }
  {
    Tensor a = s.random({2, 3}), b = s.random({4, 3});
    s.add("concat_rows",
          [=] {
            const std::array<Tensor, 3> parts{a, b, a};
            return concat_rows(parts);
          },
          {{"a", a}, {"b", b}}, false);
  }
  {
    Tensor x = s.random({4, 3});
    const std::vector<std::size_t> ids{2, 0, 2, 3, 2};
    s.add("gather_rows", [=] { return gather_rows(x, ids); }, {{"x", x}}, false);
  }
  {
    Tensor x = s.random({3, 6}), gain = s.random({6}), offset = s.random({6});
    s.add("layer_norm", [=] { return layer_norm(x, gain, offset, 1e-12); },
          {{"x", x}, {"gain", gain}, {"offset", offset}}, false);
  }
  {
    Tensor q = s.random({10, 4}), k = s.random({10, 4}), v = s.random({10, 4});
    s.add("scaled_dot_attention", [=] { return scaled_dot_attention(q, k, v, 5, 2); },
          {{"q", q}, {"k", k}, {"v", v}}, false);
  }
  {
    Tensor logits = s.random({4, 5}, true, 2.0);
    const std::vector<std::size_t> labels{0, 3, 3, 1};
    s.add_loss("cross_entropy", [=] { return cross_entropy(logits, labels); }, {{"logits", logits}}, false);
  }

  // Layers and models use randomised parameters so gains and biases are generic.
  std::uint64_t param_seed = options.seed * 1000;
  {
    Initializer init(3);
    auto layer = std::make_shared<EncoderLayer>(8, 2, init);
    ParameterList params;
    layer->collect("layer", params);
    randomize_parameters(params, ++param_seed, options.parameter_scale);
    Tensor x = s.random({10, 8}, false);
    s.add("encoder_layer", [=] { return layer->forward(x, 5); }, params, true);
  }
  {
    Initializer init(4);
    auto stack = std::make_shared<EncoderStack>(3, 8, 2, init);
    ParameterList params;
    stack->collect("stack", params);
    randomize_parameters(params, ++param_seed, options.parameter_scale);
    Tensor x = s.random({10, 8}, false);
    s.add("encoder_stack[3]", [=] { return stack->forward(x, 5); }, params, true);
  }

  struct ModelCase {
    const char* name;
    ModelKind kind;
    std::size_t layers;
  };
  const ModelCase cases[] = {{"model.pooled_linear", ModelKind::pooled_linear, 1},
                             {"model.vision[B=1]", ModelKind::vision, 1},
                             {"model.vision[B=3]", ModelKind::vision, 3},
                             {"model.cross[2]", ModelKind::cross, 2}};
  for (const auto& c : cases) {
    std::shared_ptr<ActionModel> model = make_model(miniature(c.kind, c.layers));
    ParameterList params = model->parameters();
    randomize_parameters(params, ++param_seed, options.parameter_scale);
    auto batch = std::make_shared<std::vector<FeatureSequence>>();
    for (std::size_t b = 0; b < 3; ++b) {
      Tensor f = s.random({6, 5}, false);
      batch->push_back({6, 5, std::vector<double>(f.values().begin(), f.values().end())});
    }
    const std::vector<std::size_t> labels{0, 2, 1};
    s.add(c.name, [=] { return model->forward(*batch); }, params, true);
    s.add_loss(std::string(c.name) + "+cross_entropy",
               [=] { return cross_entropy(model->forward(*batch), labels); }, params, true);
  }
  return s.take();
}

}  // namespace fineformer
