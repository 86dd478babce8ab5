// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference verification of the reverse-mode gradients.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "fineformer/nn.hpp"
#include "fineformer/tensor.hpp"

namespace fineformer {

struct GradCheckResult {
  std::string name;
  std::size_t elements = 0;
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

/// |a − n| / max(|a|, |n|, floor)
double gradient_relative_error(double analytic, double numeric, double floor = 1e-8);

/// Compares backward() of `loss_fn` against (L(θ+h) − L(θ−h)) / 2h for every
/// element of every tensor in `params`. `loss_fn` must rebuild the loss from
/// the current parameter values on each call. Parameter values are restored
/// and their gradients cleared on return. Errors use denominators floored at
/// `floor`.
GradCheckResult check_gradients(const std::string& name, const std::function<Tensor()>& loss_fn,
                                ParameterList params, double step = 1e-5, double tolerance = 1e-4,
                                double floor = 1e-8);

/// Same check for the scalar L = Σ w·out with fixed N(0, 1) weights drawn
/// from `seed`. The finite difference is summed from per-element output
/// differences, which keeps cancellation error out of the reduction.
GradCheckResult check_output_gradients(const std::string& name, const std::function<Tensor()>& output_fn,
                                       ParameterList params, std::uint64_t seed, double step = 1e-5,
                                       double tolerance = 1e-4, double floor = 1e-8);

/// Overwrites every value with N(0, scale²) draws (N(1, scale²) for layer
/// norm gains) so checks run at a generic point rather than at
/// initialisation, where biases are exactly zero.
void randomize_parameters(ParameterList& params, std::uint64_t seed, double scale);

struct GradCheckSuiteOptions {
  double step = 1e-5;
  double primitive_tolerance = 1e-6;
  double model_tolerance = 1e-4;
  double primitive_floor = 1e-8;
  double model_floor = 1e-8;
  std::uint64_t seed = 7;
  double parameter_scale = 0.3;  // std of the randomised layer/model parameters
};

/// Every differentiable primitive, the encoder layer and stack, and all model
/// kinds on miniature configs (h=8, 2 heads, T′=5, N=4).
std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckSuiteOptions& options = {},
                                                 std::ostream* log = nullptr);

}  // namespace fineformer
