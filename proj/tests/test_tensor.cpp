// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>

#include "fineformer/errors.hpp"
#include "fineformer/tensor.hpp"
#include "support.hpp"

using namespace fineformer;
using fftest::random_tensor;

namespace {

// Independent central-difference oracle: perturbs each element of `x`,
// differentiates L = Σ w·f(x) and returns the worst relative error against
// backward(). Denominators are floored at 1e-8.
double fd_worst_error(const std::function<Tensor()>& f, Tensor x, std::uint64_t seed) {
  const Tensor out = f();
  const Tensor w = random_tensor(out.shape(), seed);
  x.clear_grad();
  backward(sum(mul(out, w)));
  const std::vector<double> analytic(x.grad().begin(), x.grad().end());
  x.clear_grad();

  NoGradGuard no_grad;
  double worst = 0.0;
  const double h = 1e-5;
  auto values = x.mutable_values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const Tensor up = f();
    values[i] = saved - h;
    const Tensor down = f();
    values[i] = saved;
    double delta = 0.0;
    for (std::size_t k = 0; k < w.numel(); ++k) delta += w.values()[k] * (up.values()[k] - down.values()[k]);
    const double numeric = delta / (2.0 * h);
    const double scale = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / scale);
  }
  return worst;
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("construction validates element count") {
    CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
    const Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.numel() == 6);
    CHECK(t.at(1, 2) == 6.0);
    CHECK_FALSE(t.requires_grad());
    CHECK_FALSE(t.has_grad());
  }

  TEST_CASE("matmul: identity, zero and shape errors") {
    const Tensor m = random_tensor({3, 3}, 1);
    const Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    CHECK(fftest::bit_identical(matmul(eye, m).values(), m.values()));

    const Tensor a({2, 2}, {1, 2, 3, 4});
    const Tensor z = Tensor::zeros({2, 1});
    const Tensor c = matmul(a, z);
    CHECK(c.shape() == Shape{2, 1});
    CHECK(c.values()[0] == 0.0);
    CHECK(c.values()[1] == 0.0);

    try {
      (void)matmul(random_tensor({2, 3}, 1), random_tensor({4, 2}, 2));
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[2x3]") != std::string::npos);
      CHECK(msg.find("[4x2]") != std::string::npos);
    }
  }

  TEST_CASE("matmul adjoint matches finite differences") {
    Tensor a = random_tensor({4, 5}, 11, true);
    Tensor b = random_tensor({5, 3}, 12, true);
    CHECK(fd_worst_error([&] { return matmul(a, b); }, a, 13) < 1e-6);
    CHECK(fd_worst_error([&] { return matmul(a, b); }, b, 14) < 1e-6);
  }

  TEST_CASE("elementwise definitions") {
    const Tensor x = random_tensor({3, 4}, 3);
    CHECK(fftest::bit_identical(add(x, Tensor::zeros({3, 4})).values(), x.values()));
    const Tensor r = relu(Tensor({2}, {-1.0, 2.0}));
    CHECK(r.values()[0] == 0.0);
    CHECK(r.values()[1] == 2.0);
    const Tensor g = gelu(Tensor({3}, {-1.0, 0.0, 1.0}));
    CHECK(g.values()[1] == 0.0);
    CHECK(g.values()[2] == doctest::Approx(0.8413447460685429).epsilon(1e-15));
    CHECK(g.values()[0] == doctest::Approx(-0.15865525393145707).epsilon(1e-14));
    CHECK(mul_scalar(x, 2.0).values()[5] == 2.0 * x.values()[5]);
    CHECK(sub(x, x).values()[7] == 0.0);

    const Tensor row({4}, {1, 2, 3, 4});
    const Tensor b = add_broadcast_row(Tensor::zeros({2, 4}), row);
    CHECK(b.at(1, 3) == 4.0);
    CHECK_THROWS_AS(add(x, Tensor::zeros({4, 3})), ShapeError);
    CHECK_THROWS_AS(add_broadcast_row(x, Tensor::zeros({3})), ShapeError);
  }

  TEST_CASE("gelu adjoint matches finite differences on a 16-vector") {
    Tensor x = random_tensor({16}, 21, true, 2.0);
    CHECK(fd_worst_error([&] { return gelu(x); }, x, 22) < 1e-6);
  }

  TEST_CASE("softmax: uniform, direct formula, rows and shift invariance") {
    const Tensor u = softmax(Tensor::zeros({1, 4}));
    for (double v : u.values()) CHECK(v == 0.25);

    const Tensor s = softmax(Tensor({1, 3}, {1, 2, 3}));
    const double denom = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(s.values()[i] - std::exp(i + 1.0) / denom) < 1e-12);

    const Tensor x = random_tensor({6, 9}, 31, false, 3.0);
    const Tensor p = softmax(x);
    const Tensor shifted = softmax(add(x, Tensor::full({6, 9}, 17.25)));
    for (std::size_t r = 0; r < 6; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < 9; ++c) {
        CHECK(p.at(r, c) >= 0.0);
        CHECK(p.at(r, c) <= 1.0);
        total += p.at(r, c);
      }
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
    CHECK(fftest::max_abs_diff(p.values(), shifted.values()) < 1e-12);

    CHECK_THROWS_AS(softmax(Tensor({1, 2}, {0.0, std::numeric_limits<double>::infinity()})), NumericalError);
    CHECK_THROWS_AS(softmax(Tensor({1, 2}, {0.0, std::nan("")})), NumericalError);
  }

  TEST_CASE("backward: linear and quadratic losses") {
    Tensor w = random_tensor({5}, 41, true);
    backward(sum(w));
    for (double g : w.grad()) CHECK(g == 1.0);

    Tensor v = random_tensor({5}, 42, true);
    backward(sum(mul(v, v)));
    for (std::size_t i = 0; i < 5; ++i) CHECK(v.grad()[i] == doctest::Approx(2.0 * v.values()[i]).epsilon(1e-15));
  }

  TEST_CASE("backward accumulates across calls and rejects non-scalar losses") {
    Tensor w = random_tensor({3}, 43, true);
    backward(sum(w));
    backward(sum(w));
    for (double g : w.grad()) CHECK(g == 2.0);
    CHECK_THROWS_AS(backward(mul_scalar(w, 1.0)), ShapeError);
  }

  TEST_CASE("a tensor used twice receives the summed adjoint") {
    Tensor x = random_tensor({3, 3}, 44, true);
    // x·x + x: x appears three times in the graph.
    auto f = [&] { return add(matmul(x, x), x); };
    CHECK(fd_worst_error(f, x, 45) < 1e-6);
  }

  TEST_CASE("replay visits each recorded operation once") {
    Tensor a = random_tensor({2, 2}, 46, true);
    const Tensor b = matmul(a, a);
    const Tensor c = relu(b);
    const Tensor loss = sum(add(c, b));
    CHECK(backward(loss) == 4);
  }

  TEST_CASE("tensors without requires_grad never accumulate") {
    Tensor w = random_tensor({4}, 47, true);
    Tensor k = random_tensor({4}, 48, false);
    backward(sum(mul(w, k)));
    CHECK(w.has_grad());
    CHECK_FALSE(k.has_grad());
  }

  TEST_CASE("no-grad guard suppresses recording") {
    Tensor w = random_tensor({4}, 49, true);
    Tensor y;
    {
      NoGradGuard guard;
      CHECK_FALSE(grad_recording_enabled());
      y = sum(mul(w, w));
    }
    CHECK(grad_recording_enabled());
    CHECK_FALSE(y.requires_grad());
  }

  TEST_CASE("mean_over_axis: definition, identity and errors") {
    CHECK(mean_over_axis(Tensor({3}, {1, 2, 3}), 0).item() == 2.0);
    const Tensor x = random_tensor({4, 1, 3}, 51);
    const Tensor m = mean_over_axis(x, 1);
    CHECK(m.shape() == Shape{4, 3});
    CHECK(fftest::bit_identical(m.values(), x.values()));
    CHECK_THROWS_AS(mean_over_axis(x, 3), ShapeError);
  }

  TEST_CASE("mean_over_axis adjoint matches finite differences") {
    Tensor x = random_tensor({3, 4, 5}, 52, true);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      CHECK(fd_worst_error([&] { return mean_over_axis(x, axis); }, x, 53 + axis) < 1e-6);
    }
  }

  TEST_CASE("layer_norm: two-point rows, constant rows and adjoint") {
    const Tensor gain = Tensor::full({2}, 1.0), offset = Tensor::zeros({2});
    const Tensor y = layer_norm(Tensor({1, 2}, {1.0, 3.0}), gain, offset);
    CHECK(y.values()[0] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(y.values()[1] == doctest::Approx(1.0).epsilon(1e-12));

    const Tensor zero = layer_norm(Tensor::full({2, 4}, 3.5), Tensor::full({4}, 1.0), Tensor::zeros({4}));
    for (double v : zero.values()) CHECK(v == 0.0);
    CHECK_THROWS_AS(layer_norm(Tensor::zeros({2, 1}), Tensor::full({1}, 1.0), Tensor::zeros({1})), ShapeError);

    Tensor x = random_tensor({4, 8}, 61, true);
    Tensor g = random_tensor({8}, 62, true);
    Tensor o = random_tensor({8}, 63, true);
    auto f = [&] { return layer_norm(x, g, o); };
    CHECK(fd_worst_error(f, x, 64) < 1e-6);
    CHECK(fd_worst_error(f, g, 65) < 1e-6);
    CHECK(fd_worst_error(f, o, 66) < 1e-6);
  }

  TEST_CASE("concat_rows and gather_rows") {
    const Tensor a({1, 2}, {1, 2}), b({2, 2}, {3, 4, 5, 6});
    const std::array<Tensor, 2> parts{a, b};
    const Tensor c = concat_rows(parts);
    CHECK(c.shape() == Shape{3, 2});
    CHECK(c.at(2, 1) == 6.0);
    const std::vector<std::size_t> ids{2, 0, 2};
    const Tensor g = gather_rows(c, ids);
    CHECK(g.at(0, 0) == 5.0);
    CHECK(g.at(1, 1) == 2.0);
    const std::vector<std::size_t> bad{3};
    CHECK_THROWS(gather_rows(c, bad));

    Tensor x = random_tensor({4, 3}, 71, true);
    CHECK(fd_worst_error([&] { return gather_rows(x, ids); }, x, 72) < 1e-6);
  }

  TEST_CASE("cross entropy: uniform logits, margins and adjoint") {
    const std::vector<std::size_t> label{2};
    CHECK(cross_entropy(Tensor::zeros({1, 4}), label).item() == doctest::Approx(std::log(4.0)).epsilon(1e-15));
    CHECK(std::abs(cross_entropy(Tensor::zeros({1, 4}), label).item() - 1.3862943611198906) < 1e-15);

    // Finite stand-in for an infinite margin: the loss underflows to zero.
    CHECK(cross_entropy(Tensor({1, 3}, {0.0, 0.0, 1e4}), label).item() == 0.0);
    const std::vector<std::size_t> bad{4};
    CHECK_THROWS(cross_entropy(Tensor::zeros({1, 4}), bad));

    Tensor logits = random_tensor({1, 5}, 81, true, 2.0);
    const std::vector<std::size_t> y{3};
    backward(cross_entropy(logits, y));
    const Tensor p = softmax(logits.detach());
    for (std::size_t c = 0; c < 5; ++c) {
      CHECK(std::abs(logits.grad()[c] - (p.values()[c] - (c == 3 ? 1.0 : 0.0))) < 1e-15);
    }
  }

  TEST_CASE("repeated evaluation is bit-identical") {
    const Tensor a = random_tensor({7, 9}, 91), b = random_tensor({9, 4}, 92);
    const Tensor x = gelu(matmul(a, b)), y = gelu(matmul(a, b));
    CHECK(fftest::bit_identical(x.values(), y.values()));
  }
}
