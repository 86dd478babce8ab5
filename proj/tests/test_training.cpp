// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <limits>

#include "fineformer/binary_io.hpp"
#include "fineformer/checkpoint.hpp"
#include "fineformer/errors.hpp"
#include "fineformer/synthdata.hpp"
#include "fineformer/training.hpp"
#include "support.hpp"

using namespace fineformer;

namespace {

double norm(const ParameterList& params) {
  double s = 0.0;
  for (const auto& p : params)
    for (double g : p.tensor.grad()) s += g * g;
  return std::sqrt(s);
}

ParameterList params_with_grads(const std::vector<std::vector<double>>& grads) {
  ParameterList list;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    Tensor t = Tensor::zeros({grads[i].size()}, true);
    backward(sum(mul(t, Tensor({grads[i].size()}, grads[i]))));
    list.push_back({"p" + std::to_string(i), t});
  }
  return list;
}

double quadratic_loss(const Tensor& w) {
  double s = 0.0;
  for (double v : w.values()) s += 0.5 * v * v;
  return s;
}

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("sgd momentum: hand-iterated steps and limiting cases") {
    std::vector<double> w{1.0}, g{1.0}, v{0.0};
    sgd_momentum_step(w, g, v, 0.1, 0.9, 0.0);
    CHECK(w[0] == doctest::Approx(0.9).epsilon(1e-15));
    sgd_momentum_step(w, g, v, 0.1, 0.9, 0.0);
    CHECK(w[0] == doctest::Approx(0.71).epsilon(1e-15));

    std::vector<double> w2{2.0, -1.0}, zero{0.0, 0.0}, v2{0.5, -0.25};
    sgd_momentum_step(w2, zero, v2, 0.1, 0.9, 0.0);
    CHECK(v2[0] == 0.45);
    CHECK(v2[1] == -0.225);

    std::vector<double> w3{2.0}, g3{0.5}, v3{0.0};
    sgd_momentum_step(w3, g3, v3, 0.1, 0.0, 0.0);
    CHECK(w3[0] == 2.0 - 0.1 * 0.5);

    // Coupled decay: folded into the gradient.
    std::vector<double> w4{2.0}, g4{0.0}, v4{0.0};
    sgd_momentum_step(w4, g4, v4, 0.1, 0.9, 0.01);
    CHECK(w4[0] == 2.0 - 0.1 * 0.02);

    std::vector<double> bad{0.0};
    CHECK_THROWS_AS(sgd_momentum_step(w, bad, v2, 0.1, 0.9, 0.0), ShapeError);
  }

  TEST_CASE("adamw: step one, zero gradient and decoupled decay") {
    std::vector<double> w{1.0, -2.0, 0.5}, g{1.0, 1.0, 1.0}, m(3, 0.0), v(3, 0.0);
    const std::vector<double> start = w;
    adamw_step(w, g, m, v, 1, 1e-3, 0.9, 0.999, 1e-8, 0.0);
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs((start[i] - w[i]) - 1e-3) < 1e-10);

    std::vector<double> w0{1.0, -2.0}, g0(2, 0.0), m0(2, 0.0), v0(2, 0.0);
    adamw_step(w0, g0, m0, v0, 1, 1e-3, 0.9, 0.999, 1e-8, 0.0);
    CHECK(w0[0] == 1.0);
    CHECK(w0[1] == -2.0);

    std::vector<double> wd{1.5, -3.0}, md(2, 0.0), vd(2, 0.0);
    const std::vector<double> before = wd;
    const double lr = 3e-4, decay = 0.05;
    adamw_step(wd, g0, md, vd, 1, lr, 0.9, 0.999, 1e-8, decay);
    for (std::size_t i = 0; i < 2; ++i) CHECK(std::abs((wd[i] - before[i]) + lr * decay * before[i]) < 1e-15);
  }

  TEST_CASE("one step on a quadratic strictly decreases the loss") {
    for (OptimizerKind kind : {OptimizerKind::sgd_momentum, OptimizerKind::adamw}) {
      TrainConfig cfg;
      cfg.optimizer = kind;
      cfg.weight_decay = 0.0;
      Tensor w = fftest::random_tensor({6}, 1, true);
      Optimizer opt(cfg, {{"w", w}});
      const double before = quadratic_loss(w);
      backward(mul_scalar(sum(mul(w, w)), 0.5));
      opt.step(1e-3);
      CHECK(quadratic_loss(w) < before);
      CHECK(opt.steps() == 1);
    }
  }

  TEST_CASE("clipping: unchanged below the cap, capped above, direction kept") {
    auto small = params_with_grads({{6.0, 0.0}, {8.0}});
    CHECK(clip_gradients(small, 40.0) == 10.0);
    CHECK(small[0].tensor.grad()[0] == 6.0);
    CHECK(small[1].tensor.grad()[0] == 8.0);

    const std::vector<std::vector<double>> raw{{24.0, 0.0, -32.0}, {32.0, 24.0}, {40.0, -40.0}};
    auto big = params_with_grads(raw);
    const double pre = clip_gradients(big, 40.0);
    CHECK(pre == doctest::Approx(80.0).epsilon(1e-15));
    CHECK(std::abs(norm(big) - 40.0) < 1e-9);
    double dot = 0.0, raw_norm = 0.0;
    for (std::size_t i = 0; i < raw.size(); ++i)
      for (std::size_t j = 0; j < raw[i].size(); ++j) {
        dot += raw[i][j] * big[i].tensor.grad()[j];
        raw_norm += raw[i][j] * raw[i][j];
      }
    CHECK(std::abs(dot / (std::sqrt(raw_norm) * norm(big)) - 1.0) < 1e-12);

    auto broken = params_with_grads({{1.0}, {std::numeric_limits<double>::quiet_NaN()}});
    try {
      clip_gradients(broken, 40.0);
      FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
      CHECK(std::string(e.what()).find("p1") != std::string::npos);
    }
  }

  TEST_CASE("fixed-step schedule at the protocol milestones") {
    TrainConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.epochs = 120;
    cfg.schedule = ScheduleKind::fixed_step;
    cfg.milestones = {90, 110};
    cfg.validate();
    CHECK(lr_schedule(cfg, 89) == 0.01);
    CHECK(std::abs(lr_schedule(cfg, 90) - 0.001) < 1e-15);
    CHECK(std::abs(lr_schedule(cfg, 110) - 0.0001) < 1e-15);
    CHECK(lr_schedule(cfg, 89.99) == 0.01);

    cfg.milestones = {90, 90};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.milestones = {120};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }

  TEST_CASE("cosine schedule with warmup") {
    TrainConfig cfg;
    cfg.learning_rate = 3e-4;
    cfg.epochs = 30;
    cfg.schedule = ScheduleKind::cosine_warmup;
    CHECK(cfg.resolved_warmup_epochs() == 3.0);
    CHECK(lr_schedule(cfg, 0) == 0.0);
    CHECK(std::abs(lr_schedule(cfg, 1.5) - 1.5e-4) < 1e-15);
    CHECK(lr_schedule(cfg, 3) == 3e-4);
    CHECK(std::abs(lr_schedule(cfg, 29)) < 1e-12);
    CHECK(std::abs(lr_schedule(cfg, 3 + 26.0 / 2.0) - 1.5e-4) < 1e-12);
    double previous = lr_schedule(cfg, 3);
    for (double e = 3.25; e <= 29.0; e += 0.25) {
      const double lr = lr_schedule(cfg, e);
      CHECK(lr <= previous);
      previous = lr;
    }

    cfg.warmup_epochs = 0.0;
    CHECK(lr_schedule(cfg, 0) == 3e-4);
    cfg.warmup_epochs = 30.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }

  TEST_CASE("optimizer state round-trips by slot name") {
    TrainConfig cfg;
    cfg.optimizer = OptimizerKind::adamw;
    Tensor w = fftest::random_tensor({4}, 2, true);
    Optimizer opt(cfg, {{"w", w}});
    backward(sum(mul(w, w)));
    opt.step(1e-2);
    const auto state = opt.state();
    REQUIRE(state.size() == 2);
    CHECK(state[0].name == "adam_m.w");
    CHECK(state[1].name == "adam_v.w");

    Tensor w2(w.shape(), std::vector<double>(w.values().begin(), w.values().end()), true);
    Optimizer restored(cfg, {{"w", w2}});
    restored.load_state(state, opt.steps());
    opt.zero_grad();
    backward(sum(w));
    backward(sum(w2));
    opt.step(1e-2);
    restored.step(1e-2);
    CHECK(fftest::bit_identical(w.values(), w2.values()));
  }

  TEST_CASE("cross entropy loss of one logit vector") {
    CHECK(cross_entropy_loss(Tensor::zeros({4}), 1).item() == doctest::Approx(1.3862943611198906).epsilon(1e-15));
    CHECK_THROWS(cross_entropy_loss(Tensor::zeros({4}), 4));
  }

  TEST_CASE("zero epochs leave the model unchanged") {
    const Dataset data = generate_dataset(fftest::tiny_spec());
    auto model = make_model(fftest::tiny_model(ModelKind::vision, data.spec));
    const auto before = snapshot_parameters(*model);
    const TrainResult r = train(*model, data, fftest::tiny_train(0));
    CHECK(r.history.empty());
    const auto after = snapshot_parameters(*model);
    for (std::size_t i = 0; i < before.size(); ++i)
      CHECK(fftest::bit_identical(before[i].tensor.values(), after[i].tensor.values()));
  }

  TEST_CASE("a single example is memorised") {
    Dataset data = generate_dataset(fftest::tiny_spec(3));
    data.train.resize(1);
    auto model = make_model(fftest::tiny_model(ModelKind::vision, data.spec));
    TrainConfig cfg;
    cfg.optimizer = OptimizerKind::sgd_momentum;
    cfg.learning_rate = 0.01;
    cfg.weight_decay = 0.0;
    cfg.epochs = 200;
    cfg.batch_size = 1;
    const TrainResult r = train(*model, data, cfg);
    REQUIRE(r.history.size() == 200);
    CHECK(r.history.back().train_loss < 0.01);
  }

  TEST_CASE("training is deterministic for a fixed seed") {
    const Dataset data = generate_dataset(fftest::tiny_spec());
    auto a = make_model(fftest::tiny_model(ModelKind::cross, data.spec));
    auto b = make_model(fftest::tiny_model(ModelKind::cross, data.spec));
    const auto ra = train(*a, data, fftest::tiny_train(3));
    const auto rb = train(*b, data, fftest::tiny_train(3));
    CHECK(fftest::bit_identical(ra.batch_losses, rb.batch_losses));
    CHECK(metrics_csv(ra.history) == metrics_csv(rb.history));
  }

  TEST_CASE("resume reproduces the uninterrupted run bit-exactly") {
    const Dataset data = generate_dataset(fftest::tiny_spec(8));
    for (ModelKind kind : {ModelKind::vision, ModelKind::cross}) {
      for (OptimizerKind opt : {OptimizerKind::sgd_momentum, OptimizerKind::adamw}) {
        TrainConfig cfg = fftest::tiny_train(5);
        cfg.optimizer = opt;
        auto full = make_model(fftest::tiny_model(kind, data.spec));
        std::string saved;
        TrainOptions options;
        options.on_epoch_end = [&](const EpochMetrics& m, const Checkpoint& ck, bool) {
          if (m.epoch == 2) saved = ck.to_bytes();
        };
        const TrainResult uninterrupted = train(*full, data, cfg, options);

        const Checkpoint ck = Checkpoint::from_bytes(saved);
        auto resumed = restore_model(ck);
        TrainOptions resume_options;
        resume_options.resume = &ck;
        const TrainResult rest = train(*resumed, data, cfg, resume_options);
        REQUIRE(rest.history.size() == 3);
        const std::size_t per_epoch = uninterrupted.batch_losses.size() / 5;
        const std::vector<double> tail(uninterrupted.batch_losses.begin() + static_cast<std::ptrdiff_t>(2 * per_epoch),
                                       uninterrupted.batch_losses.end());
        CHECK(fftest::bit_identical(rest.batch_losses, tail));
        for (std::size_t e = 0; e < 3; ++e) {
          CHECK(rest.history[e].train_loss == uninterrupted.history[e + 2].train_loss);
          CHECK(rest.history[e].top1 == uninterrupted.history[e + 2].top1);
        }
        const auto p_full = snapshot_parameters(*full), p_res = snapshot_parameters(*resumed);
        for (std::size_t i = 0; i < p_full.size(); ++i)
          CHECK(fftest::bit_identical(p_full[i].tensor.values(), p_res[i].tensor.values()));
      }
    }
  }

  TEST_CASE("checkpoint save, load and save again is byte-identical") {
    fftest::TempDir dir("ffck");
    const Dataset data = generate_dataset(fftest::tiny_spec());
    auto model = make_model(fftest::tiny_model(ModelKind::cross, data.spec));
    Checkpoint last;
    TrainOptions options;
    options.on_epoch_end = [&](const EpochMetrics&, const Checkpoint& ck, bool) { last = ck; };
    train(*model, data, fftest::tiny_train(2), options);
    last.save(dir / "a.ffck");
    const Checkpoint loaded = Checkpoint::load(dir / "a.ffck");
    loaded.save(dir / "b.ffck");
    CHECK(read_file(dir / "a.ffck") == read_file(dir / "b.ffck"));
    CHECK(loaded.epoch == 2);
    CHECK(loaded.best_top1 == last.best_top1);
    CHECK(loaded.rng_state == last.rng_state);
    CHECK(loaded.parameters.size() == model->parameters().size() + model->frozen_parameters().size());

    const std::string bytes = read_file(dir / "a.ffck");
    CHECK_THROWS_AS(Checkpoint::from_bytes(bytes.substr(0, bytes.size() - 1)), FormatError);
    CHECK_THROWS_AS(Checkpoint::from_bytes("FFCK2" + bytes.substr(5)), FormatError);
  }

  TEST_CASE("non-finite loss aborts with epoch and batch context") {
    const Dataset data = generate_dataset(fftest::tiny_spec());
    auto model = make_model(fftest::tiny_model(ModelKind::vision, data.spec));
    auto* vision = static_cast<VisionEncoderModel*>(model.get());
    vision->classifier.bias.mutable_values()[0] = std::numeric_limits<double>::infinity();
    try {
      train(*model, data, fftest::tiny_train(1));
      FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("epoch 1") != std::string::npos);
      CHECK(msg.find("batch 1") != std::string::npos);
    }
  }

  TEST_CASE("metrics history CSV layout") {
    const std::vector<EpochMetrics> h{{1, 0.5, 1.25, 0.75, 0.5}};
    CHECK(metrics_csv(h) == "epoch,lr,train_loss,top1,mean_class_acc\n1,0.5,1.25,0.75,0.5\n");
    CHECK(format_double(0.1) == "0.10000000000000001");
  }
}
