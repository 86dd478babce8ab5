// SPDX-License-Identifier: Apache-2.0
#include "fineformer/commands.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <sstream>

#include "fineformer/binary_io.hpp"
#include "fineformer/checkpoint.hpp"
#include "fineformer/config.hpp"
#include "fineformer/errors.hpp"
#include "fineformer/gradcheck.hpp"
#include "fineformer/metrics.hpp"
#include "fineformer/synthdata.hpp"
#include "fineformer/threads.hpp"
#include "fineformer/training.hpp"

namespace fineformer {
namespace {

namespace fs = std::filesystem;

struct Invocation {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
};

struct Context {
  RunConfig config;
  fs::path out;
  std::ostream& log;
  std::ostream& err;
};

RunConfig resolve_config(const Invocation& inv) {
  RunConfig config =
      inv.config_path.empty() ? RunConfig{} : load_run_config(inv.config_path, inv.overrides);
  if (inv.config_path.empty()) {
    for (const auto& o : inv.overrides) config.apply_override(o);
  }
  if (!inv.out_dir.empty()) config.paths.out = inv.out_dir;
  return config;
}

void write_text(const fs::path& path, const std::string& text, std::ostream& log) {
  write_file(path, text);
  log << "wrote " << path.string() << '\n';
}

// Loads the configured dataset file, or generates one from [data]. The
// resolved config then records the spec that was actually used.
Dataset obtain_dataset(Context& ctx) {
  if (!ctx.config.paths.dataset.empty()) {
    if (!fs::exists(ctx.config.paths.dataset)) throw ConfigError("dataset not found: " + ctx.config.paths.dataset);
    Dataset data = load_dataset(ctx.config.paths.dataset);
    ctx.config.data = data.spec;
    return data;
  }
  return generate_dataset(ctx.config.data);
}

Checkpoint load_checkpoint(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string("paths.") + what + " is required for this command");
  if (!fs::exists(path)) throw ConfigError(std::string(what) + " file not found: " + path);
  return Checkpoint::load(path);
}

void warn_empty_classes(const EvalReport& report, std::ostream& err) {
  if (report.empty_classes.empty()) return;
  err << "warning: " << report.empty_classes.size()
      << " class(es) have no test examples and are excluded from mean class accuracy:";
  for (const auto c : report.empty_classes) err << ' ' << c;
  err << '\n';
}

int cmd_gen_data(Context& ctx) {
  ctx.config.data.validate();
  const Dataset data = generate_dataset(ctx.config.data);
  const fs::path target =
      ctx.config.paths.dataset.empty() ? ctx.out / "dataset.ffds" : fs::path(ctx.config.paths.dataset);
  save_dataset(data, target);
  ctx.log << "generated " << data.train.size() << " train / " << data.test.size() << " test examples over "
          << data.spec.num_classes << " classes (" << data.spec.paired_class_count()
          << " in order twins); order-blind bound " << format_double(bag_of_features_bayes_bound(data.spec)) << '\n';
  ctx.log << "wrote " << target.string() << '\n';
  return kExitOk;
}

int cmd_train(Context& ctx) {
  auto& cfg = ctx.config;
  cfg.train.validate();
  const Dataset data = obtain_dataset(ctx);
  check_compatible(cfg.model, data.spec);
  auto model = make_model(cfg.model);

  std::optional<Checkpoint> resume;
  if (!cfg.paths.resume.empty()) {
    resume = load_checkpoint(cfg.paths.resume, "resume");
    if (to_key_values(resume->model) != to_key_values(cfg.model)) {
      throw ConfigError("resume checkpoint was written for a different model config");
    }
    if (to_key_values(resume->train) != to_key_values(cfg.train)) {
      ctx.err << "warning: training config differs from the one stored in the resume checkpoint\n";
    }
  }

  std::optional<Checkpoint> last;
  TrainOptions options;
  options.resume = resume ? &*resume : nullptr;
  options.log = &ctx.log;
  options.eval_clips = cfg.eval.num_clips;
  options.on_epoch_end = [&](const EpochMetrics&, const Checkpoint& ck, bool is_best) {
    if (is_best) ck.save(ctx.out / "checkpoint_best.ffck");
    last = ck;
  };

  const TrainResult result = train(*model, data, cfg.train, options);

  if (!last) {
    // Nothing trained in this run: the final checkpoint is the starting point.
    Checkpoint ck = resume ? *resume : Checkpoint{};
    if (!resume) {
      ck.model = cfg.model;
      ck.train = cfg.train;
      ck.parameters = snapshot_parameters(*model);
      ck.optimizer_state = Optimizer(cfg.train, model->parameters()).state();
      std::ostringstream rng;
      rng << std::mt19937_64(cfg.train.seed);
      ck.rng_state = rng.str();
    }
    last = std::move(ck);
  }
  last->save(ctx.out / "checkpoint_final.ffck");
  write_text(ctx.out / "metrics.csv", metrics_csv(result.history), ctx.log);
  if (!result.history.empty()) {
    const auto& m = result.history.back();
    ctx.log << "final top1 " << format_percent(m.top1) << "  mean class accuracy "
            << format_percent(m.mean_class_accuracy) << '\n';
  }
  ctx.log << "wrote " << (ctx.out / "checkpoint_final.ffck").string() << '\n';
  return kExitOk;
}

int cmd_eval(Context& ctx) {
  const Checkpoint ck = load_checkpoint(ctx.config.paths.checkpoint, "checkpoint");
  ctx.config.model = ck.model;
  const auto model = restore_model(ck);
  const Dataset data = obtain_dataset(ctx);
  check_compatible(ck.model, data.spec);
  if (data.test.empty()) throw ConfigError("test split is empty");

  const EvalReport report = evaluate(*model, data.test, ctx.config.eval.num_clips);
  warn_empty_classes(report, ctx.err);
  ctx.log << "top1 " << format_percent(report.top1) << "  mean class accuracy "
          << format_percent(report.mean_class_accuracy) << "  (" << report.total << " test examples, "
          << ctx.config.eval.num_clips << " clip(s))\n";
  write_text(ctx.out / "eval_report.csv", report_csv(report), ctx.log);
  write_text(ctx.out / "eval_confusion.csv", confusion_csv(report), ctx.log);
  return kExitOk;
}

int cmd_gradcheck(Context& ctx) {
  const auto results = run_gradcheck_suite({}, &ctx.log);
  std::string csv = "case,elements,max_relative_error,tolerance,passed\n";
  std::size_t failed = 0;
  for (const auto& r : results) {
    csv += r.name + ',' + std::to_string(r.elements) + ',' + format_double(r.max_relative_error) + ',' +
           format_double(r.tolerance) + ',' + (r.passed ? "true" : "false") + '\n';
    failed += !r.passed;
  }
  write_text(ctx.out / "gradcheck.csv", csv, ctx.log);
  if (failed > 0) {
    ctx.err << "gradcheck: " << failed << " of " << results.size() << " cases failed\n";
    return kExitNumerical;
  }
  ctx.log << "gradcheck: all " << results.size() << " cases passed\n";
  return kExitOk;
}

int cmd_attn_report(Context& ctx) {
  const Checkpoint ck = load_checkpoint(ctx.config.paths.checkpoint, "checkpoint");
  ctx.config.model = ck.model;
  if (ck.model.kind != ModelKind::cross) throw ConfigError("attn-report needs a cross-encoder checkpoint");
  const auto model = restore_model(ck);
  const Dataset data = obtain_dataset(ctx);
  check_compatible(ck.model, data.spec);
  if (data.test.empty()) throw ConfigError("test split is empty");

  const auto report = attention_match_report(static_cast<const CrossEncoderModel&>(*model), data.test);
  for (std::size_t i = 0; i < report.vocab; ++i) {
    ctx.log << "attribute " << i << ": match ratio "
            << (std::isnan(report.ratio[i]) ? std::string("n/a") : format_double(report.ratio[i])) << '\n';
  }
  ctx.log << "attributes with ratio > 1: " << format_percent(report.fraction_above_one) << "% of " << report.scored
          << "  mean ratio " << format_double(report.mean_ratio) << '\n';
  write_text(ctx.out / "attention_report.csv", attention_report_csv(report), ctx.log);
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  configure_workers_from_env();

  CLI::App app{"Transformer encoders for fine-grained action recognition on synthetic data", "fineformer"};
  app.require_subcommand(1);
  Invocation inv;
  std::function<int(Context&)> command;

  struct Spec {
    const char* name;
    const char* help;
    int (*run)(Context&);
    bool needs_config;
  };
  const Spec specs[] = {
      {"gen-data", "generate a synthetic dataset file", cmd_gen_data, true},
      {"train", "train a model; writes checkpoints and metrics.csv", cmd_train, true},
      {"eval", "evaluate a checkpoint on the test split", cmd_eval, true},
      {"gradcheck", "run the finite-difference gradient suite", cmd_gradcheck, false},
      {"attn-report", "cross-attention diagnostic of a cross-encoder checkpoint", cmd_attn_report, true},
  };
  for (const auto& s : specs) {
    auto* sub = app.add_subcommand(s.name, s.help);
    auto* opt = sub->add_option("--config", inv.config_path, "config file (sectioned key = value)");
    if (s.needs_config) opt->required();
    sub->add_option("--set", inv.overrides, "override, section.key=value (repeatable)");
    sub->add_option("--out", inv.out_dir, "output directory (overrides paths.out)");
    sub->callback([&command, run = s.run] { command = run; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    Context ctx{resolve_config(inv), {}, out, err};
    ctx.out = ctx.config.paths.out;
    fs::create_directories(ctx.out);
    write_file(ctx.out / "resolved.cfg", ctx.config.to_text());
    const int code = command(ctx);
    write_file(ctx.out / "resolved.cfg", ctx.config.to_text());
    return code;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "file error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
}

}  // namespace fineformer
