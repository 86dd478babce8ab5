// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <sstream>

#include "fineformer/binary_io.hpp"
#include "fineformer/commands.hpp"
#include "fineformer/config.hpp"
#include "fineformer/errors.hpp"
#include "support.hpp"

using namespace fineformer;

namespace {

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun run(std::vector<std::string> args) {
  args.insert(args.begin(), "fineformer");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

// A quick config: the tiny spec with a small vision encoder and two epochs.
std::string small_config_text(const std::string& kind = "vision") {
  return "# test configuration\n"
         "[model]\nkind = " + kind + "\nhidden = 8\nlayers = 1\ncross_layers = 1\nheads = 2\nchannels = 16\n"
         "tokens = 4\nvocab = 6\nnum_classes = 4\nseed = 3\n"
         "[data]\nattributes = 6\nnum_classes = 4\ntokens = 4\nchannels = 16\ntrain_per_class = 8\n"
         "test_per_class = 4\nseed = 1\n"
         "[train]\noptimizer = adamw\nlearning_rate = 0.01\nepochs = 2\nschedule = cosine_warmup\nbatch_size = 8\n"
         "[eval]\nnum_clips = 1\n";
}

std::string last_csv_field(const std::string& line) { return line.substr(line.rfind(',') + 1); }

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("config parsing: sections, comments and overrides") {
    const RunConfig c = RunConfig::parse(
        "; comment\n[model]\nkind = cross   # trailing\nhidden=16\n\n[train]\nmilestones = 90,110\n"
        "warmup_epochs = auto\n[paths]\nout = somewhere\n");
    CHECK(c.model.kind == ModelKind::cross);
    CHECK(c.model.hidden == 16);
    CHECK(c.train.milestones == std::vector<std::size_t>{90, 110});
    CHECK_FALSE(c.train.warmup_epochs.has_value());
    CHECK(c.paths.out == "somewhere");

    RunConfig d = c;
    d.apply_override("train.warmup_epochs=2.5");
    d.apply_override("data.long_tail_exponent=1");
    CHECK(*d.train.warmup_epochs == 2.5);
    CHECK(d.data.long_tail_exponent == 1.0);
    CHECK(RunConfig::parse(d.to_text()).to_text() == d.to_text());
  }

  TEST_CASE("config parsing rejects unknown keys and malformed lines") {
    CHECK_THROWS_AS(RunConfig::parse("[model]\nwidth_mult = 2\n"), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse("[optimizer]\nlr = 1\n"), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse("kind = vision\n"), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse("[model]\nkind\n"), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse("[model]\nhidden = many\n"), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse("[model]\nhidden = -4\n"), ConfigError);
    RunConfig c;
    CHECK_THROWS_AS(c.apply_override("model.hidden"), ConfigError);
  }

  TEST_CASE("model/data compatibility") {
    RunConfig c = RunConfig::parse(small_config_text("cross"));
    CHECK_NOTHROW(check_compatible(c.model, c.data));
    c.model.vocab = 7;
    CHECK_THROWS_AS(check_compatible(c.model, c.data), ConfigError);
    c.model.vocab = 6;
    c.model.channels = 8;
    CHECK_THROWS_AS(check_compatible(c.model, c.data), ConfigError);
  }

  TEST_CASE("every shipped config loads and is self-consistent") {
    std::size_t seen = 0;
    for (const auto& entry : std::filesystem::directory_iterator(FINEFORMER_CONFIG_DIR)) {
      if (entry.path().extension() != ".cfg") continue;
      ++seen;
      CAPTURE(entry.path().filename().string());
      const RunConfig c = load_run_config(entry.path());
      CHECK_NOTHROW(c.model.validate());
      CHECK_NOTHROW(c.data.validate());
      CHECK_NOTHROW(c.train.validate());
      CHECK_NOTHROW(check_compatible(c.model, c.data));
    }
    CHECK(seen >= 6);
  }

  TEST_CASE("usage errors exit with code 1") {
    fftest::TempDir dir("cli_usage");
    CHECK(run({}).code == kExitUsage);
    CHECK(run({"explode"}).code == kExitUsage);
    CHECK(run({"train"}).code == kExitUsage);
    CHECK(run({"--help"}).code == kExitOk);
    const auto missing = run({"train", "--config", (dir / "nope.cfg").string()});
    CHECK(missing.code == kExitUsage);
    CHECK(missing.err.find("not found") != std::string::npos);

    write_file(dir / "c.cfg", small_config_text());
    const auto unknown = run({"train", "--config", (dir / "c.cfg").string(), "--set", "train.momentun=0.5", "--out",
                              (dir / "o").string()});
    CHECK(unknown.code == kExitUsage);
    CHECK(unknown.err.find("momentun") != std::string::npos);
    CHECK(run({"eval", "--config", (dir / "c.cfg").string(), "--out", (dir / "o").string()}).code == kExitUsage);
  }

  TEST_CASE("non-finite training loss exits with code 2") {
    fftest::TempDir dir("cli_nan");
    write_file(dir / "c.cfg", small_config_text());
    const auto r = run({"train", "--config", (dir / "c.cfg").string(), "--set", "data.noise_sigma=1e300", "--out",
                        (dir / "o").string()});
    CHECK(r.code == kExitNumerical);
    CHECK(r.err.find("epoch 1") != std::string::npos);
  }

  TEST_CASE("gen-data, train, eval and attn-report end to end") {
    fftest::TempDir dir("cli_e2e");
    write_file(dir / "c.cfg", small_config_text("cross"));
    const std::string cfg = (dir / "c.cfg").string();

    const auto gen = run({"gen-data", "--config", cfg, "--out", (dir / "data").string()});
    REQUIRE(gen.code == kExitOk);
    CHECK(std::filesystem::exists(dir / "data" / "dataset.ffds"));
    CHECK(std::filesystem::exists(dir / "data" / "resolved.cfg"));

    const std::string dataset = "paths.dataset=" + (dir / "data" / "dataset.ffds").string();
    const auto tr = run({"train", "--config", cfg, "--set", dataset, "--out", (dir / "run").string()});
    REQUIRE(tr.code == kExitOk);
    const auto metrics = lines(read_file(dir / "run" / "metrics.csv"));
    REQUIRE(metrics.size() == 3);
    CHECK(metrics[0] == "epoch,lr,train_loss,top1,mean_class_acc");
    CHECK(std::filesystem::exists(dir / "run" / "checkpoint_best.ffck"));

    const std::string ck = (dir / "run" / "checkpoint_final.ffck").string();
    const std::string ck_before = read_file(ck);
    const auto ev = run({"eval", "--config", cfg, "--set", dataset, "--set", "paths.checkpoint=" + ck, "--out",
                         (dir / "eval").string()});
    REQUIRE(ev.code == kExitOk);
    CHECK(read_file(ck) == ck_before);

    // The final epoch's top-1 and mean class accuracy are reproduced exactly.
    const auto report = lines(read_file(dir / "eval" / "eval_report.csv"));
    const auto& final_row = metrics.back();
    const auto fields = [](const std::string& l) {
      std::vector<std::string> out;
      std::istringstream is(l);
      for (std::string f; std::getline(is, f, ',');) out.push_back(f);
      return out;
    };
    const auto fm = fields(final_row);
    CHECK(last_csv_field(report[report.size() - 2]) == fm[3]);
    CHECK(last_csv_field(report.back()) == fm[4]);

    const auto attn = run({"attn-report", "--config", cfg, "--set", dataset, "--set", "paths.checkpoint=" + ck,
                           "--out", (dir / "attn").string()});
    REQUIRE(attn.code == kExitOk);
    const auto rows = lines(read_file(dir / "attn" / "attention_report.csv"));
    CHECK(rows.size() == 1 + 6 + 1);
    CHECK(rows.back().rfind("match_summary,", 0) == 0);
  }

  TEST_CASE("commands are pure functions of their inputs") {
    fftest::TempDir dir("cli_pure");
    write_file(dir / "c.cfg", small_config_text());
    const std::string cfg = (dir / "c.cfg").string();
    for (const char* out : {"a", "b"}) {
      REQUIRE(run({"gen-data", "--config", cfg, "--out", (dir / out).string()}).code == kExitOk);
      REQUIRE(run({"train", "--config", cfg, "--out", (dir / out).string()}).code == kExitOk);
    }
    for (const char* file : {"dataset.ffds", "checkpoint_final.ffck", "checkpoint_best.ffck", "metrics.csv"}) {
      CHECK_MESSAGE(read_file(dir / "a" / file) == read_file(dir / "b" / file), file);
    }
    CHECK(read_file(dir / "a" / "resolved.cfg").find("out = " + (dir / "a").string()) != std::string::npos);
  }

  TEST_CASE("train resumes from a checkpoint through the CLI") {
    fftest::TempDir dir("cli_resume");
    write_file(dir / "c.cfg", small_config_text());
    const std::string cfg = (dir / "c.cfg").string();
    const std::string full_ck = (dir / "full" / "checkpoint_final.ffck").string();
    REQUIRE(run({"train", "--config", cfg, "--out", (dir / "full").string()}).code == kExitOk);

    // Resuming a finished run trains nothing and keeps the checkpoint as it was.
    REQUIRE(run({"train", "--config", cfg, "--set", "paths.resume=" + full_ck, "--out", (dir / "again").string()})
                .code == kExitOk);
    CHECK(read_file(dir / "again" / "checkpoint_final.ffck") == read_file(full_ck));
    CHECK(lines(read_file(dir / "again" / "metrics.csv")).size() == 1);

    // Extending the epoch budget continues from epoch 3 with a warning.
    const auto more = run({"train", "--config", cfg, "--set", "train.epochs=4", "--set", "paths.resume=" + full_ck,
                           "--out", (dir / "more").string()});
    REQUIRE(more.code == kExitOk);
    CHECK(more.err.find("warning") != std::string::npos);
    const auto rows = lines(read_file(dir / "more" / "metrics.csv"));
    REQUIRE(rows.size() == 3);
    CHECK(rows[1].rfind("3,", 0) == 0);

    const auto bad = run({"train", "--config", cfg, "--set", "model.hidden=16", "--set", "paths.resume=" + full_ck,
                          "--out", (dir / "bad").string()});
    CHECK(bad.code == kExitUsage);
  }

  TEST_CASE("attn-report requires a cross-encoder checkpoint") {
    fftest::TempDir dir("cli_attn");
    write_file(dir / "c.cfg", small_config_text());
    const std::string cfg = (dir / "c.cfg").string();
    REQUIRE(run({"train", "--config", cfg, "--set", "train.epochs=1", "--out", (dir / "v").string()}).code == 0);
    const auto r = run({"attn-report", "--config", cfg, "--set",
                        "paths.checkpoint=" + (dir / "v" / "checkpoint_final.ffck").string(), "--out",
                        (dir / "r").string()});
    CHECK(r.code == kExitUsage);
  }
}
