// SPDX-License-Identifier: Apache-2.0
#include "fineformer/config.hpp"

#include <charconv>
#include <functional>
#include <sstream>

#include "fineformer/binary_io.hpp"
#include "fineformer/errors.hpp"

namespace fineformer {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw ConfigError("invalid value '" + std::string(value) + "' for " + std::string(key) + " (expected " +
                    std::string(expected) + ")");
}

std::uint64_t parse_u64(std::string_view key, std::string_view value) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) bad_value(key, value, "non-negative integer");
  return out;
}

std::size_t parse_size(std::string_view key, std::string_view value) {
  return static_cast<std::size_t>(parse_u64(key, value));
}

double parse_double(std::string_view key, std::string_view value) {
  const std::string text(value);
  try {
    std::size_t used = 0;
    const double out = std::stod(text, &used);
    if (used != text.size()) bad_value(key, value, "number");
    return out;
  } catch (const std::logic_error&) {
    bad_value(key, value, "number");
  }
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "true|false");
}

std::vector<std::size_t> parse_list(std::string_view key, std::string_view value) {
  std::vector<std::size_t> out;
  value = trim(value);
  while (!value.empty()) {
    const auto comma = value.find(',');
    out.push_back(parse_size(key, trim(value.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    value = value.substr(comma + 1);
  }
  return out;
}

std::string join(const std::vector<std::size_t>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(values[i]);
  }
  return out;
}

template <class T>
struct Field {
  const char* key;
  std::function<std::string(const T&)> get;
  std::function<void(T&, std::string_view key, std::string_view value)> set;
};

#define SIZE_FIELD(T, member)                                                               \
  Field<T> {                                                                                \
#member, [](const T& c) { return std::to_string(c.member); },                           \
        [](T& c, std::string_view k, std::string_view v) { c.member = parse_size(k, v); } \
  }
#define U64_FIELD(T, member)                                                               \
  Field<T> {                                                                               \
#member, [](const T& c) { return std::to_string(c.member); },                          \
        [](T& c, std::string_view k, std::string_view v) { c.member = parse_u64(k, v); } \
  }
#define DOUBLE_FIELD(T, member)                                                               \
  Field<T> {                                                                                  \
#member, [](const T& c) { return format_double(c.member); },                               \
        [](T& c, std::string_view k, std::string_view v) { c.member = parse_double(k, v); } \
  }
#define BOOL_FIELD(T, member)                                                               \
  Field<T> {                                                                                \
#member, [](const T& c) { return std::string(c.member ? "true" : "false"); },           \
        [](T& c, std::string_view k, std::string_view v) { c.member = parse_bool(k, v); } \
  }

const std::vector<Field<ModelConfig>>& model_fields() {
  static const std::vector<Field<ModelConfig>> fields{
      {"kind", [](const ModelConfig& c) { return std::string(to_string(c.kind)); },
       [](ModelConfig& c, std::string_view, std::string_view v) { c.kind = parse_model_kind(v); }},
      SIZE_FIELD(ModelConfig, hidden),
      SIZE_FIELD(ModelConfig, layers),
      SIZE_FIELD(ModelConfig, cross_layers),
      SIZE_FIELD(ModelConfig, heads),
      SIZE_FIELD(ModelConfig, channels),
      SIZE_FIELD(ModelConfig, tokens),
      SIZE_FIELD(ModelConfig, vocab),
      SIZE_FIELD(ModelConfig, num_classes),
      SIZE_FIELD(ModelConfig, feature_height),
      SIZE_FIELD(ModelConfig, feature_width),
      SIZE_FIELD(ModelConfig, frames),
      SIZE_FIELD(ModelConfig, height),
      SIZE_FIELD(ModelConfig, width),
      U64_FIELD(ModelConfig, seed),
  };
  return fields;
}

const std::vector<Field<SyntheticSpec>>& data_fields() {
  static const std::vector<Field<SyntheticSpec>> fields{
      SIZE_FIELD(SyntheticSpec, attributes),
      SIZE_FIELD(SyntheticSpec, num_classes),
      SIZE_FIELD(SyntheticSpec, tokens),
      SIZE_FIELD(SyntheticSpec, channels),
      DOUBLE_FIELD(SyntheticSpec, noise_sigma),
      DOUBLE_FIELD(SyntheticSpec, ordered_pair_fraction),
      SIZE_FIELD(SyntheticSpec, train_per_class),
      SIZE_FIELD(SyntheticSpec, test_per_class),
      U64_FIELD(SyntheticSpec, seed),
      DOUBLE_FIELD(SyntheticSpec, long_tail_exponent),
      BOOL_FIELD(SyntheticSpec, video),
      SIZE_FIELD(SyntheticSpec, video_frames),
      SIZE_FIELD(SyntheticSpec, video_height),
      SIZE_FIELD(SyntheticSpec, video_width),
  };
  return fields;
}

const std::vector<Field<TrainConfig>>& train_fields() {
  static const std::vector<Field<TrainConfig>> fields{
      {"optimizer", [](const TrainConfig& c) { return std::string(to_string(c.optimizer)); },
       [](TrainConfig& c, std::string_view, std::string_view v) { c.optimizer = parse_optimizer_kind(v); }},
      DOUBLE_FIELD(TrainConfig, learning_rate),
      DOUBLE_FIELD(TrainConfig, momentum),
      DOUBLE_FIELD(TrainConfig, weight_decay),
      DOUBLE_FIELD(TrainConfig, beta1),
      DOUBLE_FIELD(TrainConfig, beta2),
      DOUBLE_FIELD(TrainConfig, epsilon),
      DOUBLE_FIELD(TrainConfig, clip_norm),
      SIZE_FIELD(TrainConfig, epochs),
      {"schedule", [](const TrainConfig& c) { return std::string(to_string(c.schedule)); },
       [](TrainConfig& c, std::string_view, std::string_view v) { c.schedule = parse_schedule_kind(v); }},
      {"milestones", [](const TrainConfig& c) { return join(c.milestones); },
       [](TrainConfig& c, std::string_view k, std::string_view v) { c.milestones = parse_list(k, v); }},
      {"warmup_epochs",
       [](const TrainConfig& c) { return c.warmup_epochs ? format_double(*c.warmup_epochs) : std::string("auto"); },
       [](TrainConfig& c, std::string_view k, std::string_view v) {
         if (v == "auto") {
           c.warmup_epochs.reset();
         } else {
           c.warmup_epochs = parse_double(k, v);
         }
       }},
      SIZE_FIELD(TrainConfig, batch_size),
      U64_FIELD(TrainConfig, seed),
  };
  return fields;
}

#undef SIZE_FIELD
#undef U64_FIELD
#undef DOUBLE_FIELD
#undef BOOL_FIELD

template <class T>
KeyValues dump(const std::vector<Field<T>>& fields, const T& value) {
  KeyValues out;
  for (const auto& f : fields) out.emplace_back(f.key, f.get(value));
  return out;
}

template <class T>
void assign(const std::vector<Field<T>>& fields, T& target, std::string_view section, std::string_view key,
            std::string_view value) {
  for (const auto& f : fields) {
    if (key == f.key) {
      f.set(target, std::string(section) + "." + std::string(key), trim(value));
      return;
    }
  }
  throw ConfigError("unknown key '" + std::string(section) + "." + std::string(key) + "'");
}

}  // namespace

KeyValues to_key_values(const ModelConfig& config) { return dump(model_fields(), config); }
KeyValues to_key_values(const SyntheticSpec& spec) { return dump(data_fields(), spec); }
KeyValues to_key_values(const TrainConfig& config) { return dump(train_fields(), config); }

void set_field(ModelConfig& config, std::string_view key, std::string_view value) {
  assign(model_fields(), config, "model", key, value);
}
void set_field(SyntheticSpec& spec, std::string_view key, std::string_view value) {
  assign(data_fields(), spec, "data", key, value);
}
void set_field(TrainConfig& config, std::string_view key, std::string_view value) {
  assign(train_fields(), config, "train", key, value);
}

void RunConfig::set(std::string_view dotted_key, std::string_view value) {
  const auto dot = dotted_key.find('.');
  if (dot == std::string_view::npos) throw ConfigError("key '" + std::string(dotted_key) + "' has no section");
  const auto section = dotted_key.substr(0, dot);
  const auto key = dotted_key.substr(dot + 1);
  value = trim(value);
  if (section == "model") {
    set_field(model, key, value);
  } else if (section == "data") {
    set_field(data, key, value);
  } else if (section == "train") {
    set_field(train, key, value);
  } else if (section == "eval") {
    if (key != "num_clips") throw ConfigError("unknown key '" + std::string(dotted_key) + "'");
    eval.num_clips = parse_size(dotted_key, value);
  } else if (section == "paths") {
    std::string* target = key == "dataset"      ? &paths.dataset
                          : key == "checkpoint" ? &paths.checkpoint
                          : key == "resume"     ? &paths.resume
                          : key == "out"        ? &paths.out
                                                : nullptr;
    if (target == nullptr) throw ConfigError("unknown key '" + std::string(dotted_key) + "'");
    *target = std::string(value);
  } else {
    throw ConfigError("unknown section '" + std::string(section) + "'");
  }
}

void RunConfig::apply_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("override '" + std::string(assignment) + "' is not of the form section.key=value");
  }
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  auto section = [&os](std::string_view name, const KeyValues& values) {
    os << '[' << name << "]\n";
    for (const auto& [k, v] : values) os << k << " = " << v << '\n';
    os << '\n';
  };
  section("model", to_key_values(model));
  section("data", to_key_values(data));
  section("train", to_key_values(train));
  section("eval", {{"num_clips", std::to_string(eval.num_clips)}});
  section("paths", {{"dataset", paths.dataset},
                    {"checkpoint", paths.checkpoint},
                    {"resume", paths.resume},
                    {"out", paths.out}});
  return os.str();
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig config;
  std::string section;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;

    if (const auto hash = line.find_first_of("#;"); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    if (section.empty()) throw ConfigError("line " + std::to_string(line_no) + ": key outside of a section");
    config.set(section + "." + std::string(trim(line.substr(0, eq))), line.substr(eq + 1));
  }
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path, std::span<const std::string> overrides) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  auto config = RunConfig::parse(read_file(path));
  for (const auto& o : overrides) config.apply_override(o);
  return config;
}

void check_compatible(const ModelConfig& model, const SyntheticSpec& spec) {
  auto mismatch = [](const std::string& what, std::size_t m, std::size_t d) {
    throw ConfigError(what + " mismatch: model " + std::to_string(m) + ", data " + std::to_string(d));
  };
  if (model.tokens != spec.tokens) mismatch("token count", model.tokens, spec.tokens);
  if (model.num_classes != spec.num_classes) mismatch("class count", model.num_classes, spec.num_classes);
  if (model.kind == ModelKind::cross && model.vocab != spec.attributes) {
    mismatch("vocabulary size", model.vocab, spec.attributes);
  }
  if (spec.video) {
    if (model.frames > spec.video_frames) mismatch("clip length", model.frames, spec.video_frames);
    if (model.height != spec.video_height) mismatch("video height", model.height, spec.video_height);
    if (model.width != spec.video_width) mismatch("video width", model.width, spec.video_width);
  } else if (model.channels != spec.channels) {
    mismatch("feature channels", model.channels, spec.channels);
  }
}

std::string header_text(std::string_view prefix, const KeyValues& values) {
  std::string out;
  for (const auto& [k, v] : values) {
    out += prefix;
    out += '.';
    out += k;
    out += '=';
    out += v;
    out += '\n';
  }
  return out;
}

KeyValues parse_header(std::string_view text) {
  KeyValues out;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const auto line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw FormatError("malformed header line '" + std::string(line) + "'");
    out.emplace_back(std::string(line.substr(0, eq)), std::string(line.substr(eq + 1)));
  }
  return out;
}

}  // namespace fineformer
